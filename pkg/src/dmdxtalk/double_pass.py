"""Double-pass train: FP1 hologram, IP1 programmable pupil, relay to IP2."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import OpticalConfig
from .errors import ParameterError
from .hologram import AddressingTarget
from .metrics import CrosstalkProfile, extract_profile, fit_waist_samples, to_db
from .optics import (AberrationMap, ComplexField, DmdPattern, fourier_plane_grid, gaussian_illumination,
                     ip1_mirror_index, rasterize_ip1, relay_image, synthetic_aberration, zoom_fourier)

DEFAULT_THRESHOLD_DB = -50.0


@dataclass(frozen=True)
class PupilSpec:
    """Square (or circular) reflective pupil on the IP1 mirrors.

    ``center`` is an IP1 mirror coordinate (row, col); ``size`` is the
    pupil size ``d`` in metres, measured like ``d'`` as a distance from the
    centre: mirrors within ``size`` of the centre along each axis (or
    radially, for a circle) are ON.
    """

    center: tuple
    size: float
    shape: str = "square"

    def __post_init__(self):
        if not self.size > 0:
            raise ParameterError("pupil size must be positive")
        if self.shape not in ("square", "circle"):
            raise ParameterError("pupil shape must be 'square' or 'circle'")
        object.__setattr__(self, "center", (int(self.center[0]), int(self.center[1])))

    @classmethod
    def from_waists(cls, center, d_over_w: float, waist: float, shape: str = "square") -> "PupilSpec":
        return cls(center, d_over_w * waist, shape)

    def mask(self, cfg: OpticalConfig) -> np.ndarray:
        rows, cols = cfg.ip1_shape
        half = self.size / cfg.pitch
        r0, c0 = self.center
        if r0 - half < -0.5 or c0 - half < -0.5 or r0 + half > rows - 0.5 or c0 + half > cols - 0.5:
            raise ParameterError(f"pupil of {self.size:.3g} m at {self.center} leaves the IP1 region")
        dr = np.abs(np.arange(rows) - r0)[:, None]
        dc = np.abs(np.arange(cols) - c0)[None, :]
        if self.shape == "square":
            return (dr <= half + 1e-9) & (dc <= half + 1e-9)
        return dr ** 2 + dc ** 2 <= half ** 2 + 1e-9


def pupil_pattern(cfg: OpticalConfig, pupil: PupilSpec | None, base: DmdPattern | None = None) -> DmdPattern:
    """Pattern whose IP1 region holds the pupil (all ON when ``pupil`` is None)."""
    base = DmdPattern.blank(cfg) if base is None else base
    if pupil is None:
        return base.with_ip1(np.ones(cfg.ip1_shape, dtype=np.uint8))
    return base.with_ip1(pupil.mask(cfg).astype(np.uint8))


@dataclass(frozen=True, eq=False)
class DoublePassResult:
    """IP2 field, its profile and the effective aperture ``d'`` in units of ``w'``."""

    field_ip2: ComplexField
    profile: CrosstalkProfile
    effective_aperture: float
    flagged: bool
    field_ip1: ComplexField | None = None


# ------------------------------------------------------------------ pieces


def ip1_sampling(cfg: OpticalConfig, target: AddressingTarget):
    """Shape, pitch and origin of the local IP1 simulation grid."""
    n = cfg.ip1_grid
    return (n, n), target.waist_request / cfg.ip1_oversample, target.X0


def fp1_beam(illum: ComplexField, aberration: AberrationMap | None) -> np.ndarray:
    """Complex illumination incident on the FP1 mirrors, including the train aberration."""
    if aberration is None:
        return illum.samples.copy()
    return illum.samples * np.exp(1j * aberration.phase)


def ip1_field(cfg: OpticalConfig, target: AddressingTarget, illum: ComplexField, pattern: DmdPattern,
              aberration: AberrationMap | None) -> ComplexField:
    """Field on the local IP1 grid produced by the FP1 region of ``pattern``."""
    shape, pitch, origin = ip1_sampling(cfg, target)
    u = ComplexField(fp1_beam(illum, aberration) * pattern.fp1, illum.pitch_x, illum.pitch_y, "FP1")
    return zoom_fourier(u, cfg, shape, pitch, origin)


def default_relay_aberration(cfg: OpticalConfig, target: AddressingTarget, seed: int = 0,
                             rms: float | None = None) -> AberrationMap | None:
    """Seeded low-order pupil aberration of the relay, normalised over the AS2 stop."""
    rms = cfg.relay_aberration_rms if rms is None else rms
    if rms == 0:
        return None
    shape, pitch, _ = ip1_sampling(cfg, target)
    probe = ComplexField(np.zeros(shape, dtype=complex), pitch, pitch, "IP1")
    fshape, fpitch = fourier_plane_grid(probe, cfg.relay_focal_length, cfg.wavelength)
    return synthetic_aberration(fshape, fpitch, rms, seed=seed, radius=cfg.as2_radius)


def stray_field(shape, amplitude: float, seed: int) -> np.ndarray:
    """Uniform-amplitude, random-phase additive field."""
    if amplitude == 0:
        return np.zeros(shape, dtype=np.complex128)
    phase = np.random.default_rng(np.random.SeedSequence([int(seed), 7])).random(shape)
    return amplitude * np.exp(2j * np.pi * phase)


def second_pass(cfg: OpticalConfig, field1: ComplexField, pupil_mask: np.ndarray | None,
                relay_aberration: AberrationMap | None, stray: np.ndarray | None) -> ComplexField:
    """Pupil, stray light and relay applied to an IP1 field."""
    u = field1.samples
    if pupil_mask is not None:
        u = np.where(pupil_mask, u, 0)
    if stray is not None:
        u = u + stray
    return relay_image(field1.with_samples(u), cfg, relay_aberration, aperture_radius=cfg.as2_radius)


def effective_aperture(profile: CrosstalkProfile, threshold_db: float = DEFAULT_THRESHOLD_DB) -> tuple[float, bool]:
    """Distance ``d'`` (in waists) from the peak beyond which every sample lies below threshold.

    Returns ``(d', flagged)``; ``flagged`` is True when the profile never
    drops below threshold before the edge of the grid.
    """
    db = to_db(profile.intensities)
    above = np.nonzero(db >= threshold_db)[0]
    pos = profile.in_waists()
    if above.size == 0:
        return 0.0, True
    flagged = bool(above[0] == 0 or above[-1] == len(db) - 1)
    return float(np.max(np.abs(pos[above]))), flagged


class Ip1PowerMeter:
    """Photodiode surrogate: power reflected by a set of ON IP1 mirrors.

    Bins the IP1 intensity into per-mirror powers once; a measurement is the
    sum over the mirrors selected by a boolean mask.
    """

    def __init__(self, cfg: OpticalConfig, field1: ComplexField, registration=None, floor_db: float | None = None):
        self.cfg = cfg
        registration = field1.origin if registration is None else registration
        rows, cols = cfg.ip1_shape
        x, y = field1.coords()
        r, _ = ip1_mirror_index(cfg, registration, 0.0, y)
        _, c = ip1_mirror_index(cfg, registration, x, 0.0)
        inten = field1.intensity() * field1.pitch_x * field1.pitch_y
        rv, cv = r >= 0, c >= 0
        sub = inten[np.ix_(rv, cv)]
        idx = (r[rv][:, None] * cols + c[cv][None, :]).ravel()
        self.power_map = np.bincount(idx, weights=sub.ravel(), minlength=rows * cols).reshape(rows, cols)
        floor_db = cfg.detector_floor_db if floor_db is None else floor_db
        self.power_floor = 10 ** (floor_db / 10) * float(self.power_map.max(initial=0.0)) if floor_db else 0.0
        self.power_floor = max(self.power_floor, 1e-300)

    @property
    def ip1_shape(self):
        return self.power_map.shape

    def transmitted_power(self, mask) -> float:
        return float(self.power_map[np.asarray(mask, dtype=bool)].sum())


# ---------------------------------------------------------------- top level


def simulate_double_pass(cfg: OpticalConfig, fp1_pattern: DmdPattern, pupil: PupilSpec | None,
                         fp1_aberration: AberrationMap | None, relay_aberration: AberrationMap | None = None,
                         stray_floor: float = 0.0, *, target: AddressingTarget, illum: ComplexField | None = None,
                         rng_seed: int = 0, patch: int = 3,
                         threshold_db: float = DEFAULT_THRESHOLD_DB) -> DoublePassResult:
    """Propagate a hologram through both passes and measure the IP2 profile.

    The IP1 region of ``fp1_pattern`` is ignored; the pupil (or an all-ON
    region when ``pupil`` is None) takes its place.
    """
    if stray_floor < 0:
        raise ParameterError("stray_floor must be non-negative")
    fp1_pattern.check(cfg)
    illum = gaussian_illumination(cfg) if illum is None else illum
    field1 = ip1_field(cfg, target, illum, fp1_pattern, fp1_aberration)
    return _finish_double_pass(cfg, field1, pupil, relay_aberration, stray_floor, rng_seed, patch, threshold_db)


def _finish_double_pass(cfg, field1, pupil, relay_aberration, stray_floor, rng_seed, patch, threshold_db):
    mask = rasterize_ip1(pupil_pattern(cfg, pupil), field1, cfg) if pupil is not None else None
    stray = None
    if stray_floor > 0:
        peak = float(field1.intensity().max())
        stray = stray_field(field1.shape, np.sqrt(stray_floor * peak), rng_seed)
    field2 = second_pass(cfg, field1, mask, relay_aberration, stray)
    profile = extract_profile(field2, patch=patch, floor_db=cfg.detector_floor_db)
    d_eff, flagged = effective_aperture(profile, threshold_db)
    return DoublePassResult(field2, profile, d_eff, flagged, field1)


def ip1_waist(field1: ComplexField, patch: int = 3) -> float:
    """Waist of the IP1 spot fitted along x."""
    return extract_profile(field1, patch=patch).waist


def calibrated_pupil(cfg: OpticalConfig, field1: ComplexField, d: float, shape: str = "square",
                     patch: int = 3) -> PupilSpec:
    """Pupil of size ``d`` IP1 waists centred on the calibrated beam mirror."""
    from .calibrate import calibrate_beam_center

    center = calibrate_beam_center(Ip1PowerMeter(cfg, field1))
    return PupilSpec.from_waists(center, d, ip1_waist(field1, patch), shape)


def aperture_sweep(cfg: OpticalConfig, fp1_pattern: DmdPattern, d_values, *, target: AddressingTarget,
                   fp1_aberration: AberrationMap | None = None, relay_aberration: AberrationMap | None = None,
                   stray_floor: float = 0.0, center=None, illum: ComplexField | None = None,
                   rng_seed: int = 0, patch: int = 3, threshold_db: float = DEFAULT_THRESHOLD_DB,
                   shape: str = "square"):
    """Effective aperture ``d'`` for a list of pupil sizes ``d`` (IP1 waist units).

    The pupil is centred on ``center`` or, by default, on the mirror found by
    beam-center calibration. Returns a list of ``(d, d', flagged)``; a
    ``None`` entry in ``d_values`` stands for the open pupil and must come last.
    """
    from .calibrate import calibrate_beam_center

    d_values = list(d_values)
    finite = [d for d in d_values if d is not None]
    if any(b < a for a, b in zip(finite, finite[1:])):
        raise ParameterError("d_values must be sorted ascending")
    if None in d_values and d_values.index(None) != len(d_values) - 1:
        raise ParameterError("the open pupil (None) must be the last entry")
    illum = gaussian_illumination(cfg) if illum is None else illum
    field1 = ip1_field(cfg, target, illum, fp1_pattern, fp1_aberration)
    w1 = ip1_waist(field1, patch)
    if center is None:
        center = calibrate_beam_center(Ip1PowerMeter(cfg, field1))
    out = []
    for d in d_values:
        pupil = None if d is None else PupilSpec.from_waists(center, d, w1, shape)
        res = _finish_double_pass(cfg, field1, pupil, relay_aberration, stray_floor, rng_seed, patch, threshold_db)
        out.append((d, res.effective_aperture, res.flagged))
    return out


def write_sweep_table(rows, path) -> Path:
    """Three columns: pupil size d (``open`` for no pupil), d' and the edge flag."""
    path = Path(path)
    lines = ["d_w\td_prime_w\tflagged"]
    for d, dp, flagged in rows:
        lines.append(f"{'open' if d is None else format(d, '.3f')}\t{dp:.3f}\t{int(flagged)}")
    path.write_text("\n".join(lines) + "\n")
    return path


@dataclass(frozen=True, eq=False)
class CombinedResult:
    """Final double-pass result with the optimisation that produced it.

    ``site_positions`` maps each site (in baseline ``w'``) to its IP2
    displacement from the peak in metres, as probed by the optimiser.
    """

    result: DoublePassResult
    optimization: object
    pupil: PupilSpec | None
    pattern: DmdPattern
    site_positions: dict

    def site_crosstalk_db(self) -> dict:
        """I_X in dB of the final profile at each optimised site position."""
        prof = self.result.profile
        return {s: float(to_db(np.interp(x, prof.positions, prof.intensities)))
                for s, x in self.site_positions.items()}


def combined_pipeline(scene, sites, pupil_d: float | None, *, threshold_db: float = DEFAULT_THRESHOLD_DB,
                      **optimize_options) -> CombinedResult:
    """Optimise secondary gratings against the double-pass train, then simulate it.

    ``sites`` are IP2 displacements in units of ``w'``; ``pupil_d`` is the
    pupil size in IP1 waists (None for an open pupil). With no sites the
    result equals :func:`simulate_double_pass` on the primary hologram.
    """
    from .calibrate import optimize_sites
    from .system import DoublePassSystem

    cfg = scene.cfg
    pupil = None
    if pupil_d is not None:
        field1 = ip1_field(cfg, scene.target, scene.illum, scene.primary, scene.train_aberration)
        pupil = calibrated_pupil(cfg, field1, pupil_d)
    system = DoublePassSystem.from_scene(scene, pupil=pupil)
    opt = optimize_sites(system, list(sites), **optimize_options)
    pattern = system.pattern()
    res = simulate_double_pass(cfg, pattern, pupil, scene.train_aberration, scene.relay_aberration,
                               scene.stray_floor, target=scene.target, illum=scene.illum,
                               rng_seed=scene.rng_seed, threshold_db=threshold_db)
    positions = {s: system.site_offset(s) * system.pitch2 for s in sites}
    return CombinedResult(res, opt, pupil, pattern, positions)
