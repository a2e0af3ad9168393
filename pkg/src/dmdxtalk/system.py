"""Simulated addressing systems driven by the scan-and-fit optimizer.

A system owns the current FP1 hologram (primary plus committed secondary
gratings) and answers probe questions: what is the patch-averaged intensity
at a site if one grating were changed? Both systems cache the field at the
measurement plane and update it incrementally from window-sized deltas, so
a probe costs a small matrix product instead of a full propagation.
"""

from __future__ import annotations

import numpy as np
from scipy import fft as sfft

from .config import OpticalConfig
from .double_pass import (PupilSpec, default_relay_aberration, fp1_beam, ip1_sampling, pupil_pattern,
                          second_pass, stray_field)
from .errors import ParameterError
from .hologram import (DEFAULT_WINDOW_ROWS, AddressingTarget, GratingSpec, SecondaryHologramSpec,
                       WindowSpec, check_layout, multiplex, render_group, stack_windows)
from .metrics import extract_profile
from .optics import AberrationMap, ComplexField, DmdPattern, dft_kernels, fourier_aperture, rasterize_ip1

OFFSETS = (-1, 0, 1)


class AddressingSystem:
    """Shared hologram bookkeeping for the single- and double-pass systems.

    Parameters
    ----------
    cfg : OpticalConfig
    target : AddressingTarget
    illum : ComplexField
        FP1 illumination.
    primary : DmdPattern
        Primary hologram; its windows are overwritten by committed gratings.
    train_aberration : AberrationMap or None
        Phase actually applied by the optical train on FP1.
    hologram_aberration : AberrationMap or None
        Phase the secondary gratings compensate (the characterized map).
    rng_seed : int
        Seed for window binarization.
    """

    plane = "custom"

    def __init__(self, cfg: OpticalConfig, target: AddressingTarget, illum: ComplexField, primary: DmdPattern,
                 train_aberration: AberrationMap | None, hologram_aberration: AberrationMap | None,
                 rng_seed: int = 0, patch: int = 3):
        if patch not in (1, 3):
            raise ParameterError("probe patch must be 1 or 3 samples wide")
        self.cfg = cfg
        self.target = target
        self.illum = illum
        self.primary = primary
        self.hologram_aberration = hologram_aberration
        self.rng_seed = int(rng_seed)
        self.patch = patch
        self.beam = fp1_beam(illum, train_aberration)
        self.fp1 = primary.fp1.astype(np.int8)
        self.scale = illum.pitch_x * illum.pitch_y / (cfg.wavelength * cfg.focal_length)
        self.groups: dict = {}
        self.sites: list = []

    # ------------------------------------------------------------ hologram

    def specs(self) -> list:
        return [s for gid in sorted(self.groups) for s in self.groups[gid].values()]

    def pattern(self) -> DmdPattern:
        """Current multiplexed pattern, rebuilt from the committed specs."""
        return multiplex(self.primary, self.specs(), self.illum, self.hologram_aberration, self.cfg, self.rng_seed)

    def _group_with(self, spec):
        specs = dict(self.groups.get(spec.overlay_group, {}))
        specs[spec.key] = spec
        layout = self.specs_except(spec.overlay_group) + list(specs.values())
        check_layout(layout)
        return list(specs.values())

    def specs_except(self, gid) -> list:
        return [s for g in sorted(self.groups) if g != gid for s in self.groups[g].values()]

    def _block_delta(self, window: WindowSpec, block) -> np.ndarray:
        rows, cols = window.region
        return (block.astype(np.int8) - self.fp1[rows, cols]) * self.beam[rows, cols]

    def _render(self, specs) -> np.ndarray:
        return render_group(specs, self.illum, self.hologram_aberration, self.cfg, self.rng_seed)

    def commit(self, spec: SecondaryHologramSpec) -> None:
        """Write ``spec`` into its overlay group, replacing a spec with the same key."""
        specs = self._group_with(spec)
        block = self._render(specs)
        self._apply(spec.window, self._block_delta(spec.window, block))
        self.fp1[spec.window.region] = block
        self.groups.setdefault(spec.overlay_group, {})[spec.key] = spec

    def clear_group(self, gid) -> None:
        """Remove every spec of a group and restore the primary content of its window."""
        if gid not in self.groups:
            return
        window = next(iter(self.groups[gid].values())).window
        block = self.primary.fp1[window.region]
        self._apply(window, self._block_delta(window, block))
        self.fp1[window.region] = block
        del self.groups[gid]

    @property
    def floor_db(self) -> float:
        return self.cfg.detector_floor_db

    def plan_windows(self, rows_per_group) -> list:
        return stack_windows(rows_per_group, self.cfg)

    def reference_window(self) -> WindowSpec:
        rows = max(1, DEFAULT_WINDOW_ROWS // self.cfg.superpixel)
        return self.plan_windows([rows])[0]

    def make_spec(self, site: float, window: WindowSpec, group: int, amplitude: float = 0.5,
                  phase: float = 0.0) -> SecondaryHologramSpec:
        return SecondaryHologramSpec(GratingSpec(self.grating_target(site), amplitude, phase), window,
                                     float(site), int(group))

    # --------------------------------------------------------------- probes

    def register_sites(self, sites) -> None:
        raise NotImplementedError

    def _ensure(self, sites):
        missing = [s for s in sites if s not in self.sites]
        if missing:
            self.register_sites(list(self.sites) + missing)

    def intensity(self, spec: SecondaryHologramSpec, site: float) -> float:
        """Probe intensity at ``site`` with ``spec`` tentatively written, relative to the baseline peak."""
        self._ensure([site])
        block = self._render(self._group_with(spec))
        delta = self._contribution(spec.window, self._block_delta(spec.window, block))
        return self._measure(delta, [site])[site] / self.peak0

    def crosstalk(self, sites) -> dict:
        """Linear I_X at each site for the committed pattern, normalised by its own peak."""
        sites = list(sites)
        self._ensure(sites)
        vals = self._measure(None, sites + ["peak"])
        return {s: vals[s] / vals["peak"] for s in sites}

    def unit_response(self, spec: SecondaryHologramSpec, site: float) -> float:
        """Auxiliary amplitude at ``site`` per unit A_s, relative to the baseline peak amplitude.

        Measured from the window content alone with a reference grating at
        A_s = 0.5.
        """
        self._ensure([site])
        ref = spec.with_grating(amplitude=0.5)
        block = self._render([ref])
        rows, cols = ref.window.region
        contrib = self._contribution(ref.window, block * self.beam[rows, cols])
        return float(np.abs(self._center_value(contrib, site)) / np.sqrt(self.peak0) / 0.5)

    # subclass hooks: _apply, _contribution, _measure, _center_value, grating_target


class SinglePassSystem(AddressingSystem):
    """Probe system for the first pass only (sites measured at IP1).

    The spot is located on a local grid around X0; sites are sample columns
    at ``a`` measured waists from the peak along x.
    """

    plane = "IP1"

    def __init__(self, cfg, target, illum, primary, train_aberration, hologram_aberration=None,
                 rng_seed=0, patch=3, locate_grid: int = 64):
        super().__init__(cfg, target, illum, primary, train_aberration, hologram_aberration, rng_seed, patch)
        self.delta = target.waist_request / cfg.ip1_oversample
        self._lf = cfg.wavelength * cfg.focal_length
        n = int(locate_grid)
        my, mx = dft_kernels(cfg.fp1_shape, (cfg.pitch, cfg.pitch), (0.0, 0.0), (n, n),
                             (self.delta, self.delta), target.X0, self._lf)
        u = self.beam * self.fp1
        local = ComplexField((my @ u) @ mx * self.scale, self.delta, self.delta, "IP1", target.X0)
        profile = extract_profile(local, patch=patch, floor_db=cfg.detector_floor_db)
        pr, pc = np.unravel_index(np.argmax(local.intensity()), local.shape)
        x, y = local.coords()
        self.peak_xy = (float(x[pc]), float(y[pr]))
        self.waist = profile.waist
        self.waist_flagged = profile.waist_flagged
        self._ys = self.peak_xy[1] + np.array(OFFSETS) * self.delta
        self._my = dft_kernels(cfg.fp1_shape, (cfg.pitch, cfg.pitch), (0.0, 0.0), (3, 1),
                               (self.delta, self.delta), (0.0, self.peak_xy[1]), self._lf)[0]
        self.register_sites([])
        self.peak0 = self._measure(None, ["peak"])["peak"]

    def site_offset(self, site: float) -> int:
        return int(np.round(site * self.waist / self.delta))

    def site_x(self, site) -> float:
        return self.peak_xy[0] + self.site_offset(site) * self.delta

    def grating_target(self, site: float) -> tuple:
        return (self.site_x(site), self.peak_xy[1])

    def register_sites(self, sites) -> None:
        sites = list(dict.fromkeys(float(s) for s in sites))
        keys = ["peak"] + sites
        xs = []
        self._slices = {}
        for i, key in enumerate(keys):
            cx = self.peak_xy[0] if key == "peak" else self.site_x(key)
            xs.extend(cx + d * self.delta for d in OFFSETS)
            self._slices[key] = slice(3 * i, 3 * i + 3)
        xs = np.array(xs)
        x = np.arange(self.cfg.fp1_shape[1]) - self.cfg.fp1_shape[1] // 2
        self._mx = np.exp(-2j * np.pi * np.outer(x * self.cfg.pitch, xs) / self._lf)
        self._F = (self._my @ (self.beam * self.fp1)) @ self._mx * self.scale
        self.sites = sites

    def refresh(self) -> None:
        """Recompute the cached probe field from the current pattern."""
        self.register_sites(self.sites)

    def _contribution(self, window, cblock):
        rows, cols = window.region
        return self._my[:, rows] @ (cblock @ self._mx[cols, :]) * self.scale

    def _apply(self, window, dblock):
        self._F = self._F + self._contribution(window, dblock)

    def _measure(self, delta, keys) -> dict:
        F = self._F if delta is None else self._F + delta
        out = {}
        for key in keys:
            blk = F[:, self._slices[key]]
            out[key] = float(np.mean(np.abs(blk[1:2, 1:2] if self.patch == 1 else blk) ** 2))
        return out

    def _center_value(self, contrib, site):
        return contrib[1, self._slices[site]][1]


class DoublePassSystem(AddressingSystem):
    """Probe system for the full double-pass train (sites measured at IP2).

    Sites are displacements in units of the IP2 waist ``w'`` measured on the
    baseline pattern with the pupil in place.
    """

    plane = "IP2"

    def __init__(self, cfg, target, illum, primary, train_aberration, hologram_aberration=None,
                 rng_seed=0, patch=3, pupil: PupilSpec | None = None,
                 relay_aberration: AberrationMap | None = None, stray_floor: float = 0.0):
        super().__init__(cfg, target, illum, primary, train_aberration, hologram_aberration, rng_seed, patch)
        shape, pitch, origin = ip1_sampling(cfg, target)
        self.delta = pitch
        lf = cfg.wavelength * cfg.focal_length
        self._my, self._mx = dft_kernels(cfg.fp1_shape, (cfg.pitch, cfg.pitch), (0.0, 0.0), shape,
                                         (pitch, pitch), origin, lf)
        u1 = (self._my @ (self.beam * self.fp1)) @ self._mx * self.scale
        self._field1 = ComplexField(u1, pitch, pitch, "IP1", origin)
        self.relay_aberration = relay_aberration
        self.pupil = pupil
        self._mask = rasterize_ip1(pupil_pattern(cfg, pupil), self._field1, cfg) if pupil is not None else None
        self._stray = None
        if stray_floor > 0:
            peak = float(self._field1.intensity().max())
            self._stray = stray_field(shape, np.sqrt(stray_floor * peak), rng_seed)
        field2 = self._relay(u1)
        profile = extract_profile(field2, patch=patch, floor_db=cfg.detector_floor_db)
        self.waist = profile.waist
        self.waist_flagged = profile.waist_flagged
        self._pr, self._pc = np.unravel_index(np.argmax(field2.intensity()), field2.shape)
        x2, y2 = field2.coords()
        self.peak_xy = (float(x2[self._pc]), float(y2[self._pr]))
        self.pitch2 = field2.pitch_x
        self._init_row_relay(shape[0], pitch)
        self.sites = []
        self.peak0 = self._measure(None, ["peak"])["peak"]

    @classmethod
    def from_scene(cls, scene, pupil: PupilSpec | None = None, patch: int = 3) -> "DoublePassSystem":
        return cls(scene.cfg, scene.target, scene.illum, scene.primary, scene.train_aberration,
                   scene.hologram_aberration, scene.rng_seed, patch, pupil, scene.relay_aberration,
                   scene.stray_floor)

    def _relay(self, u1) -> ComplexField:
        return second_pass(self.cfg, self._field1.with_samples(u1), self._mask, self.relay_aberration, self._stray)

    def _init_row_relay(self, n, pitch):
        # the relay evaluated only on the three IP2 rows through the peak
        cfg = self.cfg
        q = cfg.wavelength * cfg.relay_focal_length / (n * pitch)
        grid = ComplexField(np.ones((n, n), dtype=np.complex128), q, q, "custom")
        tf = fourier_aperture(grid, cfg.as2_radius, cfg.as2_shape).samples
        if self.relay_aberration is not None:
            tf = tf * np.exp(1j * self.relay_aberration.phase)
        self._tf = tf * pitch * pitch / (cfg.wavelength * cfg.relay_focal_length)
        c = n // 2
        k = np.arange(self._pr - 1, self._pr + 2) - c
        m = np.arange(n) - c
        self._row_dft = np.exp(-2j * np.pi * np.outer(k, m) / n) * q * q / (cfg.wavelength * cfg.relay_f4)

    def _relay_rows(self, u1) -> np.ndarray:
        """IP2 intensity on rows ``peak-1 .. peak+1``; agrees with the full relay."""
        if self._mask is not None:
            u1 = np.where(self._mask, u1, 0)
        if self._stray is not None:
            u1 = u1 + self._stray
        fp2 = sfft.fftshift(sfft.fft2(sfft.ifftshift(u1))) * self._tf
        rows = self._row_dft @ fp2
        return np.abs(sfft.fftshift(sfft.fft(sfft.ifftshift(rows, axes=1), axis=1), axes=1)) ** 2

    def site_offset(self, site: float) -> int:
        return int(np.round(site * self.waist / self.pitch2))

    def _site_index(self, key):
        if key == "peak":
            return self._pr, self._pc
        c = self._pc + self.site_offset(key)
        if not 1 <= c < self.cfg.ip1_grid - 1:
            raise ParameterError(f"site {key} lies outside the simulated IP2 grid")
        return self._pr, c

    def grating_target(self, site: float) -> tuple:
        m = self.cfg.relay_magnification
        x2 = self.peak_xy[0] + self.site_offset(site) * self.pitch2
        return (-x2 / m, -self.peak_xy[1] / m)

    def register_sites(self, sites) -> None:
        sites = list(dict.fromkeys(float(s) for s in sites))
        for s in sites:
            self._site_index(s)
        self.sites = sites

    def refresh(self) -> None:
        """Recompute the cached IP1 field from the current pattern."""
        u1 = (self._my @ (self.beam * self.fp1)) @ self._mx * self.scale
        self._field1 = self._field1.with_samples(u1)

    def _contribution(self, window, cblock):
        rows, cols = window.region
        return self._my[:, rows] @ (cblock @ self._mx[cols, :]) * self.scale

    def _apply(self, window, dblock):
        self._field1 = self._field1.with_samples(self._field1.samples + self._contribution(window, dblock))

    def _measure(self, delta, keys) -> dict:
        u1 = self._field1.samples if delta is None else self._field1.samples + delta
        inten = self._relay_rows(u1)
        out = {}
        for key in keys:
            _, c = self._site_index(key)
            h = 0 if self.patch == 1 else 1
            out[key] = float(inten[1 - h:2 + h, c - h:c + h + 1].mean())
        return out

    def _center_value(self, contrib, site):
        field2 = second_pass(self.cfg, self._field1.with_samples(contrib), self._mask, self.relay_aberration, None)
        r, c = self._site_index(site)
        return field2.samples[r, c]
