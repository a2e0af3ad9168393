"""Binary-amplitude hologram synthesis for the FP1 region.

Covers the primary addressing hologram (Gerchberg-Saxton style iteration
followed by random binarization), secondary grating holograms confined to
small windows, and the rules for multiplexing several secondaries into one
pattern.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.fft as sfft
from scipy import ndimage

from .config import OpticalConfig
from .errors import CapacityError, Diagnostic, ParameterError, RuleViolation
from .optics import AberrationMap, ComplexField, DmdPattern, axis_coords

TWO_PI = 2.0 * np.pi
DEFAULT_WINDOW_ROWS = 2
DEFAULT_WINDOW_COLS = 460


@dataclass(frozen=True)
class GratingSpec:
    """Carrier, amplitude and phase of one secondary grating.

    ``frequency`` is the image-plane coordinate (x, y) in metres at which the
    first diffraction order lands; the grating phase is
    ``2*pi*frequency.x / (lambda*f)``.
    """

    frequency: tuple
    amplitude: float = 0.5
    phase: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.amplitude <= 1.0:
            raise ParameterError(f"grating amplitude must lie in [0, 1], got {self.amplitude}")
        object.__setattr__(self, "frequency", (float(self.frequency[0]), float(self.frequency[1])))
        object.__setattr__(self, "phase", float(np.mod(self.phase, TWO_PI)))

    def with_phase(self, phase: float) -> "GratingSpec":
        return replace(self, phase=phase)

    def with_amplitude(self, amplitude: float) -> "GratingSpec":
        return replace(self, amplitude=amplitude)


@dataclass(frozen=True)
class WindowSpec:
    """Rectangular FP1 window of ``height x width`` pixels at ``origin`` (row, col)."""

    width: int = DEFAULT_WINDOW_COLS
    height: int = DEFAULT_WINDOW_ROWS
    origin: tuple = (0, 0)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ParameterError("window dimensions must be at least one pixel")
        object.__setattr__(self, "origin", (int(self.origin[0]), int(self.origin[1])))

    @property
    def rows(self) -> slice:
        return slice(self.origin[0], self.origin[0] + self.height)

    @property
    def cols(self) -> slice:
        return slice(self.origin[1], self.origin[1] + self.width)

    @property
    def region(self) -> tuple[slice, slice]:
        return self.rows, self.cols

    def check_inside(self, cfg: OpticalConfig) -> None:
        r, c = self.origin
        rows, cols = cfg.fp1_shape
        if r < 0 or c < 0 or r + self.height > rows or c + self.width > cols:
            raise ParameterError(f"window {self} lies outside the FP1 region {cfg.fp1_shape}")

    def overlaps(self, other: "WindowSpec") -> bool:
        return not (self.rows.stop <= other.rows.start or other.rows.stop <= self.rows.start
                    or self.cols.stop <= other.cols.start or other.cols.stop <= self.cols.start)


@dataclass(frozen=True)
class SecondaryHologramSpec:
    """One secondary grating placed in a window.

    ``target_site`` is the displacement from the addressed spot in waist
    units; holograms sharing ``overlay_group`` share the same window pixels.
    """

    grating: GratingSpec
    window: WindowSpec
    target_site: float = 0.0
    overlay_group: int = 0

    def with_grating(self, **changes) -> "SecondaryHologramSpec":
        return replace(self, grating=replace(self.grating, **changes))

    @property
    def key(self) -> tuple:
        return (self.overlay_group, round(float(self.target_site), 9))


@dataclass(frozen=True)
class AddressingTarget:
    """Image-plane location ``X0`` (metres) and requested spot waist."""

    X0: tuple = (1.0e-3, 0.0)
    waist_request: float = 12e-6

    def __post_init__(self):
        if not self.waist_request > 0:
            raise ParameterError("waist_request must be positive")
        object.__setattr__(self, "X0", (float(self.X0[0]), float(self.X0[1])))

    def check_inside(self, cfg: OpticalConfig) -> None:
        fx, fy = cfg.image_fov()
        if abs(self.X0[0]) >= fx / 2 or abs(self.X0[1]) >= fy / 2:
            raise ParameterError(f"target {self.X0} lies outside the image field of view "
                                 f"(+/-{fx / 2:.4g}, +/-{fy / 2:.4g}) m")


# ----------------------------------------------------------- binarization


def random_binarize(continuous, rng_seed) -> np.ndarray:
    """Set each pixel ON with probability equal to its continuous value.

    ``rng_seed`` may be an integer or a :class:`numpy.random.SeedSequence`.
    """
    cont = np.asarray(continuous, dtype=float)
    if not np.all((cont >= 0.0) & (cont <= 1.0)):
        raise ParameterError("continuous map values must lie in [0, 1]")
    draws = np.random.default_rng(rng_seed).random(cont.shape)
    return draws < cont


def window_seed(rng_seed: int, window: WindowSpec) -> np.random.SeedSequence:
    """Seed for the binarization of one window.

    Depends only on the global seed and the window position, so the random
    thresholds inside a window stay fixed while its content is scanned.
    """
    return np.random.SeedSequence([int(rng_seed), 1 + window.origin[0], 1 + window.origin[1]])


# ------------------------------------------------------- secondary gratings


def _floored_amplitude(amp: np.ndarray, floor: float, warn: bool = True) -> np.ndarray:
    top = amp.max()
    if top <= 0:
        raise ParameterError("illumination is zero inside the window")
    low = amp < floor * top
    if warn and low.mean() > 0.1:
        warnings.warn(f"illumination below the amplitude floor on {100 * low.mean():.1f}% of the window",
                      Diagnostic, stacklevel=3)
    return np.maximum(amp, floor * top)


def secondary_continuous(spec: SecondaryHologramSpec, illum: ComplexField, aberration: AberrationMap | None,
                         cfg: OpticalConfig) -> np.ndarray:
    """Continuous transmission of a secondary grating over its window.

    ``F = eta / |E_in| * A/2 * (cos(2*pi*x_a.x/(lambda*f) + phi_s - phi_in) + 1)``
    with ``|E_in|`` clamped at ``cfg.amplitude_floor`` of its window maximum and
    ``eta`` the window minimum of the clamped amplitude, so that ``F <= A``.
    """
    win = spec.window
    win.check_inside(cfg)
    rows, cols = win.region
    amp = _floored_amplitude(np.abs(illum.samples[rows, cols]), cfg.amplitude_floor)
    eta = amp.min()
    x, y = illum.coords()
    lf = cfg.wavelength * cfg.focal_length
    g = spec.grating
    arg = TWO_PI * (g.frequency[0] * x[cols][None, :] + g.frequency[1] * y[rows][:, None]) / lf + g.phase
    if aberration is not None:
        arg = arg - aberration.phase[rows, cols]
    cont = (eta / amp) * (0.5 * g.amplitude) * (np.cos(arg) + 1.0)
    return np.clip(cont, 0.0, 1.0)


def group_continuous(specs, illum, aberration, cfg) -> np.ndarray:
    """Sum of the overlaid continuous maps of one group, clamped to [0, 1]."""
    total = None
    for spec in specs:
        cont = secondary_continuous(spec, illum, aberration, cfg)
        total = cont if total is None else total + cont
    return np.clip(total, 0.0, 1.0)


def check_layout(secondaries) -> dict:
    """Validate overlay and stacking rules; return specs grouped by overlay group."""
    groups: dict = {}
    for spec in secondaries:
        groups.setdefault(spec.overlay_group, []).append(spec)
    for gid, specs in groups.items():
        if len(specs) > 2:
            raise RuleViolation(f"overlay group {gid} holds {len(specs)} holograms; at most two may overlap")
        if any(s.window != specs[0].window for s in specs):
            raise RuleViolation(f"holograms in overlay group {gid} must share one window")
    ids = sorted(groups)
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            if groups[a][0].window.overlaps(groups[b][0].window):
                raise RuleViolation(f"windows of overlay groups {a} and {b} overlap")
    return groups


def render_group(specs, illum, aberration, cfg, rng_seed) -> np.ndarray:
    """Binary window content of one overlay group."""
    cont = group_continuous(specs, illum, aberration, cfg)
    return random_binarize(cont, window_seed(rng_seed, specs[0].window))


def multiplex(primary: DmdPattern, secondaries, illum: ComplexField, aberration: AberrationMap | None,
              cfg: OpticalConfig, rng_seed: int) -> DmdPattern:
    """Replace window pixels of the primary hologram by secondary gratings.

    Overlaid maps of one group are summed and clamped before a single
    binarization pass. Pixels outside every window are left untouched.
    """
    secondaries = list(secondaries)
    if not secondaries:
        return primary
    groups = check_layout(secondaries)
    for specs in groups.values():
        specs[0].window.check_inside(cfg)
    fp1 = primary.fp1.copy()
    for gid in sorted(groups):
        specs = groups[gid]
        fp1[specs[0].window.region] = render_group(specs, illum, aberration, cfg, rng_seed)
    return primary.with_fp1(fp1)


def shift_grating(spec: GratingSpec, delta_phase: float) -> GratingSpec:
    """Advance the grating phase by ``delta_phase`` radians."""
    return spec.with_phase(spec.phase + delta_phase)


def grating_period(spec: GratingSpec, cfg: OpticalConfig) -> float:
    """Spatial period of the grating on FP1 in metres."""
    lf = cfg.wavelength * cfg.focal_length
    k = np.hypot(*spec.frequency)
    if k == 0:
        raise ParameterError("a grating with zero carrier has no period")
    return lf / k


def laterally_shifted_continuous(spec: SecondaryHologramSpec, illum: ComplexField,
                                 aberration: AberrationMap | None, cfg: OpticalConfig,
                                 delta_phase: float) -> np.ndarray:
    """Window content displaced by ``delta_phase / (2*pi)`` grating periods.

    The whole grating expression, including envelope equalisation and
    compensation phase, is sampled at displaced positions, mimicking a
    physical lateral shift of the grating inside a fixed window.
    """
    g = spec.grating
    lf = cfg.wavelength * cfg.focal_length
    k2 = g.frequency[0] ** 2 + g.frequency[1] ** 2
    if k2 == 0:
        raise ParameterError("a grating with zero carrier cannot be shifted laterally")
    shift = delta_phase * lf / (TWO_PI * k2)
    sx, sy = shift * g.frequency[0], shift * g.frequency[1]
    win = spec.window
    win.check_inside(cfg)
    rr, cc = np.mgrid[win.rows, win.cols].astype(float)
    rr += sy / illum.pitch_y
    cc += sx / illum.pitch_x
    amp_full = np.abs(illum.samples)
    amp = ndimage.map_coordinates(amp_full, [rr, cc], order=1, mode="nearest")
    amp = _floored_amplitude(amp, cfg.amplitude_floor)
    # the equalisation factor is tied to the window, not to the content
    eta = _floored_amplitude(amp_full[win.region], cfg.amplitude_floor, warn=False).min()
    x, y = illum.coords()
    xs = x[win.cols][None, :] + sx
    ys = y[win.rows][:, None] + sy
    arg = TWO_PI * (g.frequency[0] * xs + g.frequency[1] * ys) / lf + g.phase
    if aberration is not None:
        arg = arg - ndimage.map_coordinates(aberration.phase, [rr, cc], order=1, mode="nearest")
    return np.clip((eta / amp) * 0.5 * g.amplitude * (np.cos(arg) + 1.0), 0.0, 1.0)


def stack_windows(rows_per_group, cfg: OpticalConfig, width: int | None = None, guard: int = 2,
                  center=None) -> list[WindowSpec]:
    """Stack one window per overlay group along y.

    Windows are centred on the illumination maximum (the FP1 centre by
    default) with ``guard`` empty rows between neighbours.

    Raises
    ------
    CapacityError
        If the stack does not fit inside the FP1 region.
    """
    rows_fp1, cols_fp1 = cfg.fp1_shape
    if width is None:
        width = max(1, DEFAULT_WINDOW_COLS // cfg.superpixel)
    rows_per_group = [int(r) for r in rows_per_group]
    if not rows_per_group:
        return []
    if any(r < 1 for r in rows_per_group):
        raise ParameterError("each window needs at least one row")
    cr, cc = center if center is not None else (rows_fp1 // 2, cols_fp1 // 2)
    total = sum(rows_per_group) + guard * (len(rows_per_group) - 1)
    top = cr - total // 2
    left = cc - width // 2
    if total > rows_fp1 or width > cols_fp1 or top < 0 or top + total > rows_fp1 \
            or left < 0 or left + width > cols_fp1:
        raise CapacityError(f"{len(rows_per_group)} windows need {total} x {width} pixels; "
                            f"FP1 region is {rows_fp1} x {cols_fp1}")
    out = []
    r = top
    for h in rows_per_group:
        out.append(WindowSpec(width=width, height=h, origin=(r, left)))
        r += h + guard
    return out


# ---------------------------------------------------------- primary (IFTA)


def _target_window(nx, ny, qx, qy, target, radius):
    X = axis_coords(nx, qx)
    Y = axis_coords(ny, qy)
    d2 = (X[None, :] - target.X0[0]) ** 2 + (Y[:, None] - target.X0[1]) ** 2
    w = target.waist_request
    return np.exp(-d2 / w ** 2), d2 <= (radius * w) ** 2


def ifta_continuous(target: AddressingTarget, illum: ComplexField, aberration: AberrationMap | None,
                    iterations: int, cfg: OpticalConfig, signal_radius: float = 3.0) -> np.ndarray:
    """Continuous FP1 transmission whose first order forms a Gaussian spot at X0.

    Starts from the analytic off-axis amplitude grating carrying compensation
    phase ``-phi_in`` and envelope ``G/|E_in|`` and refines it by alternating
    projections: inside a disk of ``signal_radius`` waists around X0 the image
    amplitude is reset to the target Gaussian (phase kept, power matched),
    outside it is left free; on FP1 the field is projected onto real
    transmissions in [0, 1].
    """
    if int(iterations) != iterations or iterations < 1:
        raise ParameterError("iterations must be a positive integer")
    target.check_inside(cfg)
    amp = np.abs(illum.samples)
    if not amp.max() > 0:
        raise ParameterError("illumination is zero")
    amp_c = np.maximum(amp, cfg.amplitude_floor * amp.max())
    phi = np.zeros(amp.shape) if aberration is None else aberration.phase
    if phi.shape != amp.shape:
        raise ParameterError("aberration map is not co-sampled with the illumination")
    lf = cfg.wavelength * cfg.focal_length
    x, y = illum.coords()
    wf = lf / (np.pi * target.waist_request)
    env = np.exp(-(x[None, :] ** 2 + y[:, None] ** 2) / wf ** 2) / amp_c
    env /= env.max()
    carrier = TWO_PI * (target.X0[0] * x[None, :] + target.X0[1] * y[:, None]) / lf
    t = 0.5 * env * (1.0 + np.cos(carrier - phi))

    ny, nx = amp.shape
    my, mx = sfft.next_fast_len(ny), sfft.next_fast_len(nx)
    oy, ox = my // 2 - ny // 2, mx // 2 - nx // 2
    qx, qy = lf / (mx * illum.pitch_x), lf / (my * illum.pitch_y)
    goal, inside = _target_window(mx, my, qx, qy, target, signal_radius)
    goal_in = goal[inside]
    beam = amp * np.exp(1j * phi)
    buf = np.zeros((my, mx), dtype=np.complex128)
    for _ in range(int(iterations)):
        buf[:] = 0
        buf[oy:oy + ny, ox:ox + nx] = beam * t
        img = sfft.fftshift(sfft.fft2(sfft.ifftshift(buf)))
        cur = img[inside]
        scale = np.linalg.norm(cur) / np.linalg.norm(goal_in)
        img[inside] = scale * goal_in * np.exp(1j * np.angle(cur))
        back = sfft.fftshift(sfft.ifft2(sfft.ifftshift(img)))[oy:oy + ny, ox:ox + nx]
        t = np.clip(np.real(back * np.exp(-1j * phi)) / amp_c, 0.0, 1.0)
    return t


def ifta_primary(target: AddressingTarget, illum: ComplexField, aberration: AberrationMap | None,
                 iterations: int, rng_seed: int, cfg: OpticalConfig, signal_radius: float = 3.0) -> DmdPattern:
    """Binary primary hologram: :func:`ifta_continuous` followed by random binarization.

    The IP1 region of the returned pattern is all ON (open pupil).
    """
    t = ifta_continuous(target, illum, aberration, iterations, cfg, signal_radius)
    binary = random_binarize(t, np.random.SeedSequence([int(rng_seed), 0]))
    return DmdPattern.blank(cfg).with_fp1(binary)


# -------------------------------------------------------------- pattern I/O

_PATTERN_MAGIC = b"DMDPAT01"
_PATTERN_HEADER = struct.Struct("<III")


def write_pattern(pattern: DmdPattern, path, fmt: str = "binary") -> Path:
    """Serialise a pattern.

    Binary layout: 8-byte magic ``DMDPAT01``, little-endian uint32 rows, cols
    and partition column, then the mirror states bit-packed row-major, most
    significant bit first, padded with zeros to a whole byte. The text layout
    has a header line ``DMDPAT01 rows cols partition`` followed by one line of
    ``0``/``1`` characters per row.
    """
    path = Path(path)
    rows, cols = pattern.shape
    if fmt == "binary":
        payload = np.packbits(pattern.mirrors.ravel(), bitorder="big").tobytes()
        path.write_bytes(_PATTERN_MAGIC + _PATTERN_HEADER.pack(rows, cols, pattern.partition) + payload)
    elif fmt == "text":
        lines = [f"DMDPAT01 {rows} {cols} {pattern.partition}"]
        chars = np.where(pattern.mirrors.astype(bool), "1", "0")
        lines.extend("".join(row) for row in chars)
        path.write_text("\n".join(lines) + "\n")
    else:
        raise ParameterError("fmt must be 'binary' or 'text'")
    return path


def read_pattern(path) -> DmdPattern:
    """Read a pattern written by :func:`write_pattern` (either layout)."""
    raw = Path(path).read_bytes()
    head = len(_PATTERN_MAGIC) + _PATTERN_HEADER.size
    if raw.startswith(_PATTERN_MAGIC) and len(raw) >= head:
        rows, cols, part = _PATTERN_HEADER.unpack_from(raw, len(_PATTERN_MAGIC))
        # the text layout starts with the same magic; only the size tells them apart
        binary = len(raw) == head + (rows * cols + 7) // 8
    else:
        binary = False
    if binary:
        payload = np.frombuffer(raw, dtype=np.uint8, offset=len(_PATTERN_MAGIC) + _PATTERN_HEADER.size)
        bits = np.unpackbits(payload, count=rows * cols, bitorder="big")
        return DmdPattern(bits.reshape(rows, cols), part)
    try:
        lines = raw.decode("ascii").split()
    except UnicodeDecodeError:
        lines = []
    if not lines or lines[0] != "DMDPAT01":
        raise ParameterError(f"{path} is not a DMD pattern file")
    rows, cols, part = (int(v) for v in lines[1:4])
    body = lines[4:4 + rows]
    mirrors = np.array([[ch == "1" for ch in row] for row in body], dtype=np.uint8)
    if mirrors.shape != (rows, cols):
        raise ParameterError("pattern text body does not match its header")
    return DmdPattern(mirrors, part)
