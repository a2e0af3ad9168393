"""Sampled complex fields and scalar light propagation.

Sign convention
---------------
The forward lens transform uses the kernel ``exp(-2j*pi*(x*X + y*Y)/(lambda*f))``.
A hologram carrying the phase ``+2*pi*X0*x/(lambda*f)`` therefore focuses to
``+X0`` in the image plane. Two forward transforms in sequence (the relay)
invert the image, ``x -> -M*x``.

Grid convention
---------------
Sample ``j`` of an axis with ``n`` samples sits at ``origin + (j - n//2) * pitch``.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .config import OpticalConfig
from .errors import ConfigError, ParameterError, ShapeError

PLANES = ("FP1", "IP1", "FP2", "IP2", "custom")
_NEXT_PLANE = {"FP1": "IP1", "IP1": "FP2", "FP2": "IP2"}
_PREV_PLANE = {v: k for k, v in _NEXT_PLANE.items()}


def axis_coords(n: int, pitch: float, origin: float = 0.0) -> np.ndarray:
    """Physical sample coordinates of a centred axis."""
    return origin + (np.arange(n) - n // 2) * pitch


@dataclass(frozen=True, eq=False)
class ComplexField:
    """Complex amplitude sampled on a regular 2-D grid.

    Parameters
    ----------
    samples : ndarray, shape (ny, nx)
        Complex amplitude, row index along y.
    pitch_x, pitch_y : float
        Sample spacing in metres.
    plane : str
        One of ``FP1, IP1, FP2, IP2, custom``.
    origin : tuple of float
        Physical (x, y) coordinate of the grid centre sample.
    """

    samples: np.ndarray
    pitch_x: float
    pitch_y: float
    plane: str = "custom"
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        arr = np.asarray(self.samples)
        if arr.ndim != 2 or min(arr.shape) < 2:
            raise ShapeError(f"field grid must be 2-D with >= 2 samples per axis, got {arr.shape}")
        if not (self.pitch_x > 0 and self.pitch_y > 0):
            raise ParameterError("field pitch must be strictly positive")
        if self.plane not in PLANES:
            raise ParameterError(f"unknown plane label {self.plane!r}")
        if not np.iscomplexobj(arr):
            arr = arr.astype(np.complex128)
        if not np.all(np.isfinite(arr)):
            raise ParameterError("field samples must be finite")
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self) -> tuple[int, int]:
        return self.samples.shape

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Return the (x, y) axis coordinates."""
        ny, nx = self.shape
        return (axis_coords(nx, self.pitch_x, self.origin[0]),
                axis_coords(ny, self.pitch_y, self.origin[1]))

    def intensity(self) -> np.ndarray:
        return np.abs(self.samples) ** 2

    def power(self) -> float:
        """Total power, sum of |u|^2 times the sample area."""
        return float(np.sum(self.intensity()) * self.pitch_x * self.pitch_y)

    def with_samples(self, samples, plane: str | None = None, origin=None) -> "ComplexField":
        return ComplexField(samples, self.pitch_x, self.pitch_y,
                            self.plane if plane is None else plane,
                            self.origin if origin is None else origin)


@dataclass(frozen=True, eq=False)
class AberrationMap:
    """Phase map in radians, co-sampled with the field it acts on."""

    phase: np.ndarray
    description: str = ""

    def __post_init__(self):
        arr = np.asarray(self.phase, dtype=float)
        if arr.ndim != 2:
            raise ShapeError("aberration phase must be 2-D")
        if not np.all(np.isfinite(arr)):
            raise ParameterError("aberration phase must be finite")
        object.__setattr__(self, "phase", arr)

    @classmethod
    def zeros(cls, shape) -> "AberrationMap":
        return cls(np.zeros(shape), "none")

    def __add__(self, other: "AberrationMap") -> "AberrationMap":
        if self.phase.shape != other.phase.shape:
            raise ShapeError("aberration maps differ in shape")
        desc = " + ".join(d for d in (self.description, other.description) if d)
        return AberrationMap(self.phase + other.phase, desc)

    def scaled(self, factor: float) -> "AberrationMap":
        return AberrationMap(self.phase * factor, self.description)


@dataclass(frozen=True, eq=False)
class DmdPattern:
    """Binary mirror states over the full DMD, at simulation resolution.

    ``mirrors[:, :partition]`` is the FP1 region, the rest is IP1.
    """

    mirrors: np.ndarray
    partition: int

    def __post_init__(self):
        arr = np.asarray(self.mirrors)
        if arr.ndim != 2:
            raise ShapeError("mirror matrix must be 2-D")
        if arr.dtype != np.uint8:
            if not np.all((arr == 0) | (arr == 1)):
                raise ParameterError("mirror states must be strictly binary")
            arr = arr.astype(np.uint8)
        elif arr.size and arr.max() > 1:
            raise ParameterError("mirror states must be strictly binary")
        if not 0 < self.partition < arr.shape[1]:
            raise ParameterError("partition must split the mirror matrix")
        object.__setattr__(self, "mirrors", arr)
        object.__setattr__(self, "partition", int(self.partition))

    @classmethod
    def blank(cls, cfg: OpticalConfig, fp1_value: int = 0, ip1_value: int = 1) -> "DmdPattern":
        m = np.empty(cfg.dmd_shape, dtype=np.uint8)
        m[:, :cfg.partition] = fp1_value
        m[:, cfg.partition:] = ip1_value
        return cls(m, cfg.partition)

    @property
    def shape(self):
        return self.mirrors.shape

    @property
    def fp1(self) -> np.ndarray:
        return self.mirrors[:, :self.partition]

    @property
    def ip1(self) -> np.ndarray:
        return self.mirrors[:, self.partition:]

    def with_fp1(self, fp1) -> "DmdPattern":
        fp1 = np.asarray(fp1)
        if fp1.shape != self.fp1.shape:
            raise ShapeError(f"FP1 content shape {fp1.shape} != {self.fp1.shape}")
        m = self.mirrors.copy()
        m[:, :self.partition] = fp1
        return DmdPattern(m, self.partition)

    def with_ip1(self, ip1) -> "DmdPattern":
        ip1 = np.asarray(ip1)
        if ip1.shape != self.ip1.shape:
            raise ShapeError(f"IP1 content shape {ip1.shape} != {self.ip1.shape}")
        m = self.mirrors.copy()
        m[:, self.partition:] = ip1
        return DmdPattern(m, self.partition)

    def equals(self, other: "DmdPattern") -> bool:
        return self.partition == other.partition and np.array_equal(self.mirrors, other.mirrors)

    def check(self, cfg: OpticalConfig) -> None:
        if self.shape != cfg.dmd_shape or self.partition != cfg.partition:
            raise ConfigError(f"pattern shape {self.shape} does not match configuration {cfg.dmd_shape}")


# ----------------------------------------------------------------- sources


def gaussian_illumination(cfg: OpticalConfig, plane_shape=None) -> ComplexField:
    """Collimated Gaussian beam on the FP1 region.

    Returns a field with ``|E| = exp(-r^2 / w0^2)``, unit peak, zero phase.
    """
    shape = cfg.fp1_shape
    if plane_shape is not None and tuple(plane_shape) != shape:
        raise ConfigError(f"plane shape {tuple(plane_shape)} does not match FP1 region {shape}")
    x = axis_coords(shape[1], cfg.pitch)
    y = axis_coords(shape[0], cfg.pitch)
    w0 = cfg.illumination_waist
    amp = np.exp(-(y[:, None] ** 2) / w0 ** 2) * np.exp(-(x[None, :] ** 2) / w0 ** 2)
    return ComplexField(amp.astype(np.complex128), cfg.pitch, cfg.pitch, "FP1")


# ------------------------------------------------------------------- masks


def ip1_mirror_index(cfg: OpticalConfig, registration, x, y):
    """Map IP1 image coordinates to (row, col) of the IP1 mirror grid.

    Mirror ``(rows//2, cols//2)`` of the IP1 region is centred on
    ``registration``. Indices outside the region are returned as -1.
    """
    rows, cols = cfg.ip1_shape
    ps = cfg.pitch
    c = np.floor((np.asarray(x) - registration[0]) / ps + 0.5).astype(int) + cols // 2
    r = np.floor((np.asarray(y) - registration[1]) / ps + 0.5).astype(int) + rows // 2
    c = np.where((c >= 0) & (c < cols), c, -1)
    r = np.where((r >= 0) & (r < rows), r, -1)
    return r, c


def ip1_mirror_center(cfg: OpticalConfig, registration, row, col) -> tuple[float, float]:
    """Image coordinate (x, y) of the centre of IP1 mirror ``(row, col)``."""
    rows, cols = cfg.ip1_shape
    return (registration[0] + (col - cols // 2) * cfg.pitch,
            registration[1] + (row - rows // 2) * cfg.pitch)


def rasterize_ip1(pattern: DmdPattern, field: ComplexField, cfg: OpticalConfig, registration=None) -> np.ndarray:
    """Sample the IP1 mirror states on the grid of an IP1 field.

    A sample is transmitted when its centre falls on an ON mirror; samples
    outside the IP1 region see no mirror and are blocked.
    """
    if registration is None:
        registration = field.origin
    x, y = field.coords()
    r, _ = ip1_mirror_index(cfg, registration, 0.0, y)
    _, c = ip1_mirror_index(cfg, registration, x, 0.0)
    ip1 = pattern.ip1.astype(bool)
    mask = np.zeros(field.shape, dtype=bool)
    rv = r >= 0
    cv = c >= 0
    mask[np.ix_(rv, cv)] = ip1[np.ix_(r[rv], c[cv])]
    return mask


def apply_mask(field: ComplexField, pattern: DmdPattern, region: str = "FP1",
               cfg: OpticalConfig | None = None, registration=None) -> ComplexField:
    """Multiply a field by the binary mirror states of one DMD region.

    For IP1 the field may live on a finer grid than the mirrors; pass ``cfg``
    to rasterize the mirror states onto the field samples.
    """
    if region not in ("FP1", "IP1"):
        raise ParameterError("region must be 'FP1' or 'IP1'")
    if field.plane not in (region, "custom"):
        raise ParameterError(f"field in plane {field.plane} cannot take the {region} mask")
    mask = pattern.fp1 if region == "FP1" else pattern.ip1
    if mask.shape != field.shape:
        if region == "IP1" and cfg is not None:
            mask = rasterize_ip1(pattern, field, cfg, registration)
        else:
            raise ShapeError(f"mask shape {mask.shape} does not match field {field.shape}")
    return field.with_samples(np.where(mask.astype(bool), field.samples, 0))


# -------------------------------------------------------------- transforms


def _centered_fft2(u: np.ndarray, inverse: bool = False) -> np.ndarray:
    shifted = sfft.ifftshift(u)
    out = sfft.ifft2(shifted, norm="forward") if inverse else sfft.fft2(shifted)
    return sfft.fftshift(out)


def lens_fourier(field: ComplexField, cfg: OpticalConfig, direction: str = "forward",
                 focal_length: float | None = None, pad_factor: int = 1) -> ComplexField:
    """Optical Fourier transform by a thin lens of focal length f.

    The output pitch is ``lambda*f / (N * pitch)`` per axis and total power is
    conserved exactly (Parseval). ``pad_factor`` zero-pads the input
    symmetrically to refine the output sampling.

    Parameters
    ----------
    field : ComplexField
        Input field in the front focal plane.
    cfg : OpticalConfig
        Supplies the wavelength and, by default, the focal length.
    direction : {"forward", "inverse"}
    focal_length : float, optional
        Overrides ``cfg.focal_length``.
    pad_factor : int
        Integer zero-padding factor.
    """
    if direction not in ("forward", "inverse"):
        raise ParameterError("direction must be 'forward' or 'inverse'")
    if int(pad_factor) != pad_factor or pad_factor < 1:
        raise ParameterError("pad_factor must be a positive integer")
    f = cfg.focal_length if focal_length is None else focal_length
    lf = cfg.wavelength * f
    u = field.samples
    ny, nx = u.shape
    if pad_factor > 1:
        my, mx = ny * pad_factor, nx * pad_factor
        padded = np.zeros((my, mx), dtype=np.complex128)
        oy, ox = my // 2 - ny // 2, mx // 2 - nx // 2
        padded[oy:oy + ny, ox:ox + nx] = u
        u = padded
        ny, nx = my, mx
    scale = field.pitch_x * field.pitch_y / lf
    out = _centered_fft2(u, inverse=(direction == "inverse")) * scale
    qx = lf / (nx * field.pitch_x)
    qy = lf / (ny * field.pitch_y)
    ox, oy = field.origin
    if ox or oy:
        sign = -1.0 if direction == "forward" else 1.0
        X = axis_coords(nx, qx)
        Y = axis_coords(ny, qy)
        out *= np.exp(sign * 2j * np.pi * oy * Y / lf)[:, None]
        out *= np.exp(sign * 2j * np.pi * ox * X / lf)[None, :]
    table = _NEXT_PLANE if direction == "forward" else _PREV_PLANE
    plane = table.get(field.plane, "custom")
    return ComplexField(out, qx, qy, plane, (0.0, 0.0))


@functools.lru_cache(maxsize=16)
def _dft_kernel(n_in: int, pitch_in: float, origin_in: float,
                n_out: int, pitch_out: float, origin_out: float,
                lf: float, sign: float) -> np.ndarray:
    x = axis_coords(n_in, pitch_in, origin_in)
    X = axis_coords(n_out, pitch_out, origin_out)
    kernel = np.exp(sign * 2j * np.pi * np.outer(x, X) / lf)
    kernel.setflags(write=False)
    return kernel


def dft_kernels(field_shape, field_pitch, field_origin, out_shape, out_pitch, out_origin, lf):
    """Separable forward-transform kernels ``(My, Mx)``.

    ``My @ u @ Mx`` times ``px*py/lf`` is the lens transform sampled on the
    requested output grid.
    """
    ny, nx = field_shape
    my = _dft_kernel(ny, field_pitch[1], field_origin[1], out_shape[0], out_pitch[1], out_origin[1], lf, -1.0).T
    mx = _dft_kernel(nx, field_pitch[0], field_origin[0], out_shape[1], out_pitch[0], out_origin[0], lf, -1.0)
    return my, mx


def zoom_fourier(field: ComplexField, cfg: OpticalConfig, out_shape, out_pitch, out_origin=(0.0, 0.0),
                 focal_length: float | None = None) -> ComplexField:
    """Lens transform evaluated on an arbitrary regular output grid.

    Equivalent to :func:`lens_fourier` sampled at other points; used to look at
    a small, finely sampled patch of the image plane around the addressed spot.
    """
    f = cfg.focal_length if focal_length is None else focal_length
    lf = cfg.wavelength * f
    if np.isscalar(out_pitch):
        out_pitch = (out_pitch, out_pitch)
    my, mx = dft_kernels(field.shape, (field.pitch_x, field.pitch_y), field.origin,
                         tuple(out_shape), tuple(out_pitch), tuple(out_origin), lf)
    scale = field.pitch_x * field.pitch_y / lf
    out = (my @ field.samples) @ mx * scale
    plane = _NEXT_PLANE.get(field.plane, "custom")
    return ComplexField(out, out_pitch[0], out_pitch[1], plane, tuple(out_origin))


def field_at_points(field: ComplexField, cfg: OpticalConfig, xs, ys, focal_length: float | None = None) -> np.ndarray:
    """Lens-transform amplitude at scattered image points ``(xs[k], ys[k])``."""
    f = cfg.focal_length if focal_length is None else focal_length
    lf = cfg.wavelength * f
    x, y = field.coords()
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    rows = np.exp(-2j * np.pi * np.outer(ys, y) / lf) @ field.samples
    cols = np.exp(-2j * np.pi * np.outer(xs, x) / lf)
    return np.sum(rows * cols, axis=1) * field.pitch_x * field.pitch_y / lf


def fourier_aperture(field: ComplexField, radius: float, shape: str = "circle") -> ComplexField:
    """Zero the field outside a centred circular or square stop."""
    if not radius > 0:
        raise ParameterError("aperture radius must be positive")
    x, y = field.coords()
    dx = x - field.origin[0]
    dy = y - field.origin[1]
    if shape == "circle":
        inside = dy[:, None] ** 2 + dx[None, :] ** 2 <= radius ** 2
    elif shape == "square":
        inside = (np.abs(dy)[:, None] <= radius) & (np.abs(dx)[None, :] <= radius)
    else:
        raise ParameterError("aperture shape must be 'circle' or 'square'")
    return field.with_samples(np.where(inside, field.samples, 0))


def fourier_plane_grid(field: ComplexField, focal_length: float, wavelength: float):
    """Shape and pitch of the unpadded Fourier plane of ``field``."""
    ny, nx = field.shape
    lf = wavelength * focal_length
    return (ny, nx), (lf / (nx * field.pitch_x), lf / (ny * field.pitch_y))


def relay_image(field: ComplexField, cfg: OpticalConfig, aberration: AberrationMap | None = None,
                aperture_radius: float | None = None, aperture_shape: str | None = None) -> ComplexField:
    """Image an IP1 field onto IP2 through a two-lens relay.

    Implemented as lens transform (f3), optional stop and pupil aberration in
    the shared Fourier plane, and a second forward lens transform (f4). The
    output pitch is ``M * pitch`` and the image is inverted; the optical axis
    of the relay passes through the centre sample of ``field``.

    Parameters
    ----------
    aberration : AberrationMap, optional
        Pupil phase co-sampled with the relay Fourier plane.
    aperture_radius : float, optional
        Radius of the stop in metres; ``None`` leaves the pupil open.
    """
    centred = ComplexField(field.samples, field.pitch_x, field.pitch_y, "IP1", (0.0, 0.0))
    fp2 = lens_fourier(centred, cfg, focal_length=cfg.relay_focal_length)
    if aperture_radius is not None:
        fp2 = fourier_aperture(fp2, aperture_radius, aperture_shape or cfg.as2_shape)
    if aberration is not None:
        if aberration.phase.shape != fp2.shape:
            raise ShapeError("relay aberration is not co-sampled with the relay Fourier plane")
        fp2 = fp2.with_samples(fp2.samples * np.exp(1j * aberration.phase))
    ip2 = lens_fourier(fp2, cfg, focal_length=cfg.relay_f4)
    m = cfg.relay_magnification
    return ComplexField(ip2.samples, ip2.pitch_x, ip2.pitch_y, "IP2",
                        (-m * field.origin[0], -m * field.origin[1]))


# -------------------------------------------------------------- aberrations

ZERNIKE_TERMS = {
    "defocus": lambda r, t: 2 * r ** 2 - 1,
    "astig0": lambda r, t: r ** 2 * np.cos(2 * t),
    "astig45": lambda r, t: r ** 2 * np.sin(2 * t),
    "coma_x": lambda r, t: (3 * r ** 3 - 2 * r) * np.cos(t),
    "coma_y": lambda r, t: (3 * r ** 3 - 2 * r) * np.sin(t),
    "spherical": lambda r, t: 6 * r ** 4 - 6 * r ** 2 + 1,
    "trefoil_x": lambda r, t: r ** 3 * np.cos(3 * t),
    "trefoil_y": lambda r, t: r ** 3 * np.sin(3 * t),
}
DEFAULT_TERMS = ("astig0", "astig45", "coma_x", "coma_y", "spherical")


def synthetic_aberration(shape, pitch, rms: float, seed: int = 0, terms=DEFAULT_TERMS,
                         radius: float | None = None, coefficients=None) -> AberrationMap:
    """Low-order polynomial phase map with a prescribed RMS.

    Coefficients are drawn from a standard normal distribution (seeded) unless
    given. The map is normalised to zero mean and ``rms`` radians RMS over the
    disk of the given radius (default: inscribed in the grid).

    Parameters
    ----------
    shape : tuple of int
        Grid shape (ny, nx).
    pitch : float or tuple of float
        Sample pitch.
    rms : float
        Target RMS in radians; 0 gives a flat map.
    terms : sequence of str
        Names from :data:`ZERNIKE_TERMS`.
    """
    if rms < 0:
        raise ParameterError("aberration RMS must be non-negative")
    unknown = [t for t in terms if t not in ZERNIKE_TERMS]
    if unknown:
        raise ParameterError(f"unknown aberration terms {unknown}")
    px, py = (pitch, pitch) if np.isscalar(pitch) else pitch
    ny, nx = shape
    x = axis_coords(nx, px)
    y = axis_coords(ny, py)
    if radius is None:
        radius = 0.5 * min(nx * px, ny * py)
    rho = np.hypot(x[None, :], y[:, None]) / radius
    theta = np.arctan2(y[:, None], x[None, :])
    if coefficients is None:
        coefficients = np.random.default_rng(seed).normal(size=len(terms))
    coefficients = np.asarray(coefficients, dtype=float)
    if len(coefficients) != len(terms):
        raise ParameterError("one coefficient per term is required")
    phase = np.zeros(shape)
    for c, name in zip(coefficients, terms):
        phase += c * ZERNIKE_TERMS[name](rho, theta)
    disk = rho <= 1
    desc = f"{'+'.join(terms)} rms={rms:.4g} rad seed={seed}"
    if rms == 0 or not disk.any():
        return AberrationMap(np.zeros(shape), desc)
    phase -= phase[disk].mean()
    spread = phase[disk].std()
    if spread == 0:
        return AberrationMap(np.zeros(shape), desc)
    return AberrationMap(phase * (rms / spread), desc)


# ---------------------------------------------------------------- field I/O

_FIELD_MAGIC = b"DXFIELD1"
_FIELD_HEADER = struct.Struct("<ii4d16s")


def write_field(field: ComplexField, path, fmt: str = "binary") -> Path:
    """Write a field snapshot.

    Binary layout: 8-byte magic ``DXFIELD1``, little-endian int32 rows, int32
    cols, float64 pitch_x, pitch_y, origin_x, origin_y, a 16-byte ASCII plane
    label, then row-major float64 pairs (real, imag). The text layout has one
    ``#`` header line with the same values and one line per row of
    interleaved real/imag numbers.
    """
    path = Path(path)
    ny, nx = field.shape
    if fmt == "binary":
        header = _FIELD_HEADER.pack(ny, nx, field.pitch_x, field.pitch_y, *field.origin,
                                    field.plane.encode("ascii").ljust(16, b" "))
        data = np.ascontiguousarray(field.samples, dtype="<c16").view("<f8")
        path.write_bytes(_FIELD_MAGIC + header + data.tobytes())
    elif fmt == "text":
        lines = [f"# DXFIELD1 {ny} {nx} {field.pitch_x:.17g} {field.pitch_y:.17g} "
                 f"{field.origin[0]:.17g} {field.origin[1]:.17g} {field.plane}"]
        inter = field.samples.view(np.float64).reshape(ny, 2 * nx)
        for row in inter:
            lines.append(" ".join(f"{v:.17g}" for v in row))
        path.write_text("\n".join(lines) + "\n")
    else:
        raise ParameterError("fmt must be 'binary' or 'text'")
    return path


def read_field(path) -> ComplexField:
    """Read a field written by :func:`write_field` (either layout)."""
    path = Path(path)
    raw = path.read_bytes()
    if raw.startswith(_FIELD_MAGIC):
        off = len(_FIELD_MAGIC)
        ny, nx, px, py, ox, oy, plane = _FIELD_HEADER.unpack_from(raw, off)
        data = np.frombuffer(raw, dtype="<f8", offset=off + _FIELD_HEADER.size)
        samples = data.view("<c16").reshape(ny, nx).astype(np.complex128)
        return ComplexField(samples, px, py, plane.decode("ascii").strip(), (ox, oy))
    text = raw.decode("ascii").splitlines()
    head = text[0].split()
    if head[:2] != ["#", "DXFIELD1"]:
        raise ParameterError(f"{path} is not a field snapshot")
    ny, nx = int(head[2]), int(head[3])
    px, py, ox, oy = (float(v) for v in head[4:8])
    vals = np.array([[float(v) for v in line.split()] for line in text[1:1 + ny]])
    samples = vals.reshape(ny, nx, 2)
    return ComplexField(samples[..., 0] + 1j * samples[..., 1], px, py, head[8], (ox, oy))
