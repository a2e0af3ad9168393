"""Crosstalk profiles, the relative crosstalk metric and waist fits."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage, optimize

from .errors import Diagnostic, NoPeakError, ParameterError
from .optics import ComplexField


def apply_floor(intensities, floor_db: float) -> np.ndarray:
    """Clamp relative intensities from below at ``10**(floor_db/10)``."""
    return np.maximum(np.asarray(intensities, dtype=float), 10.0 ** (floor_db / 10.0))


def to_db(intensity) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(intensity)


@dataclass(frozen=True)
class WaistFit:
    waist: float
    center: float
    residual: float
    flagged: bool


@dataclass(frozen=True, eq=False)
class CrosstalkProfile:
    """Peak-normalised intensity cut along the addressing axis.

    Attributes
    ----------
    positions : ndarray
        Distance from the peak sample in metres.
    intensities : ndarray
        Linear, peak-normalised, floored intensities.
    waist : float
        Fitted 1/e^2 intensity radius in metres.
    floor_db : float
    plane : str
    waist_flagged : bool
        True when the central lobe is not Gaussian enough for a reliable fit.
    """

    positions: np.ndarray
    intensities: np.ndarray
    waist: float
    floor_db: float = -60.0
    plane: str = "custom"
    waist_flagged: bool = False

    def in_waists(self) -> np.ndarray:
        return self.positions / self.waist

    def db(self) -> np.ndarray:
        return to_db(self.intensities)


def _patch_mean(intensity: np.ndarray, patch: int) -> np.ndarray:
    if patch <= 1:
        return intensity
    return ndimage.uniform_filter(intensity, size=patch, mode="nearest")


def extract_profile(field: ComplexField, axis_angle: float = 0.0, patch: int = 3,
                    floor_db: float = -60.0) -> CrosstalkProfile:
    """Patch-averaged intensity cut through the global peak.

    Samples are taken every ``pitch_x`` along the direction ``axis_angle``
    (radians from +x). Off-grid samples are linearly interpolated from the
    patch-averaged map.
    """
    inten = field.intensity()
    if not inten.max() > 0:
        raise NoPeakError("field has no intensity peak")
    avg = _patch_mean(inten, int(patch))
    pr, pc = np.unravel_index(np.argmax(inten), inten.shape)
    ny, nx = inten.shape
    c, s = np.cos(axis_angle), np.sin(axis_angle)
    step = field.pitch_x
    if abs(s) < 1e-12:
        direction = 1 if c > 0 else -1
        k = np.arange(nx) - pc
        vals = avg[pr, :]
        pos = k * step * direction
        order = np.argsort(pos, kind="stable")
        pos, vals = pos[order], vals[order]
    else:
        reach = int(np.hypot(nx, ny))
        k = np.arange(-reach, reach + 1)
        cc = pc + k * c * step / field.pitch_x
        rr = pr + k * s * step / field.pitch_y
        ok = (cc >= 0) & (cc <= nx - 1) & (rr >= 0) & (rr <= ny - 1)
        k, cc, rr = k[ok], cc[ok], rr[ok]
        vals = ndimage.map_coordinates(avg, [rr, cc], order=1, mode="nearest")
        pos = k * step
    vals = vals / vals.max()
    fit = fit_waist_samples(pos, vals)
    return CrosstalkProfile(pos.astype(float), apply_floor(vals, floor_db), fit.waist, floor_db,
                            field.plane, fit.flagged)


def fit_waist_samples(positions, intensities, level: float = 0.1, max_residual: float = 0.1) -> WaistFit:
    """Least-squares fit of ``exp(-2 (x - x0)^2 / w^2)`` to samples above ``level``.

    Only the contiguous run of samples around the maximum is used. The
    residual is the RMS misfit relative to the peak; above ``max_residual``
    the fit is flagged and a :class:`Diagnostic` warning is emitted.
    """
    x = np.asarray(positions, dtype=float)
    v = np.asarray(intensities, dtype=float)
    v = v / v.max()
    i0 = int(np.argmax(v))
    lo = i0
    while lo > 0 and v[lo - 1] >= level:
        lo -= 1
    hi = i0
    while hi < len(v) - 1 and v[hi + 1] >= level:
        hi += 1
    xs, vs = x[lo:hi + 1], v[lo:hi + 1]
    if len(xs) < 5:
        raise ParameterError("fewer than 5 samples in the central lobe")
    q = np.polyfit(xs, np.log(vs), 2, w=vs)
    if q[0] >= 0:
        w0 = (xs[-1] - xs[0]) / 2
        c0 = x[i0]
    else:
        w0 = np.sqrt(-2.0 / q[0])
        c0 = -q[1] / (2 * q[0])

    def model(xx, amp, cen, w):
        return amp * np.exp(-2.0 * (xx - cen) ** 2 / w ** 2)

    try:
        with warnings.catch_warnings():
            # an exact fit leaves the covariance undefined; only the parameters matter here
            warnings.simplefilter("ignore", optimize.OptimizeWarning)
            (amp, cen, w), _ = optimize.curve_fit(model, xs, vs, p0=(1.0, c0, w0), maxfev=2000)
    except RuntimeError:
        amp, cen, w = 1.0, c0, w0
    w = abs(w)
    resid = float(np.sqrt(np.mean((vs - model(xs, amp, cen, w)) ** 2)))
    flagged = resid > max_residual
    if flagged:
        warnings.warn(f"central lobe is not Gaussian (fit residual {resid:.3f})", Diagnostic, stacklevel=2)
    return WaistFit(float(w), float(cen), resid, flagged)


def fit_waist(profile: CrosstalkProfile) -> WaistFit:
    """Fit a Gaussian waist to the central lobe of a profile."""
    return fit_waist_samples(profile.positions, profile.intensities)


def relative_crosstalk(profile: CrosstalkProfile, location: float) -> float:
    """I_X in dB at ``location`` waists from the peak.

    Intensities are interpolated linearly between samples.
    """
    pos = profile.in_waists()
    if not pos[0] <= location <= pos[-1]:
        raise ParameterError(f"location {location} outside profile range [{pos[0]:.3f}, {pos[-1]:.3f}]")
    return float(to_db(np.interp(location, pos, profile.intensities)))


def write_profile(profile: CrosstalkProfile, path) -> Path:
    """Two-column table: position in waists (3 decimals) and I_X in dB (2 decimals)."""
    path = Path(path)
    lines = ["position_w\tI_X_dB"]
    for p, d in zip(profile.in_waists(), profile.db()):
        lines.append(f"{p:.3f}\t{d:.2f}")
    path.write_text("\n".join(lines) + "\n")
    return path
