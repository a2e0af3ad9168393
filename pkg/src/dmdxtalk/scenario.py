"""Reproducible simulated scenes: illumination, aberrations and primary hologram."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .config import OpticalConfig
from .double_pass import default_relay_aberration
from .hologram import AddressingTarget, ifta_primary
from .optics import DEFAULT_TERMS, AberrationMap, ComplexField, DmdPattern, gaussian_illumination, \
    synthetic_aberration
from .system import SinglePassSystem

DEFAULT_CHARACTERIZED_RMS = 2 * np.pi / 8
DEFAULT_BASELINE_DB = -41.5


@dataclass(frozen=True, eq=False)
class Scene:
    """Everything needed to rebuild one simulated experiment.

    ``hologram_aberration`` is the characterized map the holograms compensate;
    ``train_aberration`` is what the optics actually apply (characterized plus
    an uncompensated residual of RMS ``residual_rms``).
    """

    cfg: OpticalConfig
    target: AddressingTarget
    illum: ComplexField
    primary: DmdPattern
    hologram_aberration: AberrationMap | None
    train_aberration: AberrationMap | None
    relay_aberration: AberrationMap | None
    rng_seed: int
    residual_rms: float = 0.0
    stray_floor: float = 0.0

    def single_pass(self, patch: int = 3, **kw) -> SinglePassSystem:
        return SinglePassSystem(self.cfg, self.target, self.illum, self.primary, self.train_aberration,
                                self.hologram_aberration, self.rng_seed, patch, **kw)

    def with_residual(self, residual: AberrationMap, rms: float) -> "Scene":
        base = self.hologram_aberration
        train = residual if base is None else base + residual
        return replace(self, train_aberration=train, residual_rms=float(rms))


def footprint_radius(cfg: OpticalConfig, target: AddressingTarget) -> float:
    """1/e amplitude radius on FP1 of the beam that focuses to the requested waist."""
    return cfg.wavelength * cfg.focal_length / (np.pi * target.waist_request)


def tune_residual(scene: Scene, residual_map, baseline_db: float, site: float = 4.0, step: float = 0.25,
                  max_rms: float = 1.5, attempts: int = 5, xtol: float = 2e-3) -> Scene:
    """Scale an uncompensated residual map until the single-pass I_X at ``site`` hits ``baseline_db``.

    ``residual_map(k)`` returns the k-th unit-RMS candidate map. The RMS is
    stepped up from zero until the crosstalk crosses the goal, then refined
    with Brent's method. Speckle from binarization makes the crosstalk at
    one point non-monotonic in the RMS; a candidate that never crosses the
    goal below ``max_rms`` is replaced by the next one. If none does, the
    closest candidate is kept.
    """
    best = None
    for k in range(attempts):
        unit = residual_map(k)

        def excess(rms):
            trial = scene.with_residual(unit.scaled(rms), rms)
            value = trial.single_pass().crosstalk([site])[site]
            return 10 * np.log10(value) - baseline_db

        lo, f_lo = 0.0, excess(0.0)
        if f_lo >= 0:
            return scene.with_residual(unit.scaled(0.0), 0.0)
        if best is None or abs(f_lo) < abs(best[2]):
            best = (unit, 0.0, f_lo)
        for hi in np.arange(1, int(round(max_rms / step)) + 1) * step:
            f_hi = excess(hi)
            if abs(f_hi) < abs(best[2]):
                best = (unit, hi, f_hi)
            if f_hi >= 0:
                rms = optimize.brentq(excess, lo, hi, xtol=xtol)
                return scene.with_residual(unit.scaled(rms), rms)
            lo = hi
    unit, rms, _ = best
    return scene.with_residual(unit.scaled(rms), rms)


def build_scene(cfg: OpticalConfig, target: AddressingTarget | None = None, seed: int = 0, *,
                characterized_rms: float = DEFAULT_CHARACTERIZED_RMS, residual_rms: float | None = None,
                baseline_db: float = DEFAULT_BASELINE_DB, tune_site: float = 4.0, ifta_iterations: int = 10,
                terms=DEFAULT_TERMS, relay_rms: float | None = None, relay_seed: int = 0,
                stray_floor: float = 0.0) -> Scene:
    """Build a seeded scene.

    The characterized and residual maps are low-order polynomial phases over
    a disk of twice the hologram footprint radius. With ``residual_rms=None``
    the residual is tuned so the baseline single-pass crosstalk at
    ``tune_site`` waists equals ``baseline_db``.
    """
    target = AddressingTarget() if target is None else target
    target.check_inside(cfg)
    illum = gaussian_illumination(cfg)
    radius = 2.0 * footprint_radius(cfg, target)
    shape, pitch = cfg.fp1_shape, cfg.pitch
    seed = int(seed)
    char = synthetic_aberration(shape, pitch, characterized_rms, seed=[seed, 0], terms=terms, radius=radius)

    def residual_map(k):
        return synthetic_aberration(shape, pitch, 1.0, seed=[seed, 1, k], terms=terms, radius=radius)

    primary = ifta_primary(target, illum, char, ifta_iterations, seed, cfg)
    relay = default_relay_aberration(cfg, target, seed=relay_seed, rms=relay_rms)
    scene = Scene(cfg, target, illum, primary, char, char, relay, seed, 0.0, float(stray_floor))
    if residual_rms is None:
        return tune_residual(scene, residual_map, baseline_db, tune_site)
    return scene.with_residual(residual_map(0).scaled(residual_rms), residual_rms)
