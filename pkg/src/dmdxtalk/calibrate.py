"""Scan-and-fit protocols: phase and amplitude scans, grid search, multi-site
optimisation and double-pass beam-center calibration.

The optimiser drives a *system*: any object with the methods of
:class:`dmdxtalk.system.AddressingSystem` used below (``register_sites``,
``crosstalk``, ``intensity``, ``unit_response``, ``reference_window``,
``plan_windows``, ``make_spec``, ``commit``, ``clear_group``).
:class:`TwoBeamOracle` is a closed-form implementation for testing.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from .errors import CapacityError, Diagnostic, NoBeamError, ParameterError
from .hologram import GratingSpec, SecondaryHologramSpec, WindowSpec

TWO_PI = 2.0 * np.pi
MAX_SITES = 8


# ------------------------------------------------------------------- fits


@dataclass(frozen=True, eq=False)
class ScanResult:
    """One 1-D scan and its model fit.

    ``flag`` is empty for a clean fit, otherwise one of ``"no-contrast"``,
    ``"extrapolated"`` or ``"non-convex"``. ``included`` marks the samples
    that entered the fit.
    """

    kind: str
    parameter_values: np.ndarray
    intensities: np.ndarray
    fit_params: tuple
    fit_residual_rms: float
    optimum: float | None
    flag: str = ""
    included: np.ndarray | None = None
    site: float = float("nan")

    def __post_init__(self):
        if np.any(np.asarray(self.intensities) < 0):
            raise ParameterError("scan intensities must be non-negative")


def fit_cosine(phases, intensities):
    """Fit ``c0 + c1*cos(phi - phi0)``; return ``(c0, c1, phi0), residual, optimum, flag``.

    The residual is the RMS misfit divided by the data range; the optimum is
    the fitted minimum ``phi0 + pi`` reduced to [0, 2*pi).
    """
    phi = np.asarray(phases, dtype=float)
    y = np.asarray(intensities, dtype=float)
    design = np.column_stack([np.ones_like(phi), np.cos(phi), np.sin(phi)])
    (c0, a, b), *_ = np.linalg.lstsq(design, y, rcond=None)
    c1 = float(np.hypot(a, b))
    phi0 = float(np.mod(np.arctan2(b, a), TWO_PI))
    misfit = float(np.sqrt(np.mean((design @ np.array([c0, a, b]) - y) ** 2)))
    span = float(y.max() - y.min())
    resid = misfit / span if span > 0 else 0.0
    flag = ""
    if c1 < 3 * misfit or c1 == 0:
        flag = "no-contrast"
        warnings.warn("no interference contrast in phase scan", Diagnostic, stacklevel=2)
    return (float(c0), c1, phi0), resid, float(np.mod(phi0 + np.pi, TWO_PI)), flag


def fit_quadratic(values, intensities, exclusion_threshold: float = 0.9):
    """Quadratic fit of intensity against amplitude below ``exclusion_threshold``.

    Returns ``(p2, p1, p0), residual, optimum, flag, included``. The optimum
    is the vertex clamped to [0, 1]; it is ``None`` for a non-convex fit.
    """
    x = np.asarray(values, dtype=float)
    y = np.asarray(intensities, dtype=float)
    included = x < exclusion_threshold
    if included.sum() < 3:
        raise ParameterError("at least three amplitude samples below the exclusion threshold are needed")
    xs, ys = x[included], y[included]
    p = np.polyfit(xs, ys, 2)
    misfit = float(np.sqrt(np.mean((np.polyval(p, xs) - ys) ** 2)))
    span = float(ys.max() - ys.min())
    resid = misfit / span if span > 0 else 0.0
    if p[0] <= 0:
        warnings.warn("amplitude scan is not convex; optimum undefined", Diagnostic, stacklevel=2)
        return tuple(float(v) for v in p), resid, None, "non-convex", included
    vertex = -p[1] / (2 * p[0])
    flag = "" if xs.min() <= vertex <= xs.max() else "extrapolated"
    return tuple(float(v) for v in p), resid, float(np.clip(vertex, 0.0, 1.0)), flag, included


# ------------------------------------------------------------------ scans


def scan_phase(system, spec: SecondaryHologramSpec, probe_site: float, n_points: int = 16,
               A_s_fixed: float | None = None) -> ScanResult:
    """Intensity at ``probe_site`` over ``n_points`` phases uniformly covering [0, 2*pi)."""
    if n_points < 8:
        raise ParameterError("a phase scan needs at least 8 points")
    if A_s_fixed is not None:
        spec = spec.with_grating(amplitude=A_s_fixed)
    phases = TWO_PI * np.arange(n_points) / n_points
    vals = np.array([system.intensity(spec.with_grating(phase=p), probe_site) for p in phases])
    params, resid, opt, flag = fit_cosine(phases, vals)
    return ScanResult("phase", phases, vals, params, resid, opt, flag, np.ones(n_points, bool), probe_site)


def scan_amplitude(system, spec: SecondaryHologramSpec, probe_site: float, n_points: int = 8,
                   phi_fixed: float | None = None, exclusion_threshold: float = 0.9,
                   values=None) -> ScanResult:
    """Intensity at ``probe_site`` over amplitudes in [0, exclusion_threshold].

    Samples at or above the threshold are recorded but left out of the fit.
    """
    if values is None:
        if n_points < 6:
            raise ParameterError("an amplitude scan needs at least 6 points")
        values = np.linspace(0.0, exclusion_threshold, n_points)
    values = np.asarray(values, dtype=float)
    if phi_fixed is not None:
        spec = spec.with_grating(phase=phi_fixed)
    vals = np.array([system.intensity(spec.with_grating(amplitude=a), probe_site) for a in values])
    params, resid, opt, flag, inc = fit_quadratic(values, vals, exclusion_threshold)
    return ScanResult("amplitude", values, vals, params, resid, opt, flag, inc, probe_site)


@dataclass(frozen=True, eq=False)
class GridResult:
    """Intensity map indexed ``[amplitude, phase]`` with its global minimum."""

    phases: np.ndarray
    amplitudes: np.ndarray
    intensities: np.ndarray
    minimum: tuple

    @property
    def best(self) -> tuple:
        i, j = self.minimum
        return float(self.phases[j]), float(self.amplitudes[i]), float(self.intensities[i, j])


def grid_search(system, spec: SecondaryHologramSpec, probe_site: float, phase_points, amplitude_points) -> GridResult:
    """Evaluate every (phase, amplitude) pair.

    Integer arguments give uniform grids over [0, 2*pi) and [0, 0.9].
    """
    phases = TWO_PI * np.arange(phase_points) / phase_points if np.isscalar(phase_points) \
        else np.asarray(phase_points, dtype=float)
    amps = np.linspace(0.0, 0.9, amplitude_points) if np.isscalar(amplitude_points) \
        else np.asarray(amplitude_points, dtype=float)
    if phases.size == 0 or amps.size == 0:
        raise ParameterError("grid search needs nonempty grids")
    out = np.empty((amps.size, phases.size))
    for i, a in enumerate(amps):
        for j, p in enumerate(phases):
            out[i, j] = system.intensity(spec.with_grating(phase=p, amplitude=a), probe_site)
    idx = np.unravel_index(np.argmin(out), out.shape)
    return GridResult(phases, amps, out, (int(idx[0]), int(idx[1])))


# ---------------------------------------------------------- optimisation


@dataclass
class SitePlan:
    """Outcome for one requested site; ``spec`` is None when its grating was withdrawn."""

    site: float
    overlay_group: int
    spec: SecondaryHologramSpec | None
    before_db: float
    after_db: float
    seed_amplitude: float = float("nan")
    removed: bool = False


@dataclass
class OptimizationResult:
    plans: list
    scans: list = field(default_factory=list)
    windows: list = field(default_factory=list)

    def plan(self, site) -> SitePlan:
        for p in self.plans:
            if p.site == site:
                return p
        raise KeyError(site)


def _db(v: float, floor_db: float | None = None) -> float:
    d = float(10 * np.log10(max(v, 1e-300)))
    return d if floor_db is None else max(d, floor_db)


def pair_sites(order, amplitudes, ratio: float = 2.0) -> list:
    """Greedy pairing of sites whose required amplitudes agree within ``ratio``."""
    groups, used = [], set()
    for i, s in enumerate(order):
        if s in used:
            continue
        used.add(s)
        group = [s]
        for t in order[i + 1:]:
            if t in used:
                continue
            lo, hi = sorted((amplitudes[s], amplitudes[t]))
            if hi <= ratio * lo:
                group.append(t)
                used.add(t)
                break
        groups.append(group)
    return groups


def optimize_sites(system, sites, phase_points: int = 16, amplitude_points: int = 8,
                   exclusion_threshold: float = 0.9, resweep: bool = True, seed_target: float = 0.4,
                   pair_ratio: float = 2.0, repair_rounds: int = 2) -> OptimizationResult:
    """Suppress crosstalk at ``sites`` with secondary gratings.

    Protocol: measure the baseline; estimate each required auxiliary
    amplitude from it; pair sites of comparable amplitude into overlay
    groups and size one stacked window per group; phase-scan every grating
    nearest-first, then amplitude-scan each at its best phase, then re-sweep
    phases once. Sites still worse than their baseline get up to
    ``repair_rounds`` extra phase, fine amplitude and local grid scans. If a
    site stays worse, gratings are dropped one choice at a time (each drop
    followed by one repair round) until no site is worse; dropping every
    grating restores the baseline exactly. Crosstalk values are compared
    after the system's detector floor (``floor_db``) is applied.

    Raises
    ------
    CapacityError
        More than eight sites, or windows that do not fit on FP1.
    """
    sites = [float(s) for s in sites]
    if len(set(sites)) != len(sites):
        raise ParameterError("sites must be distinct")
    if len(sites) > MAX_SITES:
        raise CapacityError(f"{len(sites)} sites requested; at most {MAX_SITES} secondary holograms are supported")
    if not sites:
        return OptimizationResult([])
    system.register_sites(sites)
    base = system.crosstalk(sites)
    need = {s: math.sqrt(base[s]) for s in sites}
    order = sorted(sites, key=lambda s: (abs(s), s))

    ref_win = system.reference_window()
    kappa_row = {s: system.unit_response(system.make_spec(s, ref_win, -1), s) / ref_win.height for s in sites}
    groups = pair_sites(order, need, pair_ratio)
    rows = []
    for g in groups:
        # overlaid maps are summed before binarization; keep their sum clear of clipping
        total = sum(need[s] / max(kappa_row[s], 1e-300) for s in g)
        budget = seed_target * (1.0 if len(g) == 1 else 1.5)
        rows.append(max(ref_win.height, int(math.ceil(total / budget))))
    windows = system.plan_windows(rows)

    specs, seed_amp = {}, {}
    for gid, (g, win) in enumerate(zip(groups, windows)):
        for s in g:
            spec = system.make_spec(s, win, gid, amplitude=0.0)
            k = system.unit_response(spec, s)
            seed_amp[s] = float(np.clip(need[s] / k if k > 0 else seed_target, 0.02, 0.85))
            specs[s] = spec
    for s in order:
        system.commit(specs[s])

    scans = []

    def settle(s, res, param):
        """Commit the fitted optimum unless a scanned sample did better."""
        cand = specs[s] if res.optimum is None else specs[s].with_grating(**{param: res.optimum})
        fitted = system.intensity(cand, s) if res.optimum is not None else np.inf
        mask = res.included if res.included is not None else np.ones(len(res.intensities), bool)
        vals = np.where(mask, res.intensities, np.inf)
        i = int(np.argmin(vals))
        if vals[i] < fitted:
            cand = specs[s].with_grating(**{param: float(res.parameter_values[i])})
        specs[s] = cand
        system.commit(cand)
        scans.append(res)

    for s in order:
        specs[s] = specs[s].with_grating(amplitude=seed_amp[s])
        settle(s, scan_phase(system, specs[s], s, phase_points), "phase")
    for s in order:
        settle(s, scan_amplitude(system, specs[s], s, amplitude_points, exclusion_threshold=exclusion_threshold),
               "amplitude")
    if resweep:
        for s in order:
            settle(s, scan_phase(system, specs[s], s, phase_points), "phase")

    floor = getattr(system, "floor_db", None)
    base_db = {s: _db(base[s], floor) for s in sites}
    dropped: set = set()

    def worse():
        now = system.crosstalk(sites)
        return [s for s in order if _db(now[s], floor) > base_db[s] + 1e-9]

    def repair(s):
        settle(s, scan_phase(system, specs[s], s, phase_points), "phase")
        a = specs[s].grating.amplitude
        fine = np.clip(np.linspace(0.7 * a, 1.3 * a, amplitude_points), 0.0, 1.0)
        settle(s, scan_amplitude(system, specs[s], s, values=fine, exclusion_threshold=exclusion_threshold),
               "amplitude")
        if _db(system.crosstalk([s])[s], floor) > base_db[s]:
            g = specs[s].grating
            step = TWO_PI / phase_points
            grid = grid_search(system, specs[s], s, g.phase + step * np.linspace(-1, 1, 5),
                               np.clip(g.amplitude * np.linspace(0.8, 1.2, 5), 0.0, 1.0))
            phase, amp, value = grid.best
            if value < system.intensity(specs[s], s):
                specs[s] = specs[s].with_grating(phase=phase, amplitude=amp)
                system.commit(specs[s])

    def repair_round():
        for s in worse():
            if s not in dropped:
                repair(s)

    def restore(state):
        for gid in list(system.groups):
            system.clear_group(gid)
        specs.update(state)
        for s in order:
            if s in state:
                system.commit(state[s])

    def score():
        now = system.crosstalk(sites)
        excess = [_db(now[s], floor) - base_db[s] for s in sites]
        return sum(max(0.0, e - 1e-9) for e in excess), sum(min(0.0, e) for e in excess)

    for _ in range(repair_rounds):
        if not [s for s in worse() if s not in dropped]:
            break
        repair_round()
    # Withdraw gratings until no site is worse than its baseline. Each
    # candidate drop is followed by one repair round before it is scored.
    while worse() and len(dropped) < len(sites):
        live = {s: specs[s] for s in order if s not in dropped}
        n_scans = len(scans)
        trials = []
        for opt in _drop_options(live):
            _drop(system, specs, opt)
            dropped.update(opt)
            repair_round()
            state = {s: specs[s] for s in live if s not in opt}
            trials.append((score(), -len(opt), opt, state))
            dropped.difference_update(opt)
            restore(live)
        del scans[n_scans:]
        _, _, opt, state = min(trials, key=lambda t: t[:2])
        dropped.update(opt)
        restore(state)
    removed = dropped
    if hasattr(system, "refresh"):
        system.refresh()
    final = system.crosstalk(sites)
    plans = []
    for s in sites:
        plans.append(SitePlan(s, specs[s].overlay_group, None if s in removed else specs[s], base_db[s],
                              _db(final[s], floor), seed_amp[s], s in removed))
    return OptimizationResult(plans, scans, windows)


def _drop_options(live: dict) -> list:
    """Single gratings, then whole overlay groups of more than one grating."""
    options = [(s,) for s in live]
    for gid in sorted({sp.overlay_group for sp in live.values()}):
        members = tuple(s for s, sp in live.items() if sp.overlay_group == gid)
        if len(members) > 1:
            options.append(members)
    return options


def _drop(system, specs, sites) -> None:
    gid = specs[sites[0]].overlay_group
    keep = [sp for sp in system.groups.get(gid, {}).values() if sp.target_site not in sites]
    system.clear_group(gid)
    for sp in keep:
        system.commit(sp)


# ------------------------------------------------------------ calibration


def _argmax_low(values, rtol: float = 1e-9) -> int:
    v = np.asarray(values, dtype=float)
    top = v.max()
    return int(np.nonzero(v >= top - rtol * abs(top))[0][0])


def calibrate_beam_center(system, min_block: int = 2, margin: int = 3) -> tuple:
    """Locate the IP1 mirror on which the spot is centred.

    ``system`` exposes ``ip1_shape``, ``transmitted_power(mask)`` and
    ``power_floor``. A coarse stage halves the candidate block along its
    longer side, keeping the brighter half, until it is at most
    ``min_block`` mirrors wide; a fine stage turns single mirrors on along x
    through the block centre, then along y through the best column.
    Ties go to the lower index.

    Raises
    ------
    NoBeamError
        If no measurement rises above the power floor.
    """
    rows, cols = system.ip1_shape
    floor = getattr(system, "power_floor", 0.0)

    def power(r0, r1, c0, c1):
        mask = np.zeros((rows, cols), dtype=bool)
        mask[r0:r1, c0:c1] = True
        return system.transmitted_power(mask)

    if power(0, rows, 0, cols) <= floor:
        raise NoBeamError("no transmitted power above the detector floor")
    r0, r1, c0, c1 = 0, rows, 0, cols
    while r1 - r0 > min_block or c1 - c0 > min_block:
        if c1 - c0 >= r1 - r0:
            mid = (c0 + c1) // 2
            a, b = power(r0, r1, c0, mid), power(r0, r1, mid, c1)
            c0, c1 = (c0, mid) if a >= b else (mid, c1)
        else:
            mid = (r0 + r1) // 2
            a, b = power(r0, mid, c0, c1), power(mid, r1, c0, c1)
            r0, r1 = (r0, mid) if a >= b else (mid, r1)
    rc = (r0 + r1 - 1) // 2
    cs = np.arange(max(0, c0 - margin), min(cols, c1 + margin))
    px = [power(rc, rc + 1, c, c + 1) for c in cs]
    cbest = int(cs[_argmax_low(px)])
    rs = np.arange(max(0, r0 - margin), min(rows, r1 + margin))
    py = [power(r, r + 1, cbest, cbest + 1) for r in rs]
    if max(max(px), max(py)) <= floor:
        raise NoBeamError("no single mirror reflects power above the detector floor")
    return int(rs[_argmax_low(py)]), cbest


class PlantedSpot:
    """Gaussian spot with exact per-mirror powers, for calibration tests.

    ``center`` is (row, col) in mirror units (mirror ``k`` spans
    ``[k - 0.5, k + 0.5]``); ``waist`` is the 1/e^2 intensity radius in mirrors.
    """

    def __init__(self, shape, center, waist: float, power: float = 1.0, floor_db: float = -60.0):
        self.ip1_shape = tuple(shape)
        rows, cols = self.ip1_shape
        s = np.sqrt(2.0) / waist

        def edges(n, c):
            k = np.arange(n + 1) - 0.5
            return 0.5 * np.diff(special.erf((k - c) * s))

        self.power_map = power * np.outer(edges(rows, center[0]), edges(cols, center[1]))
        self.power_floor = power * 10 ** (floor_db / 10)

    def transmitted_power(self, mask) -> float:
        return float(self.power_map[np.asarray(mask, dtype=bool)].sum())


class TwoBeamOracle:
    """Closed-form probe system: ``I = |E_p + k * A * exp(i*(phi + theta))|^2``.

    Each site sees only its own grating. ``fields`` maps site to the complex
    primary field (peak intensity 1); ``k`` and ``theta`` are the auxiliary
    amplitude per unit A_s and its phase offset.
    """

    def __init__(self, fields: dict, k: float = 0.02, theta: float = 0.0):
        self.fields = {float(s): complex(v) for s, v in fields.items()}
        self.k = float(k)
        self.theta = float(theta)
        self.groups: dict = {}

    def optimum(self, site) -> tuple:
        """Exact (phase, amplitude) cancelling the primary field at ``site``."""
        e = self.fields[float(site)]
        return float(np.mod(np.angle(e) + np.pi - self.theta, TWO_PI)), abs(e) / self.k

    def _aux(self, spec) -> complex:
        g = spec.grating
        return self.k * g.amplitude * np.exp(1j * (g.phase + self.theta))

    def _value(self, site, replacing=None) -> float:
        e = self.fields[site]
        for specs in self.groups.values():
            for spec in specs.values():
                if spec.target_site == site and (replacing is None or spec.key != replacing.key):
                    e += self._aux(spec)
        if replacing is not None and replacing.target_site == site:
            e += self._aux(replacing)
        return float(abs(e) ** 2)

    def register_sites(self, sites) -> None:
        unknown = [s for s in sites if float(s) not in self.fields]
        if unknown:
            raise ParameterError(f"oracle has no field at sites {unknown}")

    def crosstalk(self, sites) -> dict:
        return {s: self._value(float(s)) for s in sites}

    def intensity(self, spec, site) -> float:
        return self._value(float(site), spec)

    def unit_response(self, spec, site) -> float:
        return self.k

    def reference_window(self) -> WindowSpec:
        return WindowSpec(origin=(0, 0))

    def plan_windows(self, rows_per_group) -> list:
        out, r = [], 0
        for h in rows_per_group:
            out.append(WindowSpec(height=int(h), origin=(r, 0)))
            r += int(h) + 2
        return out

    def make_spec(self, site, window, group, amplitude=0.5, phase=0.0) -> SecondaryHologramSpec:
        return SecondaryHologramSpec(GratingSpec((float(site), 0.0), amplitude, phase), window, float(site), int(group))

    def commit(self, spec) -> None:
        self.groups.setdefault(spec.overlay_group, {})[spec.key] = spec

    def clear_group(self, gid) -> None:
        self.groups.pop(gid, None)


# --------------------------------------------------------------- tables


def write_scan_table(scans, path) -> Path:
    """Tab-separated scan traces, one row per sample."""
    path = Path(path)
    lines = ["site_w\tkind\tparameter\tintensity\tincluded\tfit_residual\toptimum\tflag"]
    for sc in scans:
        opt = "nan" if sc.optimum is None else f"{sc.optimum:.6f}"
        inc = sc.included if sc.included is not None else np.ones(len(sc.parameter_values), bool)
        for p, v, i in zip(sc.parameter_values, sc.intensities, inc):
            lines.append(f"{sc.site:.3f}\t{sc.kind}\t{p:.6f}\t{v:.6e}\t{int(bool(i))}\t"
                         f"{sc.fit_residual_rms:.6f}\t{opt}\t{sc.flag or '-'}")
    path.write_text("\n".join(lines) + "\n")
    return path


PLAN_COLUMNS = ("site_w", "group", "phase_rad", "amplitude", "I_X_before_dB", "I_X_after_dB", "removed")


def write_plan_table(plans, path) -> Path:
    path = Path(path)
    lines = ["\t".join(PLAN_COLUMNS)]
    for p in plans:
        phase = amp = "nan"
        if p.spec is not None:
            phase, amp = f"{p.spec.grating.phase:.4f}", f"{p.spec.grating.amplitude:.4f}"
        lines.append(f"{p.site:.3f}\t{p.overlay_group}\t{phase}\t{amp}\t{p.before_db:.2f}\t{p.after_db:.2f}\t"
                     f"{int(p.removed)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_plan_table(path) -> list:
    """Rows of a plan table as dictionaries of floats (group and removed as int)."""
    lines = Path(path).read_text().splitlines()
    head = lines[0].split("\t")
    if tuple(head) != PLAN_COLUMNS:
        raise ParameterError(f"{path} is not a plan table")
    out = []
    for line in lines[1:]:
        vals = line.split("\t")
        row = {k: float(v) for k, v in zip(head, vals)}
        row["group"], row["removed"] = int(row["group"]), int(row["removed"])
        out.append(row)
    return out
