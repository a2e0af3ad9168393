
import numpy as np
import pytest
from hypothesis import given, strategies as st

from dmdxtalk.calibrate import (PLAN_COLUMNS, PlantedSpot, TwoBeamOracle, calibrate_beam_center, fit_cosine,
                                fit_quadratic, grid_search, optimize_sites, pair_sites, read_plan_table,
                                scan_amplitude, scan_phase, write_plan_table, write_scan_table)
from dmdxtalk.errors import CapacityError, Diagnostic, NoBeamError, ParameterError

from oracles import db, two_beam_intensity, two_beam_optimum

TWO_PI = 2 * np.pi


def oracle_with(fields, k=0.02, theta=0.3):
    return TwoBeamOracle(fields, k=k, theta=theta)


# ------------------------------------------------------------------ fits


@given(st.floats(0.5, 5.0), st.floats(0.01, 0.5), st.floats(0.0, TWO_PI - 1e-9))
def test_cosine_fit_recovers_parameters(c0, rel, phi0):
    c1 = rel * c0
    phi = TWO_PI * np.arange(16) / 16
    (a, b, p), resid, opt, flag = fit_cosine(phi, c0 + c1 * np.cos(phi - phi0))
    assert a == pytest.approx(c0, rel=1e-9) and b == pytest.approx(c1, rel=1e-7)
    assert np.angle(np.exp(1j * (p - phi0))) == pytest.approx(0.0, abs=1e-7)
    assert np.angle(np.exp(1j * (opt - phi0 - np.pi))) == pytest.approx(0.0, abs=1e-7)
    assert resid <= 1e-9 and flag == ""


def test_cosine_fit_flags_missing_contrast():
    phi = TWO_PI * np.arange(8) / 8
    noise = np.random.default_rng(0).normal(scale=1e-3, size=8)
    with pytest.warns(Diagnostic):
        *_, flag = fit_cosine(phi, 1.0 + noise)
    assert flag == "no-contrast"


def test_quadratic_fit_vertex_and_exclusion():
    a = np.linspace(0, 1.0, 11)
    y = 2.0 * (a - 0.37) ** 2 + 0.1
    y[a >= 0.9] = 50.0  # saturated samples must not enter the fit
    p, resid, opt, flag, inc = fit_quadratic(a, y, 0.9)
    assert opt == pytest.approx(0.37, rel=1e-9)
    assert flag == "" and resid <= 1e-9
    assert inc.tolist() == (a < 0.9).tolist()


def test_quadratic_fit_flags():
    a = np.linspace(0, 0.8, 8)
    with pytest.warns(Diagnostic):
        _, _, opt, flag, _ = fit_quadratic(a, 1.0 - a ** 2)
    assert opt is None and flag == "non-convex"
    _, _, opt, flag, _ = fit_quadratic(a, (a - 1.4) ** 2)
    assert flag == "extrapolated" and opt == 1.0
    with pytest.raises(ParameterError):
        fit_quadratic([0.0, 0.95, 1.0], [1, 2, 3])


# ---------------------------------------------------------------- scans


def test_phase_scan_on_oracle_is_an_exact_cosine():
    e = 0.007 * np.exp(1.1j)
    sy = oracle_with({4.0: e})
    spec = sy.make_spec(4.0, sy.reference_window(), 0, amplitude=0.2)
    res = scan_phase(sy, spec, 4.0, 16)
    assert res.fit_residual_rms <= 1e-9
    want_phase, _ = two_beam_optimum(e, sy.k, sy.theta)
    assert np.angle(np.exp(1j * (res.optimum - want_phase))) == pytest.approx(0.0, abs=1e-9)
    assert res.intensities[3] == pytest.approx(two_beam_intensity(e, sy.k, 0.2, res.parameter_values[3], sy.theta))
    with pytest.raises(ParameterError):
        scan_phase(sy, spec, 4.0, 7)


@given(st.floats(0.002, 0.015), st.floats(0.0, TWO_PI))
def test_amplitude_scan_vertex_matches_two_beam_oracle(mag, arg):
    e = mag * np.exp(1j * arg)
    sy = oracle_with({4.0: e})
    phase, amp = sy.optimum(4.0)
    assert (phase, amp) == pytest.approx(two_beam_optimum(e, sy.k, sy.theta))
    spec = sy.make_spec(4.0, sy.reference_window(), 0, phase=phase)
    res = scan_amplitude(sy, spec, 4.0, 8)
    assert res.optimum == pytest.approx(amp, rel=0.02)
    assert res.parameter_values.max() <= 0.9
    with pytest.raises(ParameterError):
        scan_amplitude(sy, spec, 4.0, 5)


def test_grid_search_finds_cancellation():
    e = 0.006 * np.exp(-2.0j)
    sy = oracle_with({4.0: e})
    phase, amp = sy.optimum(4.0)
    spec = sy.make_spec(4.0, sy.reference_window(), 0)
    grid = grid_search(sy, spec, 4.0, [phase - 0.1, phase, phase + 0.1], [amp * 0.9, amp, amp * 1.1])
    assert grid.minimum == (1, 1)
    assert grid.best[2] == pytest.approx(0.0, abs=1e-20)
    with pytest.raises(ParameterError):
        grid_search(sy, spec, 4.0, [], [0.1])


# ----------------------------------------------------------- optimiser


def six_site_oracle(seed=0):
    rng = np.random.default_rng(seed)
    sites = [4.0, -4.0, 8.0, -8.0, 12.0, -12.0]
    mags = np.sqrt(10 ** (rng.uniform(-48, -40, size=6) / 10))
    return sites, oracle_with({s: m * np.exp(1j * rng.uniform(0, TWO_PI)) for s, m in zip(sites, mags)})


def test_optimiser_cancels_every_oracle_site():
    sites, sy = six_site_oracle()
    res = optimize_sites(sy, sites)
    assert [p.site for p in res.plans] == sites
    for p in res.plans:
        assert not p.removed
        assert p.after_db <= p.before_db - 20
        assert p.before_db == pytest.approx(db(abs(sy.fields[p.site]) ** 2))
    groups = {}
    for p in res.plans:
        groups.setdefault(p.overlay_group, []).append(p.site)
    assert all(len(g) <= 2 for g in groups.values())
    assert any(s.kind == "phase" for s in res.scans) and any(s.kind == "amplitude" for s in res.scans)


def test_optimiser_input_rules():
    sites, sy = six_site_oracle()
    assert optimize_sites(sy, []).plans == []
    with pytest.raises(ParameterError):
        optimize_sites(sy, [4.0, 4.0])
    many = {float(s): 0.005 for s in range(1, 10)}
    with pytest.raises(CapacityError):
        optimize_sites(oracle_with(many), list(many))


def test_optimiser_is_deterministic():
    sites, _ = six_site_oracle(3)
    a = optimize_sites(six_site_oracle(3)[1], sites)
    b = optimize_sites(six_site_oracle(3)[1], sites)
    assert [(p.after_db, p.spec) for p in a.plans] == [(p.after_db, p.spec) for p in b.plans]


def test_pair_sites_by_amplitude_ratio():
    order = [4.0, -4.0, 8.0, -8.0]
    amps = {4.0: 1.0, -4.0: 3.0, 8.0: 1.5, -8.0: 2.9}
    assert pair_sites(order, amps) == [[4.0, 8.0], [-4.0, -8.0]]
    assert pair_sites(order, amps, ratio=1.01) == [[4.0], [-4.0], [8.0], [-8.0]]


# ---------------------------------------------------------- calibration


def test_beam_center_on_planted_spots():
    rng = np.random.default_rng(2024)
    shape = (400, 125)
    worst = 0.0
    for _ in range(100):
        waist = rng.uniform(1.5, 12.0)
        center = (rng.uniform(15, shape[0] - 15), rng.uniform(15, shape[1] - 15))
        r, c = calibrate_beam_center(PlantedSpot(shape, center, waist))
        worst = max(worst, abs(r - center[0]), abs(c - center[1]))
    assert worst <= 1.0


def test_beam_center_without_beam():
    spot = PlantedSpot((40, 20), (500.0, 500.0), 2.0)
    with pytest.raises(NoBeamError):
        calibrate_beam_center(spot)


def test_planted_spot_power_is_exact():
    spot = PlantedSpot((200, 200), (100.0, 100.0), 5.0, power=2.0)
    assert spot.power_map.sum() == pytest.approx(2.0, rel=1e-12)
    assert spot.transmitted_power(np.ones((200, 200), bool)) == pytest.approx(2.0)


# ---------------------------------------------------------------- tables


def test_plan_table_round_trip(tmp_path):
    sites, sy = six_site_oracle(1)
    res = optimize_sites(sy, sites)
    path = write_plan_table(res.plans, tmp_path / "plan.tsv")
    rows = read_plan_table(path)
    assert tuple(path.read_text().splitlines()[0].split("\t")) == PLAN_COLUMNS
    for row, p in zip(rows, res.plans):
        assert row["site_w"] == p.site
        assert row["group"] == p.overlay_group
        assert row["I_X_after_dB"] == round(p.after_db, 2)
        assert row["amplitude"] == pytest.approx(p.spec.grating.amplitude, abs=5e-5)
    (tmp_path / "junk.tsv").write_text("a\tb\n")
    with pytest.raises(ParameterError):
        read_plan_table(tmp_path / "junk.tsv")


def test_scan_table_has_one_row_per_sample(tmp_path):
    sites, sy = six_site_oracle(2)
    res = optimize_sites(sy, sites[:2])
    lines = write_scan_table(res.scans, tmp_path / "scans.tsv").read_text().splitlines()
    assert lines[0].startswith("site_w\tkind\tparameter")
    assert len(lines) - 1 == sum(len(s.parameter_values) for s in res.scans)
