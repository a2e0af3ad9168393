import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dmdxtalk.config import OpticalConfig
from dmdxtalk.errors import Diagnostic, NoPeakError, ParameterError
from dmdxtalk.metrics import (CrosstalkProfile, apply_floor, extract_profile, fit_waist, fit_waist_samples,
                              relative_crosstalk, write_profile)
from dmdxtalk.optics import ComplexField, fourier_aperture, lens_fourier

from oracles import centered_axis, db, gaussian_1d

CFG = OpticalConfig()


def gaussian_field(w, n=256, pitch=None, center=(0.0, 0.0), tilt=0.0):
    pitch = w / 8 if pitch is None else pitch
    x = centered_axis(n, pitch)
    amp = np.exp(-((x[None, :] - center[0]) ** 2 + (x[:, None] - center[1]) ** 2) / w ** 2)
    return ComplexField(amp * np.exp(1j * tilt * x[None, :] / pitch), pitch, pitch, "IP1")


def profile_of(positions, intensities, waist, floor_db=-60.0):
    return CrosstalkProfile(np.asarray(positions, float), apply_floor(intensities, floor_db), waist, floor_db)


# ----------------------------------------------------------- extraction


def test_gaussian_spot_profile_exact_without_patch():
    w = 12e-6
    prof = extract_profile(gaussian_field(w), patch=1, floor_db=-200)
    near = np.abs(prof.positions) <= 3 * w
    assert np.max(np.abs(prof.intensities[near] - gaussian_1d(prof.positions[near], w))) <= 1e-4
    assert prof.waist == pytest.approx(w, rel=1e-6)


def test_gaussian_spot_profile_with_patch_on_fine_grid():
    w = 12e-6
    prof = extract_profile(gaussian_field(w, n=1024, pitch=w / 100), patch=3, floor_db=-200)
    near = np.abs(prof.positions) <= 3 * w
    assert np.max(np.abs(prof.intensities[near] - gaussian_1d(prof.positions[near], w))) <= 1e-4


def test_profile_floor():
    prof = extract_profile(gaussian_field(5e-6, n=512), floor_db=-60)
    assert prof.intensities.min() >= 1e-6
    assert prof.intensities.max() == 1.0
    assert np.isclose(prof.intensities.min(), 1e-6)


def test_profile_mirror_symmetry():
    field = gaussian_field(10e-6, center=(3e-6, 0.0))
    u = field.samples.copy()
    u[:, 140:150] += 0.05  # asymmetric shoulder
    field = field.with_samples(u)
    fwd = extract_profile(field, 0.0)
    back = extract_profile(field, np.pi)
    assert np.array_equal(fwd.positions, -back.positions[::-1])
    assert np.allclose(fwd.intensities, back.intensities[::-1], rtol=0, atol=1e-15)


def test_oblique_axis_follows_the_spot():
    w = 10e-6
    # bilinear sampling error scales with pitch^2; w/32 keeps it below 1e-3
    prof = extract_profile(gaussian_field(w, n=512, pitch=w / 32), axis_angle=np.pi / 4, patch=1, floor_db=-200)
    near = np.abs(prof.positions) <= 2 * w
    assert np.max(np.abs(prof.intensities[near] - gaussian_1d(prof.positions[near], w))) <= 1e-3


def test_zero_field_has_no_peak():
    with pytest.raises(NoPeakError):
        extract_profile(ComplexField(np.zeros((8, 8)), 1.0, 1.0))


# --------------------------------------------------------------- metric


def test_relative_crosstalk_reference_values():
    w = 9e-6
    x = np.linspace(-6, 6, 121) * w
    inten = np.where(np.isclose(np.abs(x), 4 * w), 5.5e-5, gaussian_1d(x, w))
    inten[np.isclose(x, 5 * w)] = 1e-5
    prof = profile_of(x, inten, w, -80)
    assert relative_crosstalk(prof, 4.0) == pytest.approx(-42.6, abs=0.005)
    assert relative_crosstalk(prof, 4.0) == pytest.approx(db(5.5e-5), abs=1e-12)
    assert relative_crosstalk(prof, 0.0) == 0.0
    assert relative_crosstalk(prof, 5.0) == pytest.approx(-50.0, abs=1e-12)
    with pytest.raises(ParameterError):
        relative_crosstalk(prof, 6.5)


def test_interpolation_is_linear_in_intensity():
    prof = profile_of([0.0, 1.0, 2.0], [1.0, 1e-2, 1e-4], 1.0, -80)
    assert relative_crosstalk(prof, 1.5) == pytest.approx(db(0.5 * (1e-2 + 1e-4)))


@given(st.lists(st.floats(1e-7, 1.0), min_size=3, max_size=30), st.data())
def test_interpolation_consistency(values, data):
    values = np.array(values)
    values[0] = 1.0
    prof = profile_of(np.arange(len(values)) * 1.7e-6, values, 3.1e-6, -70)
    i = data.draw(st.integers(0, len(values) - 1))
    assert relative_crosstalk(prof, prof.in_waists()[i]) == prof.db()[i]


@given(st.integers(-20, 20), st.floats(0.1, 10.0), st.integers(0, 10_000))
def test_normalisation_invariance(k, c, seed):
    rng = np.random.default_rng(seed)
    field = gaussian_field(8e-6, n=64)
    field = field.with_samples(field.samples + 0.01 * (rng.normal(size=(64, 64)) + 1j * rng.normal(size=(64, 64))))
    base = extract_profile(field)
    # powers of two scale without rounding, so I_X is bit-identical
    exact = extract_profile(field.with_samples(field.samples * 2.0 ** k))
    assert np.array_equal(exact.intensities, base.intensities)
    # other scalars differ only by rounding in the running-sum patch filter
    scaled = extract_profile(field.with_samples(field.samples * c))
    assert np.allclose(scaled.intensities, base.intensities, rtol=1e-10, atol=0)
    for site in (-3.0, 2.0, 3.5):
        assert relative_crosstalk(exact, site) == relative_crosstalk(base, site)


@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=50), st.floats(-90.0, 0.0))
def test_floor_idempotence(values, floor_db):
    once = apply_floor(values, floor_db)
    assert np.array_equal(apply_floor(once, floor_db), once)
    assert once.min() >= 10 ** (floor_db / 10)


# ------------------------------------------------------------ waist fit


@given(st.floats(5e-6, 40e-6), st.floats(-0.5, 0.5))
def test_waist_fit_round_trip(w, offset):
    pitch = 1e-6
    x = np.arange(-200, 201) * pitch
    fit = fit_waist_samples(x, gaussian_1d(x, w, offset * pitch))
    assert abs(fit.waist - w) / w <= 0.005
    assert not fit.flagged


@pytest.mark.parametrize("w", [9e-6, 20e-6])
def test_waist_fit_reference_cases(w):
    prof = extract_profile(gaussian_field(w, n=512, pitch=1e-6), patch=1)
    assert fit_waist(prof).waist == pytest.approx(w, rel=0.005)


def test_truncated_airy_like_spot_is_flagged():
    w, p = 20e-6, 1e-6
    spot = gaussian_field(w, n=512, pitch=p)
    # hard pupil at half a waist, then a hard circular stop in the Fourier plane
    cut = fourier_aperture(spot, 0.5 * w, "square")
    spectrum = lens_fourier(cut, CFG)
    stop = 0.2 * np.abs(spectrum.coords()[0]).max()
    ringing = lens_fourier(fourier_aperture(spectrum, stop, "circle"), CFG, "inverse")
    with pytest.warns(Diagnostic):
        prof = extract_profile(ringing, patch=1)
    assert prof.waist_flagged
    with warnings.catch_warnings():
        warnings.simplefilter("error", Diagnostic)
        assert not extract_profile(spot, patch=1).waist_flagged


def test_waist_fit_needs_a_central_lobe():
    with pytest.raises(ParameterError):
        fit_waist_samples(np.arange(5.0), [0.0, 0.05, 1.0, 0.05, 0.0])


def test_profile_table(tmp_path):
    prof = profile_of([-2e-6, 0.0, 2e-6], [1e-3, 1.0, 1e-7], 4e-6)
    text = write_profile(prof, tmp_path / "p.tsv").read_text()
    assert text == "position_w\tI_X_dB\n-0.500\t-30.00\n0.000\t0.00\n0.500\t-60.00\n"
