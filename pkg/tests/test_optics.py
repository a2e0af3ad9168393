import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from dmdxtalk.config import OpticalConfig
from dmdxtalk.errors import ConfigError, ParameterError, ShapeError
from dmdxtalk.optics import (ComplexField, DmdPattern, apply_mask, field_at_points, fourier_aperture,
                             gaussian_illumination, lens_fourier, read_field, relay_image, synthetic_aberration,
                             write_field, zoom_fourier)

from oracles import centered_axis, direct_lens_transform

CFG = OpticalConfig()
LF = CFG.wavelength * CFG.focal_length


def random_field(rng, shape, pitch=7.6e-6, origin=(0.0, 0.0), plane="FP1"):
    u = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    return ComplexField(u, pitch, pitch, plane, origin)


def rel_rms(a, b):
    return float(np.sqrt(np.mean(np.abs(a - b) ** 2)) / np.sqrt(np.mean(np.abs(b) ** 2)))


# ------------------------------------------------------------ transforms


@pytest.mark.parametrize("origin", [(0.0, 0.0), (1.3e-4, -0.7e-4)])
@pytest.mark.parametrize("direction", ["forward", "inverse"])
def test_lens_fourier_matches_direct_summation(rng, origin, direction):
    f = random_field(rng, (64, 64), origin=origin)
    out = lens_fourier(f, CFG, direction)
    X = centered_axis(64, out.pitch_x)
    Y = centered_axis(64, out.pitch_y)
    sign = -1.0 if direction == "forward" else 1.0
    ref = direct_lens_transform(f.samples, f.pitch_x, f.pitch_y, origin, X, Y, LF, sign)
    assert rel_rms(out.samples, ref) <= 1e-9


def test_lens_fourier_padded_matches_direct_summation(rng):
    f = random_field(rng, (32, 48), pitch=5e-6)
    out = lens_fourier(f, CFG, pad_factor=2)
    assert out.shape == (64, 96)
    assert out.pitch_x == pytest.approx(LF / (96 * 5e-6), rel=1e-14)
    ref = direct_lens_transform(f.samples, 5e-6, 5e-6, (0, 0), centered_axis(96, out.pitch_x),
                                centered_axis(64, out.pitch_y), LF)
    assert rel_rms(out.samples, ref) <= 1e-9


@pytest.mark.parametrize("pad", [1, 2, 3])
def test_parseval(rng, pad):
    f = random_field(rng, (60, 44))
    out = lens_fourier(f, CFG, pad_factor=pad)
    assert abs(out.power() - f.power()) / f.power() <= 1e-10


def test_shift_theorem_to_the_sample(rng):
    n = 128
    x = centered_axis(n, 1.0)
    env = np.exp(-(x[None, :] ** 2 + x[:, None] ** 2) / 40.0 ** 2)
    for _ in range(20):
        mx, my = (int(v) for v in rng.integers(-50, 51, size=2))
        tilt = np.exp(2j * np.pi * (mx * x[None, :] + my * x[:, None]) / n)
        f = ComplexField(env * tilt, 7.6e-6, 7.6e-6, "FP1")
        out = lens_fourier(f, CFG)
        r, c = np.unravel_index(np.argmax(out.intensity()), out.shape)
        assert (r - n // 2, c - n // 2) == (my, mx)
        X, Y = out.coords()
        assert X[c] == pytest.approx(mx * LF / (n * 7.6e-6), rel=1e-12)


def test_forward_then_inverse_is_identity(rng):
    f = random_field(rng, (40, 56))
    back = lens_fourier(lens_fourier(f, CFG), CFG, "inverse")
    assert back.pitch_x == pytest.approx(f.pitch_x, rel=1e-14)
    assert np.max(np.abs(back.samples - f.samples)) <= 1e-12 * np.max(np.abs(f.samples))


def test_plane_labels_advance():
    f = ComplexField(np.ones((4, 4)), 1e-5, 1e-5, "FP1")
    assert lens_fourier(f, CFG).plane == "IP1"
    assert lens_fourier(f.with_samples(f.samples, plane="custom"), CFG).plane == "custom"


def test_lens_fourier_rejects_bad_arguments(rng):
    f = random_field(rng, (8, 8))
    with pytest.raises(ParameterError):
        lens_fourier(f, CFG, "sideways")
    with pytest.raises(ParameterError):
        lens_fourier(f, CFG, pad_factor=0)


def test_zoom_and_point_evaluation_agree_with_fft_grid(rng):
    f = random_field(rng, (48, 48), origin=(2e-5, 0.0))
    full = lens_fourier(f, CFG)
    X, Y = full.coords()
    patch = zoom_fourier(f, CFG, (5, 7), (full.pitch_x, full.pitch_y), (X[30], Y[20]))
    assert np.allclose(patch.samples, full.samples[18:23, 27:34], rtol=0, atol=1e-12 * np.abs(full.samples).max())
    pts = field_at_points(f, CFG, [X[3], X[40]], [Y[11], Y[25]])
    assert np.allclose(pts, [full.samples[11, 3], full.samples[25, 40]], atol=1e-12 * np.abs(full.samples).max())


# ----------------------------------------------------------------- relay


def test_ideal_relay_inverts_and_magnifies(rng):
    n, p = 64, 1.5e-6
    x = centered_axis(n, p)
    u = np.exp(-((x[None, :] - 9 * p) ** 2 + (x[:, None] + 4 * p) ** 2) / (6 * p) ** 2) * (1 + 0.1j)
    field = ComplexField(u, p, p, "IP1", (3e-3, 0.0))
    out = relay_image(field, CFG)
    m = CFG.relay_magnification
    assert out.pitch_x == pytest.approx(m * p, rel=1e-12)
    assert out.origin == pytest.approx((-m * 3e-3, 0.0))
    expected = np.roll(np.flip(u), 1, axis=(0, 1)) / m
    assert np.max(np.abs(np.abs(out.samples) - np.abs(expected))) <= 1e-10
    assert out.power() == pytest.approx(field.power(), rel=1e-10)


def test_relay_stop_removes_high_frequencies(rng):
    f = random_field(rng, (64, 64), pitch=1.5e-6, plane="IP1")
    open_ = relay_image(f, CFG)
    stopped = relay_image(f, CFG, aperture_radius=CFG.as2_radius)
    assert stopped.power() < open_.power()


def test_relay_rejects_misaligned_aberration(rng):
    f = random_field(rng, (16, 16), plane="IP1")
    ab = synthetic_aberration((8, 8), 1e-3, 0.5)
    with pytest.raises(ShapeError):
        relay_image(f, CFG, ab)


# -------------------------------------------------------------- aperture


def test_aperture_edge_cases(rng):
    f = random_field(rng, (9, 9), pitch=1.0)
    with pytest.raises(ParameterError):
        fourier_aperture(f, 0.0)
    with pytest.raises(ParameterError):
        fourier_aperture(f, 2.0, "hexagon")
    assert np.array_equal(fourier_aperture(f, 100.0).samples, f.samples)
    centre_only = fourier_aperture(f, 0.5).samples
    assert np.count_nonzero(centre_only) == 1 and centre_only[4, 4] == f.samples[4, 4]
    square = fourier_aperture(f, 1.0, "square").samples
    circle = fourier_aperture(f, 1.0, "circle").samples
    assert np.count_nonzero(square) == 9 and np.count_nonzero(circle) == 5


def test_aperture_follows_field_origin():
    f = ComplexField(np.ones((9, 9)), 1.0, 1.0, "custom", (10.0, 0.0))
    kept = fourier_aperture(f, 1.0, "square").samples
    assert np.count_nonzero(kept) == 9


# ------------------------------------------------------------------ types


@pytest.mark.parametrize("kwargs, err", [
    (dict(samples=np.ones(5), pitch_x=1.0, pitch_y=1.0), ShapeError),
    (dict(samples=np.ones((1, 5)), pitch_x=1.0, pitch_y=1.0), ShapeError),
    (dict(samples=np.ones((3, 3)), pitch_x=0.0, pitch_y=1.0), ParameterError),
    (dict(samples=np.full((3, 3), np.nan), pitch_x=1.0, pitch_y=1.0), ParameterError),
    (dict(samples=np.ones((3, 3)), pitch_x=1.0, pitch_y=1.0, plane="XP9"), ParameterError),
])
def test_complex_field_validation(kwargs, err):
    with pytest.raises(err):
        ComplexField(**kwargs)


def test_pattern_is_strictly_binary():
    with pytest.raises(ParameterError):
        DmdPattern(np.array([[0, 2, 1]]), 1)
    with pytest.raises(ParameterError):
        DmdPattern(np.zeros((2, 4), np.uint8), 4)
    p = DmdPattern.blank(OpticalConfig(superpixel=20))
    assert p.fp1.max() == 0 and p.ip1.min() == 1
    with pytest.raises(ShapeError):
        p.with_fp1(np.zeros((3, 3)))
    with pytest.raises(ConfigError):
        p.check(OpticalConfig(superpixel=10))


def test_illumination_and_mask():
    cfg = OpticalConfig(superpixel=20)
    illum = gaussian_illumination(cfg)
    assert illum.shape == cfg.fp1_shape
    assert np.abs(illum.samples).max() == pytest.approx(1.0)
    pattern = DmdPattern.blank(cfg)
    fp1 = np.zeros(cfg.fp1_shape, np.uint8)
    fp1[::2] = 1
    masked = apply_mask(illum, pattern.with_fp1(fp1))
    assert np.all(masked.samples[1::2] == 0)
    assert np.array_equal(masked.samples[::2], illum.samples[::2])
    with pytest.raises(ConfigError):
        gaussian_illumination(cfg, (3, 3))


def test_synthetic_aberration_normalisation():
    ab = synthetic_aberration((128, 128), 1.0, 0.7, seed=3)
    x = centered_axis(128, 1.0)
    disk = np.hypot(x[None, :], x[:, None]) <= 64
    assert ab.phase[disk].mean() == pytest.approx(0.0, abs=1e-12)
    assert ab.phase[disk].std() == pytest.approx(0.7, rel=1e-12)
    assert not synthetic_aberration((8, 8), 1.0, 0.0).phase.any()
    with pytest.raises(ParameterError):
        synthetic_aberration((8, 8), 1.0, 0.1, terms=("tilt_z",))
    with pytest.raises(ParameterError):
        synthetic_aberration((8, 8), 1.0, -0.1)


# -------------------------------------------------------------------- I/O


@given(hnp.arrays(np.complex128, hnp.array_shapes(min_dims=2, max_dims=2, min_side=2, max_side=9),
                  elements=st.complex_numbers(allow_nan=False, allow_infinity=False, max_magnitude=1e200)),
       st.sampled_from(["binary", "text"]))
def test_field_io_round_trip(tmp_path_factory, samples, fmt):
    f = ComplexField(samples, 1.5e-6, 2.5e-6, "IP2", (1e-3, -2e-4))
    path = write_field(f, tmp_path_factory.mktemp("f") / "snap.dxf", fmt)
    back = read_field(path)
    assert np.array_equal(back.samples, f.samples)
    assert (back.pitch_x, back.pitch_y, back.plane, back.origin) == (f.pitch_x, f.pitch_y, f.plane, f.origin)


def test_field_file_layout(tmp_path):
    f = ComplexField(np.array([[1 + 2j, 3], [4j, -1]]), 1.0, 2.0, "FP1")
    raw = write_field(f, tmp_path / "a.dxf").read_bytes()
    assert raw[:8] == b"DXFIELD1"
    assert len(raw) == 8 + 56 + 4 * 16
    with pytest.raises(ParameterError):
        write_field(f, tmp_path / "b.dxf", "hdf5")
