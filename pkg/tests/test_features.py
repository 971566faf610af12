import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roomestim import features as F


def test_shapes_three_seconds():
    x = np.random.default_rng(0).standard_normal((2, 48000))
    X = F.stft(x)
    assert X.shape == (2, 769, 63)
    ft = F.extract(x)
    assert ft.sc.shape == (769, 63) and ft.ild.shape == (769, 63) and ft.ipd.shape == (1538, 63)
    assert ft.stacked().shape == (4, 769, 63)


@pytest.mark.parametrize("n", [769, 1000, 16000, 48000, 50000])
def test_frame_count(n):
    assert F.stft(np.ones(n)).shape == (769, 1 + n // 768)


def test_stft_errors_and_zero():
    with pytest.raises(ValueError):
        F.stft(np.zeros(0))
    with pytest.raises(ValueError):
        F.stft(np.zeros(48000), fs=48000)
    assert not np.any(F.stft(np.zeros(4000)).values)


def test_tone_peak_bin():
    t = np.arange(48000) / 16000
    X = F.stft(np.sin(2 * np.pi * 1000 * t)).values
    energy = np.sum(np.abs(X) ** 2, axis=1)
    assert np.argmax(energy) == round(1000 * 1536 / 16000) == 96


def test_parseval_white_noise():
    x = np.random.default_rng(1).standard_normal(16000 * 20)
    X = F.stft(x).values
    full = np.sum(np.abs(X[0]) ** 2) + 2 * np.sum(np.abs(X[1:-1]) ** 2) + np.sum(np.abs(X[-1]) ** 2)
    # periodic Hann at 50% overlap: overlapping w^2 sum to 0.75 per sample
    assert full / (0.75 * F.N_FFT * np.sum(x ** 2)) == pytest.approx(1.0, rel=0.01)


def test_stft_linear():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((2, 5000))
    np.testing.assert_allclose(F.stft(2 * a - 3 * b).values,
                               2 * F.stft(a).values - 3 * F.stft(b).values, atol=1e-10)


def test_sc_oracle_and_homogeneity():
    X = F.stft(np.random.default_rng(3).standard_normal(5000)).values
    np.testing.assert_allclose(F.sc_features(X), np.sqrt(X.real ** 2 + X.imag ** 2), rtol=1e-7)
    np.testing.assert_allclose(F.sc_features(-2.5 * X), 2.5 * F.sc_features(X), rtol=1e-12)
    pos = np.abs(X)
    np.testing.assert_array_equal(F.sc_features(pos), pos)


def test_ild_examples():
    X = F.stft(np.random.default_rng(4).standard_normal(5000)).values
    np.testing.assert_array_equal(F.ild(X, X), 0.0)
    np.testing.assert_allclose(F.ild(X, 0.5 * X), np.log(2), atol=1e-12)
    Y = F.stft(np.random.default_rng(5).standard_normal(5000)).values
    np.testing.assert_allclose(F.ild(Y, X), -F.ild(X, Y), atol=1e-12)
    with pytest.raises(ValueError):
        F.ild(X, X[:10])


def test_ipd_examples():
    X = F.stft(np.random.default_rng(6).standard_normal(5000)).values
    f = X.shape[0]
    same = F.ipd(X, X)
    np.testing.assert_allclose(same[:f], 1.0, atol=1e-12)
    np.testing.assert_allclose(same[f:], 0.0, atol=1e-12)
    quarter = F.ipd(X, X * np.exp(-1j * np.pi / 2))
    np.testing.assert_allclose(quarter[:f], 0.0, atol=1e-12)
    np.testing.assert_allclose(quarter[f:], 1.0, atol=1e-12)
    zero = F.ipd(np.zeros((3, 2)), X[:3, :2])
    np.testing.assert_array_equal(zero[:3], 1.0)
    np.testing.assert_array_equal(zero[3:], 0.0)
    with pytest.raises(ValueError):
        F.ipd(X, X.T)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_ic_scale_invariant(seed, c):
    x = np.random.default_rng(seed).standard_normal((2, 4000))
    a, b = F.extract(x), F.extract(c * x)
    np.testing.assert_allclose(b.ild, a.ild, atol=1e-7)
    np.testing.assert_allclose(b.ipd, a.ipd, atol=1e-7)
    f = a.sc.shape[0]
    np.testing.assert_allclose(a.ipd[:f] ** 2 + a.ipd[f:] ** 2, 1.0, atol=1e-12)


def test_cache_roundtrip(tmp_path):
    planes = np.random.default_rng(7).standard_normal((3, 4, 769, 5)).astype(np.float32)
    F.write_cache(tmp_path / "c.bin", planes, ["a", "b", "c"])
    back, ids = F.read_cache(tmp_path / "c.bin")
    np.testing.assert_array_equal(back, planes)
    assert ids == ["a", "b", "c"]
    ft = F.FeatureTensor.from_stacked(planes[0])
    np.testing.assert_array_equal(ft.stacked(), planes[0])
    (tmp_path / "bad.bin").write_bytes(b"XXXX1234")
    with pytest.raises(ValueError):
        F.read_cache(tmp_path / "bad.bin")
