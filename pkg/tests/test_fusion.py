import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from roomestim import fusion as F
from roomestim.nn.model import Estimate

finite = st.floats(-100, 100)
positive = st.floats(1e-3, 100)


def test_fuse_examples():
    one = F.fuse([Estimate(np.array([2.5]), np.array([0.3]))])
    assert one.mean[0] == 2.5 and one.var[0] == pytest.approx(0.3, rel=1e-15)
    eq = F.fuse(means=[[1.0], [3.0]], variances=[[1.0], [1.0]])
    assert eq.mean[0] == pytest.approx(2.0, abs=1e-9) and eq.var[0] == pytest.approx(0.5, abs=1e-9)
    un = F.fuse(means=[[0.0], [3.0]], variances=[[1.0], [2.0]])
    assert un.mean[0] == pytest.approx(1.0, abs=1e-9)
    assert un.var[0] == pytest.approx(1 / 1.5, abs=1e-9)
    assert un.n_observations == 2


def test_fuse_errors():
    with pytest.raises(ValueError):
        F.fuse([])
    with pytest.raises(ValueError):
        F.fuse(means=[[1.0]], variances=[[0.0]])
    with pytest.raises(ValueError):
        F.fuse(means=[[1.0]], variances=[[-1.0]])


@settings(max_examples=60, deadline=None)
@given(arrays(float, (4, 3), elements=finite), arrays(float, (4, 3), elements=positive),
       st.permutations(range(4)))
def test_fuse_properties(m, v, perm):
    f = F.fuse(means=m, variances=v)
    g = F.fuse(means=m[list(perm)], variances=v[list(perm)])
    np.testing.assert_allclose(g.mean, f.mean, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(f.precision, (1 / v).sum(axis=0), rtol=1e-12)
    assert np.all(f.var <= v.min(axis=0) * (1 + 1e-12))
    assert np.all(f.mean >= m.min(axis=0) - 1e-9) and np.all(f.mean <= m.max(axis=0) + 1e-9)


@settings(max_examples=30, deadline=None)
@given(arrays(float, 3, elements=finite), arrays(float, 3, elements=positive), st.integers(1, 8))
def test_fuse_copies(m, v, j):
    f = F.fuse(means=np.tile(m, (j, 1)), variances=np.tile(v, (j, 1)))
    np.testing.assert_allclose(f.mean, m, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(f.var, v / j, rtol=1e-12)


def test_fuse_dominance():
    for eps in (1e-3, 1e-6, 1e-9):
        f = F.fuse(means=[[1.0], [5.0], [-2.0]], variances=[[eps], [1.0], [2.0]])
        assert abs(f.mean[0] - 1.0) < 10 * eps


def test_mae_examples():
    t = np.zeros((2, 14))
    assert F.mae(t, t) == 0
    p = t.copy()
    p[:, 13] = [1.0, 3.0]
    assert F.mae(p, t, 13) == 2.0
    assert F.mae(p, t, "volume") == 2.0
    rng = np.random.default_rng(0)
    p, t = rng.standard_normal((20, 14)), rng.standard_normal((20, 14))
    per_band = [F.mae(p, t, 6 + b) for b in range(6)]
    assert F.mae(p, t, "rt60") == pytest.approx(np.mean(per_band), abs=1e-12)
    with pytest.raises(ValueError):
        F.mae(p[:3], t)


def test_bootstrap_ci():
    assert F.bootstrap_ci(np.full(10, 0.7)) == pytest.approx((0.7, 0.7))
    rng = np.random.default_rng(1)
    e = np.abs(rng.standard_normal(50))
    lo, hi = F.bootstrap_ci(e, rng=rng)
    assert lo <= e.mean() <= hi
    with pytest.raises(ValueError):
        F.bootstrap_ci([1.0])


def test_bootstrap_scaling():
    rng = np.random.default_rng(2)
    widths = {}
    for n in (100, 400):
        w = []
        for _ in range(40):
            lo, hi = F.bootstrap_ci(np.abs(rng.standard_normal(n)), rng=rng, resamples=500)
            w.append(hi - lo)
        widths[n] = np.mean(w)
    assert widths[100] / widths[400] == pytest.approx(2.0, rel=0.15)


def test_mae_vs_j_and_fused_variance():
    rng = np.random.default_rng(3)
    truth = rng.uniform(1, 2, size=(30, 14))
    var = rng.uniform(0.05, 0.2, size=(30, 5, 14))
    means = truth[:, None] + rng.standard_normal((30, 5, 14)) * np.sqrt(var)
    curve, per_room = F.mae_vs_j(means, var, truth)
    assert curve.shape == (5,) and curve[-1] < curve[0]
    assert len(per_room) == 5 and per_room[0].shape == (30,)
    single = np.mean(np.abs(means - truth[:, None]))
    assert curve[0] == pytest.approx(single, rel=1e-12)
    prev = None
    for j in range(1, 6):
        _, fv = F.subset_fusion(means, var, j)
        cur = fv.mean(axis=1)
        if prev is not None:
            assert np.all(cur < prev)
        prev = cur
    with pytest.raises(ValueError):
        F.mae_vs_j(means, var, truth, j_max=6)
