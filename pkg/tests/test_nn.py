import numpy as np
import pytest

from roomestim.config import Config, ModelConfig
from roomestim.nn import layers as L
from roomestim.nn.checkpoint import Checkpoint
from roomestim.nn.model import Adam, Network, nll, nll_from_output, split_output
from roomestim.nn.train import EarlyStopping, SplitData, TargetScaler, train

H = 1e-5


def numeric_grad(f, arr):
    g = np.zeros_like(arr)
    for i in np.ndindex(arr.shape):
        old = arr[i]
        arr[i] = old + H
        a = f()
        arr[i] = old - H
        b = f()
        arr[i] = old
        g[i] = (a - b) / (2 * H)
    return g


def rel_err(num, ana):
    return np.max(np.abs(num - ana)) / max(np.max(np.abs(num)), np.max(np.abs(ana)), 1e-300)


def check_layer(layer, x, p=None, ctx=None):
    """Finite-difference check of input and parameter gradients under a random projection."""
    rng = np.random.default_rng(0)
    ctx = ctx or L.Context()
    p = layer.init(rng, np.float64) if p is None else p
    y, _ = layer.forward(p, x, ctx)
    proj = rng.standard_normal(y.shape)

    def loss():
        c = L.Context(ctx.training, np.random.default_rng(9)) if ctx.training else ctx
        return float(np.sum(layer.forward(p, x, c)[0] * proj))

    c = L.Context(ctx.training, np.random.default_rng(9)) if ctx.training else ctx
    _, cache = layer.forward(p, x, c)
    gx, grads = layer.backward(p, cache, proj)
    worst = rel_err(numeric_grad(loss, x), gx)
    for k, v in p.items():
        worst = max(worst, rel_err(numeric_grad(loss, v), grads[k]))
    return worst


@pytest.mark.parametrize("dilation", [1, 2, 4])
def test_grad_depthwise(dilation):
    x = np.random.default_rng(1).standard_normal((3, 2, 30))
    assert check_layer(L.DepthwiseConv(2, 11, dilation), x) < 1e-4


def test_grad_pointwise_relu_ln_pool_dense_dropout():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 3, 12))
    assert check_layer(L.Pointwise(3, 5), x) < 1e-4
    assert check_layer(L.ReLU(), x + 0.05 * np.sign(x)) < 1e-4
    ln = L.LayerNorm((3, 12))
    p = {"g": rng.uniform(0.5, 1.5, (3, 12)), "b": rng.standard_normal((3, 12))}
    assert check_layer(ln, x, p) < 1e-4
    assert check_layer(L.FreqPool(12, 5), x) < 1e-4
    assert check_layer(L.Dense(7, 4), rng.standard_normal((5, 7))) < 1e-4
    ctx = L.Context(True, np.random.default_rng(0))
    assert check_layer(L.Dropout(0.4), x, ctx=ctx) < 1e-4


def test_grad_full_model():
    cfg = ModelConfig(channels=3, sc_pool=6, ic_pool=4, hidden=(6, 5))
    net = Network(cfg, n_freq=20)
    rng = np.random.default_rng(3)
    p = net.init(rng, np.float64)
    for k in p:
        if k.endswith("pw.w"):
            p[k] = np.abs(p[k]) + 0.1  # avoid dead channels where the exact gradient is zero
        elif k.endswith(".g") or k.endswith(".b"):
            p[k] = p[k] + rng.normal(0, 0.3, p[k].shape)
    p["head.out.w"] = rng.normal(0, 0.3, p["head.out.w"].shape)
    x = rng.standard_normal((3, 4, 20, 4))
    y = rng.standard_normal((3, 14))
    seed = 11

    def loss():
        ctx = L.Context(True, np.random.default_rng(seed))
        return nll_from_output(net.forward(p, x, ctx)[0], y)[0]

    out, cache = net.forward(p, x, L.Context(True, np.random.default_rng(seed)))
    _, g = nll_from_output(out, y)
    grads = net.backward(p, cache, g)
    assert set(grads) == set(p)
    worst = max(rel_err(numeric_grad(loss, v), grads[k]) for k, v in p.items())
    assert worst < 1e-4


def test_full_size_shapes():
    net = Network(ModelConfig())
    p = net.init(np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((2, 4, 769, 63)).astype(np.float32)
    emb, _ = net.embed(p, x)
    assert emb.shape == (2, 1248)
    out, _ = net.forward(p, x)
    assert out.shape == (2, 28)
    assert net.forward(p, x[..., :31])[0].shape == (2, 28)
    with pytest.raises(ValueError):
        net.forward(p, x[:, :, :768])
    sc_only = Network(ModelConfig(use_ic=False))
    assert sc_only.embedding_dim == 832
    assert sc_only.forward(sc_only.init(np.random.default_rng(0)), x)[0].shape == (2, 28)


def test_layer_norm_scale_invariance():
    net = Network(ModelConfig(channels=4))
    p = net.init(np.random.default_rng(0), np.float64)
    x = np.abs(np.random.default_rng(1).standard_normal((1, 4, 769, 5)))
    a = net.first_block_activations(p, x)
    for c in (0.01, 3.0, 250.0):
        y = x.copy()
        y[:, 0] *= c  # only the magnitude plane scales with the waveform
        np.testing.assert_allclose(net.first_block_activations(p, y), a, atol=1e-5)


def test_time_pooling_duplication():
    net = Network(ModelConfig(channels=4))
    p = net.init(np.random.default_rng(0), np.float64)
    x = np.random.default_rng(1).standard_normal((2, 4, 769, 7))
    a, _ = net.embed(p, x)
    b, _ = net.embed(p, np.concatenate([x, x], axis=-1))
    np.testing.assert_allclose(b, a, atol=1e-6)


def test_nll_examples():
    assert nll(np.array([1.0]), np.array([1.0]), np.array([1.0])) == 0.0
    assert nll(np.array([0.0]), np.array([1.0]), np.array([1.0])) == pytest.approx(0.5, abs=1e-9)
    assert nll(np.array([0.0]), np.array([4.0]), np.array([2.0])) == pytest.approx(
        0.5 * (np.log(4) + 1), abs=1e-9)
    assert 0.5 * (np.log(4) + 1) == pytest.approx(1.1931, abs=1e-4)
    with pytest.raises(ValueError):
        nll(np.array([0.0]), np.array([0.0]), np.array([1.0]))


def test_nll_gradient_zero_at_target():
    out = np.zeros((1, 28))
    out[0, :14] = np.arange(14)
    _, g = nll_from_output(out, np.arange(14.0)[None])
    np.testing.assert_array_equal(g[0, :14], 0.0)


def test_zero_variance_head_expected_loss():
    rng = np.random.default_rng(4)
    y = rng.standard_normal((20000, 14))
    out = np.zeros((20000, 28))
    loss, _ = nll_from_output(out, y)
    assert loss == pytest.approx(7.0, rel=0.01)
    net = Network(ModelConfig(channels=2))
    p = net.init(rng)
    assert np.all(p["head.out.w"][:, 14:] == 0) and np.all(p["head.out.b"] == 0)
    assert np.allclose(split_output(net.forward(p, rng.standard_normal((1, 4, 769, 3)))[0]).var,
                       1.0, rtol=1e-5)


def test_adam_steps():
    p = {"a": np.array([1.0, -2.0, 3.0])}
    opt = Adam(p, lr=1e-4)
    opt.step(p, {"a": np.zeros(3)})
    np.testing.assert_array_equal(p["a"], [1.0, -2.0, 3.0])
    p = {"a": np.array([1.0, -2.0, 3.0])}
    Adam(p, lr=1e-4).step(p, {"a": np.array([0.5, -3.0, 1e-2])})
    np.testing.assert_allclose(p["a"] - [1.0, -2.0, 3.0], [-1e-4, 1e-4, -1e-4], rtol=1e-5)
    with pytest.raises(ValueError):
        Adam(p).step(p, {"a": np.zeros(2)})


def test_early_stopping():
    es = EarlyStopping(3)
    assert not es.update(5.0, 1)
    assert not es.update(5.0, 2)
    assert not es.update(5.0, 3)
    assert es.update(5.0, 4)
    assert es.best_epoch == 1


def test_scaler_roundtrip():
    y = np.random.default_rng(5).uniform(0.1, 300, size=(50, 14))
    s = TargetScaler.fit(y)
    np.testing.assert_allclose(s.std, np.std(y, axis=0), rtol=1e-12)
    np.testing.assert_allclose(s.denormalize(s.normalize(y)), y, rtol=1e-9)
    est = s.denormalize(np.ones(14), np.ones(14))
    np.testing.assert_allclose(est.var, s.std ** 2)


def tiny_data(n, seed, t=5):
    rng = np.random.default_rng(seed)
    targets = rng.uniform(0.2, 2.0, size=(n, 14))
    planes = rng.standard_normal((n, 4, 769, t)).astype(np.float32)
    planes[:, 0] = np.abs(planes[:, 0]) * targets[:, :1, None].astype(np.float32)
    return SplitData(planes, targets, [f"r{i}" for i in range(n)], np.zeros(n, int),
                     [f"m{i}" for i in range(n)])


def tiny_config():
    cfg = Config(seed=3)
    cfg.model.channels = 2
    cfg.train.batch_size = 8
    cfg.train.max_epochs = 3
    cfg.train.lr = 1e-3
    return cfg


def test_training_deterministic_and_checkpoint(tmp_path):
    tr, va = tiny_data(16, 0), tiny_data(8, 1)
    ck1, log1 = train(tr, va, tiny_config())
    ck2, log2 = train(tr, va, tiny_config())
    assert log1.val_curve == log2.val_curve and log1.train_curve == log2.train_curve
    for k in ck1.params:
        np.testing.assert_array_equal(ck1.params[k], ck2.params[k])
    np.testing.assert_allclose(ck1.target_std, np.std(tr.targets, axis=0), rtol=1e-9)
    ck1.save(tmp_path / "m.rfp")
    assert (tmp_path / "m.rfp").read_bytes()[:4] == b"RFP1"
    back = Checkpoint.load(tmp_path / "m.rfp")
    assert back.model == ck1.model
    np.testing.assert_array_equal(back.target_std, ck1.target_std)
    for k, v in ck1.params.items():
        np.testing.assert_array_equal(back.params[k], v)
    assert back.meta["best_epoch"] == log1.best_epoch
    with pytest.raises(ValueError):
        train(tr, SplitData(tr.planes[:0], tr.targets[:0], [], np.zeros(0), []), tiny_config())


def test_depthwise_backends_agree():
    from roomestim import _kernels

    if _kernels.compiled is None:
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(8)
    for dtype in (np.float32, np.float64):
        x = rng.standard_normal((5, 3, 40)).astype(dtype)
        w = rng.standard_normal((3, 11)).astype(dtype)
        g = rng.standard_normal(x.shape).astype(dtype)
        for d in (1, 2, 4):
            tol = 1e-5 if dtype == np.float32 else 1e-12
            np.testing.assert_allclose(_kernels.compiled.depthwise_forward(x, w, d),
                                       _kernels.python.depthwise_forward(x, w, d), rtol=tol, atol=tol)
            for a, b in zip(_kernels.compiled.depthwise_backward(x, w, g, d),
                            _kernels.python.depthwise_backward(x, w, g, d)):
                assert a.dtype == dtype
                np.testing.assert_allclose(a, b, rtol=tol, atol=tol)


def test_pure_python_backend_selected():
    import subprocess
    import sys

    out = subprocess.run([sys.executable, "-c", "from roomestim import _kernels; print(_kernels.BACKEND)"],
                         env={**__import__("os").environ, "ROOMESTIM_PURE_PYTHON": "1"},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
