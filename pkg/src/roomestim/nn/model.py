"""Dual-branch estimator: spectral conv branch, inter-channel branch, dense head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import ModelConfig
from ..features import N_FREQ
from ..geometry import N_TARGETS
from .layers import Context, Dense, Dropout, FreqPool, ReLU, Sequential, conv_block

VAR_FLOOR = 1e-6


@dataclass
class Estimate:
    mean: np.ndarray  # (..., 14)
    var: np.ndarray  # (..., 14), strictly positive


class Network:
    """Stateless model definition; parameters are a flat ``{name: array}`` dict."""

    def __init__(self, cfg: ModelConfig | None = None, n_freq=N_FREQ):
        self.cfg = cfg = cfg or ModelConfig()
        self.n_freq = n_freq
        c, k = cfg.channels, cfg.kernel_size
        sc, c_in = [], 1
        for i, d in enumerate(cfg.sc_dilations):
            sc.append((f"b{i}", conv_block(c_in, c, n_freq, k, d, cfg.conv_dropout)))
            c_in = c
        sc.append(("pool", FreqPool(n_freq, cfg.sc_pool)))
        self.sc = Sequential(sc)
        self.ic = None
        dim = c * cfg.sc_pool
        if cfg.use_ic:
            ic, c_in = [], 3
            for i, d in enumerate(cfg.ic_dilations):
                ic.append((f"b{i}", conv_block(c_in, c, n_freq, k, d, cfg.conv_dropout)))
                c_in = c
            ic.append(("pool", FreqPool(n_freq, cfg.ic_pool)))
            self.ic = Sequential(ic)
            dim += c * cfg.ic_pool
        self.embedding_dim = dim
        head, n_in = [], dim
        for i, h in enumerate(cfg.hidden):
            head += [(f"fc{i}", Dense(n_in, h)), (f"relu{i}", ReLU()),
                     (f"drop{i}", Dropout(cfg.dense_dropout))]
            n_in = h
        head.append(("out", Dense(n_in, 2 * N_TARGETS, init_gain=3.0)))
        self.head = Sequential(head)

    def init(self, rng, dtype=np.float32):
        p = {}
        for prefix, part in self._parts():
            p.update({f"{prefix}.{k}": v for k, v in part.init(rng, dtype).items()})
        # log-variance half of the output layer starts at zero (unit variance)
        p["head.out.w"][:, N_TARGETS:] = 0
        return p

    def _parts(self):
        parts = [("sc", self.sc)]
        if self.ic is not None:
            parts.append(("ic", self.ic))
        return parts + [("head", self.head)]

    @staticmethod
    def _sub(p, prefix):
        pre = prefix + "."
        return {k[len(pre):]: v for k, v in p.items() if k.startswith(pre)}

    def check_input(self, planes):
        planes = np.asarray(planes)
        if planes.ndim != 4 or planes.shape[1] != 4:
            raise ValueError(f"expected (batch, 4, F, T) feature planes, got {planes.shape}")
        if planes.shape[2] != self.n_freq:
            raise ValueError(f"expected {self.n_freq} frequency bins, got {planes.shape[2]}")
        if planes.shape[3] < 1:
            raise ValueError("need at least one frame")
        return planes

    @staticmethod
    def _frames(x):
        # (B, C, F, T) -> (B*T, C, F)
        b, c, f, t = x.shape
        return np.ascontiguousarray(x.transpose(0, 3, 1, 2).reshape(b * t, c, f))

    def embed(self, p, planes, ctx=None):
        """Time-averaged embedding ``(B, embedding_dim)`` and the backward cache."""
        ctx = ctx or Context()
        planes = self.check_input(planes)
        dtype = p["sc.b0.dw.w"].dtype
        b, _, _, t = planes.shape
        sc, sc_cache = self.sc.forward(self._sub(p, "sc"), self._frames(planes[:, :1].astype(dtype)), ctx)
        feats, caches = [sc], [sc_cache]
        if self.ic is not None:
            ic, ic_cache = self.ic.forward(self._sub(p, "ic"), self._frames(planes[:, 1:].astype(dtype)), ctx)
            feats.append(ic)
            caches.append(ic_cache)
        frame_emb = np.concatenate(feats, axis=1)
        emb = frame_emb.reshape(b, t, -1).mean(axis=1)
        return emb, (caches, b, t, [f.shape[1] for f in feats])

    def forward(self, p, planes, ctx=None):
        """Raw ``(B, 28)`` output and the cache for ``backward``."""
        ctx = ctx or Context()
        emb, emb_cache = self.embed(p, planes, ctx)
        out, head_cache = self.head.forward(self._sub(p, "head"), emb, ctx)
        return out, (emb_cache, head_cache)

    def backward(self, p, cache, gout):
        (caches, b, t, widths), head_cache = cache
        gemb, grads = self.head.backward(self._sub(p, "head"), head_cache, gout)
        out = {f"head.{k}": v for k, v in grads.items()}
        gframe = np.repeat(gemb[:, None, :] / t, t, axis=1).reshape(b * t, -1)
        splits = np.cumsum(widths)[:-1]
        for (prefix, part), c, g in zip(self._parts()[:-1], caches, np.split(gframe, splits, axis=1)):
            _, grads = part.backward(self._sub(p, prefix), c, np.ascontiguousarray(g))
            out.update({f"{prefix}.{k}": v for k, v in grads.items()})
        return out

    def first_block_activations(self, p, planes):
        """Output of the first SC block (post layer norm) in inference mode."""
        x = self._frames(self.check_input(planes)[:, :1].astype(p["sc.b0.dw.w"].dtype))
        block = self.sc.layers[0][1]
        y, _ = block.forward(Sequential._sub(self._sub(p, "sc"), "b0"), x, Context())
        return y


def split_output(out):
    """Means and variances from the raw network output."""
    n = out.shape[-1] // 2
    return Estimate(out[..., :n], np.exp(out[..., n:]) + VAR_FLOOR)


def nll(mean, var, target):
    """Mean over the batch of sum_d 0.5 * (log var + (y - mean)^2 / var)."""
    var = np.asarray(var)
    if np.any(var <= 0):
        raise ValueError("variances must be positive")
    r = np.asarray(target) - mean
    per = 0.5 * (np.log(var) + r * r / var)
    return float(per.sum(axis=-1).mean()) if per.ndim > 1 else float(per.sum())


def nll_from_output(out, target):
    """Loss and its gradient w.r.t. the raw ``(B, 28)`` output."""
    est = split_output(out)
    loss = nll(est.mean, est.var, target)
    b = out.shape[0]
    r = target - est.mean
    g_mean = -r / est.var / b
    g_var = 0.5 * (1.0 / est.var - r * r / est.var ** 2) / b
    g_s = g_var * (est.var - VAR_FLOOR)
    return loss, np.concatenate([g_mean, g_s], axis=1).astype(out.dtype)


class Adam:
    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        """In-place update of ``params``."""
        if set(grads) != set(params):
            raise ValueError("gradient names do not match parameters")
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {k}")
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)
