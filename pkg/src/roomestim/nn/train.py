"""Training loop, feature loading and inference."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import features as feat
from .. import rng as rngmod
from ..config import Config
from .checkpoint import Checkpoint
from .layers import Context
from .model import Adam, Estimate, Network, nll, nll_from_output, split_output

log = logging.getLogger(__name__)


@dataclass
class SplitData:
    planes: np.ndarray  # (N, 4, F, T) float32
    targets: np.ndarray  # (N, 14) physical units
    room_ids: list
    positions: np.ndarray
    mix_ids: list

    def __len__(self):
        return len(self.mix_ids)


def load_split(manifest, split, cache_dir=None):
    """Feature planes and targets for every mixture of ``split``, cached on disk if asked."""
    recs = manifest.split(split)
    if not recs:
        raise ValueError(f"split {split!r} is empty")
    ids = [r["mix_id"] for r in recs]
    planes = None
    cache = Path(cache_dir) / f"features_{split}.bin" if cache_dir is not None else None
    if cache is not None and cache.exists():
        cached, cached_ids = feat.read_cache(cache)
        if cached_ids == ids:
            planes = cached
    if planes is None:
        planes = np.stack([feat.extract(manifest.load_mixture(r)).stacked() for r in recs])
        if cache is not None:
            cache.parent.mkdir(parents=True, exist_ok=True)
            feat.write_cache(cache, planes, ids)
    targets = manifest.room_targets()
    return SplitData(planes, np.array([targets[r["room_id"]] for r in recs]),
                     [r["room_id"] for r in recs], np.array([r["position"] for r in recs]), ids)


class TargetScaler:
    """Division by per-target standard deviation (no centering)."""

    def __init__(self, std):
        self.std = np.asarray(std, dtype=np.float64)

    @classmethod
    def fit(cls, targets):
        std = np.std(np.asarray(targets, dtype=np.float64), axis=0)
        if np.any(std <= 0):
            raise ValueError("a target has zero variance in the training split")
        return cls(std)

    def normalize(self, y):
        return np.asarray(y) / self.std

    def denormalize(self, mean, var=None):
        if var is None:
            return np.asarray(mean) * self.std
        return Estimate(np.asarray(mean) * self.std, np.asarray(var) * self.std ** 2)


class EarlyStopping:
    def __init__(self, patience):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = -1
        self.bad = 0

    def update(self, value, epoch):
        """Record a validation score; True when training should stop."""
        if value < self.best:
            self.best, self.best_epoch, self.bad = value, epoch, 0
            return False
        self.bad += 1
        return self.bad >= self.patience


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)  # dicts: epoch, train_nll, val_nll, seconds
    best_epoch: int = -1
    stopped_early: bool = False

    @property
    def val_curve(self):
        return [e["val_nll"] for e in self.epochs]

    @property
    def train_curve(self):
        return [e["train_nll"] for e in self.epochs]


def evaluate_nll(net, params, planes, y_norm, batch_size=32):
    total = 0.0
    for lo in range(0, len(planes), batch_size):
        out, _ = net.forward(params, np.asarray(planes[lo:lo + batch_size]))
        est = split_output(out.astype(np.float64))
        total += nll(est.mean, est.var, y_norm[lo:lo + batch_size]) * len(out)
    return total / len(planes)


def train(train_data: SplitData, val_data: SplitData, cfg: Config, seed=None, progress=None):
    """Adam on the Gaussian NLL with early stopping; returns the best checkpoint and the log."""
    if len(train_data) == 0 or len(val_data) == 0:
        raise ValueError("training and validation splits must be non-empty")
    seed = cfg.seed if seed is None else seed
    tc = cfg.train
    rng = rngmod.stream(seed, 0, rngmod.TRAIN)
    net = Network(cfg.model)
    params = net.init(rng)
    scaler = TargetScaler.fit(train_data.targets)
    y_train = scaler.normalize(train_data.targets).astype(np.float32)
    y_val = scaler.normalize(val_data.targets)
    opt = Adam(params, tc.lr, tuple(tc.betas), tc.eps)
    stopper = EarlyStopping(tc.patience)
    ctx = Context(True, rng)
    tlog = TrainLog()
    best = {k: v.copy() for k, v in params.items()}
    n, t_total = len(train_data), train_data.planes.shape[-1]
    crop = min(tc.crop_frames or t_total, t_total)
    for epoch in range(1, tc.max_epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, tc.batch_size):
            idx = np.sort(order[lo:lo + tc.batch_size])
            t0 = int(rng.integers(0, t_total - crop + 1))
            x = np.asarray(train_data.planes[idx, :, :, t0:t0 + crop])
            out, cache = net.forward(params, x, ctx)
            loss, g = nll_from_output(out, y_train[idx])
            opt.step(params, net.backward(params, cache, g))
            losses.append(loss * len(idx))
        train_nll = float(np.sum(losses) / n)
        val_nll = evaluate_nll(net, params, val_data.planes, y_val, tc.eval_batch_size)
        tlog.epochs.append({"epoch": epoch, "train_nll": train_nll, "val_nll": val_nll,
                            "seconds": time.perf_counter() - start})
        if not np.isfinite(train_nll):
            raise FloatingPointError(f"training diverged at epoch {epoch}")
        stop = stopper.update(val_nll, epoch)
        if stopper.best_epoch == epoch:
            best = {k: v.copy() for k, v in params.items()}
        log.info("epoch %d train %.4f val %.4f", epoch, train_nll, val_nll)
        if progress is not None:
            progress(tlog.epochs[-1])
        if stop:
            tlog.stopped_early = True
            break
    tlog.best_epoch = stopper.best_epoch
    meta = {"seed": int(seed), "best_epoch": tlog.best_epoch, "epochs": tlog.epochs,
            "n_train": n, "n_val": len(val_data)}
    return Checkpoint(cfg.model, best, scaler.std, meta), tlog


def predict_planes(ckpt: Checkpoint, planes, batch_size=32):
    """Physical-unit estimates for stacked feature planes ``(N, 4, F, T)``."""
    net = Network(ckpt.model)
    scaler = TargetScaler(ckpt.target_std)
    means, vars_ = [], []
    for lo in range(0, len(planes), batch_size):
        out, _ = net.forward(ckpt.params, np.asarray(planes[lo:lo + batch_size]))
        est = split_output(out.astype(np.float64))
        means.append(est.mean)
        vars_.append(est.var)
    return scaler.denormalize(np.concatenate(means), np.concatenate(vars_))


def predict(ckpt: Checkpoint, mixture, fs=feat.FS):
    """Estimate for one two-channel 16 kHz mixture."""
    mixture = np.asarray(mixture)
    if fs != feat.FS:
        raise ValueError(f"mixtures must be sampled at {feat.FS} Hz, got {fs}")
    if mixture.ndim != 2 or mixture.shape[0] != 2:
        raise ValueError(f"expected a (2, N) mixture, got shape {mixture.shape}")
    est = predict_planes(ckpt, feat.extract(mixture, fs).stacked()[None])
    return Estimate(est.mean[0], est.var[0])
