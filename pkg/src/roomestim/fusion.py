"""Precision-weighted fusion of per-position estimates and error metrics."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .geometry import GROUPS


@dataclass
class FusedEstimate:
    mean: np.ndarray
    precision: np.ndarray
    n_observations: int

    @property
    def var(self):
        return 1.0 / self.precision


def fuse(estimates=None, means=None, variances=None):
    """Fuse J observations given as Estimate-like objects or ``(J, D)`` arrays.

    Each observation is weighted by its precision 1/var; precisions add up.
    """
    if estimates is not None:
        estimates = list(estimates)
        if not estimates:
            raise ValueError("nothing to fuse")
        means = np.stack([np.asarray(e.mean, dtype=np.float64) for e in estimates])
        variances = np.stack([np.asarray(e.var, dtype=np.float64) for e in estimates])
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    variances = np.atleast_2d(np.asarray(variances, dtype=np.float64))
    if means.shape[0] == 0:
        raise ValueError("nothing to fuse")
    if means.shape != variances.shape:
        raise ValueError("means and variances differ in shape")
    if np.any(~(variances > 0)):
        raise ValueError("variances must be positive")
    prec = 1.0 / variances
    total = prec.sum(axis=0)
    return FusedEstimate((prec * means).sum(axis=0) / total, total, means.shape[0])


def fuse_batch(means, variances):
    """Vectorized fusion over the second-to-last axis: ``(..., J, D) -> (..., D)`` pair."""
    variances = np.asarray(variances, dtype=np.float64)
    if np.any(~(variances > 0)):
        raise ValueError("variances must be positive")
    prec = 1.0 / variances
    total = prec.sum(axis=-2)
    return (prec * means).sum(axis=-2) / total, 1.0 / total


def _select(x, selector):
    if selector is None:
        return x
    if isinstance(selector, str):
        selector = GROUPS[selector]
    return x[..., selector]


def abs_errors(predictions, truths, selector=None):
    predictions, truths = np.asarray(predictions, float), np.asarray(truths, float)
    if predictions.shape != truths.shape:
        raise ValueError(f"prediction/truth shapes differ: {predictions.shape} vs {truths.shape}")
    return np.abs(_select(predictions, selector) - _select(truths, selector))


def mae(predictions, truths, selector=None):
    """Mean absolute error over rooms and the selected columns (band-averaged for groups)."""
    return float(np.mean(abs_errors(predictions, truths, selector)))


def bootstrap_ci(errors, level=0.95, resamples=1000, rng=None):
    """Percentile bootstrap interval of the mean of ``errors``."""
    errors = np.asarray(errors, dtype=np.float64).ravel()
    if errors.size < 2:
        raise ValueError("need at least two samples for a bootstrap interval")
    if rng is None:
        rng = np.random.default_rng(0)
    idx = rng.integers(0, errors.size, size=(resamples, errors.size))
    stats = errors[idx].mean(axis=1)
    lo, hi = np.percentile(stats, [50 * (1 - level), 50 * (1 + level)])
    point = errors.mean()
    return float(min(lo, point)), float(max(hi, point))


def subset_fusion(means, variances, j):
    """Fused estimates for every ``j``-subset of positions.

    ``means``/``variances`` are ``(R, P, D)``; returns ``(R, C(P, j), D)`` means and variances.
    """
    means, variances = np.asarray(means, float), np.asarray(variances, float)
    p = means.shape[1]
    if not 1 <= j <= p:
        raise ValueError(f"cannot fuse {j} of {p} positions")
    subsets = list(combinations(range(p), j))
    fm, fv = zip(*(fuse_batch(means[:, s], variances[:, s]) for s in map(list, subsets)))
    return np.stack(fm, axis=1), np.stack(fv, axis=1)


def mae_vs_j(means, variances, truths, selector=None, j_max=None):
    """MAE per J, averaged over all position subsets of size J; per-room errors for CIs too."""
    p = np.asarray(means).shape[1]
    j_max = j_max or p
    if j_max > p:
        raise ValueError(f"J={j_max} exceeds the {p} available positions")
    curve, per_room = [], []
    for j in range(1, j_max + 1):
        fm, _ = subset_fusion(means, variances, j)
        err = abs_errors(fm, np.broadcast_to(np.asarray(truths, float)[:, None], fm.shape), selector)
        room_err = err.reshape(err.shape[0], -1).mean(axis=1)
        per_room.append(room_err)
        curve.append(float(room_err.mean()))
    return np.array(curve), per_room
