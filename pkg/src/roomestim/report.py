"""Evaluation report: MAE vs number of fused positions, per-band table, ablation table."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fusion
from . import rng as rngmod
from .geometry import GROUPS, OCTAVE_BANDS

GROUP_LABELS = {"alpha": "mean absorption", "rt60": "RT60 [s]", "surface": "surface [m^2]",
                "volume": "volume [m^3]"}
# full-scale reference errors at J=5, shown for orientation only
REFERENCE_MAE = {"alpha": 0.052, "rt60": 0.18, "surface": 42.0, "volume": 54.0}


@dataclass
class PositionPredictions:
    room_ids: list
    means: np.ndarray  # (R, P, 14)
    variances: np.ndarray  # (R, P, 14)
    truths: np.ndarray  # (R, 14)


def arrange_by_room(room_ids, positions, means, variances, targets):
    """Regroup per-mixture predictions into ``(rooms, positions, 14)`` arrays."""
    rooms = sorted(set(room_ids))
    counts = {r: 0 for r in rooms}
    for r in room_ids:
        counts[r] += 1
    p = min(counts.values())
    if p != max(counts.values()):
        raise ValueError("rooms have differing numbers of positions")
    row = {r: i for i, r in enumerate(rooms)}
    m = np.zeros((len(rooms), p, means.shape[1]))
    v = np.zeros_like(m)
    t = np.zeros((len(rooms), means.shape[1]))
    order = np.lexsort((positions, [row[r] for r in room_ids]))
    for n, i in enumerate(order):
        ri, pi = divmod(n, p)
        m[ri, pi], v[ri, pi], t[ri] = means[i], variances[i], targets[i]
    return PositionPredictions(rooms, m, v, t)


@dataclass
class EvalReport:
    j: np.ndarray
    curves: dict  # group -> MAE per J
    ci: dict  # group -> (J, 2) bootstrap interval
    band_table: list  # rows: band, alpha 1 pos, rt60 1 pos, alpha J pos, rt60 J pos
    fused_var_decreasing: bool
    ablation: list = field(default_factory=list)  # rows: group, SC, SC+IC
    files: list = field(default_factory=list)


def evaluate(pred: PositionPredictions, j_max=5, seed=0, resamples=1000):
    p = pred.means.shape[1]
    if p < j_max:
        raise ValueError(f"need {j_max} positions per room, test split has {p}")
    rng = rngmod.stream(seed, 0, rngmod.BOOTSTRAP)
    curves, ci = {}, {}
    for g in GROUPS:
        curve, per_room = fusion.mae_vs_j(pred.means, pred.variances, pred.truths, g, j_max)
        curves[g] = curve
        ci[g] = np.array([fusion.bootstrap_ci(e, rng=rng, resamples=resamples) for e in per_room])
    rows = []
    for b, center in enumerate(OCTAVE_BANDS):
        row = [center]
        for j in (1, j_max):
            for sel in (GROUPS["alpha"].start + b, GROUPS["rt60"].start + b):
                row.append(fusion.mae_vs_j(pred.means, pred.variances, pred.truths, sel, j)[0][-1])
        rows.append(row)
    # nested fusion of the first J positions: variance must shrink with every observation
    fused = [fusion.fuse_batch(pred.means[:, :j], pred.variances[:, :j])[1] for j in range(1, p + 1)]
    decreasing = all(np.all(b < a) for a, b in zip(fused, fused[1:]))
    return EvalReport(np.arange(1, j_max + 1), curves, ci, rows, bool(decreasing))


def ablation_rows(sc_pred: PositionPredictions, full_pred: PositionPredictions):
    """Single-position MAE per group for the SC-only and SC+IC models."""
    rows = []
    for g in GROUPS:
        rows.append([g, fusion.mae(sc_pred.means[:, 0], sc_pred.truths, g),
                     fusion.mae(full_pred.means[:, 0], full_pred.truths, g)])
    return rows


def _fmt(x):
    return f"{x:.4g}"


def write_report(report: EvalReport, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    path = out / "mae_vs_j.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "J", "mae", "ci_low", "ci_high"])
        for g, curve in report.curves.items():
            for j, v, (lo, hi) in zip(report.j, curve, report.ci[g]):
                w.writerow([g, int(j), _fmt(v), _fmt(lo), _fmt(hi)])
    files.append(path)
    j = int(report.j[-1])
    header = ["band_hz", "alpha_1pos", "rt60_1pos", f"alpha_{j}pos", f"rt60_{j}pos"]
    path = out / "bands.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in report.band_table:
            w.writerow([int(row[0])] + [_fmt(v) for v in row[1:]])
    files.append(path)
    if report.ablation:
        path = out / "ablation.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["group", "sc_only_1pos", "sc_ic_1pos"])
            for row in report.ablation:
                w.writerow([row[0], _fmt(row[1]), _fmt(row[2])])
        files.append(path)
    files += _plot(report, out)
    path = out / "report.md"
    path.write_text(_markdown(report))
    files.append(path)
    report.files = files
    return files


def _markdown(report):
    j = int(report.j[-1])
    lines = ["# Evaluation", "", "## MAE vs number of fused positions", "",
             "| group | " + " | ".join(f"J={k}" for k in report.j) + " |",
             "|---|" + "---|" * len(report.j)]
    for g, curve in report.curves.items():
        lines.append(f"| {g} | " + " | ".join(_fmt(v) for v in curve) + " |")
    lines += ["", "## Octave bands", "",
              f"| band [Hz] | alpha (1 pos) | RT60 (1 pos) | alpha ({j} pos) | RT60 ({j} pos) |",
              "|---|---|---|---|---|"]
    for row in report.band_table:
        lines.append(f"| {int(row[0])} | " + " | ".join(_fmt(v) for v in row[1:]) + " |")
    if report.ablation:
        lines += ["", "## Features (single position)", "", "| group | SC | SC+IC |", "|---|---|---|"]
        for g, a, b in report.ablation:
            lines.append(f"| {g} | {_fmt(a)} | {_fmt(b)} |")
    lines += ["", f"Fused variance decreases with every added position: {report.fused_var_decreasing}",
              "", "Reference MAE at J=5 for a model trained at full scale: "
              + ", ".join(f"{g} {v:g}" for g, v in REFERENCE_MAE.items()) + ".", ""]
    return "\n".join(lines)


def _plot(report, out):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 4, figsize=(14, 3.2))
    for ax, (g, curve) in zip(axes, report.curves.items()):
        ci = report.ci[g]
        ax.errorbar(report.j, curve, yerr=[curve - ci[:, 0], ci[:, 1] - curve], marker="o", capsize=3)
        ax.set_title(GROUP_LABELS[g])
        ax.set_xlabel("positions fused")
        ax.set_xticks(report.j)
    axes[0].set_ylabel("MAE")
    fig.tight_layout()
    files = []
    for ext in ("svg", "png"):
        path = out / f"mae_vs_j.{ext}"
        fig.savefig(path, dpi=100)
        files.append(path)
    plt.close(fig)
    return files




def predictions_for(ckpt, data):
    from .nn.train import predict_planes

    est = predict_planes(ckpt, data.planes)
    return arrange_by_room(data.room_ids, data.positions, est.mean, est.var, data.targets)


def eval_report(ckpt, manifest, out_dir, j_max=5, sc_only=None, cache_dir=None, seed=0):
    """Evaluate ``ckpt`` on the test split and write CSV tables, plots and a summary."""
    from .nn.train import load_split

    data = load_split(manifest, "test", cache_dir)
    full = predictions_for(ckpt, data)
    report = evaluate(full, j_max, seed)
    if sc_only is not None:
        report.ablation = ablation_rows(predictions_for(sc_only, data), full)
    write_report(report, out_dir)
    return report
