"""Command-line driver.

Typical run::

    roomestim --config desk.yaml --seed 1 sample-rooms --run-dir run
    roomestim --config desk.yaml --seed 1 simulate --run-dir run
    roomestim --config desk.yaml --seed 1 annotate --run-dir run
    roomestim --config desk.yaml --seed 1 mix --run-dir run
    roomestim --config desk.yaml --seed 1 train --run-dir run
    roomestim report --run-dir run
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import __version__
from .config import Config
from .geometry import TARGET_NAMES, DomainError
from .signals import CorpusError
from .simulate import GeometryError

log = logging.getLogger("roomestim")

EXIT_USAGE, EXIT_INPUT, EXIT_DOMAIN, EXIT_RUNTIME = 2, 3, 4, 1


def bundled_config(name):
    return resources.files("roomestim") / "configs" / f"{name}.yaml"


def load_config(args):
    name = args.config or "desk"
    path = Path(name)
    if not path.exists():
        bundled = bundled_config(name)
        if not bundled.is_file():
            raise FileNotFoundError(f"config {name!r} is neither a file nor a bundled config")
        path = bundled
    cfg = Config.load(path)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg


def _run_dir(args):
    return Path(args.run_dir)


def cmd_sample_rooms(cfg, args):
    from . import dataset

    rooms = dataset.stage_sample_rooms(cfg, _run_dir(args))
    print(f"wrote {len(rooms)} rooms to {_run_dir(args) / 'rooms.jsonl'}")


def cmd_simulate(cfg, args):
    from . import dataset

    n = dataset.stage_simulate(cfg, _run_dir(args))
    print(f"simulated {n} rooms into {_run_dir(args) / 'rirs'}")


def cmd_annotate(cfg, args):
    from . import dataset

    n = dataset.stage_annotate(cfg, _run_dir(args))
    print(f"annotated {n} rooms")


def cmd_mix(cfg, args):
    from . import dataset

    m = dataset.stage_mix(cfg, _run_dir(args))
    print(f"wrote {len(m.mixtures)} mixtures and {_run_dir(args) / 'manifest.jsonl'}")


def cmd_build(cfg, args):
    from . import dataset

    m = dataset.build_dataset(cfg, _run_dir(args))
    print(f"built {len(m.rooms)} rooms, {len(m.mixtures)} mixtures in {_run_dir(args)}")


def _manifest(run_dir):
    from .dataset import DatasetManifest

    path = Path(run_dir) / "manifest.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run the data stages first")
    return DatasetManifest.read(path)


def cmd_train(cfg, args):
    from .nn import load_split, train

    run = _run_dir(args)
    if args.sc_only:
        cfg.model.use_ic = False
    manifest = _manifest(run)
    tr = load_split(manifest, "train", run)
    va = load_split(manifest, "val", run)

    def progress(e):
        print(f"epoch {e['epoch']:3d}  train {e['train_nll']:.4f}  val {e['val_nll']:.4f}  "
              f"({e['seconds']:.1f} s)", flush=True)

    ckpt, tlog = train(tr, va, cfg, progress=progress)
    out = Path(args.out) if args.out else run / ("model_sc.rfp" if args.sc_only else "model.rfp")
    ckpt.save(out)
    with open(out.with_suffix(".log.csv"), "w") as fh:
        fh.write("epoch,train_nll,val_nll,seconds\n")
        for e in tlog.epochs:
            fh.write(f"{e['epoch']},{e['train_nll']!r},{e['val_nll']!r},{e['seconds']:.3f}\n")
    print(f"best epoch {tlog.best_epoch}; checkpoint {out}")


def _read_mixture(path):
    fs, data = wavfile.read(path)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError(f"{path}: expected a two-channel WAV")
    return fs, data.T


def _estimate_dict(mean, var):
    return {name: {"mean": float(m), "var": float(v)} for name, m, v in zip(TARGET_NAMES, mean, var)}


def cmd_predict(cfg, args):
    from .nn import Checkpoint, predict

    ckpt = Checkpoint.load(args.checkpoint)
    out = {}
    for wav in args.wav:
        fs, x = _read_mixture(wav)
        est = predict(ckpt, x, fs)
        out[str(wav)] = _estimate_dict(est.mean, est.var)
    print(json.dumps(out, indent=1))


def cmd_fuse(cfg, args):
    from .fusion import fuse
    from .nn import Checkpoint, predict

    ckpt = Checkpoint.load(args.checkpoint)
    ests = [predict(ckpt, *reversed(_read_mixture(w))) for w in args.wav]
    fused = fuse(ests)
    print(json.dumps({"positions": len(ests), "fused": _estimate_dict(fused.mean, fused.var)}, indent=1))


def cmd_report(cfg, args):
    from .nn import Checkpoint
    from .report import eval_report

    run = _run_dir(args)
    ckpt = Checkpoint.load(args.checkpoint or run / "model.rfp")
    sc = args.sc_only_checkpoint
    if sc is None and (run / "model_sc.rfp").exists():
        sc = run / "model_sc.rfp"
    sc_ckpt = Checkpoint.load(sc) if sc else None
    out = Path(args.out) if args.out else run / "report"
    rep = eval_report(ckpt, _manifest(run), out, args.j_max, sc_ckpt, cache_dir=run, seed=cfg.seed)
    for g, curve in rep.curves.items():
        print(f"{g:8s} " + "  ".join(f"J={j}: {v:.4g}" for j, v in zip(rep.j, curve)))
    print(f"report written to {out}")


def build_parser():
    p = argparse.ArgumentParser(prog="roomestim", description="Room parameter estimation from reverberant speech.")
    p.add_argument("--config", help="YAML config file or bundled name (desk, full); default desk")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--threads", type=int, help="worker processes for data generation")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--run-dir", default="run", help="run directory (default: ./run)")
        sp.set_defaults(func=func)
        return sp

    add("sample-rooms", cmd_sample_rooms, "draw room geometry and materials")
    add("simulate", cmd_simulate, "synthesize RIRs for every room and position")
    add("annotate", cmd_annotate, "measure RT60 and write room targets")
    add("mix", cmd_mix, "render noisy reverberant mixtures and the manifest")
    add("build", cmd_build, "all data stages in one pass")
    sp = add("train", cmd_train, "train the estimator")
    sp.add_argument("--sc-only", action="store_true", help="disable the inter-channel branch")
    sp.add_argument("--out", help="checkpoint path")
    sp = add("predict", cmd_predict, "estimate room parameters from mixtures")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("wav", nargs="+")
    sp = add("fuse", cmd_fuse, "fuse estimates from several positions of one room")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("wav", nargs="+")
    sp = add("report", cmd_report, "evaluate on the test split")
    sp.add_argument("--checkpoint")
    sp.add_argument("--sc-only-checkpoint")
    sp.add_argument("--j-max", type=int, default=5)
    sp.add_argument("--out")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        args.func(cfg, args)
    except (FileNotFoundError, CorpusError, OSError) as exc:
        print(f"roomestim: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (GeometryError, DomainError, FloatingPointError) as exc:
        print(f"roomestim: domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except ValueError as exc:
        print(f"roomestim: invalid input or config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"roomestim: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
