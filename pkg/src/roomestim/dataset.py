"""Dataset assembly: rooms, RIRs, annotations, noisy mixtures and manifest.

Output layout under the run directory::

    config.yaml         resolved configuration
    rooms.jsonl         one RoomSpec record per room
    rirs/               <room>_p<k>.wav / .json and <room>_ref.wav / .json
    annotations.jsonl   per-room targets and per-position RT60 table
    ssn_model.json      all-pole speech spectrum used for babble noise
    mixtures/           <room>_p<k>.wav, 2 ch float32 at 16 kHz, 3 s
    manifest.jsonl      dataset header, then per room one room record and
                        its mixture records
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import analysis
from . import geometry as geo
from . import rng as rngmod
from . import signals as sig
from . import simulate as sim
from .config import Config

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


def assign_splits(n_rooms, fractions, master_seed):
    """Room-level split tags with ``fractions`` proportions (rounded, train takes the rest)."""
    order = rngmod.stream(master_seed, 0, rngmod.SPLIT).permutation(n_rooms)
    n_val = int(round(fractions[1] * n_rooms))
    n_test = int(round(fractions[2] * n_rooms))
    tags = np.empty(n_rooms, dtype=object)
    tags[order[:n_rooms - n_val - n_test]] = "train"
    tags[order[n_rooms - n_val - n_test:n_rooms - n_test]] = "val"
    tags[order[n_rooms - n_test:]] = "test"
    return list(tags)


class ClipSource:
    """Speech clips partitioned by split so no clip is shared across splits."""

    def __init__(self, cfg: Config):
        self.cfg = cfg
        self.synthetic = cfg.data.corpus_dir is None
        self.pools = {}
        if not self.synthetic:
            clips = sig.load_corpus(cfg.data.corpus_dir)
            order = rngmod.stream(cfg.seed, 0, rngmod.CORPUS).permutation(len(clips))
            fr = cfg.data.splits
            n_train = int(round(fr[0] * len(clips)))
            n_val = int(round(fr[1] * len(clips)))
            bounds = {"train": order[:n_train], "val": order[n_train:n_train + n_val],
                      "test": order[n_train + n_val:]}
            for split, idx in bounds.items():
                pool = [clips[i] for i in sorted(idx)]
                pool = [c for c in pool if c.duration >= sig.CLIP_SECONDS]
                self.pools[split] = pool

    def draw(self, split, rng, tag):
        """(clip_id, unit-RMS 3 s excerpt at 16 kHz)."""
        if self.synthetic:
            clip_id = f"syn/{split}/{tag}"
            clip = sig.synthetic_speech(rng, self.cfg.data.synthetic_clip_seconds, clip_id)
            return clip_id, clip.excerpt(rng)
        pool = self.pools.get(split) or []
        if not pool:
            raise sig.CorpusError(f"no clips of at least {sig.CLIP_SECONDS} s available for split {split!r}")
        clip = pool[int(rng.integers(len(pool)))]
        return clip.clip_id, clip.excerpt(rng)

    def fit_spectrum(self):
        rng = rngmod.stream(self.cfg.seed, 1, rngmod.CORPUS)
        n = self.cfg.data.ssn_fit_clips
        if self.synthetic:
            clips = [sig.synthetic_speech(rng, self.cfg.data.synthetic_clip_seconds, f"ssn{i}")
                     for i in range(n)]
        else:
            clips = self.pools["train"][:n]
            if not clips:
                raise sig.CorpusError("training pool is empty")
        return sig.SpeechSpectrumModel.fit(clips)


# -- per-room stages -----------------------------------------------------------

def room_geometries(cfg, room, index):
    rng = rngmod.stream(cfg.seed, index, rngmod.POSITIONS)
    geoms = [sim.sample_positions(room, rng) for _ in range(cfg.data.positions)]
    ref = sim.reference_positions(room, rng)
    return geoms, ref


def simulate_room(cfg, room, index):
    """RIRs for every position plus the 1 m reference (last element)."""
    d = cfg.data
    geoms, ref = room_geometries(cfg, room, index)
    rirs = []
    for k, g in enumerate(geoms + [ref]):
        rng = rngmod.stream(cfg.seed, index, rngmod.RIR, k)
        rir = sim.synthesize_rir(room, g, d.max_order, d.n_rays, rng, c=d.speed_of_sound,
                                 cap_s=d.rir_cap_s, radius=d.detector_radius,
                                 position=k if k < len(geoms) else -1)
        if k == len(geoms):
            rir.meta["reference"] = True
        rirs.append(rir)
    return rirs


def annotate(room, rirs):
    per_pos = np.array([analysis.position_rt60(r.data, r.fs) for r in rirs])
    rt = analysis.median_over_positions(per_pos)
    return geo.annotate_room(room, rt.values), per_pos


def rir_16k(rir, c=sim.SPEED_OF_SOUND):
    """RIR at 16 kHz and its per-channel direct-path onsets in 16 kHz samples."""
    data = sig.resample_48k_to_16k(rir.data.astype(np.float64), rir.fs)
    return data, rir.direct_delays(c) * sig.FS / rir.fs


@dataclass
class RoomResult:
    room_record: dict
    mixture_records: list = field(default_factory=list)
    mixtures: dict = field(default_factory=dict)  # file name -> (2, n) float32


def babble_for(noise_model, rir16, onsets, rng, n=sig.CLIP_SAMPLES):
    """Steady-state babble: noise longer than the RIR, last ``n`` samples kept."""
    noise = sig.speech_shaped_noise(noise_model, n + rir16.shape[1], rng)
    return sig.diffuse_babble(noise, rir16, onsets)[:, -n:]


def mix_room(cfg, room, index, split, rirs, annotation, clips, noise_model):
    d = cfg.data
    rng = rngmod.stream(cfg.seed, index, rngmod.MIX)
    pos_rirs, ref_rir = rirs[:-1], rirs[-1]
    pos16 = [rir_16k(r, d.speed_of_sound) for r in pos_rirs]
    ref16, ref_on = rir_16k(ref_rir, d.speed_of_sound)

    _, ref_clip = clips.draw(split, rng, f"{room.room_id}/ref")
    ref_wet = sig.wet_speech(ref16, ref_clip)
    ref_babble = babble_for(noise_model, ref16, ref_on, rng)
    gains = sig.calibrate_noise_gains(ref_wet, ref_babble, rng, d.snr_static, d.snr_diffuse)
    ref_snrs = {k: float(v) for k, v in sig.mix(ref_wet, ref_babble, gains, rng).snrs().items()}

    result = RoomResult({
        "kind": "room",
        "room_id": room.room_id,
        "split": split,
        "targets": annotation.to_vector().tolist(),
        "noise": gains.to_dict(),
        "reference_snr": ref_snrs,
    })
    for k, (rir16, onsets) in enumerate(pos16):
        clip_id, clip = clips.draw(split, rng, f"{room.room_id}/p{k}")
        wet = sig.wet_speech(rir16, clip)
        q = int(rng.integers(len(pos16)))
        babble = babble_for(noise_model, pos16[q][0], pos16[q][1], rng)
        parts = sig.mix(wet, babble, gains, rng)
        name = f"{room.room_id}_p{k}.wav"
        result.mixtures[name] = parts.mixture.astype(np.float32)
        geom = pos_rirs[k].geometry
        rec = {
            "kind": "mixture",
            "mix_id": f"{room.room_id}_p{k}",
            "room_id": room.room_id,
            "position": k,
            "wav_path": f"mixtures/{name}",
            "split": split,
            "clip_id": clip_id,
            "source_distance": float(np.linalg.norm(geom.source - geom.center)),
        }
        rec.update({key: float(v) for key, v in parts.snrs().items()})
        result.mixture_records.append(rec)
    return result


# -- whole dataset ---------------------------------------------------------------

@dataclass
class DatasetManifest:
    master_seed: int
    rooms: list  # room records
    mixtures: list  # mixture records
    root: Path | None = None

    def split(self, name):
        return [m for m in self.mixtures if m["split"] == name]

    def room_targets(self):
        return {r["room_id"]: np.array(r["targets"]) for r in self.rooms}

    def write(self, path, header=None):
        by_room = {}
        for m in self.mixtures:
            by_room.setdefault(m["room_id"], []).append(m)
        with open(path, "w") as fh:
            fh.write(json.dumps({"kind": "dataset", "master_seed": self.master_seed,
                                 **(header or {})}) + "\n")
            for r in self.rooms:
                fh.write(json.dumps(r) + "\n")
                for m in by_room.get(r["room_id"], []):
                    fh.write(json.dumps(m) + "\n")

    @classmethod
    def read(cls, path):
        path = Path(path)
        rooms, mixtures, seed = [], [], None
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                kind = rec.get("kind")
                if kind == "dataset":
                    seed = rec["master_seed"]
                elif kind == "room":
                    rooms.append(rec)
                elif kind == "mixture":
                    mixtures.append(rec)
        return cls(seed, rooms, mixtures, path.parent)

    def load_mixture(self, rec):
        fs, data = wavfile.read(self.root / rec["wav_path"])
        if fs != sig.FS:
            raise ValueError(f"{rec['wav_path']}: expected {sig.FS} Hz, got {fs}")
        return np.ascontiguousarray(data.T)


def _room_job(args):
    cfg, index, split, out, noise_model = args
    room = geo.room_for_index(cfg.seed, index, cfg.data.absorption_ranges)
    rirs = simulate_room(cfg, room, index)
    annotation, per_pos = annotate(room, rirs[:-1])
    clips = _clip_source(cfg)
    res = mix_room(cfg, room, index, split, rirs, annotation, clips, noise_model)
    res.room_record["rt60_positions"] = per_pos.tolist()
    if cfg.data.write_rirs:
        for rir in rirs:
            suffix = "ref" if rir.position < 0 else f"p{rir.position}"
            rir.write(out / "rirs" / f"{room.room_id}_{suffix}.wav")
    for name, data in res.mixtures.items():
        wavfile.write(out / "mixtures" / name, sig.FS, np.ascontiguousarray(data.T))
    res.mixtures = {}
    return room, res


_CLIPS_CACHE = {}


def _clip_source(cfg):
    key = (cfg.seed, cfg.data.corpus_dir)
    if key not in _CLIPS_CACHE:
        _CLIPS_CACHE[key] = ClipSource(cfg)
    return _CLIPS_CACHE[key]


def build_dataset(cfg: Config, out_dir, master_seed=None, threads=None):
    """Run every stage for ``cfg.data.rooms`` rooms and write the manifest."""
    if master_seed is not None:
        cfg.seed = int(master_seed)
    threads = threads or cfg.threads
    out = Path(out_dir)
    for sub in ("rirs", "mixtures"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.yaml")
    clips = _clip_source(cfg)
    noise_model = clips.fit_spectrum()
    noise_model.save(out / "ssn_model.json")
    splits = assign_splits(cfg.data.rooms, cfg.data.splits, cfg.seed)
    jobs = [(cfg, i, splits[i], out, noise_model) for i in range(cfg.data.rooms)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_room_job, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_room_job(job))
            log.info("room %d/%d done", job[1] + 1, cfg.data.rooms)
    geo.write_rooms(out / "rooms.jsonl", [room for room, _ in results])
    with open(out / "annotations.jsonl", "w") as fh:
        for _, res in results:
            r = res.room_record
            fh.write(json.dumps({"room_id": r["room_id"], "targets": r["targets"],
                                 "rt60_positions": r["rt60_positions"]}) + "\n")
    manifest = DatasetManifest(cfg.seed, [r.room_record for _, r in results],
                               [m for _, r in results for m in r.mixture_records], out)
    manifest.write(out / "manifest.jsonl", header={"rooms": cfg.data.rooms,
                                                  "positions": cfg.data.positions,
                                                  "synthetic_speech": cfg.data.corpus_dir is None})
    return manifest


# -- stage-wise entry points (CLI) ---------------------------------------------------

def stage_sample_rooms(cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.yaml")
    rooms = [geo.room_for_index(cfg.seed, i, cfg.data.absorption_ranges) for i in range(cfg.data.rooms)]
    geo.write_rooms(out / "rooms.jsonl", rooms)
    return rooms


def _room_index(room):
    return int(room.room_id.replace("room", ""))


def stage_simulate(cfg, out_dir):
    out = Path(out_dir)
    (out / "rirs").mkdir(parents=True, exist_ok=True)
    rooms = geo.read_rooms(out / "rooms.jsonl")
    for room in rooms:
        for rir in simulate_room(cfg, room, _room_index(room)):
            suffix = "ref" if rir.position < 0 else f"p{rir.position}"
            rir.write(out / "rirs" / f"{room.room_id}_{suffix}.wav")
    return len(rooms)


def _read_room_rirs(cfg, out, room):
    rirs = [sim.Rir.read(out / "rirs" / f"{room.room_id}_p{k}.wav") for k in range(cfg.data.positions)]
    rirs.append(sim.Rir.read(out / "rirs" / f"{room.room_id}_ref.wav"))
    return rirs


def stage_annotate(cfg, out_dir):
    out = Path(out_dir)
    rooms = geo.read_rooms(out / "rooms.jsonl")
    with open(out / "annotations.jsonl", "w") as fh:
        for room in rooms:
            rirs = _read_room_rirs(cfg, out, room)
            ann, per_pos = annotate(room, rirs[:-1])
            fh.write(json.dumps({"room_id": room.room_id, "targets": ann.to_vector().tolist(),
                                 "rt60_positions": per_pos.tolist()}) + "\n")
    return len(rooms)


def stage_mix(cfg, out_dir):
    out = Path(out_dir)
    (out / "mixtures").mkdir(parents=True, exist_ok=True)
    rooms = geo.read_rooms(out / "rooms.jsonl")
    with open(out / "annotations.jsonl") as fh:
        anns = {r["room_id"]: r for r in map(json.loads, fh)}
    clips = _clip_source(cfg)
    noise_model = clips.fit_spectrum()
    noise_model.save(out / "ssn_model.json")
    splits = assign_splits(len(rooms), cfg.data.splits, cfg.seed)
    room_recs, mix_recs = [], []
    for room in rooms:
        index = _room_index(room)
        rirs = _read_room_rirs(cfg, out, room)
        ann = geo.RoomAnnotation.from_vector(anns[room.room_id]["targets"], room.room_id)
        res = mix_room(cfg, room, index, splits[index], rirs, ann, clips, noise_model)
        res.room_record["rt60_positions"] = anns[room.room_id]["rt60_positions"]
        for name, data in res.mixtures.items():
            wavfile.write(out / "mixtures" / name, sig.FS, np.ascontiguousarray(data.T))
        room_recs.append(res.room_record)
        mix_recs.extend(res.mixture_records)
    manifest = DatasetManifest(cfg.seed, room_recs, mix_recs, out)
    manifest.write(out / "manifest.jsonl", header={"rooms": len(rooms),
                                                  "positions": cfg.data.positions,
                                                  "synthetic_speech": cfg.data.corpus_dir is None})
    return manifest
