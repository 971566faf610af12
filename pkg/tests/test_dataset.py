import hashlib
import json

import numpy as np
import pytest

from roomestim import dataset as D
from roomestim import geometry as G
from roomestim.config import Config


def small_config(rooms=10, seed=11):
    cfg = Config(seed=seed)
    cfg.data.rooms = rooms
    cfg.data.positions = 2
    cfg.data.max_order = 4
    cfg.data.n_rays = 200
    cfg.data.ssn_fit_clips = 4
    return cfg


def digest(root):
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file() and p.suffix in (".wav", ".jsonl")):
        h.update(path.relative_to(root).as_posix().encode())
        h.update(path.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    return root, D.build_dataset(small_config(), root)


def test_manifest_counts(built):
    root, m = built
    assert len(m.rooms) == 10 and len(m.mixtures) == 20
    back = D.DatasetManifest.read(root / "manifest.jsonl")
    assert back.master_seed == 11
    assert back.mixtures == json.loads(json.dumps(m.mixtures))
    for rec in back.mixtures:
        x = back.load_mixture(rec)
        assert x.shape == (2, 48000) and x.dtype == np.float32
    assert len(G.read_rooms(root / "rooms.jsonl")) == 10
    assert len(list((root / "rirs").glob("*_ref.wav"))) == 10


def test_splits_disjoint(built):
    _, m = built
    splits = {r["room_id"]: r["split"] for r in m.rooms}
    assert sorted(splits.values()).count("train") == 8
    assert sorted(splits.values()).count("val") == 1
    clips = {}
    for rec in m.mixtures:
        assert rec["split"] == splits[rec["room_id"]]
        clips.setdefault(rec["split"], set()).add(rec["clip_id"])
    assert not (clips["train"] & clips["val"])
    assert not (clips["train"] & clips.get("test", set()))


def test_targets_consistent(built):
    _, m = built
    for r in m.rooms:
        t = np.array(r["targets"])
        assert t.shape == (14,) and np.all(np.isfinite(t))
        assert np.all((t[:6] > 0) & (t[:6] <= 1)) and np.all(t[6:12] > 0)
        rt = np.array(r["rt60_positions"])
        np.testing.assert_allclose(np.nanmedian(rt, axis=0), t[6:12], rtol=1e-12)


def test_reference_snr_closure(built):
    _, m = built
    for r in m.rooms:
        assert abs(r["reference_snr"]["snr_static_db"] - r["noise"]["static_snr_db"]) <= 0.1
        assert abs(r["reference_snr"]["snr_diffuse_db"] - r["noise"]["diffuse_snr_db"]) <= 0.1


def test_build_deterministic(built, tmp_path):
    root, _ = built
    D.build_dataset(small_config(), tmp_path)
    assert digest(tmp_path) == digest(root)


def test_stagewise_matches_build(built, tmp_path):
    root, _ = built
    cfg = small_config()
    D.stage_sample_rooms(cfg, tmp_path)
    D.stage_simulate(cfg, tmp_path)
    D.stage_annotate(cfg, tmp_path)
    D.stage_mix(cfg, tmp_path)
    assert (tmp_path / "manifest.jsonl").read_bytes() == (root / "manifest.jsonl").read_bytes()
    for wav in sorted((root / "mixtures").glob("*.wav")):
        assert (tmp_path / "mixtures" / wav.name).read_bytes() == wav.read_bytes()


def test_assign_splits_proportions():
    tags = D.assign_splits(200, (0.8, 0.1, 0.1), 3)
    assert tags.count("train") == 160 and tags.count("val") == 20 and tags.count("test") == 20
    assert tags == D.assign_splits(200, (0.8, 0.1, 0.1), 3)
    assert tags != D.assign_splits(200, (0.8, 0.1, 0.1), 4)


def test_parallel_build_matches_serial(built, tmp_path):
    root, _ = built
    D.build_dataset(small_config(), tmp_path, threads=2)
    assert digest(tmp_path) == digest(root)
