import json

import numpy as np
import pytest

from sgsm.errors import ConfigError, DataError, StageError
from sgsm.neural import TrainConfig
from sgsm.pipeline import (WIFI_METHODS, PipelineConfig, SGSMInstance, SyntheticTaskSpec,
                           default_unlabeled, derive_seed, embed_dataset, pretrain,
                           run_selection, synth_dataset, synth_external, transform_dataset)
from sgsm.signal_methods import dft_magnitude


def _small_config(tmp_path, methods=WIFI_METHODS, **kw):
    return PipelineConfig(list(methods), input_length=64, code_length=16, seed=kw.pop("seed", 0),
                          compressor=TrainConfig(2, 1e-3, 32), mixer=TrainConfig(3, 1e-3, 32),
                          paths={"data": str(tmp_path / "data"),
                                 "checkpoints": str(tmp_path / "ckpt"),
                                 "outputs": str(tmp_path / "out")}, **kw)


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("inst")
    cfg = _small_config(tmp)
    U = default_unlabeled(seed=0, count=90, length=64)
    inst = pretrain(cfg, U)
    task = synth_dataset(SyntheticTaskSpec("SpectralPeak", class_count=3, samples_per_class=10,
                                           length=64, unlabeled_count=10, seed=1))
    return cfg, U, inst, task


# ---------------------------------------------------------------- seeds and data

def test_derive_seed_stable_and_distinct():
    assert derive_seed(0, "a") == derive_seed(0, "a")
    assert len({derive_seed(0, "a"), derive_seed(0, "b"), derive_seed(1, "a")}) == 3


def test_synth_deterministic():
    spec = SyntheticTaskSpec("WaveletBurst", samples_per_class=5, unlabeled_count=20, seed=3)
    a, b = synth_dataset(spec), synth_dataset(spec)
    assert a.labeled.tobytes() == b.labeled.tobytes()
    assert a.unlabeled.tobytes() == b.unlabeled.tobytes()
    assert np.bincount(a.labels).tolist() == [5] * 6
    c = synth_dataset(SyntheticTaskSpec("WaveletBurst", samples_per_class=5, unlabeled_count=20, seed=4))
    assert c.labeled.tobytes() != a.labeled.tobytes()


def test_synth_spec_validation():
    with pytest.raises(ConfigError):
        SyntheticTaskSpec("Chirp")
    with pytest.raises(ConfigError):
        SyntheticTaskSpec(class_count=1)


def _centroid_accuracy(feats, labels):
    half = feats.shape[0] // 2
    cents = np.stack([feats[:half][labels[:half] == c].mean(0) for c in np.unique(labels)])
    pred = np.argmin(((feats[half:, None] - cents[None]) ** 2).sum(-1), axis=1)
    return np.mean(pred == labels[half:])


def test_spectral_peak_is_a_frequency_task():
    ds = synth_dataset(SyntheticTaskSpec("SpectralPeak", noise_stddev=1.0, samples_per_class=40,
                                         unlabeled_count=1, seed=0))
    spec_acc = _centroid_accuracy(np.stack([dft_magnitude(x) for x in ds.labeled]), ds.labels)
    raw_acc = _centroid_accuracy(ds.labeled, ds.labels)
    assert spec_acc > 0.95
    assert raw_acc < spec_acc


def test_default_unlabeled_mix():
    U = default_unlabeled(seed=0, count=31, length=64)
    assert U.shape == (31, 64)
    assert default_unlabeled(seed=0, count=31, length=64).tobytes() == U.tobytes()


def test_external_is_class_informative():
    classes = np.repeat([0, 1, 2], 20)
    ext = synth_external(classes, length=32, seed=0, noise_stddev=0.1)
    assert ext.shape == (60, 32)
    order = np.random.default_rng(0).permutation(60)
    assert _centroid_accuracy(ext[order], classes[order]) == 1.0


# ---------------------------------------------------------------- config

def test_config_json_roundtrip(tmp_path):
    cfg = _small_config(tmp_path, methods=["Dft", "Raw", {"kind": "External", "name": "ext", "length": 40}])
    doc = cfg.to_json()
    again = PipelineConfig.from_json(json.loads(json.dumps(doc)))
    assert again.to_json() == doc
    assert again.method_ids() == ["Dft", "Raw", "External-ext"]


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig.from_json({"schema": 99, "methods": ["Dft"]})
    with pytest.raises(ConfigError):
        PipelineConfig(["Dft", "Dft"])
    with pytest.raises(ConfigError):
        PipelineConfig([])
    with pytest.raises(ConfigError):
        PipelineConfig(["Dft"], input_length=64, code_length=40)  # 33 bins < 40
    with pytest.raises(ConfigError):
        PipelineConfig.load(tmp_path / "nope.json")


def test_config_load_resolves_paths(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"schema": 1, "methods": ["Raw"], "code_length": 8}))
    cfg = PipelineConfig.load(tmp_path / "cfg.json", seed=7)
    assert cfg.seed == 7
    assert cfg.paths["checkpoints"] == str(tmp_path / "checkpoints")


# ---------------------------------------------------------------- transforms

def test_transform_shapes(tmp_path):
    cfg = _small_config(tmp_path)
    out = transform_dataset(cfg, np.random.default_rng(0).standard_normal((4, 64)))
    assert {k: v.shape for k, v in out.items()} == {
        "Dft": (4, 33), "Dwt": (4, 64), "Raw": (4, 64), "Hht": (4, 96), "Periodogram": (4, 33)}
    assert all(v.dtype == np.float32 for v in out.values())


def test_transform_multi_sequence(tmp_path):
    cfg = _small_config(tmp_path, methods=["Raw", "Dft"])
    X = np.random.default_rng(1).standard_normal((3, 2, 64))
    out = transform_dataset(cfg, X)
    assert out["Raw"].shape == (6, 64)
    flat = transform_dataset(cfg, X.reshape(6, 64))
    assert out["Dft"].tobytes() == flat["Dft"].tobytes()


def test_external_channel_checks(tmp_path):
    cfg = _small_config(tmp_path, methods=["Raw", {"kind": "External", "name": "e", "length": 40}])
    X = np.zeros((3, 64)) + np.arange(64)
    with pytest.raises(DataError):
        transform_dataset(cfg, X)
    with pytest.raises(DataError):
        transform_dataset(cfg, X, {"e": np.ones((3, 39))})
    out = transform_dataset(cfg, X, {"e": np.random.default_rng(0).standard_normal((3, 40))})
    np.testing.assert_allclose(out["External-e"].mean(axis=1), 0, atol=1e-6)


def test_mel_band_spectrogram_input():
    cfg = PipelineConfig(["MelBand1", "MelBand2", "MelBand3", "MelBand4"], input_length=1280,
                         code_length=8, sample_rate=8000.0)
    frames = cfg.methods[0].output_length
    spec = np.abs(np.random.default_rng(0).standard_normal((2, 16, frames)))
    out = transform_dataset(cfg, spec)
    assert set(out) == {f"MelBand{i}" for i in range(1, 5)}
    assert all(v.shape == (2, frames) for v in out.values())


# ---------------------------------------------------------------- pre-training

def test_pretrain_writes_checkpoints(small):
    cfg, _, inst, _ = small
    files = sorted(p.name for p in (inst.checkpoint_dir()).iterdir())
    assert sum(f.endswith(".sgtf") and f.startswith("compressor_") for f in files) == 5
    assert "mixer.sgtf" in files and "instance.json" in files
    assert inst.width == 5 * 16
    assert set(inst.histories) == set(cfg.method_ids()) | {"mixer"}


def test_pretrain_bitwise_reproducible(small, tmp_path):
    cfg, U, inst, _ = small
    again = pretrain(_small_config(tmp_path), U, save=False)
    for a, b in zip(inst.compressors, again.compressors):
        assert all(p.tobytes() == q.tobytes() for p, q in zip(a.encoder.params, b.encoder.params))
    assert all(p.tobytes() == q.tobytes()
               for p, q in zip(inst.mixer.encoder.params, again.mixer.encoder.params))


def test_pretrain_seed_changes_weights(small, tmp_path):
    _, U, inst, _ = small
    other = pretrain(_small_config(tmp_path, seed=1), U[:40], save=False)
    assert other.mixer.encoder.params[0].tobytes() != inst.mixer.encoder.params[0].tobytes()


def test_pretrain_stage_errors(tmp_path):
    cfg = _small_config(tmp_path)
    with pytest.raises(StageError) as exc:
        pretrain(cfg, np.zeros((0, 64)))
    assert exc.value.stage == "ingest"
    with pytest.raises(StageError) as exc:
        pretrain(cfg, np.zeros((4, 32)))
    assert exc.value.stage == "transform"


def test_instance_load_roundtrip(small):
    _, _, inst, task = small
    loaded = SGSMInstance.load(inst.checkpoint_dir())
    V = inst.codes(task.labeled)
    assert loaded.codes(task.labeled).tobytes() == V.tobytes()
    assert loaded.embed(V, "TFTFT").tobytes() == inst.embed(V, "TFTFT").tobytes()
    with pytest.raises(DataError):
        SGSMInstance.load(inst.checkpoint_dir().parent / "missing")


# ---------------------------------------------------------------- embedding and selection

def _snapshot(directory):
    return {p.name: (p.stat().st_mtime_ns, p.read_bytes()) for p in directory.iterdir()}


def test_embed_shapes_and_readonly(small):
    _, _, inst, task = small
    before = _snapshot(inst.checkpoint_dir())
    data = embed_dataset(inst, task.labeled, task.labels, "TTTTT")
    assert data.embeddings.shape == (30, 80)
    masked = embed_dataset(inst, task.labeled, task.labels, "TFFFF")
    assert masked.embeddings.tobytes() != data.embeddings.tobytes()
    assert _snapshot(inst.checkpoint_dir()) == before


def test_embed_multi_sequence(small):
    _, _, inst, task = small
    X = np.stack([task.labeled, task.labeled[::-1]], axis=1)
    data = embed_dataset(inst, X, task.labels, "TTTTT")
    assert data.embeddings.shape == (30, 2, 80)
    with pytest.raises(DataError):
        embed_dataset(inst, X, task.labels[:-1], "TTTTT")


def test_run_selection_full_and_subset(small, tmp_path):
    _, _, inst, task = small
    res = run_selection(inst, task.labeled, task.labels, seed=0, out_dir=tmp_path / "r")
    assert len(res.all_reports) == 31
    assert json.loads((tmp_path / "r" / "report.json").read_text())["best_mask"] == res.best_mask
    sub = run_selection(inst, task.labeled, task.labels, masks=["TTTTT", "FFFTF"], seed=0)
    assert [r.mask for r in sub.all_reports] == ["TTTTT", "FFFTF"]
    again = run_selection(inst, task.labeled, task.labels, masks=["TTTTT", "FFFTF"], seed=0)
    assert again.to_json() == sub.to_json()


def test_run_selection_four_channels(tmp_path):
    cfg = _small_config(tmp_path, methods=["Dft", "Dwt", "Raw", "Periodogram"])
    U = default_unlabeled(seed=2, count=30, length=64)
    inst = pretrain(cfg, U, save=False)
    task = synth_dataset(SyntheticTaskSpec("SpectralPeak", class_count=2, samples_per_class=6,
                                           length=64, unlabeled_count=1))
    res = run_selection(inst, task.labeled, task.labels)
    assert len(res.all_reports) == 15
