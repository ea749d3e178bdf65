"""End-to-end orchestration: transform, pre-train, embed, select.

Every random stream is derived from the root seed and a stage name, so
stages can be re-run (or parallelised) without shifting each other's draws.
"""
from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .compressor import DEFAULT_CODE_LENGTH, CompressorModel, train_compressor
from .errors import ConfigError, DataError, SGSMError, StageError
from .mixer import MaskConfig, MixerModel, concat_codes, train_mixer
from .neural import TrainConfig
from .selection import (ClassifierConfig, LabeledEmbeddingSet, SelectionResult,
                        enumerate_masks, select_best)
from .signal_methods import MethodSpec, transform_batch, transform_spectrograms, zscore

log = logging.getLogger(__name__)

SCHEMA = 1
WIFI_METHODS = ("Dft", "Dwt", "Raw", "Hht", "Periodogram")
ACOUSTIC_METHODS = ("MelBand1", "MelBand2", "MelBand3", "MelBand4")


def derive_seed(root, *keys):
    """Stable 32-bit seed for a named stage of a run rooted at ``root``."""
    spawn = tuple(zlib.crc32(str(k).encode()) for k in keys)
    return int(np.random.SeedSequence(root, spawn_key=spawn).generate_state(1)[0])


# ---------------------------------------------------------------- config

@dataclass
class PipelineConfig:
    methods: list
    input_length: int = 256
    code_length: int = DEFAULT_CODE_LENGTH
    seed: int = 0
    compressor: TrainConfig = field(default_factory=lambda: TrainConfig(50, 1e-3, 64))
    mixer: TrainConfig = field(default_factory=lambda: TrainConfig(100, 1e-3, 128))
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    sample_rate: Optional[float] = None
    paths: dict = field(default_factory=lambda: {"data": "data", "checkpoints": "checkpoints",
                                                 "outputs": "outputs"})

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("method set must not be empty")
        specs = []
        for m in self.methods:
            if isinstance(m, MethodSpec):
                specs.append(m)
            elif isinstance(m, dict):
                kind = m.get("kind")
                if kind == "External":
                    specs.append(MethodSpec.create("External", int(m["length"]), name=m["name"]))
                else:
                    extra = {k: m[k] for k in ("index", "n_fft", "hop_length") if k in m}
                    specs.append(MethodSpec.create(kind, self.input_length,
                                                   sample_rate=m.get("sample_rate", self.sample_rate),
                                                   **extra))
            else:
                extra = {"sample_rate": self.sample_rate} if str(m).startswith("MelBand") else {}
                specs.append(MethodSpec.parse(str(m), self.input_length, **extra))
        ids = [s.method_id for s in specs]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate methods in {ids}")
        self.methods = specs
        shortest = min(s.output_length for s in specs)
        if self.code_length >= shortest:
            raise ConfigError(f"code length {self.code_length} must be below every transformed "
                              f"length (shortest is {shortest})")

    @property
    def n_channels(self):
        return len(self.methods)

    def method_ids(self):
        return [m.method_id for m in self.methods]

    def to_json(self):
        def train(cfg):
            return {"epochs": cfg.epochs, "learning_rate": cfg.learning_rate,
                    "batch_size": cfg.batch_size}

        methods = []
        for m in self.methods:
            if m.kind == "External":
                methods.append({"kind": "External", "name": m.name, "length": m.output_length})
            elif m.kind == "MelBand":
                methods.append({"kind": "MelBand", "index": m.index, "n_fft": m.n_fft,
                                "hop_length": m.hop_length, "sample_rate": m.sample_rate})
            else:
                methods.append(m.kind)
        return {"schema": SCHEMA, "methods": methods, "input_length": self.input_length,
                "code_length": self.code_length, "seed": self.seed,
                "sample_rate": self.sample_rate, "compressor": train(self.compressor),
                "mixer": train(self.mixer),
                "classifier": {"kind": self.classifier.kind, "epochs": self.classifier.epochs,
                               "learning_rate": self.classifier.learning_rate,
                               "batch_size": self.classifier.batch_size,
                               "hidden": self.classifier.hidden, "metric": self.classifier.metric},
                "paths": dict(self.paths)}

    @classmethod
    def from_json(cls, doc, seed=None):
        if doc.get("schema") != SCHEMA:
            raise ConfigError(f"unsupported config schema {doc.get('schema')!r}")
        try:
            comp = TrainConfig(**{"epochs": 50, "learning_rate": 1e-3, "batch_size": 64,
                                  **doc.get("compressor", {})})
            mix = TrainConfig(**{"epochs": 100, "learning_rate": 1e-3, "batch_size": 128,
                                 **doc.get("mixer", {})})
            clf = ClassifierConfig(**doc.get("classifier", {}))
            cfg = cls(methods=list(doc["methods"]),
                      input_length=int(doc.get("input_length", 256)),
                      code_length=int(doc.get("code_length", DEFAULT_CODE_LENGTH)),
                      seed=int(doc.get("seed", 0) if seed is None else seed),
                      compressor=comp, mixer=mix, classifier=clf,
                      sample_rate=doc.get("sample_rate"),
                      paths={"data": "data", "checkpoints": "checkpoints", "outputs": "outputs",
                             **doc.get("paths", {})})
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        return cfg

    @classmethod
    def load(cls, path, seed=None):
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = cls.from_json(doc, seed=seed)
        base = path.parent
        cfg.paths = {k: str(base / v) for k, v in cfg.paths.items()}
        return cfg


# ---------------------------------------------------------------- synthetic tasks

GENERATORS = ("SpectralPeak", "EnvelopeShape", "WaveletBurst")


@dataclass(frozen=True)
class SyntheticTaskSpec:
    kind: str = "SpectralPeak"
    class_count: int = 6
    samples_per_class: int = 100
    noise_stddev: float = 0.3
    seed: int = 0
    length: int = 256
    unlabeled_count: int = 2000

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise ConfigError(f"unknown generator {self.kind!r}")
        if self.class_count < 2 or self.noise_stddev < 0 or self.samples_per_class < 1:
            raise ConfigError(f"invalid synthetic spec {self}")


@dataclass
class SyntheticDataset:
    unlabeled: np.ndarray
    labeled: np.ndarray
    labels: np.ndarray
    unlabeled_classes: np.ndarray  # generator ground truth, never used for pre-training
    spec: SyntheticTaskSpec


def _spectral_peak(c, spec, rng):
    n = np.arange(spec.length)
    spacing = max(1, (spec.length // 2 - 8) // spec.class_count)
    k = 4 + c * spacing
    return np.cos(2 * np.pi * k * n / spec.length + rng.uniform(0, 2 * np.pi))


def _envelope_shape(c, spec, rng):
    n = np.arange(spec.length)
    center = (c + 0.5) / spec.class_count * spec.length
    width = spec.length / (2.5 * spec.class_count)
    env = 0.1 + np.exp(-0.5 * ((n - center) / width) ** 2)
    k = rng.integers(spec.length // 16, spec.length // 4)
    return 1.5 * env * np.cos(2 * np.pi * k * n / spec.length + rng.uniform(0, 2 * np.pi))


def _wavelet_burst(c, spec, rng):
    seg = spec.length // spec.class_count
    width = max(4, 2 ** int(np.log2(max(4, seg // 2))))
    start = c * seg + int(rng.integers(0, max(1, seg - width + 1)))
    x = np.zeros(spec.length)
    amp = rng.uniform(1.5, 2.5)
    x[start:start + width // 2] = amp
    x[start + width // 2:start + width] = -amp
    return x


_GEN = {"SpectralPeak": _spectral_peak, "EnvelopeShape": _envelope_shape,
        "WaveletBurst": _wavelet_burst}


def _draw(spec, classes, rng):
    gen = _GEN[spec.kind]
    out = np.empty((classes.shape[0], spec.length))
    for i, c in enumerate(classes):
        out[i] = gen(int(c), spec, rng) + spec.noise_stddev * rng.standard_normal(spec.length)
    return out


def synth_dataset(spec: SyntheticTaskSpec) -> SyntheticDataset:
    """Unlabeled pool plus a balanced labeled split drawn from one generator."""
    rng_u = np.random.default_rng(derive_seed(spec.seed, "synth", spec.kind, "unlabeled"))
    rng_l = np.random.default_rng(derive_seed(spec.seed, "synth", spec.kind, "labeled"))
    hidden = rng_u.integers(0, spec.class_count, spec.unlabeled_count)
    labels = np.repeat(np.arange(spec.class_count), spec.samples_per_class)
    labels = rng_l.permutation(labels)
    return SyntheticDataset(_draw(spec, hidden, rng_u), _draw(spec, labels, rng_l),
                            labels.astype(np.int64), hidden.astype(np.int64), spec)


def default_unlabeled(seed=0, count=2000, length=256, noise_stddev=0.3):
    """Equal mixture of all generators; the default pre-training pool."""
    parts = []
    per = [count // len(GENERATORS) + (i < count % len(GENERATORS)) for i in range(len(GENERATORS))]
    for kind, k in zip(GENERATORS, per):
        ds = synth_dataset(SyntheticTaskSpec(kind, noise_stddev=noise_stddev, seed=seed,
                                             length=length, unlabeled_count=k))
        parts.append(ds.unlabeled)
    mixed = np.concatenate(parts)
    return mixed[np.random.default_rng(derive_seed(seed, "mix")).permutation(mixed.shape[0])]


def synth_external(classes, length=64, seed=0, noise_stddev=0.5, class_count=None):
    """Class-informative vectors standing in for a precomputed external embedding."""
    class_count = class_count or int(np.max(classes)) + 1
    protos = np.random.default_rng(derive_seed(seed, "external", "prototypes")).standard_normal(
        (class_count, length))
    rng = np.random.default_rng(derive_seed(seed, "external", "noise", len(classes)))
    return protos[np.asarray(classes)] + noise_stddev * rng.standard_normal((len(classes), length))


# ---------------------------------------------------------------- transforms

def _flatten_sequences(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        return X, None
    if X.ndim == 3:
        return X.reshape(-1, X.shape[2]), X.shape[1]
    raise DataError(f"dataset must be [N x L] or [N x S x L], got {X.shape}")


def transform_dataset(config: PipelineConfig, X, external=None):
    """Apply every registered method; returns ``{method_id: [M x L'_i] float32}``.

    A 3-D tensor is either [N x S x L] multi-sequence samples, or
    [N x n_mels x T] spectrograms when every method is a MelBand channel.
    """
    external = external or {}
    X = np.asarray(X)
    if X.ndim == 3 and all(m.kind == "MelBand" for m in config.methods):
        return {m.method_id: transform_spectrograms(m, X) for m in config.methods}
    rows, per_sample = _flatten_sequences(X)
    out = {}
    for m in config.methods:
        if m.kind == "External":
            if m.name not in external:
                raise DataError(f"no external vectors supplied for channel {m.method_id}")
            ext = np.asarray(external[m.name], dtype=np.float64)
            if ext.ndim != 2 or ext.shape[1] != m.output_length or ext.shape[0] != X.shape[0]:
                raise DataError(f"external {m.name}: expected [{X.shape[0]} x {m.output_length}], "
                                f"got {ext.shape}")
            if per_sample:
                ext = np.repeat(ext, per_sample, axis=0)
            out[m.method_id] = np.stack([zscore(v)[0] for v in ext]).astype(np.float32)
        else:
            out[m.method_id] = transform_batch(m, rows)
    return out


# ---------------------------------------------------------------- instance

@dataclass
class SGSMInstance:
    config: PipelineConfig
    compressors: list
    mixer: MixerModel
    histories: dict = field(default_factory=dict)

    def checkpoint_dir(self):
        return Path(self.config.paths["checkpoints"])

    def save(self, directory=None):
        d = Path(directory or self.checkpoint_dir())
        d.mkdir(parents=True, exist_ok=True)
        for comp in self.compressors:
            comp.save(d / f"compressor_{comp.method_id}")
        self.mixer.save(d / "mixer")
        (d / "instance.json").write_text(json.dumps(self.config.to_json(), indent=2))
        return d

    @classmethod
    def load(cls, directory, config: PipelineConfig | None = None):
        d = Path(directory)
        if config is None:
            path = d / "instance.json"
            if not path.exists():
                raise DataError(f"{d} does not hold a pre-trained instance")
            config = PipelineConfig.from_json(json.loads(path.read_text()))
            config.paths["checkpoints"] = str(d)
        comps = [CompressorModel.load(d / f"compressor_{m.method_id}") for m in config.methods]
        mixer = MixerModel.load(d / "mixer")
        if mixer.n_channels != config.n_channels or mixer.code_length != config.code_length:
            raise DataError("mixer checkpoint does not match the config")
        return cls(config, comps, mixer)

    @property
    def width(self):
        return self.mixer.width

    def codes(self, X, external=None, transformed=None):
        """Concatenated codes V for each sequence (flattened over multi-sequence samples)."""
        transformed = transformed or transform_dataset(self.config, X, external)
        return concat_codes([comp.encode(transformed[comp.method_id]) for comp in self.compressors])

    def embed(self, V, mask, sequences_per_sample=None):
        mask = mask if isinstance(mask, MaskConfig) else MaskConfig.parse(str(mask), self.config.n_channels)
        E = self.mixer.embed(V, mask)
        if sequences_per_sample:
            E = E.reshape(-1, sequences_per_sample, E.shape[-1])
        return E


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except SGSMError as exc:
        raise StageError(name, exc) from exc


def train_compressors(config: PipelineConfig, transformed):
    comps, histories = [], {}
    for i, m in enumerate(config.methods):
        model = CompressorModel(m.method_id, m.output_length, config.code_length,
                                seed=derive_seed(config.seed, "compressor-init", m.method_id))
        cfg = replace(config.compressor, seed=derive_seed(config.seed, "compressor-train", m.method_id))
        log.info("training compressor %s (%d -> %d)", m.method_id, m.output_length, config.code_length)
        model, hist = train_compressor(model, transformed[m.method_id], cfg)
        comps.append(model)
        histories[m.method_id] = hist
    return comps, histories


def train_mixer_stage(config: PipelineConfig, V):
    mixer = MixerModel(config.n_channels, config.code_length,
                       seed=derive_seed(config.seed, "mixer-init"))
    cfg = replace(config.mixer, seed=derive_seed(config.seed, "mixer-train"))
    log.info("training mixer on %d vectors of length %d", V.shape[0], V.shape[1])
    return train_mixer(mixer, V, cfg)


def pretrain(config: PipelineConfig, U, external=None, save=True) -> SGSMInstance:
    """Steps 1-4: transform the unlabeled pool, train compressors, then the mixer."""
    U = np.asarray(U)
    if U.shape[0] == 0:
        raise StageError("ingest", DataError("unlabeled dataset is empty"))
    transformed = _stage("transform", transform_dataset, config, U, external)
    comps, histories = _stage("train-compressors", train_compressors, config, transformed)
    V = concat_codes([c.encode(transformed[c.method_id]) for c in comps])
    mixer, mix_hist = _stage("train-mixer", train_mixer_stage, config, V)
    histories["mixer"] = mix_hist
    inst = SGSMInstance(config, comps, mixer, histories)
    if save:
        _stage("persist", inst.save)
    return inst


def embed_dataset(instance: SGSMInstance, X, labels, mask, external=None, class_count=None,
                  objective="task") -> LabeledEmbeddingSet:
    """Step 5 for one mask; the instance is only read."""
    X = np.asarray(X)
    labels = np.asarray(labels, dtype=np.int64)
    if X.shape[0] != labels.shape[0]:
        raise DataError("samples and labels disagree on count")
    per = X.shape[1] if X.ndim == 3 and not _spectrogram_input(instance.config, X) else None
    V = instance.codes(X, external)
    E = instance.embed(V, mask, per)
    return LabeledEmbeddingSet(E, labels, class_count or int(labels.max()) + 1, objective)


def _spectrogram_input(config, X):
    return X.ndim == 3 and all(m.kind == "MelBand" for m in config.methods)


def run_selection(instance: SGSMInstance, X, labels, masks=None, seed=0, external=None,
                  class_count=None, out_dir=None, classifier=None, epsilon=None, varsigma=None,
                  objective="task") -> SelectionResult:
    """Embed the labeled set under every mask and pick the best subset."""
    X = np.asarray(X)
    labels = np.asarray(labels, dtype=np.int64)
    n = instance.config.n_channels
    masks = enumerate_masks(n) if masks is None else [
        m if isinstance(m, MaskConfig) else MaskConfig.parse(m, n) for m in masks]
    per = X.shape[1] if X.ndim == 3 and not _spectrogram_input(instance.config, X) else None
    V = instance.codes(X, external)
    classes = class_count or int(labels.max()) + 1

    def data_for(mask):
        return LabeledEmbeddingSet(instance.embed(V, mask, per), labels, classes, objective)

    result = select_best(data_for, masks, seed, classifier or instance.config.classifier,
                         epsilon=epsilon, varsigma=varsigma, objective=objective)
    if out_dir is not None:
        result.write(out_dir)
    return result
