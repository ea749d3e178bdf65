"""Exhaustive method-subset sweep with a fixed downstream classifier."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .mixer import MaskConfig
from .neural import Adam, Linear, Network, Relu, softmax_cross_entropy

MAX_CHANNELS = 16


@dataclass
class LabeledEmbeddingSet:
    embeddings: np.ndarray
    labels: np.ndarray
    class_count: int
    objective: str = "task"

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.embeddings.shape[0] != self.labels.shape[0]:
            raise DataError("embeddings and labels disagree on sample count")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError(f"labels must lie in [0, {self.class_count})")
        if self.labels.shape[0] < 2 * self.class_count:
            raise DataError("need at least two samples per class on average")

    def features(self):
        # multi-sequence samples [N x S x D] are averaged over S
        if self.embeddings.ndim == 3:
            return self.embeddings.mean(axis=1)
        return self.embeddings


@dataclass
class ClassifierConfig:
    kind: str = "logistic"
    epochs: int = 200
    learning_rate: float = 0.01
    batch_size: int = 64
    hidden: int = 128
    metric: str = "accuracy"

    def __post_init__(self):
        if self.kind not in ("logistic", "mlp"):
            raise ConfigError(f"unknown classifier {self.kind!r}")
        if self.metric not in ("accuracy", "f1_macro"):
            raise ConfigError(f"unknown metric {self.metric!r}")


@dataclass
class SubsetReport:
    mask: str
    phi_train: float
    phi_holdout: float
    seed: int


@dataclass
class SelectionResult:
    best_mask: str
    margin: float
    gap: float
    all_reports: list = field(default_factory=list)
    objective: str = "task"
    seed: int = 0

    def best_report(self):
        return next(r for r in self.all_reports if r.mask == self.best_mask)

    def to_json(self):
        return {
            "objective": self.objective,
            "masks": [{"mask": r.mask, "phi_train": r.phi_train, "phi_holdout": r.phi_holdout}
                      for r in self.all_reports],
            "best_mask": self.best_mask,
            "margin": self.margin,
            "gap": self.gap,
            "seed": self.seed,
        }

    def table(self):
        lines = [f"{'mask':<{max(4, len(self.best_mask))}}  {'phi_train':>9}  {'phi_holdout':>11}"]
        for r in self.all_reports:
            flag = "  *" if r.mask == self.best_mask else ""
            lines.append(f"{r.mask:<{max(4, len(r.mask))}}  {r.phi_train:>9.4f}  {r.phi_holdout:>11.4f}{flag}")
        lines.append(f"best={self.best_mask} margin={self.margin:.4f} gap={self.gap:.4f} "
                     f"seed={self.seed} objective={self.objective}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_json(), indent=2))
        (out / "report.txt").write_text(self.table())

    @classmethod
    def from_json(cls, doc):
        reports = [SubsetReport(m["mask"], m["phi_train"], m["phi_holdout"], doc["seed"])
                   for m in doc["masks"]]
        return cls(doc["best_mask"], doc["margin"], doc["gap"], reports,
                   doc.get("objective", "task"), doc["seed"])


def enumerate_masks(n):
    """All 2**n - 1 non-empty masks, T sorting before F."""
    if not 1 <= n <= MAX_CHANNELS:
        raise ConfigError(f"channel count must be in 1..{MAX_CHANNELS}, got {n}")
    return [MaskConfig(tuple(c == "T" for c in combo))
            for combo in itertools.product("TF", repeat=n) if "T" in combo]


def stratified_split(labels, seed, holdout=0.2):
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.shape[0] < 2:
            raise DataError(f"class {c} has fewer than 2 samples")
        idx = rng.permutation(idx)
        k = min(max(1, int(round(holdout * idx.shape[0]))), idx.shape[0] - 1)
        test.append(idx[:k])
        train.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def _metric(pred, labels, class_count, kind):
    if kind == "accuracy":
        return float(np.mean(pred == labels))
    scores = []
    for c in range(class_count):
        tp = np.sum((pred == c) & (labels == c))
        fp = np.sum((pred == c) & (labels != c))
        fn = np.sum((pred != c) & (labels == c))
        denom = 2 * tp + fp + fn
        if denom:
            scores.append(2 * tp / denom)
    return float(np.mean(scores)) if scores else 0.0


def fit_classifier(x, y, class_count, cfg: ClassifierConfig, seed):
    rng = np.random.default_rng([seed, 7])
    dim = x.shape[1]
    if cfg.kind == "logistic":
        net = Network([Linear(dim, class_count, rng=rng)])
    else:
        net = Network([Linear(dim, cfg.hidden, rng=rng), Relu(),
                       Linear(cfg.hidden, class_count, rng=rng)])
    opt = Adam(net.params, lr=cfg.learning_rate)
    n = x.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, grad = softmax_cross_entropy(net.forward(x[idx]), y[idx])
            net.backward(grad)
            opt.step(net.grads)
    return net


def evaluate_subset(data: LabeledEmbeddingSet, mask, seed, cfg: ClassifierConfig | None = None):
    """Stratified 80/20 split, z-score on train statistics, fit, score both splits."""
    cfg = cfg or ClassifierConfig()
    feats = data.features().astype(np.float64)
    train, test = stratified_split(data.labels, seed)
    mean = feats[train].mean(axis=0)
    std = feats[train].std(axis=0)
    std[std < 1e-8] = 1.0
    z = ((feats - mean) / std).astype(np.float32)
    net = fit_classifier(z[train], data.labels[train], data.class_count, cfg, seed)
    scores = []
    for split in (train, test):
        pred = np.argmax(net.forward(z[split]), axis=1)
        scores.append(_metric(pred, data.labels[split], data.class_count, cfg.metric))
    return SubsetReport(str(mask), scores[0], scores[1], seed)


def _tiebreak_key(report):
    return (-report.phi_holdout, report.mask.count("T"), report.mask.replace("T", "0").replace("F", "1"))


def select_best(data_for_mask, masks, seed, cfg: ClassifierConfig | None = None,
                epsilon=None, varsigma=None, objective="task"):
    """Evaluate every mask and pick the best by holdout score.

    ``data_for_mask`` is either one LabeledEmbeddingSet used for all masks or a
    callable returning the set embedded under a given mask. Ties go to fewer
    open channels, then to the earlier mask in T-first order.
    """
    masks = [m if isinstance(m, MaskConfig) else MaskConfig.parse(m) for m in masks]
    if not masks:
        raise ConfigError("no masks to evaluate")
    if len({str(m) for m in masks}) != len(masks):
        raise ConfigError("duplicate masks requested")
    reports = []
    for mask in masks:
        data = data_for_mask(mask) if callable(data_for_mask) else data_for_mask
        reports.append(evaluate_subset(data, mask, seed, cfg))
    ranked = sorted(reports, key=_tiebreak_key)
    best = ranked[0]
    margin = best.phi_holdout - max((r.phi_holdout for r in ranked[1:]), default=best.phi_holdout)
    gap = abs(best.phi_train - best.phi_holdout)
    result = SelectionResult(best.mask, float(margin), float(gap), reports, objective, seed)
    if epsilon is not None and margin < epsilon:
        raise SelectionGateError(f"margin {margin:.4f} below epsilon {epsilon}", result)
    if varsigma is not None and gap > varsigma:
        raise SelectionGateError(f"gap {gap:.4f} exceeds varsigma {varsigma}", result)
    return result


class SelectionGateError(DataError):
    def __init__(self, message, result):
        super().__init__(message)
        self.result = result

