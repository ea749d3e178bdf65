"""Phase two: masked denoising autoencoder over concatenated channel codes."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, TrainingDivergence
from .neural import (Adam, Linear, Network, Relu, TrainConfig, load_networks,
                     mse_cosine_loss, save_networks)

log = logging.getLogger(__name__)

GLOBAL_MASK_RATE = 0.10
GLOBAL_POLICY_PROB = 0.80
CHANNEL_CLOSE_PROB = 0.5
EXPANSION = 4


@dataclass(frozen=True)
class MaskConfig:
    """Per-channel usage flags; ``str(mask)`` gives the T/F form, channel 1 first."""

    open: tuple

    def __post_init__(self):
        flags = tuple(bool(v) for v in self.open)
        if not flags:
            raise ConfigError("mask needs at least one channel")
        if not any(flags):
            raise ConfigError("a mask must leave at least one channel open")
        object.__setattr__(self, "open", flags)

    @classmethod
    def parse(cls, text, n_channels=None):
        text = text.strip().upper()
        if not text or set(text) - {"T", "F"}:
            raise ConfigError(f"mask {text!r} must consist of T/F characters")
        if n_channels is not None and len(text) != n_channels:
            raise ConfigError(f"mask {text!r} has {len(text)} channels, expected {n_channels}")
        return cls(tuple(c == "T" for c in text))

    @classmethod
    def all_open(cls, n):
        return cls((True,) * n)

    def __str__(self):
        return "".join("T" if v else "F" for v in self.open)

    def __len__(self):
        return len(self.open)

    @property
    def n_open(self):
        return sum(self.open)


def concat_codes(codes, code_length=None):
    """V = v1 (+) v2 (+) ... in registry order; accepts single codes or [N x d] batches."""
    codes = [np.asarray(c, dtype=np.float32) for c in codes]
    if not codes:
        raise DataError("no codes to concatenate")
    d = code_length or codes[0].shape[-1]
    for i, c in enumerate(codes):
        if c.shape[-1] != d or c.shape[:-1] != codes[0].shape[:-1]:
            raise DataError(f"code {i} has shape {c.shape}, expected (..., {d})")
    return np.concatenate(codes, axis=-1)


def channel_mask_vector(mask: MaskConfig, code_length):
    return np.repeat(np.asarray(mask.open, dtype=bool), code_length)


def apply_channel_mask(V, mask: MaskConfig, code_length):
    V = np.asarray(V)
    if V.shape[-1] != len(mask) * code_length:
        raise DataError(f"vector length {V.shape[-1]} != {len(mask)} channels x {code_length}")
    return np.where(channel_mask_vector(mask, code_length), V, 0).astype(V.dtype)


def global_mask_count(length):
    return int(np.floor(GLOBAL_MASK_RATE * length + 0.5))


def apply_global_mask(V, rng):
    """Zero exactly round(10% of length) positions, chosen uniformly without replacement."""
    V = np.array(V, copy=True)
    k = global_mask_count(V.shape[-1])
    if k:
        idx = rng.choice(V.shape[-1], size=k, replace=False)
        V[..., idx] = 0
    return V


def draw_channel_mask(n_channels, rng):
    """Each channel closed with p=0.5; the all-closed outcome is redrawn."""
    while True:
        closed = rng.random(n_channels) < CHANNEL_CLOSE_PROB
        if not closed.all():
            return MaskConfig(tuple(~closed))


@dataclass
class MaskStats:
    global_draws: int = 0
    channel_draws: int = 0


def sample_training_mask(V, n_channels, code_length, rng, stats: MaskStats | None = None):
    """Training-time corruption: global policy with p=0.8, channel policy otherwise.

    Returns ``(masked_vector, policy)`` with ``policy`` either ``"global"`` or
    the drawn ``MaskConfig``.
    """
    if rng.random() < GLOBAL_POLICY_PROB:
        if stats is not None:
            stats.global_draws += 1
        return apply_global_mask(V, rng), "global"
    if stats is not None:
        stats.channel_draws += 1
    mask = draw_channel_mask(n_channels, rng)
    return apply_channel_mask(V, mask, code_length), mask


def build_half(width, rng):
    return Network([Linear(width, EXPANSION * width, rng=rng), Relu(),
                    Linear(EXPANSION * width, width, rng=rng)])


@dataclass
class MixerModel:
    n_channels: int
    code_length: int
    seed: int = 0
    encoder: Network = field(default=None, repr=False)
    decoder: Network = field(default=None, repr=False)
    epochs_trained: int = 0

    def __post_init__(self):
        if self.n_channels < 1 or self.code_length < 1:
            raise ConfigError("mixer needs at least one channel and a positive code length")
        if self.encoder is None:
            rng = np.random.default_rng(self.seed)
            self.encoder = build_half(self.width, rng)
            self.decoder = build_half(self.width, rng)

    @property
    def width(self):
        return self.n_channels * self.code_length

    def check(self, V):
        V = np.asarray(V, dtype=np.float32)
        if V.shape[-1] != self.width:
            raise DataError(f"mixer expects vectors of length {self.width}, got {V.shape}")
        return V

    def embed(self, V, mask: MaskConfig):
        """E = encoder(channel-masked V); no randomness at inference."""
        if not isinstance(mask, MaskConfig):
            mask = MaskConfig.parse(str(mask), self.n_channels)
        if len(mask) != self.n_channels:
            raise ConfigError(f"mask {mask} does not match {self.n_channels} channels")
        V = self.check(V)
        single = V.ndim == 1
        masked = apply_channel_mask(np.atleast_2d(V), mask, self.code_length)
        out = np.empty_like(masked)
        for i in range(masked.shape[0]):
            out[i] = self.encoder.forward(masked[i:i + 1])[0]
        return out[0] if single else out

    def reconstruct(self, V_masked):
        return self.decoder.forward(self.encoder.forward(np.atleast_2d(self.check(V_masked))))

    def save(self, stem):
        save_networks(stem, {"encoder": self.encoder, "decoder": self.decoder},
                      {"model": "mixer", "n_channels": self.n_channels,
                       "code_length": self.code_length, "seed": self.seed,
                       "epochs": self.epochs_trained})

    @classmethod
    def load(cls, stem):
        nets, meta = load_networks(stem)
        return cls(meta["n_channels"], meta["code_length"], meta["seed"],
                   encoder=nets["encoder"], decoder=nets["decoder"],
                   epochs_trained=meta["epochs"])


def embed(model: MixerModel, V, mask: MaskConfig):
    return model.embed(V, mask)


def train_mixer(model: MixerModel, dataset, cfg: TrainConfig, stats: MaskStats | None = None,
                mask_hook=None):
    """Train on freshly re-masked copies of V every time a sample is presented.

    ``mask_hook(indices, masked_batch)`` is called once per batch when given.
    """
    data = model.check(dataset)
    if data.ndim != 2 or data.shape[0] == 0:
        raise DataError("mixer needs a non-empty [N x n*d] dataset")
    rng = np.random.default_rng(cfg.seed)
    mask_rng = np.random.default_rng([cfg.seed, 1])
    opt = Adam(model.encoder.params + model.decoder.params, lr=cfg.learning_rate)
    history = []
    n = data.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = data[idx]
            masked = np.stack([
                sample_training_mask(v, model.n_channels, model.code_length, mask_rng, stats)[0]
                for v in batch])
            if mask_hook is not None:
                mask_hook(idx, masked)
            out = model.decoder.forward(model.encoder.forward(masked))
            loss, grad = mse_cosine_loss(out, batch)
            if not np.isfinite(loss):
                raise TrainingDivergence(f"mixer: non-finite loss at epoch {epoch + 1}")
            model.encoder.backward(model.decoder.backward(grad))
            opt.step(model.encoder.grads + model.decoder.grads)
            total += loss * batch.shape[0]
        history.append(total / n)
        model.epochs_trained += 1
        log.debug("mixer epoch %d loss %.5f", epoch + 1, history[-1])
    return model, history
