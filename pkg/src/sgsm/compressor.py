"""Phase one: one undercomplete autoencoder per method channel."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, TrainingDivergence
from .neural import (Adam, Conv1d, Flatten, Linear, Network, Relu, TrainConfig,
                     Unsqueeze, load_networks, mse_cosine_loss, save_networks)

log = logging.getLogger(__name__)

DEFAULT_CODE_LENGTH = 128
HIDDEN = 256


def build_encoder(input_length, code_length, rng):
    conv1 = Conv1d(1, 16, 7, 2, rng=rng)
    conv2 = Conv1d(16, 32, 5, 2, rng=rng)
    _, ch, length = conv2.output_shape(conv1.output_shape((1, 1, input_length)))
    return Network([Unsqueeze(), conv1, Relu(), conv2, Relu(), Flatten(),
                    Linear(ch * length, HIDDEN, rng=rng), Relu(),
                    Linear(HIDDEN, code_length, rng=rng)])


def build_decoder(code_length, input_length, rng):
    return Network([Linear(code_length, HIDDEN, rng=rng), Relu(),
                    Linear(HIDDEN, input_length, rng=rng)])


@dataclass
class CompressorModel:
    method_id: str
    input_length: int
    code_length: int = DEFAULT_CODE_LENGTH
    seed: int = 0
    encoder: Network = field(default=None, repr=False)
    decoder: Network = field(default=None, repr=False)
    epochs_trained: int = 0

    def __post_init__(self):
        if self.code_length >= self.input_length:
            raise ConfigError(
                f"{self.method_id}: code length {self.code_length} must be smaller than "
                f"input length {self.input_length}")
        if self.encoder is None:
            rng = np.random.default_rng(self.seed)
            try:
                self.encoder = build_encoder(self.input_length, self.code_length, rng)
            except DataError as exc:
                raise ConfigError(f"{self.method_id}: {exc}") from exc
            self.decoder = build_decoder(self.code_length, self.input_length, rng)

    def _check(self, arr, length, what):
        arr = np.asarray(arr, dtype=np.float32)
        single = arr.ndim == 1
        arr = np.atleast_2d(arr)
        if arr.ndim != 2 or arr.shape[1] != length:
            raise DataError(f"{self.method_id}: {what} must have length {length}, got {arr.shape}")
        return arr, single

    def encode(self, t):
        """Codes for one transformed sequence or a batch of them.

        Samples are pushed through one at a time so a code never depends on
        its batch neighbours.
        """
        method = getattr(t, "method_id", None)
        if method is not None and method != self.method_id:
            raise DataError(f"sequence from {method} fed to the {self.method_id} compressor")
        arr, single = self._check(getattr(t, "values", t), self.input_length, "input")
        codes = np.empty((arr.shape[0], self.code_length), dtype=np.float32)
        for i in range(arr.shape[0]):
            codes[i] = self.encoder.forward(arr[i:i + 1])[0]
        return codes[0] if single else codes

    def decode(self, v):
        arr, single = self._check(v, self.code_length, "code")
        out = self.decoder.forward(arr)
        return out[0] if single else out

    def reconstruct(self, t):
        arr, _ = self._check(t, self.input_length, "input")
        return self.decoder.forward(self.encoder.forward(arr))

    def save(self, stem):
        save_networks(stem, {"encoder": self.encoder, "decoder": self.decoder},
                      {"model": "compressor", "method_id": self.method_id,
                       "input_length": self.input_length, "code_length": self.code_length,
                       "seed": self.seed, "epochs": self.epochs_trained})

    @classmethod
    def load(cls, stem):
        nets, meta = load_networks(stem)
        return cls(meta["method_id"], meta["input_length"], meta["code_length"], meta["seed"],
                   encoder=nets["encoder"], decoder=nets["decoder"],
                   epochs_trained=meta["epochs"])


def train_compressor(model: CompressorModel, dataset, cfg: TrainConfig):
    """Minibatch Adam on the reconstruction loss; returns per-epoch mean losses."""
    data = np.asarray(getattr(dataset, "values", dataset), dtype=np.float32)
    if data.ndim == 1:
        data = data[None]
    if data.shape[0] == 0:
        raise DataError(f"{model.method_id}: empty training set")
    if data.shape[1] != model.input_length:
        raise DataError(f"{model.method_id}: samples have length {data.shape[1]}, "
                        f"expected {model.input_length}")
    rng = np.random.default_rng(cfg.seed)
    params = model.encoder.params + model.decoder.params
    opt = Adam(params, lr=cfg.learning_rate)
    history = []
    n = data.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = data[order[start:start + cfg.batch_size]]
            out = model.decoder.forward(model.encoder.forward(batch))
            loss, grad = mse_cosine_loss(out, batch)
            if not np.isfinite(loss):
                raise TrainingDivergence(f"{model.method_id}: non-finite loss at epoch {epoch + 1}")
            model.encoder.backward(model.decoder.backward(grad))
            opt.step(model.encoder.grads + model.decoder.grads)
            total += loss * batch.shape[0]
        history.append(total / n)
        model.epochs_trained += 1
        log.debug("compressor %s epoch %d loss %.5f", model.method_id, epoch + 1, history[-1])
    return model, history
