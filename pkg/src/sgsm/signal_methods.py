"""Handcrafted method bank: raw, DFT, Haar DWT, HHT, periodogram, mel bands.

Every method maps a raw 1-D sequence of length ``L`` to a transformed
sequence of a registered length ``L'``. ``apply_method`` dispatches, pads or
truncates at the tail to ``L'`` and z-scores the result.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from . import kernels
from .errors import ConfigError, DataError
from .tensorio import read_tensor

BASIC_KINDS = ("Raw", "Dft", "Dwt", "Hht", "Periodogram")
HHT_IMFS = 3
MAX_IMFS = 6
N_MELS = 64
NORM_EPS = 1e-8


@dataclass(frozen=True)
class SignalSequence:
    values: np.ndarray
    sample_rate: Optional[float] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.shape[0] < 8:
            raise DataError(f"signal must be 1-D with at least 8 samples, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("signal contains non-finite values")
        if self.sample_rate is not None and not self.sample_rate > 0:
            raise DataError("sample_rate must be positive")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class TransformedSequence:
    values: np.ndarray
    method_id: str
    normalization_stats: Optional[tuple[float, float]] = None

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class MethodSpec:
    """One entry of the method bank.

    ``kind`` is one of Raw, Dft, Dwt, Hht, Periodogram, MelBand or External.
    ``index`` selects the quarter for MelBand (1 = lowest frequencies);
    ``name`` labels an External channel. For External, ``input_length`` and
    ``output_length`` both equal the precomputed vector length.
    """

    kind: str
    input_length: int
    output_length: int
    index: Optional[int] = None
    name: Optional[str] = None
    sample_rate: Optional[float] = None
    n_fft: int = 256
    hop_length: int = 64

    def __post_init__(self):
        if self.kind not in BASIC_KINDS + ("MelBand", "External"):
            raise ConfigError(f"unknown method kind {self.kind!r}")
        if self.kind == "MelBand" and self.index not in (1, 2, 3, 4):
            raise ConfigError("MelBand index must be in 1..4")
        if self.kind == "External" and not self.name:
            raise ConfigError("External method needs a name")
        if self.input_length < 1 or self.output_length < 2:
            raise ConfigError(f"{self.method_id}: bad lengths {self.input_length}->{self.output_length}")

    @property
    def method_id(self):
        if self.kind == "MelBand":
            return f"MelBand{self.index}"
        if self.kind == "External":
            return f"External-{self.name}"
        return self.kind

    @classmethod
    def create(cls, kind, input_length, **kw):
        """Build a spec with the natural output length for ``kind``."""
        if kind == "External":
            return cls(kind, input_length, input_length, **kw)
        out = natural_length(kind, input_length, n_fft=kw.get("n_fft", 256),
                             hop_length=kw.get("hop_length", 64))
        return cls(kind, input_length, out, **kw)

    @classmethod
    def parse(cls, text, input_length, **kw):
        """Parse ``Dft``, ``MelBand2`` or ``External-autofi:64`` forms."""
        m = re.fullmatch(r"MelBand([1-4])", text)
        if m:
            return cls.create("MelBand", input_length, index=int(m.group(1)), **kw)
        m = re.fullmatch(r"External-([\w.]+):(\d+)", text)
        if m:
            return cls.create("External", int(m.group(2)), name=m.group(1))
        return cls.create(text, input_length, **kw)

    def to_dict(self):
        d = {"kind": self.kind, "input_length": self.input_length,
             "output_length": self.output_length}
        if self.index is not None:
            d["index"] = self.index
        if self.name is not None:
            d["name"] = self.name
        if self.kind == "MelBand":
            d.update(sample_rate=self.sample_rate, n_fft=self.n_fft, hop_length=self.hop_length)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def natural_length(kind, length, n_fft=256, hop_length=64):
    if kind in ("Raw", "Dwt"):
        return length
    if kind in ("Dft", "Periodogram"):
        return length // 2 + 1
    if kind == "Hht":
        return HHT_IMFS * (length // 2)
    if kind == "MelBand":
        return 1 + length // hop_length
    raise ConfigError(f"no natural length for {kind!r}")


# ---------------------------------------------------------------- spectra

def _check_even(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 8 or x.shape[0] % 2:
        raise DataError(f"expected an even-length vector of at least 8 samples, got {x.shape}")
    return x


def dft_magnitude(x):
    """|X[k]| for k = 0..L/2."""
    x = _check_even(x)
    return np.abs(np.fft.rfft(x))


def periodogram(x):
    """|X[k]|^2 / L for k = 0..L/2."""
    x = _check_even(x)
    return np.abs(np.fft.rfft(x)) ** 2 / x.shape[0]


# ---------------------------------------------------------------- wavelets

def _check_pow2(x, min_level):
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if x.ndim != 1 or n < 2 ** min_level or n & (n - 1):
        raise DataError(f"Haar DWT needs a power-of-two length >= {2 ** min_level}, got {n}")
    return x


def dwt_haar(x, min_level=3):
    """Full-depth orthonormal Haar transform.

    Output layout is ``[approx, detail_m, detail_{m-1}, ..., detail_1]`` where
    level 1 is the finest scale. ``min_level`` only relaxes the length check
    (small inputs are handy in tests).
    """
    return kernels.haar_forward(_check_pow2(x, min_level))


def idwt_haar(coeffs, min_level=1):
    return kernels.haar_inverse(_check_pow2(coeffs, min_level))


# ---------------------------------------------------------------- EMD / HHT

@dataclass
class ImfSet:
    imfs: list
    residual: np.ndarray

    def reconstruct(self):
        total = self.residual.copy()
        for imf in self.imfs:
            total = total + imf
        return total


def _envelope(idx, vals, n):
    # mirror the extrema about both end samples before fitting the spline
    left = -idx[:2][::-1]
    right = 2 * (n - 1) - idx[-2:][::-1]
    xs = np.concatenate([left, idx, right])
    ys = np.concatenate([vals[:2][::-1], vals, vals[-2:][::-1]])
    xs, keep = np.unique(xs, return_index=True)
    return CubicSpline(xs, ys[keep])(np.arange(n))


def _count_extrema(h):
    mx, mn = kernels.local_extrema(h)
    return mx.shape[0] + mn.shape[0]


def emd(x, max_imfs=MAX_IMFS, sd_threshold=0.3, max_sifts=10):
    """Empirical mode decomposition by cubic-spline envelope sifting."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    residual = x.copy()
    imfs = []
    while len(imfs) < max_imfs and _count_extrema(residual) >= 4:
        h = residual.copy()
        for _ in range(max_sifts):
            mx, mn = kernels.local_extrema(h)
            if mx.shape[0] < 1 or mn.shape[0] < 1:
                break
            upper = _envelope(mx, h[mx], n)
            lower = _envelope(mn, h[mn], n)
            mean = 0.5 * (upper + lower)
            sd = np.sum(mean ** 2) / max(np.sum(h ** 2), 1e-300)
            h = h - mean
            if sd < sd_threshold:
                break
        imfs.append(h)
        residual = residual - h
    return ImfSet(imfs=imfs, residual=residual)


def analytic_signal(x):
    """Frequency-domain Hilbert transform: zero negative bins, double positive ones."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    spec = np.fft.fft(x)
    weights = np.zeros(n)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[n // 2] = 1.0
        weights[1:n // 2] = 2.0
    else:
        weights[1:(n + 1) // 2] = 2.0
    return np.fft.ifft(spec * weights)


def instantaneous_amplitude(x):
    return np.abs(analytic_signal(x))


def hht_features(x, n_imfs=HHT_IMFS, per_imf_length=None):
    """Instantaneous-amplitude tracks of the first ``n_imfs`` IMFs.

    Each track is block-averaged down to ``per_imf_length`` (default L/2);
    missing IMFs contribute zeros.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    per = per_imf_length or n // 2
    imfs = emd(x).imfs
    out = np.zeros(n_imfs * per)
    for i, imf in enumerate(imfs[:n_imfs]):
        amp = instantaneous_amplitude(imf)
        edges = np.linspace(0, n, per + 1).astype(int)
        out[i * per:(i + 1) * per] = np.add.reduceat(amp, edges[:-1]) / np.diff(edges)
    return out


# ---------------------------------------------------------------- mel bands

def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate, n_fft, n_mels=N_MELS):
    """Triangular HTK-scale filters, shape ``(n_mels, n_fft // 2 + 1)``."""
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2.0), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rise = (freqs[None, :] - lo) / (mid - lo)
    fall = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rise, fall))


def log_mel_spectrogram(x, sample_rate, n_fft=256, hop_length=64, n_mels=N_MELS):
    """log(1 + mel power) with centred, reflect-padded Hann frames; shape (n_mels, T)."""
    x = np.asarray(x, dtype=np.float64)
    pad = n_fft // 2
    padded = np.pad(x, pad, mode="reflect")
    n_frames = 1 + x.shape[0] // hop_length
    idx = np.arange(n_fft)[None, :] + hop_length * np.arange(n_frames)[:, None]
    frames = padded[idx] * np.hanning(n_fft + 1)[:-1]
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    mel = mel_filterbank(sample_rate, n_fft, n_mels) @ power.T
    return np.log1p(mel)


def mel_band_sequences(spectrogram):
    """Sum each quarter of the mel axis; band 1 is the lowest-frequency quarter."""
    spec = np.asarray(spectrogram, dtype=np.float64)
    if spec.ndim != 2 or spec.shape[0] % 4:
        raise DataError(f"mel rows must be divisible by 4, got shape {spec.shape}")
    q = spec.shape[0] // 4
    return [spec[b * q:(b + 1) * q].sum(axis=0) for b in range(4)]


# ---------------------------------------------------------------- external

def load_external_codes(path, expected_length):
    arr = read_tensor(path)
    if arr.ndim != 2 or arr.shape[1] != expected_length:
        raise DataError(f"{path}: expected [N x {expected_length}] external codes, got {arr.shape}")
    return [row.astype(np.float64) for row in arr]


# ---------------------------------------------------------------- dispatch

def fit_length(values, length):
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] >= length:
        return values[:length].copy()
    return np.concatenate([values, np.zeros(length - values.shape[0])])


def zscore(values):
    mean = float(np.mean(values))
    std = float(np.std(values))
    if std <= NORM_EPS:
        return np.zeros_like(values), (mean, std)
    return (values - mean) / std, (mean, std)


def _natural(spec, x):
    if spec.kind in ("Raw", "External"):
        return x
    if spec.kind == "Dft":
        return dft_magnitude(x)
    if spec.kind == "Periodogram":
        return periodogram(x)
    if spec.kind == "Dwt":
        return dwt_haar(x)
    if spec.kind == "Hht":
        return hht_features(x)
    if spec.kind == "MelBand":
        if spec.sample_rate is None:
            raise ConfigError("MelBand methods need a sample_rate")
        spec_db = log_mel_spectrogram(x, spec.sample_rate, spec.n_fft, spec.hop_length)
        return mel_band_sequences(spec_db)[spec.index - 1]
    raise ConfigError(f"unknown method {spec.kind!r}")


def apply_method(spec: MethodSpec, x) -> TransformedSequence:
    if not isinstance(x, SignalSequence):
        x = SignalSequence(np.asarray(x))
    if len(x) != spec.input_length:
        raise DataError(f"{spec.method_id}: expected length {spec.input_length}, got {len(x)}")
    out = fit_length(_natural(spec, x.values), spec.output_length)
    normed, stats = zscore(out)
    return TransformedSequence(normed, spec.method_id, stats)


def transform_batch(spec: MethodSpec, rows):
    """Apply one method to every row of a 2-D array; returns float32 [N x L']."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise DataError(f"expected a 2-D batch, got shape {rows.shape}")
    out = np.empty((rows.shape[0], spec.output_length), dtype=np.float32)
    for i, row in enumerate(rows):
        out[i] = apply_method(spec, row).values
    return out


def transform_spectrograms(spec: MethodSpec, specs):
    """MelBand channel from precomputed [N x n_mels x T] spectrograms."""
    specs = np.asarray(specs, dtype=np.float64)
    if spec.kind != "MelBand" or specs.ndim != 3:
        raise DataError("spectrogram input needs MelBand methods and a 3-D tensor")
    out = np.empty((specs.shape[0], spec.output_length), dtype=np.float32)
    for i, s in enumerate(specs):
        band = fit_length(mel_band_sequences(s)[spec.index - 1], spec.output_length)
        out[i] = zscore(band)[0]
    return out
