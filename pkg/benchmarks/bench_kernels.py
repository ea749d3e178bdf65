"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit
from unittest import mock

import numpy as np

from sgsm import _pykernels, kernels
from sgsm.compressor import CompressorModel, train_compressor
from sgsm.neural import TrainConfig
from sgsm.signal_methods import emd

try:
    from sgsm import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    x = rng.standard_normal((64, 16, 127)).astype(np.float32)
    w = rng.standard_normal((32, 16, 5)).astype(np.float32)
    b = rng.standard_normal(32).astype(np.float32)
    g = rng.standard_normal((64, 32, 62)).astype(np.float32)
    sig = rng.standard_normal(4096)
    t = np.linspace(0, 1, 256)
    wave = np.sin(2 * np.pi * 5 * t) + 0.5 * np.sin(2 * np.pi * 31 * t) + 0.2 * rng.standard_normal(256)
    batch = rng.standard_normal((64, 129)).astype(np.float32)
    model = CompressorModel("Dft", 129, seed=0)
    return {
        "conv1d_forward": lambda k: k.conv1d_forward(x, w, b, 2),
        "conv1d_backward": lambda k: k.conv1d_backward(x, w, g, 2),
        "haar_forward": lambda k: k.haar_forward(sig),
        "haar_inverse": lambda k: k.haar_inverse(sig),
        "local_extrema": lambda k: k.local_extrema(sig),
        # end to end, with the backend swapped in under the library code
        "emd(256)": lambda k: _with(k, lambda: emd(wave)),
        "compressor_epoch": lambda k: _with(k, lambda: train_compressor(
            model, batch, TrainConfig(1, 1e-3, 64))),
    }


def _with(backend, fn):
    names = ("conv1d_forward", "conv1d_backward", "haar_forward", "haar_inverse", "local_extrema")
    with mock.patch.multiple(kernels, **{n: getattr(backend, n) for n in names}):
        return fn()


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    backends = {"numpy": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    else:
        print("compiled extension not available; timing the fallback only")
    print(f"{'kernel':<18}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}")
    for name, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for label, mod in backends.items():
            fn(mod)  # warm up
            times[label] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) * 1e3
        row = f"{name:<18}" + "".join(f"{t:>10.3f}ms" for t in times.values())
        if "cython" in times:
            row += f"{times['numpy'] / times['cython']:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
