import numpy as np
import pytest


def direct_dft(x):
    """O(L^2) complex DFT by explicit summation."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    k = np.arange(n)[:, None]
    t = np.arange(n)[None, :]
    return (x[None, :] * np.exp(-2j * np.pi * k * t / n)).sum(axis=1)


def inverse_haar_oracle(coeffs):
    """Level-by-level inverse written from the synthesis equations, independent of the kernels."""
    c = list(np.asarray(coeffs, dtype=np.float64))
    approx = [c[0]]
    pos = 1
    while pos < len(c):
        detail = c[pos:pos + len(approx)]
        nxt = []
        for a, d in zip(approx, detail):
            nxt.extend([(a + d) / np.sqrt(2), (a - d) / np.sqrt(2)])
        pos += len(approx)
        approx = nxt
    return np.array(approx)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one pass/fail line for the terminal summary, then fail the test if needed."""
    def record(number, ok, detail):
        _VERDICTS.append((number, ok, detail))
        assert ok, f"criterion {number}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(_VERDICTS):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
