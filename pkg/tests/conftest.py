import numpy as np
import pytest

from chlog.grid import make_grid
from chlog.potential import ModelParams


def dft_matrix(n):
    """Explicit (n^2 x n^2) matrix mapping row-major samples to FFT-ordered
    normalised coefficients, built from exponentials of the grid points."""
    x = -np.pi + 2 * np.pi * np.arange(n) / n
    k = np.fft.fftfreq(n, 1.0 / n)
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    phase = np.outer(K1.ravel(), X1.ravel()) + np.outer(K2.ravel(), X2.ravel())
    return np.exp(-1j * phase) / n**2


def wavenumbers(n):
    k = np.fft.fftfreq(n, 1.0 / n)
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    return K1.ravel(), K2.ravel()


@pytest.fixture
def params():
    return ModelParams(1.0, 1.0, 2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid4():
    return make_grid(4)


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, title, ok, detail):
        _VERDICTS.append((number, f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title} ({detail})"))
        assert ok, f"criterion {number} failed: {title} ({detail})"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_VERDICTS):
        terminalreporter.write_line(line)
