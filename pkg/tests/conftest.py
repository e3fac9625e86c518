"""Shared test helpers: finite-difference gradients and tiny fixture models."""

import numpy as np
import pytest

from aimeval.runtime import Conv1D, Dense, Flatten, MeanPool, Model, ReLU, Square, softmax

# acceptance results collected by tests/test_acceptance.py; one line each is
# appended to the terminal summary so the verdicts survive output capture
_CRITERIA: list[tuple[str, bool, str]] = []


def record_criterion(label: str, passed: bool, detail: str) -> None:
    _CRITERIA.append((label, bool(passed), detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label, passed, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {label}: {detail}")


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def numeric_gradient(f, x, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f at every entry of array x.

    Mutates x in place entry by entry and restores it, so f must read x
    fresh on every call (all runtime forward passes do).
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.ravel(), grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def rel_err(analytic, numeric) -> float:
    """Max-norm relative disagreement; the scale is the analytic gradient's."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = float(np.abs(a).max())
    assert scale > 1e-8, "degenerate probe: analytic gradient is zero"
    return float(np.abs(a - n).max() / scale)


def loss_gradients(model: Model, x: np.ndarray, y: int):
    """Analytic d loss/d x and per-layer parameter gradients for one sample."""
    logits, caches = model._forward(np.asarray(x, dtype=np.float64)[None])
    g = softmax(logits)
    g[0, int(y)] -= 1.0
    gx, grads = model._backward(caches, g)
    return gx[0], grads


# ---------------------------------------------------------------------------
# tiny fixture models
# ---------------------------------------------------------------------------

def tiny_mlp(n_in: int = 6, hidden: int = 5, classes: int = 3, seed: int = 0) -> Model:
    rng = np.random.default_rng(seed)
    return Model([Dense.init(n_in, hidden, rng),
                  ReLU(),
                  Dense.init(hidden, classes, rng)], (n_in,), classes)


def tiny_linear(n_in: int = 6, classes: int = 3, seed: int = 0) -> Model:
    rng = np.random.default_rng(seed)
    return Model([Dense.init(n_in, classes, rng)], (n_in,), classes)


def tiny_conv(channels: int = 2, time: int = 12, classes: int = 3,
              seed: int = 0) -> Model:
    rng = np.random.default_rng(seed)
    conv = Conv1D.init(channels, 4, 3, rng)
    flat = 4 * (time - 3 + 1)
    return Model([conv, Flatten(), Dense.init(flat, classes, rng)],
                 (channels, time), classes)


def tiny_power(channels: int = 2, time: int = 12, classes: int = 3,
               seed: int = 0) -> Model:
    rng = np.random.default_rng(seed)
    conv = Conv1D.init(channels, 4, 3, rng)
    return Model([conv, Square(), MeanPool(), Flatten(),
                  Dense.init(4, classes, rng)], (channels, time), classes)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
