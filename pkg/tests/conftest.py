import numpy as np
import pytest


def central_diff(f, x, h=1e-6):
    """Central finite differences of a scalar function of a flat vector."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rel, floor=1e-9):
    """Entrywise |a - n| <= rel * max(|a|, |n|) + floor.

    The floor absorbs finite-difference round-off (~1e-16 / h) on entries that are
    numerically zero.
    """
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    err = np.abs(analytic - numeric)
    bound = rel * np.maximum(np.abs(analytic), np.abs(numeric)) + floor
    worst = np.argmax(err - bound)
    assert np.all(err <= bound), (
        f"entry {worst}: analytic {analytic.flat[worst]!r} vs numeric {numeric.flat[worst]!r}"
    )


def reference_forward(dims, params, x):
    """Plain loop-over-neurons forward pass, independent of the vectorized path."""
    pos = 0
    h = list(x)
    for layer in range(len(dims) - 1):
        n_in, n_out = dims[layer], dims[layer + 1]
        W = [[params[pos + o * n_in + i] for i in range(n_in)] for o in range(n_out)]
        pos += n_in * n_out
        b = [params[pos + o] for o in range(n_out)]
        pos += n_out
        z = [sum(W[o][i] * h[i] for i in range(n_in)) + b[o] for o in range(n_out)]
        h = z if layer == len(dims) - 2 else [np.tanh(v) for v in z]
    return np.array(h)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
