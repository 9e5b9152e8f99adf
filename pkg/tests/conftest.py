import numpy as np
import pytest

from ltr.data import Item, RawList


def central_diff(f, x, eps=1e-6):
    """Central finite-difference gradient of scalar ``f`` at array ``x`` (perturbed in place)."""
    x = np.asarray(x)
    grad = np.zeros_like(x, dtype=np.float64)
    flat, g = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return grad


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


def random_raw_lists(rng, n_lists, dim=3, min_items=1, max_items=5, vocab=("a", "b", "c", "d"), levels=3):
    out = []
    for q in range(n_lists):
        items = []
        for _ in range(int(rng.integers(min_items, max_items + 1))):
            feats = {"x": [float(v) for v in rng.normal(size=dim)],
                     "tok": [str(t) for t in rng.choice(vocab, size=int(rng.integers(0, 3)))]}
            items.append(Item(feats, float(rng.integers(0, levels)), float(rng.uniform(0.5, 2.0))))
        out.append(RawList(f"q{q}", {"c": [float(rng.normal())]}, items))
    return out


SMALL_SPECS = (
    {"name": "c", "kind": "dense", "scope": "context", "width": 1},
    {"name": "x", "kind": "dense", "scope": "per_item", "width": 3},
    {"name": "tok", "kind": "categorical", "scope": "per_item", "vocabulary_id": "tok", "embedding_dim": 2},
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# One line per acceptance criterion, collected by tests/test_acceptance.py.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
