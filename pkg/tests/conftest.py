import numpy as np
import pytest

from sacha import _pykernels, kernels
from sacha.nets import NetConfig

ACCEPTANCE = []  # (number, title, passed, detail), filled by test_acceptance

BACKENDS = {"python": _pykernels}
try:
    from sacha import _ckernels

    BACKENDS["cython"] = _ckernels
except ImportError:
    pass


@pytest.fixture(params=sorted(BACKENDS))
def backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    monkeypatch.setattr(kernels, "_backend", BACKENDS[request.param])
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_grid(rng, h, w, density):
    return rng.random((h, w)) < density


MOVES = ((0, -1, 0), (1, 1, 0), (2, 0, -1), (3, 0, 1))


class DescentPolicy:
    """Walks downhill on the heuristic channel of its own field of view."""

    cfg = NetConfig(fov=3, k=1)

    def reset(self, n):
        self.n = n

    def act(self, feats, mask, adj, rng, greedy=False):
        acts = np.full(self.n, 4)
        for i in range(self.n):
            h = feats[i, 0, :, :, 2]
            best = h[1, 1]
            for a, dr, dc in MOVES:
                if h[1 + dr, 1 + dc] < best:
                    best, acts[i] = h[1 + dr, 1 + dc], a
        z = np.zeros((self.n, 8))
        return acts, np.eye(5)[acts], z, z


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
