"""Backend selection for the grid kernels.

The compiled ``_ckernels`` module is used when it imports; otherwise the
pure-Python ``_pykernels`` module. Set ``SACHA_PURE_PYTHON=1`` to force the
fallback.
"""
import os

import numpy as np

from . import _pykernels

if os.environ.get("SACHA_PURE_PYTHON", "") not in ("", "0"):
    _backend = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _backend

        BACKEND = "cython"
    except ImportError:  # extension not built
        _backend = _pykernels
        BACKEND = "python"


def bfs_distance_field(blocked, goal):
    """Distance field to ``goal`` (row, col) as int32, -1 where unreachable."""
    blocked = np.ascontiguousarray(blocked, dtype=np.uint8)
    return _backend.bfs_distance_field(blocked, int(goal[0]), int(goal[1]))


def resolve_moves(blocked, positions, actions):
    blocked = np.ascontiguousarray(blocked, dtype=np.uint8)
    positions = np.ascontiguousarray(positions, dtype=np.int64)
    actions = np.ascontiguousarray(actions, dtype=np.int64)
    return _backend.resolve_moves(blocked, positions, actions)


def render_observations(obst_pad, heur_pad, positions, K, L):
    return _backend.render_observations(
        np.ascontiguousarray(obst_pad, dtype=np.float64),
        np.ascontiguousarray(heur_pad, dtype=np.float64),
        np.ascontiguousarray(positions, dtype=np.int64),
        int(K),
        int(L),
    )
