"""Pure-Python versions of the grid kernels (fallback for ``_ckernels``)."""
from collections import deque

import numpy as np

DR = (-1, 1, 0, 0, 0)
DC = (0, 0, -1, 1, 0)


def bfs_distance_field(blocked, goal_r, goal_c):
    """Unit-cost shortest path distance from every cell to ``(goal_r, goal_c)``.

    Unreachable and blocked cells hold -1.
    """
    blocked = np.asarray(blocked, dtype=bool)
    h, w = blocked.shape
    dist = np.full((h, w), -1, dtype=np.int32)
    if blocked[goal_r, goal_c]:
        return dist
    dist[goal_r, goal_c] = 0
    queue = deque([(goal_r, goal_c)])
    while queue:
        r, c = queue.popleft()
        d = dist[r, c] + 1
        for k in range(4):
            nr, nc = r + DR[k], c + DC[k]
            if 0 <= nr < h and 0 <= nc < w and not blocked[nr, nc] and dist[nr, nc] < 0:
                dist[nr, nc] = d
                queue.append((nr, nc))
    return dist


def resolve_moves(blocked, pos, actions):
    """Apply five-way actions with revert-on-conflict until conflict-free.

    Returns ``(next_positions, collided)``.
    """
    blocked = np.asarray(blocked, dtype=bool)
    h, w = blocked.shape
    prev = [tuple(int(v) for v in p) for p in pos]
    m = len(prev)
    nxt = []
    collided = [False] * m
    for i, (r, c) in enumerate(prev):
        a = int(actions[i])
        nr, nc = r + DR[a], c + DC[a]
        if not (0 <= nr < h and 0 <= nc < w) or blocked[nr, nc]:
            nxt.append((r, c))
            collided[i] = True
        else:
            nxt.append((nr, nc))
    owner = {p: i for i, p in enumerate(prev)}

    changed = True
    while changed:
        changed = False
        cells = {}
        for i, p in enumerate(nxt):
            cells.setdefault(p, []).append(i)
        for members in cells.values():
            if len(members) < 2:
                continue
            for i in members:
                collided[i] = True
                if nxt[i] != prev[i]:
                    changed = True
        if changed:
            for members in cells.values():
                if len(members) >= 2:
                    for i in members:
                        nxt[i] = prev[i]
            continue
        for i in range(m):
            if nxt[i] == prev[i]:
                continue
            j = owner.get(nxt[i], -1)
            if j >= 0 and j != i and nxt[j] == prev[i]:
                nxt[i], nxt[j] = prev[i], prev[j]
                collided[i] = collided[j] = True
                changed = True
    return np.array(nxt, dtype=np.int64).reshape(m, 2), np.array(collided, dtype=bool)


def render_observations(obst_pad, heur_pad, pos, K, L):
    """Observation graph, subgroups and K stacked L x L x 3 windows for every agent.

    ``obst_pad`` and ``heur_pad`` are padded by (L - 1) / 2 on every side.
    Returns ``(features (M,K,L,L,3), members (M,K), adjacency (M,M))``.
    """
    from numpy.lib.stride_tricks import sliding_window_view

    pos = np.asarray(pos)
    m = pos.shape[0]
    r = (L - 1) // 2
    adj = np.abs(pos[:, None, :] - pos[None, :, :]).max(axis=2) <= r
    np.fill_diagonal(adj, False)

    members = np.full((m, K), -1, dtype=np.int64)
    members[:, 0] = np.arange(m)
    if K > 1 and m > 1:
        manhattan = np.abs(pos[:, None, :] - pos[None, :, :]).sum(axis=2)
        key = np.where(adj, manhattan * m + np.arange(m)[None, :], np.iinfo(np.int64).max)
        take = min(K - 1, m - 1)
        order = np.argsort(key, axis=1, kind="stable")[:, :take]
        ok = np.take_along_axis(adj, order, axis=1)
        members[:, 1:1 + take] = np.where(ok, order, -1)
    mask = members >= 0

    occ = np.zeros_like(obst_pad)
    occ[pos[:, 0] + r, pos[:, 1] + r] = 1.0
    rows, cols = pos[:, 0], pos[:, 1]
    safe = np.where(mask, members, 0)
    feats = np.empty((m, K, L, L, 3))
    feats[..., 0] = sliding_window_view(obst_pad, (L, L))[rows, cols][:, None]
    feats[..., 1] = sliding_window_view(occ, (L, L))[rows, cols][:, None]
    feats[..., 2] = sliding_window_view(heur_pad, (L, L), axis=(1, 2))[safe, rows[:, None], cols[:, None]]
    feats[~mask] = 0.0
    return feats, members, adj
