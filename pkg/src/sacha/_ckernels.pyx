# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled grid kernels: distance fields and joint-move collision resolution.

Both functions mirror :mod:`sacha._pykernels` exactly; ``sacha.kernels``
selects between them at import time.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef int[5] DR = [-1, 1, 0, 0, 0]
cdef int[5] DC = [0, 0, -1, 1, 0]


def bfs_distance_field(const unsigned char[:, :] blocked, Py_ssize_t goal_r, Py_ssize_t goal_c):
    """Unit-cost shortest path distance from every cell to ``(goal_r, goal_c)``.

    Unreachable and blocked cells hold -1.
    """
    cdef Py_ssize_t h = blocked.shape[0]
    cdef Py_ssize_t w = blocked.shape[1]
    dist_arr = np.full((h, w), -1, dtype=np.int32)
    cdef int[:, :] dist = dist_arr
    if blocked[goal_r, goal_c]:
        return dist_arr
    queue_arr = np.empty(h * w, dtype=np.intp)
    cdef Py_ssize_t[:] queue = queue_arr
    cdef Py_ssize_t head = 0, tail = 0, cell, r, c, nr, nc, k
    dist[goal_r, goal_c] = 0
    queue[tail] = goal_r * w + goal_c
    tail += 1
    while head < tail:
        cell = queue[head]
        head += 1
        r = cell // w
        c = cell % w
        for k in range(4):
            nr = r + DR[k]
            nc = c + DC[k]
            if nr < 0 or nr >= h or nc < 0 or nc >= w:
                continue
            if blocked[nr, nc] or dist[nr, nc] >= 0:
                continue
            dist[nr, nc] = dist[r, c] + 1
            queue[tail] = nr * w + nc
            tail += 1
    return dist_arr


def resolve_moves(const unsigned char[:, :] blocked, const long[:, :] pos, const long[:] actions):
    """Apply five-way actions with revert-on-conflict until conflict-free.

    Returns ``(next_positions, collided)``.
    """
    cdef Py_ssize_t h = blocked.shape[0]
    cdef Py_ssize_t w = blocked.shape[1]
    cdef Py_ssize_t m = pos.shape[0]
    nxt_arr = np.empty((m, 2), dtype=np.int64)
    col_arr = np.zeros(m, dtype=np.bool_)
    cdef long[:, :] nxt = nxt_arr
    cdef cnp.npy_bool[:] collided = col_arr
    cdef int[:] count = np.zeros(h * w, dtype=np.int32)
    cdef int[:] owner = np.full(h * w, -1, dtype=np.int32)
    cdef Py_ssize_t i, j, a
    cdef long r, c
    cdef bint changed

    for i in range(m):
        a = actions[i]
        r = pos[i, 0] + DR[a]
        c = pos[i, 1] + DC[a]
        if r < 0 or r >= h or c < 0 or c >= w or blocked[r, c]:
            nxt[i, 0] = pos[i, 0]
            nxt[i, 1] = pos[i, 1]
            collided[i] = True
        else:
            nxt[i, 0] = r
            nxt[i, 1] = c
        owner[pos[i, 0] * w + pos[i, 1]] = <int>i

    cdef cnp.npy_bool[:] revert = np.zeros(m, dtype=np.bool_)
    changed = True
    while changed:
        changed = False
        # vertex conflicts: every agent in a contested cell is flagged, movers revert
        for i in range(m):
            count[nxt[i, 0] * w + nxt[i, 1]] += 1
        for i in range(m):
            if count[nxt[i, 0] * w + nxt[i, 1]] >= 2:
                collided[i] = True
                if nxt[i, 0] != pos[i, 0] or nxt[i, 1] != pos[i, 1]:
                    revert[i] = True
                    changed = True
        for i in range(m):
            count[nxt[i, 0] * w + nxt[i, 1]] = 0
        if changed:
            for i in range(m):
                if revert[i]:
                    nxt[i, 0] = pos[i, 0]
                    nxt[i, 1] = pos[i, 1]
                    revert[i] = False
            continue
        # edge conflicts: two movers swapping cells
        for i in range(m):
            if nxt[i, 0] == pos[i, 0] and nxt[i, 1] == pos[i, 1]:
                continue
            j = owner[nxt[i, 0] * w + nxt[i, 1]]
            if j >= 0 and j != i and nxt[j, 0] == pos[i, 0] and nxt[j, 1] == pos[i, 1]:
                nxt[i, 0] = pos[i, 0]
                nxt[i, 1] = pos[i, 1]
                nxt[j, 0] = pos[j, 0]
                nxt[j, 1] = pos[j, 1]
                collided[i] = True
                collided[j] = True
                changed = True
    return nxt_arr, col_arr


def render_observations(const double[:, :] obst_pad, const double[:, :, :] heur_pad,
                        const long[:, :] pos, Py_ssize_t K, Py_ssize_t L):
    """Observation graph, subgroups and K stacked L x L x 3 windows for every agent.

    ``obst_pad`` and ``heur_pad`` are padded by (L - 1) / 2 on every side.
    Returns ``(features (M,K,L,L,3), members (M,K), adjacency (M,M))``.
    """
    cdef Py_ssize_t m = pos.shape[0]
    cdef Py_ssize_t r = (L - 1) // 2
    feats_arr = np.zeros((m, K, L, L, 3), dtype=np.float64)
    members_arr = np.full((m, K), -1, dtype=np.int64)
    adj_arr = np.zeros((m, m), dtype=np.bool_)
    occ_arr = np.zeros((L, L), dtype=np.float64)
    best_d_arr = np.empty(K, dtype=np.int64)
    cdef double[:, :, :, :, :] feats = feats_arr
    cdef long[:, :] members = members_arr
    cdef cnp.npy_bool[:, :] adj = adj_arr
    cdef double[:, :] occ = occ_arr
    cdef long[:] best_d = best_d_arr
    cdef Py_ssize_t i, j, k, y, x, n_sel, q, mem
    cdef long dr, dc, dist

    for i in range(m):
        for j in range(i + 1, m):
            dr = pos[i, 0] - pos[j, 0]
            dc = pos[i, 1] - pos[j, 1]
            if -r <= dr <= r and -r <= dc <= r:
                adj[i, j] = True
                adj[j, i] = True

    for i in range(m):
        # nearest K-1 neighbours by Manhattan distance, ties to lower index (j ascends)
        members[i, 0] = i
        n_sel = 0
        for j in range(m):
            if not adj[i, j]:
                continue
            dist = abs(pos[i, 0] - pos[j, 0]) + abs(pos[i, 1] - pos[j, 1])
            q = n_sel
            while q > 0 and best_d[q - 1] > dist:
                q -= 1
            if q >= K - 1:
                continue
            k = n_sel if n_sel < K - 1 else K - 2
            while k > q:
                best_d[k] = best_d[k - 1]
                members[i, k + 1] = members[i, k]
                k -= 1
            best_d[q] = dist
            members[i, q + 1] = j
            if n_sel < K - 1:
                n_sel += 1

        occ[:, :] = 0.0
        for j in range(m):
            dr = pos[j, 0] - pos[i, 0]
            dc = pos[j, 1] - pos[i, 1]
            if -r <= dr <= r and -r <= dc <= r:
                occ[dr + r, dc + r] = 1.0

        for k in range(K):
            mem = members[i, k]
            if mem < 0:
                continue
            for y in range(L):
                for x in range(L):
                    feats[i, k, y, x, 0] = obst_pad[pos[i, 0] + y, pos[i, 1] + x]
                    feats[i, k, y, x, 1] = occ[y, x]
                    feats[i, k, y, x, 2] = heur_pad[mem, pos[i, 0] + y, pos[i, 1] + x]
    return feats_arr, members_arr, adj_arr
