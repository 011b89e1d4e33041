"""Reference computations written straight from the model rules, sharing no
code with the package.

* ``mc_visits``: Monte-Carlo walks of single vehicles around the ring.
* ``truncated_chain_marginals``: exact stationary law of the L = 2 automaton
  with queues capped at ``cap`` (arrivals to a full queue are lost).
* ``enumerate_fixed_points``: all solutions of the overload fixed-point
  system, one linear solve per candidate active set.
* ``worked_visits``: hand-derived visit counts for L = 1 and L = 2.
"""

import itertools

import numpy as np
from numba import njit
from scipy import linalg


@njit(cache=True)
def _walks(q, j, n, seed):
    np.random.seed(seed)
    L = q.shape[0]
    s1 = np.zeros(L)
    s2 = np.zeros(L)
    cnt = np.zeros(L)
    for _ in range(n):
        cnt[:] = 0.0
        cell = j % L            # first cell occupied (0-based), i.e. j + 1
        while True:
            cnt[cell] += 1.0
            if np.random.random() < q[cell, j - 1]:
                break
            cell = (cell + 1) % L
        for i in range(L):
            s1[i] += cnt[i]
            s2[i] += cnt[i] * cnt[i]
    return s1, s2


def mc_visits(q, j, n, seed):
    """Mean visits of a type-j vehicle to each cell and their standard errors."""
    q = np.ascontiguousarray(q, dtype=float)
    s1, s2 = _walks(q, int(j), int(n), int(seed))
    mean = s1 / n
    var = np.maximum(s2 / n - mean**2, 0.0) * n / (n - 1)
    return mean, np.sqrt(var / n)


def worked_visits(q):
    """Visit counts for L <= 2 derived by hand (geometric loops around the ring)."""
    q = np.asarray(q, dtype=float)
    if q.shape == (1, 1):
        return np.array([[1.0 / q[0, 0]]])
    if q.shape != (2, 2):
        raise ValueError("only L = 1, 2")
    b = np.empty((2, 2))
    # type 1 starts in cell 2, type 2 starts in cell 1
    d1 = 1.0 - (1.0 - q[0, 0]) * (1.0 - q[1, 0])
    d2 = 1.0 - (1.0 - q[0, 1]) * (1.0 - q[1, 1])
    b[1, 0] = 1.0 / d1
    b[0, 0] = (1.0 - q[1, 0]) / d1
    b[0, 1] = 1.0 / d2
    b[1, 1] = (1.0 - q[0, 1]) / d2
    return b


def _bern(x, pr):
    return pr if x else 1.0 - pr


def truncated_chain_marginals(p, q, cap=8):
    """Stationary cell marginals (L=2 rows, states 0/1/2 columns) of the
    automaton with queues truncated at ``cap``.

    Step rule: an occupied cell's vehicle leaves with its hazard or moves on;
    an empty cell with a waiting vehicle takes it onto the next cell; an
    arrival joins each queue with probability p (lost when the queue is full).
    """
    L = 2
    states = list(itertools.product(range(L + 1), range(L + 1), range(cap + 1), range(cap + 1)))
    index = {s: k for k, s in enumerate(states)}
    P = np.zeros((len(states), len(states)))
    for s in states:
        cells, queues = s[:2], s[2:]
        for arr in itertools.product((0, 1), repeat=L):
            pa = _bern(arr[0], p[0]) * _bern(arr[1], p[1])
            if pa == 0:
                continue
            for leave in itertools.product((0, 1), repeat=L):
                pl = 1.0
                for i in range(L):
                    if cells[i] == 0:
                        if leave[i]:
                            pl = 0.0
                    else:
                        pl *= _bern(leave[i], q[i][cells[i] - 1])
                if pl == 0:
                    continue
                nc = [0] * L
                nq = list(queues)
                for i in range(L):
                    nxt = (i + 1) % L
                    if cells[i] == 0 and queues[i] > 0:
                        nc[nxt] = i + 1
                        nq[i] -= 1
                    elif cells[i] != 0 and not leave[i]:
                        nc[nxt] = cells[i]
                    nq[i] = min(nq[i] + arr[i], cap)
                P[index[s], index[tuple(nc) + tuple(nq)]] += pa * pl
    n = len(states)
    A = np.vstack([(P.T - np.eye(n)), np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = linalg.lstsq(A, rhs)
    out = np.zeros((L, L + 1))
    for s, w in zip(states, pi):
        for i in range(L):
            out[i, s[i]] += w
    return out


def enumerate_fixed_points(b, p, tol=1e-12):
    """All v with v_i = 1 - sum_j b_ij min(v_j, p_j), by trying every set of
    indices where the minimum picks v_j."""
    b = np.asarray(b, dtype=float)
    p = np.asarray(p, dtype=float)
    L = len(p)
    sols = []
    for mask in itertools.product((False, True), repeat=L):
        low = np.array(mask)
        A = np.eye(L) + b * low[None, :]
        rhs = 1.0 - b @ np.where(low, 0.0, p)
        try:
            v = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            continue
        if np.all(v[low] <= p[low] + tol) and np.all(v[~low] >= p[~low] - tol):
            if not any(np.allclose(v, w, atol=1e-9) for w in sols):
                sols.append(v)
    return sols
