"""Multiclass queueing network equivalent of the ring automaton.

Station i serves classes (i, 0) (exogenous arrivals) and (i, j), j >= 1
(type-j customers on the ring), with strict priority for the ring classes
and unit service times. A class (i, 0) customer is routed to class
(i+1, i); a class (i, j) customer is routed to (i+1, j) with probability
1 - q_ij and leaves otherwise. Every class has a single successor class,
so the cumulative routing counts ``Phi`` are stored per source class.

Bookkeeping counters are exact int64; they overflow only after ~9.2e18
events, far beyond any run this module can complete.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .randomness import draw


@dataclass(frozen=True)
class McnState:
    class_queues: np.ndarray  # L x (L+1); column 0 holds class (i, 0)

    def __post_init__(self):
        Q = np.array(self.class_queues, dtype=np.int64)
        if Q.ndim != 2 or Q.shape[1] != Q.shape[0] + 1:
            raise ValueError("class_queues must have shape (L, L+1)")
        if np.any(Q < 0):
            raise ValueError("queue lengths must be non-negative")
        if np.any(Q[:, 1:].sum(axis=1) > 1):
            raise ValueError("at most one ring customer per station is allowed")
        Q.setflags(write=False)
        object.__setattr__(self, "class_queues", Q)

    @property
    def L(self):
        return self.class_queues.shape[0]

    @classmethod
    def empty(cls, L):
        return cls(np.zeros((L, L + 1), np.int64))

    def norm(self):
        return int(self.class_queues.sum())

    def __eq__(self, other):
        return isinstance(other, McnState) and np.array_equal(
            self.class_queues, other.class_queues)

    def __hash__(self):
        return hash(self.class_queues.tobytes())

    def to_dict(self):
        return {"class_queues": self.class_queues.tolist()}


def successor(L, i, j):
    """Class that a served class-(i, j) customer is routed to (1-based)."""
    nxt = i % L + 1
    return (nxt, i) if j == 0 else (nxt, j)


@dataclass
class Bookkeeping:
    """Cumulative primitive processes (or their one-step increments).

    A: exogenous arrivals per class; T: service completions per class;
    Phi: customers routed from each class to its successor class.
    """
    A: np.ndarray
    T: np.ndarray
    Phi: np.ndarray

    @classmethod
    def zeros(cls, L):
        z = lambda: np.zeros((L, L + 1), np.int64)  # noqa: E731
        return cls(z(), z(), z())

    def idle(self, t):
        """Cumulative idleness I_i(t) = t - sum_j T_ij(t)."""
        return t - self.T.sum(axis=-1)

    def idle_low(self, t):
        """Service time available to class (i, 0): t - sum_{j>=1} T_ij(t)."""
        return t - self.T[..., 1:].sum(axis=-1)

    def routing_dense(self):
        """Phi as a (source class, target class) matrix over flat class indices."""
        L = self.A.shape[-2]
        K = L * (L + 1)
        out = np.zeros(self.Phi.shape[:-2] + (K, K), np.int64)
        for i in range(1, L + 1):
            for j in range(L + 1):
                k, ell = successor(L, i, j)
                out[..., (i - 1) * (L + 1) + j, (k - 1) * (L + 1) + ell] = self.Phi[..., i - 1, j]
        return out


@njit(cache=True)
def _mcn_step(Q, p, q, seed, t, newQ, dA, dT, dPhi):
    L = Q.shape[0]
    for i in range(L):
        for j in range(L + 1):
            newQ[i, j] = 0
            dA[i, j] = 0
            dT[i, j] = 0
            dPhi[i, j] = 0
    for i in range(L):
        nxt = (i + 1) % L
        prio = 0
        for j in range(1, L + 1):
            prio += Q[i, j]
        serve_low = Q[i, 0] > 0 and prio == 0
        arrived = draw(seed, i + 1, 0, t + 1) <= p[i]
        newQ[i, 0] += Q[i, 0] - serve_low + arrived
        dA[i, 0] = arrived
        if serve_low:
            dT[i, 0] = 1
            dPhi[i, 0] = 1
            newQ[nxt, i + 1] += 1
        for j in range(1, L + 1):
            if Q[i, j] > 0:
                dT[i, j] = 1
                if draw(seed, i + 1, j, t) > q[i, j - 1]:
                    dPhi[i, j] = 1
                    newQ[nxt, j] += Q[i, j]


@njit(cache=True)
def _mcn_run(Q0, p, q, seed, t0, horizon, stride, snapQ, snapA, snapT, snapPhi):
    L = Q0.shape[0]
    Q = Q0.copy()
    newQ = np.empty_like(Q)
    A = np.zeros_like(Q)
    T = np.zeros_like(Q)
    Phi = np.zeros_like(Q)
    dA = np.empty_like(Q)
    dT = np.empty_like(Q)
    dPhi = np.empty_like(Q)
    k = 0
    for s in range(horizon + 1):
        if s % stride == 0 or s == horizon:
            snapQ[k] = Q
            snapA[k] = A
            snapT[k] = T
            snapPhi[k] = Phi
            k += 1
        if s == horizon:
            break
        _mcn_step(Q, p, q, seed, t0 + s, newQ, dA, dT, dPhi)
        A += dA
        T += dT
        Phi += dPhi
        Q, newQ = newQ, Q
    return k


def _check_dims(state, ps, field):
    if state.L != ps.L or field.L != ps.L:
        raise ValueError("state, parameters and field disagree on L")


def step_mcn(state, ps, field, t):
    """One transition of the network; returns the new state and the
    bookkeeping increments of this step."""
    _check_dims(state, ps, field)
    L = ps.L
    newQ = np.empty((L, L + 1), np.int64)
    d = Bookkeeping.zeros(L)
    _mcn_step(state.class_queues, ps.p, ps.q, field.key, int(t), newQ, d.A, d.T, d.Phi)
    return McnState(newQ), d


@dataclass(frozen=True)
class McnTrajectory:
    """Snapshots of a network run: ``Q[k]`` and cumulative bookkeeping at
    ``times[k]``; counters are relative to the start of the run."""
    times: np.ndarray
    Q: np.ndarray
    book: Bookkeeping
    horizon: int
    record_every: int

    @property
    def L(self):
        return self.Q.shape[1]

    def state(self, k):
        return McnState(self.Q[k])


def run_mcn(initial, ps, field, horizon, record_every=1, t0=0):
    _check_dims(initial, ps, field)
    horizon = int(horizon)
    stride = int(record_every)
    if horizon < 0 or stride < 1:
        raise ValueError("need horizon >= 0 and record_every >= 1")
    L = ps.L
    n = horizon // stride + 2
    shape = (n, L, L + 1)
    snapQ, snapA, snapT, snapPhi = (np.empty(shape, np.int64) for _ in range(4))
    k = _mcn_run(initial.class_queues, ps.p, ps.q, field.key, int(t0), horizon, stride,
                 snapQ, snapA, snapT, snapPhi)
    times = np.empty(k, np.int64)
    times[:-1] = t0 + np.arange(k - 1) * stride
    times[-1] = t0 + horizon
    book = Bookkeeping(snapA[:k], snapT[:k], snapPhi[:k])
    return McnTrajectory(times, snapQ[:k], book, horizon, stride)


def routed_inflow(Phi):
    """Customers routed into each class, from per-source routing counts."""
    L = Phi.shape[-2]
    inflow = np.zeros_like(Phi)
    for i in range(L):
        nxt = (i + 1) % L
        inflow[..., nxt, i + 1] += Phi[..., i, 0]
        inflow[..., nxt, 1:] += Phi[..., i, 1:]
    return inflow


@dataclass
class AuditReport:
    passed: dict
    first_violation: dict

    @property
    def ok(self):
        return all(self.passed.values())

    def to_dict(self):
        return {"ok": self.ok,
                "equations": {str(k): {"passed": self.passed[k],
                                       "first_violation": self.first_violation[k]}
                              for k in sorted(self.passed)}}


def _first(mask):
    """First time index (axis 0) where ``mask`` holds anywhere, else None."""
    hit = mask.reshape(mask.shape[0], -1).any(axis=1)
    idx = np.flatnonzero(hit)
    return int(idx[0]) if idx.size else None


def audit(Q, book):
    """Check the six queueing equations on a path recorded at every step.

    ``Q`` and the cumulative counters in ``book`` are indexed by t = 0..n.
    Violation times are the earliest t at which the equation fails: for
    increment conditions and the idleness sums this is the t of the
    offending step t -> t+1.
    """
    Q = np.asarray(Q, np.int64)
    A, T, Phi = (np.asarray(x, np.int64) for x in (book.A, book.T, book.Phi))
    n = Q.shape[0] - 1
    t = np.arange(n + 1)
    first = {}

    rhs = Q[0] + A + routed_inflow(Phi) - T
    first[1] = _first(Q != rhs)

    dQ = np.diff(Q, axis=0)
    bad2 = np.zeros(Q.shape, bool)
    bad2 |= Q < 0
    bad2[:-1] |= np.abs(dQ) > 1
    first[2] = _first(bad2)

    dT = np.diff(T, axis=0)
    bad3 = np.zeros(T.shape, bool)
    bad3[0] |= T[0] != 0
    bad3[:-1] |= (dT < 0) | (dT > 1)
    first[3] = _first(bad3)

    idle = t[:, None] - T.sum(axis=2)
    d_idle = np.diff(idle, axis=0)
    first[4] = _first(d_idle < 0)

    first[5] = _first(Q[:-1].sum(axis=2) * d_idle != 0)

    idle0 = t[:, None] - T[:, :, 1:].sum(axis=2)
    d_idle0 = np.diff(idle0, axis=0)
    first[6] = _first(Q[:-1, :, 1:].sum(axis=2) * d_idle0 != 0)

    return AuditReport({k: v is None for k, v in first.items()}, first)


def audit_trajectory(traj):
    if traj.record_every != 1:
        raise ValueError("audit needs a trajectory recorded at every step")
    return audit(traj.Q, traj.book)
