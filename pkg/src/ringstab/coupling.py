"""State bijection between the automaton and the network, and coupled runs.

Coupled runs drive both chains with one ``UniformField`` and compare them
after every step; on a mismatch the report carries full state dumps.
"""

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .randomness import draw
from .sim_mcn import McnState, _mcn_step
from .sim_ring import RingState, _legacy_step, _ring_step


def forward(state):
    """Ring state -> network state: (Q_i, C_i) -> (Q_i, 1{C_i=1}, ..., 1{C_i=L})."""
    L = state.L
    Q = np.zeros((L, L + 1), np.int64)
    Q[:, 0] = state.queues
    occupied = state.cells > 0
    Q[np.flatnonzero(occupied), state.cells[occupied]] = 1
    return McnState(Q)


def inverse(state):
    """Network state -> ring state: (Q_i0, sum_j j Q_ij)."""
    Q = state.class_queues
    L = state.L
    return RingState(Q[:, 1:] @ np.arange(1, L + 1), Q[:, 0])


@njit(cache=True)
def _matches(cells, queues, Q):
    L = cells.shape[0]
    for i in range(L):
        if Q[i, 0] != queues[i]:
            return False
        for j in range(1, L + 1):
            if Q[i, j] != (1 if cells[i] == j else 0):
                return False
    return True


@njit(cache=True)
def _coupled(cells, queues, Q0, p, q, seed, horizon, dump_c, dump_q, dump_Q):
    L = cells.shape[0]
    c = cells.copy()
    qu = queues.copy()
    Q = Q0.copy()
    nc = np.empty_like(c)
    nq = np.empty_like(qu)
    nQ = np.empty_like(Q)
    ev = np.zeros((3, L), np.int64)
    dA = np.empty_like(Q)
    dT = np.empty_like(Q)
    dPhi = np.empty_like(Q)
    for t in range(horizon + 1):
        if not _matches(c, qu, Q):
            dump_c[:] = c
            dump_q[:] = qu
            dump_Q[:, :] = Q
            return t
        if t == horizon:
            break
        _ring_step(c, qu, p, q, seed, t, nc, nq, ev)
        _mcn_step(Q, p, q, seed, t, nQ, dA, dT, dPhi)
        c, nc = nc, c
        qu, nq = nq, qu
        Q, nQ = nQ, Q
    return -1


@dataclass
class CouplingReport:
    passed: bool
    horizon: int
    seed: int
    divergence_time: int | None = None
    ring_state: dict | None = None
    mcn_state: dict | None = None
    mapped_ring_state: dict | None = None

    def to_dict(self):
        d = {"passed": self.passed, "horizon": self.horizon, "seed": self.seed,
             "divergence_time": self.divergence_time}
        if not self.passed:
            d.update(ring_state=self.ring_state, mcn_state=self.mcn_state,
                     mapped_ring_state=self.mapped_ring_state)
        return d


def coupled_run(initial, ps, field, horizon, mcn_initial=None):
    """Run both chains from ``initial`` and ``forward(initial)`` (or
    ``mcn_initial``) and report the first time their states differ."""
    if initial.L != ps.L or field.L != ps.L:
        raise ValueError("state, parameters and field disagree on L")
    x2 = forward(initial) if mcn_initial is None else mcn_initial
    L = ps.L
    dump_c = np.zeros(L, np.int64)
    dump_q = np.zeros(L, np.int64)
    dump_Q = np.zeros((L, L + 1), np.int64)
    t = _coupled(initial.cells, initial.queues, x2.class_queues, ps.p, ps.q, field.key,
                 int(horizon), dump_c, dump_q, dump_Q)
    if t < 0:
        return CouplingReport(True, int(horizon), field.seed)
    ring = RingState(dump_c, dump_q)
    mcn = McnState(dump_Q)
    return CouplingReport(False, int(horizon), field.seed, int(t), ring.to_dict(),
                          mcn.to_dict(), forward(ring).to_dict())


@njit(cache=True)
def _legacy_coupled(cells, queues_legacy, p, q, seed, horizon, dump):
    L = cells.shape[0]
    c1 = cells.copy()
    c2 = cells.copy()
    q2 = queues_legacy.copy()
    q1 = q2.copy()
    for i in range(L):
        q1[i] += draw(seed, i + 1, 0, 0) <= p[i]
    n1c = np.empty_like(c1)
    n1q = np.empty_like(q1)
    n2c = np.empty_like(c2)
    n2q = np.empty_like(q2)
    ev = np.zeros((3, L), np.int64)
    max_gap = 0
    for t in range(horizon + 1):
        for i in range(L):
            gap = q1[i] - q2[i]
            expected = 1 if draw(seed, i + 1, 0, t) <= p[i] else 0
            if gap > max_gap:
                max_gap = gap
            if c1[i] != c2[i] or gap != expected:
                dump[0, :] = c1
                dump[1, :] = q1
                dump[2, :] = c2
                dump[3, :] = q2
                return t, max_gap
        if t == horizon:
            break
        _ring_step(c1, q1, p, q, seed, t, n1c, n1q, ev)
        _legacy_step(c2, q2, p, q, seed, t, n2c, n2q, ev)
        c1, n1c = n1c, c1
        q1, n1q = n1q, q1
        c2, n2c = n2c, c2
        q2, n2q = n2q, q2
    return -1, max_gap


@dataclass
class LegacyCouplingReport:
    passed: bool
    horizon: int
    seed: int
    max_queue_gap: int
    violation_time: int | None = None
    states: dict = field(default_factory=dict)

    def to_dict(self):
        d = {"passed": self.passed, "horizon": self.horizon, "seed": self.seed,
             "max_queue_gap": self.max_queue_gap, "violation_time": self.violation_time}
        if not self.passed:
            d["states"] = self.states
        return d


def legacy_coupled_run(initial_legacy, ps, field, horizon):
    """Couple the legacy chain started at ``initial_legacy`` with the current
    chain started at queues ``Q~(0) + 1{U_i0(0) <= p_i}`` and equal cells.

    Checks at every step that the cells agree and that the queue gap equals
    ``1{U_i0(t) <= p_i}``.
    """
    if initial_legacy.L != ps.L or field.L != ps.L:
        raise ValueError("state, parameters and field disagree on L")
    dump = np.zeros((4, ps.L), np.int64)
    t, gap = _legacy_coupled(initial_legacy.cells, initial_legacy.queues, ps.p, ps.q,
                             field.key, int(horizon), dump)
    if t < 0:
        return LegacyCouplingReport(True, int(horizon), field.seed, int(gap))
    states = {"ring": RingState(dump[0], dump[1]).to_dict(),
              "legacy": RingState(dump[2], dump[3]).to_dict()}
    return LegacyCouplingReport(False, int(horizon), field.seed, int(gap), int(t), states)
