"""Simulator of the ring cellular automaton and its legacy variant.

Both variants read arrivals and departures from a shared ``UniformField``:
arrivals for the step t -> t+1 use ``U_i0(t+1)`` (legacy: ``U_i0(t)``) and
departures use ``U_ij(t)``.
"""

import csv
from dataclasses import dataclass

import numpy as np
from numba import njit

from .randomness import draw

# event rows
ARRIVALS, ENTRIES, EXITS = 0, 1, 2


@dataclass(frozen=True)
class RingState:
    cells: np.ndarray   # cells[i-1] = 0 (empty) or the type j of the occupant
    queues: np.ndarray  # queue lengths

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.int64)
        queues = np.array(self.queues, dtype=np.int64)
        L = cells.shape[0]
        if cells.ndim != 1 or queues.shape != (L,) or L < 1:
            raise ValueError("cells and queues must be 1-d arrays of equal length L >= 1")
        if np.any(cells < 0) or np.any(cells > L):
            raise ValueError(f"cell states must lie in 0..{L}")
        if np.any(queues < 0):
            raise ValueError("queue lengths must be non-negative")
        cells.setflags(write=False)
        queues.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "queues", queues)

    @property
    def L(self):
        return self.cells.shape[0]

    @classmethod
    def empty(cls, L):
        return cls(np.zeros(L, np.int64), np.zeros(L, np.int64))

    def __eq__(self, other):
        return (isinstance(other, RingState)
                and np.array_equal(self.cells, other.cells)
                and np.array_equal(self.queues, other.queues))

    def __hash__(self):
        return hash((self.cells.tobytes(), self.queues.tobytes()))

    def to_dict(self):
        return {"cells": self.cells.tolist(), "queues": self.queues.tolist()}


@njit(cache=True)
def _ring_step(cells, queues, p, q, seed, t, new_cells, new_queues, events):
    L = cells.shape[0]
    for i in range(L):
        nxt = (i + 1) % L
        arrived = draw(seed, i + 1, 0, t + 1) <= p[i]
        entering = queues[i] > 0 and cells[i] == 0
        new_queues[i] = queues[i] - entering + arrived
        c = cells[i]
        if entering:
            new_cells[nxt] = i + 1
        elif c != 0:
            if draw(seed, i + 1, c, t) > q[i, c - 1]:
                new_cells[nxt] = c
            else:
                new_cells[nxt] = 0
                events[EXITS, i] += 1
        else:
            new_cells[nxt] = 0
        events[ARRIVALS, i] += arrived
        events[ENTRIES, i] += entering


@njit(cache=True)
def _legacy_step(cells, queues, p, q, seed, t, new_cells, new_queues, events):
    L = cells.shape[0]
    for i in range(L):
        nxt = (i + 1) % L
        arrived = draw(seed, i + 1, 0, t) <= p[i]
        c = cells[i]
        if c == 0:
            if queues[i] > 0:
                new_queues[i] = queues[i] - (not arrived)
                new_cells[nxt] = i + 1
                events[ENTRIES, i] += 1
            elif arrived:
                new_queues[i] = 0
                new_cells[nxt] = i + 1
                events[ENTRIES, i] += 1
            else:
                new_queues[i] = 0
                new_cells[nxt] = 0
        else:
            new_queues[i] = queues[i] + arrived
            if draw(seed, i + 1, c, t) > q[i, c - 1]:
                new_cells[nxt] = c
            else:
                new_cells[nxt] = 0
                events[EXITS, i] += 1
        events[ARRIVALS, i] += arrived


@njit(cache=True)
def _run(cells, queues, p, q, seed, t0, horizon, stride, legacy,
         snap_t, snap_cells, snap_queues, snap_occ, snap_events):
    L = cells.shape[0]
    c = cells.copy()
    qu = queues.copy()
    nc = np.empty_like(c)
    nq = np.empty_like(qu)
    occ = np.zeros((L, L + 1), dtype=np.int64)
    events = np.zeros((3, L), dtype=np.int64)
    k = 0
    for s in range(horizon + 1):
        if s % stride == 0 or s == horizon:
            snap_t[k] = t0 + s
            snap_cells[k] = c
            snap_queues[k] = qu
            snap_occ[k] = occ
            snap_events[k] = events
            k += 1
        if s == horizon:
            break
        for i in range(L):
            occ[i, c[i]] += 1
        if legacy:
            _legacy_step(c, qu, p, q, seed, t0 + s, nc, nq, events)
        else:
            _ring_step(c, qu, p, q, seed, t0 + s, nc, nq, events)
        c, nc = nc, c
        qu, nq = nq, qu
    return k


def _check_dims(state, ps, field):
    if state.L != ps.L or field.L != ps.L:
        raise ValueError("state, parameters and field disagree on L")


def step(state, ps, field, t):
    """One transition X(t) -> X(t+1) of the ring automaton."""
    _check_dims(state, ps, field)
    nc = np.empty(ps.L, np.int64)
    nq = np.empty(ps.L, np.int64)
    ev = np.zeros((3, ps.L), np.int64)
    _ring_step(state.cells, state.queues, ps.p, ps.q, field.key, int(t), nc, nq, ev)
    return RingState(nc, nq)


def step_legacy(state, ps, field, t):
    """One transition of the legacy variant, where an arrival at an empty
    queue in front of an empty cell enters the ring in the same slot."""
    _check_dims(state, ps, field)
    nc = np.empty(ps.L, np.int64)
    nq = np.empty(ps.L, np.int64)
    ev = np.zeros((3, ps.L), np.int64)
    _legacy_step(state.cells, state.queues, ps.p, ps.q, field.key, int(t), nc, nq, ev)
    return RingState(nc, nq)


@dataclass(frozen=True)
class Trajectory:
    """Snapshots of a ring run.

    ``occupancy[k, i, j]`` counts the time steps s < ``times[k]`` (since the
    start of the run) at which cell i+1 was in state j; ``events[k]`` holds
    cumulative arrivals, ring entries and ring exits per cell. Both are kept
    at full resolution regardless of the snapshot stride.
    """
    times: np.ndarray
    cells: np.ndarray
    queues: np.ndarray
    occupancy: np.ndarray
    events: np.ndarray
    horizon: int
    record_every: int
    legacy: bool = False

    @property
    def L(self):
        return self.cells.shape[1]

    def state(self, k):
        return RingState(self.cells[k], self.queues[k])

    @property
    def final(self):
        return self.state(-1)

    def to_csv(self, path):
        L = self.L
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"Q_{i}" for i in range(1, L + 1)]
                       + [f"C_{i}" for i in range(1, L + 1)])
            for t, qrow, crow in zip(self.times, self.queues, self.cells):
                w.writerow([int(t)] + qrow.tolist() + crow.tolist())


def run(initial, ps, field, horizon, record_every=1, legacy=False, t0=0):
    """Apply ``horizon`` steps from ``initial``, snapshotting every ``record_every``."""
    _check_dims(initial, ps, field)
    horizon = int(horizon)
    stride = int(record_every)
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if stride < 1:
        raise ValueError("record_every must be positive")
    L = ps.L
    n = horizon // stride + 2
    snap_t = np.empty(n, np.int64)
    snap_cells = np.empty((n, L), np.int64)
    snap_queues = np.empty((n, L), np.int64)
    snap_occ = np.empty((n, L, L + 1), np.int64)
    snap_events = np.empty((n, 3, L), np.int64)
    k = _run(initial.cells, initial.queues, ps.p, ps.q, field.key, int(t0), horizon,
             stride, bool(legacy), snap_t, snap_cells, snap_queues, snap_occ, snap_events)
    return Trajectory(snap_t[:k], snap_cells[:k], snap_queues[:k], snap_occ[:k],
                      snap_events[:k], horizon, stride, bool(legacy))


def estimate_marginals(traj, burn_in=None):
    """Empirical cell-state frequencies after ``burn_in`` (default 10% of horizon).

    The burn-in is rounded up to the next snapshot time.
    """
    start = traj.times[0]
    if burn_in is None:
        burn_in = traj.horizon // 10
    if traj.horizon <= burn_in:
        raise ValueError("horizon must exceed burn_in")
    k = int(np.searchsorted(traj.times - start, burn_in, side="left"))
    k = min(k, len(traj.times) - 2)
    counts = traj.occupancy[-1] - traj.occupancy[k]
    span = traj.times[-1] - traj.times[k]
    return counts / span


def queue_growth_slopes(traj, window=None):
    """Least-squares slope of each queue length against time over the
    trailing ``window`` time units (default: the second half of the run)."""
    if window is None:
        window = traj.horizon // 2
    if window > traj.horizon:
        raise ValueError("window exceeds horizon")
    sel = traj.times >= traj.times[-1] - window
    t = traj.times[sel].astype(float)
    y = traj.queues[sel].astype(float)
    if t.size < 2:
        return np.zeros(traj.L)
    tc = t - t.mean()
    yc = y - y.mean(axis=0)
    return (tc @ yc) / (tc @ tc)
