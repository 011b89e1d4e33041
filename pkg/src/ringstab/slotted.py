"""Slotted-ring LANs expressed as ring-automaton parameter settings.

A slotted ring has ``c`` slots rotating past ``n`` stations; a station may
put a packet into an empty slot passing by and the packet is taken off at
its destination. One rotation is resolved into ``L`` cells:

* ``n <= c``: ``L = c``, every cell is a slot, stations sit at cells 1..n.
* ``n > c``: ``L = lcm(n, c)`` (doubled when that leaves no spare cell
  type), slots sit at cells ``m, 2m, .., cm`` with ``m = L / c`` and
  stations at cells ``k, 2k, .., nk`` with ``k = L / n``. The ``L - c``
  non-slot cells carry permanent phantom vehicles of a zero-rate type, so
  the load threshold becomes ``1 / m``.

Destinations become conditional departure hazards: type ``r`` leaves at the
cell of station ``s`` with probability ``dest[r][s]`` divided by the
destination mass not yet passed.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .analytics import ParameterError, ParameterSetting, Verdict, dwell_distribution, \
    stability_verdict, visit_matrix
from .randomness import UniformField, draw
from .sim_ring import RingState, run


@dataclass(frozen=True)
class SlottedSpec:
    n: int
    c: int
    arrival_rates: np.ndarray
    dest: np.ndarray

    def __post_init__(self):
        n, c = int(self.n), int(self.c)
        if n < 1 or c < 1:
            raise ParameterError("n and c must be >= 1")
        lam = np.array(self.arrival_rates, dtype=float)
        dest = np.array(self.dest, dtype=float)
        if lam.shape != (n,):
            raise ParameterError(f"dimension mismatch: len(arrival_rates) = {lam.size} but n = {n}")
        if dest.shape != (n, n):
            raise ParameterError(f"dest must be {n}x{n}")
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ParameterError("arrival rates must be non-negative")
        if np.any(dest < 0) or np.any(dest > 1):
            raise ParameterError("dest entries must lie in [0, 1]")
        if np.any(np.diag(dest) != 0):
            raise ParameterError("a station cannot send to itself")
        if not np.allclose(dest.sum(axis=1), 1.0, atol=1e-12):
            raise ParameterError("dest rows must sum to 1")
        for name, v in (("n", n), ("c", c), ("arrival_rates", lam), ("dest", dest)):
            if isinstance(v, np.ndarray):
                v.setflags(write=False)
            object.__setattr__(self, name, v)

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["n"], d["c"], d["arrival_rates"], d["dest"])
        except KeyError as exc:
            raise ParameterError(f"missing field {exc}") from exc

    def to_dict(self):
        return {"n": self.n, "c": self.c, "arrival_rates": self.arrival_rates.tolist(),
                "dest": self.dest.tolist()}


@dataclass(frozen=True)
class SlottedMapping:
    spec: SlottedSpec
    ps: ParameterSetting
    station_cells: list      # 1-based cell of each station
    slot_cells: list         # 1-based cells carrying slots at time 0
    m: int
    k: int
    phantom_type: int | None
    condition: list = field(default_factory=list)

    @property
    def L(self):
        return self.ps.L

    @property
    def threshold(self):
        return 1.0 / self.m

    def initial_state(self):
        """Empty queues; phantom vehicles in every non-slot cell."""
        cells = np.zeros(self.L, np.int64)
        if self.phantom_type is not None:
            slots = set(self.slot_cells)
            for i in range(1, self.L + 1):
                if i not in slots:
                    cells[i - 1] = self.phantom_type
        return RingState(cells, np.zeros(self.L, np.int64))

    def to_dict(self):
        return {
            "spec": self.spec.to_dict(),
            "parameters": self.ps.to_dict(),
            "L": self.L, "m": self.m, "k": self.k,
            "station_cells": list(self.station_cells),
            "slot_cells": list(self.slot_cells),
            "phantom_type": self.phantom_type,
            "threshold": self.threshold,
            "condition": self.condition,
        }


def station_hazards(dest, r, order):
    """Hazards for a packet of station ``r`` at the stations listed in ring
    order after ``r``: ``dest[r][s] / (mass not yet passed)``, 1 once the
    mass is exhausted."""
    h = np.empty(len(order))
    left = 1.0
    for idx, s in enumerate(order):
        if left <= 1e-15:
            h[idx] = 1.0
        else:
            h[idx] = min(1.0, dest[r, s] / left)
            left -= dest[r, s]
    return h


def _build(spec, L, station_cells, slot_cells):
    n = spec.n
    m = L // len(slot_cells)
    station_of = {cell: s for s, cell in enumerate(station_cells)}
    p = np.zeros(L)
    q = np.zeros((L, L))
    for s, cell in enumerate(station_cells):
        p[cell - 1] = spec.arrival_rates[s] / m
        order = [(s + d) % n for d in range(1, n + 1)]    # ends with s itself
        h = station_hazards(spec.dest, s, order)
        for t, h_t in zip(order, h):
            q[station_cells[t] - 1, cell - 1] = h_t
    spare = [j for j in range(1, L + 1) if j not in station_of]
    if m > 1:
        if not spare:
            raise AssertionError("no spare cell type for phantoms")
        zero_rate = tuple(spare)
        phantom = spare[0]
    else:
        # unused types: leave after one cell (never entered; keeps b finite)
        for j in spare:
            q[:, j - 1] = 1.0
        zero_rate = ()
        phantom = None
    if np.any(q < 0) or np.any(q > 1):
        raise AssertionError("hazard outside [0, 1]")
    ps = ParameterSetting(L, p, q, zero_rate)
    mapping = SlottedMapping(spec, ps, list(station_cells), list(slot_cells), m,
                             L // n, phantom)
    object.__setattr__(mapping, "condition", tau_condition(mapping))
    return mapping


def map_simple(spec):
    """Case ``n <= c``: one cell per slot, stations at cells 1..n."""
    if spec.n > spec.c:
        raise ParameterError("map_simple needs n <= c")
    L = spec.c
    return _build(spec, L, list(range(1, spec.n + 1)), list(range(1, L + 1)))


def map_general(spec):
    """Common refinement of slot and station spacing (any ``n``, ``c``)."""
    n, c = spec.n, spec.c
    L = math.lcm(n, c)
    if L // c > 1 and L == n:
        # every cell hosts a station, so no cell type is free for phantoms
        L *= 2
    m, k = L // c, L // n
    return _build(spec, L, [k * s for s in range(1, n + 1)], [m * j for j in range(1, c + 1)])


def map_spec(spec):
    return map_simple(spec) if spec.n <= spec.c else map_general(spec)


def tau_condition(mapping):
    """One inequality per station, ``sum_s' coef[s'] lam_s' < 1``."""
    vm = visit_matrix(mapping.ps)
    cells = [c - 1 for c in mapping.station_cells]
    out = []
    for s, cs in enumerate(cells):
        coef = [float((s == t) + vm.b[cs, ct]) for t, ct in enumerate(cells)]
        out.append({"station": s + 1, "cell": cs + 1, "coefficients": coef, "rhs": 1.0})
    return out


def tau_satisfied(mapping, lam=None):
    lam = mapping.spec.arrival_rates if lam is None else np.asarray(lam, float)
    return all(np.dot(row["coefficients"], lam) < row["rhs"] for row in mapping.condition)


def tau_verdict(mapping):
    return stability_verdict(mapping.ps, threshold_override=mapping.threshold)


def implied_destinations(mapping, k_max=None):
    """Destination law reproduced by the hazards: row r, column s is the
    probability that a type-r vehicle leaves at the cell of station s."""
    n = mapping.spec.n
    L = mapping.L
    out = np.zeros((n, n))
    where = {cell: s for s, cell in enumerate(mapping.station_cells)}
    for r, cell in enumerate(mapping.station_cells):
        probs, _ = dwell_distribution(mapping.ps, cell, k_max or L)
        for d, pr in enumerate(probs, start=1):
            target = (cell - 1 + d) % L + 1
            if pr > 0:
                if target not in where:
                    raise AssertionError(f"type {cell} leaves at non-station cell {target}")
                out[r, where[target]] += pr
    return out


# --- direct slot simulation -------------------------------------------------

@njit(cache=True)
def _slot_run(L, station_at, slot_pos0, lam, dest_cdf, seed, horizon, stride,
              snap_q, snap_busy):
    n = lam.shape[0]
    c = slot_pos0.shape[0]
    pos = slot_pos0.copy()
    load = np.full(c, -1, np.int64)       # destination station, -1 empty
    queues = np.zeros(n, np.int64)
    k = 0
    for t in range(horizon + 1):
        if t % stride == 0:
            snap_q[k] = queues
            busy = 0
            for z in range(c):
                busy += load[z] >= 0
            snap_busy[k] = busy
            k += 1
        if t == horizon:
            break
        for z in range(c):
            s = station_at[pos[z]]
            if s < 0:
                continue
            if load[z] == s:
                load[z] = -1          # taken off; the slot is gone for this pass
            elif load[z] < 0 and queues[s] > 0:
                u = draw(seed, s + 1, 1, t)
                d = 0
                while d < n - 1 and u > dest_cdf[s, d]:
                    d += 1
                load[z] = d
                queues[s] -= 1
        for s in range(n):
            if draw(seed, s + 1, 0, t + 1) <= lam[s]:
                queues[s] += 1
        for z in range(c):
            pos[z] = (pos[z] + 1) % L
    return k


@dataclass
class SlotTrace:
    times: np.ndarray
    queues: np.ndarray     # snapshots x n
    busy: np.ndarray       # occupied slots per snapshot


def simulate_slotted(mapping, seed, horizon, record_every=None):
    """Simulate the slotted ring itself on the mapping's cell grid.

    Slots are explicit objects carrying a destination drawn when the packet
    is put on the ring; arrivals are Bernoulli per cell step at rate
    ``lambda / m``. Snapshots default to once per rotation (every L steps).
    """
    L = mapping.L
    stride = int(record_every or L)
    station_at = np.full(L, -1, np.int64)
    for s, cell in enumerate(mapping.station_cells):
        station_at[cell - 1] = s
    slot_pos0 = np.array(mapping.slot_cells, np.int64) - 1
    lam = mapping.spec.arrival_rates / mapping.m
    dest_cdf = np.cumsum(mapping.spec.dest, axis=1)
    n_snap = int(horizon) // stride + 1
    snap_q = np.zeros((n_snap, mapping.spec.n), np.int64)
    snap_busy = np.zeros(n_snap, np.int64)
    k = _slot_run(L, station_at, slot_pos0, lam, dest_cdf,
                  UniformField(seed, L).key, int(horizon), stride, snap_q, snap_busy)
    return SlotTrace(np.arange(k) * stride, snap_q[:k], snap_busy[:k])


def simulate_mapped(mapping, seed, horizon, record_every=None):
    """Run the mapped automaton from ``initial_state``; station queues per snapshot."""
    stride = int(record_every or mapping.L)
    traj = run(mapping.initial_state(), mapping.ps, UniformField(seed, mapping.L),
               int(horizon), stride)
    idx = np.array(mapping.station_cells) - 1
    return traj, traj.queues[:, idx]


__all__ = [
    "SlottedSpec", "SlottedMapping", "map_simple", "map_general", "map_spec",
    "tau_condition", "tau_satisfied", "tau_verdict", "implied_destinations",
    "station_hazards", "simulate_slotted", "simulate_mapped", "SlotTrace", "Verdict",
]
