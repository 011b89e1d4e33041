"""Fluid-scaled network paths and the residual-work argument, checked on
finite-size runs.

For an initial state of norm n, ``SQ(s) = Q(n s) / max(n, 1)`` with linear
interpolation between integer times; likewise for service completions,
arrivals and routed inflow. All fluid properties hold only approximately
before the limit, so every check takes an explicit tolerance.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .analytics import (class_potential, incidence_matrix, stability_verdict,
                        visit_matrix)
from .randomness import UniformField
from .sim_mcn import McnState, routed_inflow, run_mcn

DEFAULT_GRID_STEP = 0.01


class HorizonTooShort(ValueError):
    pass


@dataclass(frozen=True)
class ScaledTrajectory:
    norm_x: int
    times: np.ndarray   # scaled grid
    SQ: np.ndarray      # grid x L x (L+1)
    ST: np.ndarray
    SA: np.ndarray
    SR: np.ndarray      # scaled routed inflow

    @property
    def L(self):
        return self.SQ.shape[1]

    def norms(self):
        return self.SQ.reshape(len(self.times), -1).sum(axis=1)


def make_grid(t_max, step=DEFAULT_GRID_STEP):
    n = int(round(t_max / step))
    return np.arange(n + 1) * step


def _interp(X, tau):
    k = np.floor(tau).astype(np.int64)
    k = np.minimum(k, X.shape[0] - 1)
    frac = tau - k
    k1 = np.minimum(k + 1, X.shape[0] - 1)
    w = frac.reshape((-1,) + (1,) * (X.ndim - 1))
    return X[k] + w * (X[k1] - X[k])


def scale_trajectory(traj, norm_x, grid):
    """Scale a per-step network trajectory by ``norm_x`` on the scaled-time ``grid``."""
    if traj.record_every != 1:
        raise ValueError("scaling needs a trajectory recorded at every step")
    grid = np.asarray(grid, dtype=float)
    norm_x = int(norm_x)
    need = norm_x * (grid.max() if grid.size else 0.0)
    if traj.horizon < need - 1e-9:
        raise HorizonTooShort(f"horizon {traj.horizon} < norm_x * max(grid) = {need:g}")
    tau = norm_x * grid
    scale = 1.0 / max(norm_x, 1)
    Q = traj.Q.astype(float)
    book = traj.book
    return ScaledTrajectory(
        norm_x, grid,
        _interp(Q, tau) * scale,
        _interp(book.T.astype(float), tau) * scale,
        _interp(book.A.astype(float), tau) * scale,
        _interp(routed_inflow(book.Phi).astype(float), tau) * scale,
    )


@dataclass(frozen=True)
class ResidualWork:
    times: np.ndarray
    R: np.ndarray   # grid x L


def residual_work(scaled, ps, vm=None, check_tol=1e-9):
    """``R_i = SQ_i0 + sum_j b_ij SQ_j0`` on the scaled grid.

    Cross-checked against ``C (I - P^T)^{-1}`` applied to the class vector
    with the ring classes dropped (they are at most ``L / norm_x`` and vanish
    in the fluid limit).
    """
    vm = visit_matrix(ps) if vm is None else vm
    entry = scaled.SQ[:, :, 0]
    bad = vm.infinite[None, :] & (entry != 0)
    if np.any(bad):
        raise ValueError("entry-queue mass on a type with infinite visit counts")
    fin = ~vm.infinite
    R = entry + entry[:, fin] @ vm.b[:, fin].T
    if check_tol is not None and len(scaled.times):
        L = ps.L
        x = np.zeros((len(scaled.times), L, L + 1))
        x[:, :, 0] = entry
        y = class_potential(ps, x.reshape(len(scaled.times), -1).T)
        R2 = (incidence_matrix(L) @ y).T
        err = float(np.max(np.abs(R - R2)))
        if err > check_tol:
            raise AssertionError(f"residual-work routes disagree by {err:.3g}")
    return ResidualWork(scaled.times, R)


def drain_time(scaled, epsilon):
    """First scaled time with ``||SQ(t)||_1 <= epsilon``, or None."""
    hit = np.flatnonzero(scaled.norms() <= epsilon)
    return float(scaled.times[hit[0]]) if hit.size else None


@dataclass(frozen=True)
class CircularityViolation:
    station: int
    time: float
    magnitude: float


def circularity_check(scaled, residual, tol):
    """Grid points where entry queue i is (nearly) empty yet the preceding
    station carries less residual work than station i by more than ``tol``."""
    entry = scaled.SQ[:, :, 0]
    R = residual.R
    prev = np.roll(R, 1, axis=1)     # column i holds R_{i-1}, with R_L before R_1
    gap = R - tol - prev
    mask = (entry <= tol) & (gap > 0)
    return [CircularityViolation(int(i) + 1, float(scaled.times[k]), float(gap[k, i]))
            for k, i in zip(*np.nonzero(mask))]


@dataclass(frozen=True)
class BusyInterval:
    station: int
    start: float
    end: float
    slope: float


def busy_interval_slopes(scaled, residual, tol, min_length=0.5):
    """Least-squares slope of ``R_i`` over each maximal grid interval on which
    ``SQ_i0 > tol``; intervals shorter than ``min_length`` are skipped."""
    out = []
    t = scaled.times
    for i in range(scaled.L):
        busy = scaled.SQ[:, i, 0] > tol
        edges = np.diff(np.concatenate([[0], busy.astype(np.int8), [0]]))
        starts = np.flatnonzero(edges == 1)
        ends = np.flatnonzero(edges == -1)
        for a, b in zip(starts, ends):
            if t[b - 1] - t[a] < min_length:
                continue
            tt = t[a:b]
            rr = residual.R[a:b, i]
            tc = tt - tt.mean()
            slope = float(tc @ (rr - rr.mean()) / (tc @ tc))
            out.append(BusyInterval(i + 1, float(tt[0]), float(tt[-1]), slope))
    return out


def lipschitz_excess(scaled):
    """Largest grid increment of any SQ/ST component minus (grid step + 2 / norm_x)."""
    if len(scaled.times) < 2:
        return -math.inf
    h = float(np.max(np.diff(scaled.times)))
    bound = h + 2.0 / max(scaled.norm_x, 1)
    inc = max(np.abs(np.diff(scaled.SQ, axis=0)).max(),
              np.abs(np.diff(scaled.ST, axis=0)).max())
    return float(inc - bound)


def conservation_error(scaled):
    """Max deviation from ``SQ(t) = SQ(0) + SA(t) + SR(t) - ST(t)``."""
    rhs = scaled.SQ[0] + scaled.SA + scaled.SR - scaled.ST
    return float(np.max(np.abs(scaled.SQ - rhs)))


def entry_initial_state(L, norm_x, split=None):
    """Initial network state with all mass in the entry queues.

    ``split`` gives the fraction per entry queue (default: equal); rounding
    leftovers go to the queues with the largest shares (ties: lowest index)
    so the norm is exactly ``norm_x``.
    """
    w = np.full(L, 1.0 / L) if split is None else np.asarray(split, float)
    if w.shape != (L,) or np.any(w < 0) or not np.isclose(w.sum(), 1.0):
        raise ValueError("split must be a length-L probability vector")
    counts = np.floor(w * norm_x).astype(np.int64)
    short = int(norm_x) - int(counts.sum())
    order = np.argsort(-w, kind="stable")
    counts[order[:short]] += 1
    Q = np.zeros((L, L + 1), np.int64)
    Q[:, 0] = counts
    return McnState(Q)


@dataclass
class FluidRun:
    seed: int
    norm_x: int
    delta: float
    drain_time: float | None
    circularity_violations: list
    busy_intervals: list
    rho: np.ndarray
    scaled: ScaledTrajectory = field(repr=False)
    residual: ResidualWork = field(repr=False)

    @property
    def drained_before_delta(self):
        return self.drain_time is not None and self.drain_time <= self.delta

    def slope_errors(self):
        return [abs(iv.slope + (1.0 - self.rho[iv.station - 1])) for iv in self.busy_intervals]

    def to_dict(self):
        return {
            "seed": self.seed,
            "norm_x": self.norm_x,
            "delta": self.delta if math.isfinite(self.delta) else None,
            "drain_time": self.drain_time,
            "drained_before_delta": self.drained_before_delta,
            "circularity_violations": [vars(v) for v in self.circularity_violations],
            "busy_intervals": [
                dict(vars(iv), expected_slope=float(self.rho[iv.station - 1] - 1.0))
                for iv in self.busy_intervals
            ],
        }

    def to_csv(self, path):
        L = self.scaled.L
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s"] + [f"SQ_{i}_{j}" for i in range(1, L + 1) for j in range(L + 1)]
                       + [f"R_{i}" for i in range(1, L + 1)])
            for k, s in enumerate(self.scaled.times):
                w.writerow([f"{s:.6g}"] + [f"{x:.9g}" for x in self.scaled.SQ[k].ravel()]
                           + [f"{x:.9g}" for x in self.residual.R[k]])


def fluid_experiment(ps, norm_x, seed, t_max=None, grid_step=DEFAULT_GRID_STEP,
                     epsilon=0.05, tol=0.05, split=None, min_interval=0.5):
    """Run the network from ``norm_x`` customers in the entry queues and
    evaluate drain time, circularity and busy-interval slopes.

    ``t_max`` defaults to 1.2 times the drain bound (or 20 when unstable).
    """
    report = stability_verdict(ps)
    delta = report.delta
    if t_max is None:
        t_max = 1.2 * delta if math.isfinite(delta) else 20.0
    grid = make_grid(t_max, grid_step)
    x0 = entry_initial_state(ps.L, norm_x, split)
    horizon = int(math.ceil(norm_x * grid[-1]))
    traj = run_mcn(x0, ps, UniformField(seed, ps.L), horizon)
    scaled = scale_trajectory(traj, norm_x, grid)
    res = residual_work(scaled, ps)
    return FluidRun(
        seed=int(seed), norm_x=int(norm_x), delta=float(delta),
        drain_time=drain_time(scaled, epsilon),
        circularity_violations=circularity_check(scaled, res, tol),
        busy_intervals=busy_interval_slopes(scaled, res, tol, min_interval),
        rho=report.rho, scaled=scaled, residual=res,
    )
