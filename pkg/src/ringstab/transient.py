"""Overload regime: empty-cell rates under partial blow-up and growth rates.

The candidate empty-cell rates solve ``v = G(v)`` with
``G(v)_i = 1 - sum_j b_ij min(v_j, p_j)``. Queues with ``p_i > v_i`` are
classified unstable and expected to grow at rate ``p_i - v_i``.
"""

from dataclasses import dataclass, field

import numpy as np

from .analytics import Verdict, stability_verdict, visit_matrix
from .parallel import map_seeds
from .randomness import UniformField
from .sim_ring import RingState, queue_growth_slopes, run

BOUNDARY_GAP = 1e-9
DISTINCT_TOL = 1e-6


class ConvergenceError(RuntimeError):
    pass


def fixed_point_map(ps, v, vm=None):
    """``G(v)``; zero-rate columns (p_j = 0) contribute nothing."""
    vm = visit_matrix(ps) if vm is None else vm
    v = np.asarray(v, dtype=float)
    m = np.minimum(v, ps.p)
    m[vm.infinite] = 0.0
    return 1.0 - vm.b[:, ~vm.infinite] @ m[~vm.infinite]


def _residual(ps, vm, v):
    return float(np.max(np.abs(v - fixed_point_map(ps, v, vm))))


def _polish(ps, vm, v):
    """Exact solve of the linear piece selected by ``v``."""
    L = ps.L
    fin = ~vm.infinite
    low = (v < ps.p) & fin
    B = np.where(fin[None, :], vm.b, 0.0)
    A = np.eye(L) + B * low[None, :]
    rhs = 1.0 - B @ np.where(low, 0.0, ps.p)
    try:
        return np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        return v


def _iterate(ps, vm, v, max_iter, tol):
    alpha = 0.5
    best = _residual(ps, vm, v)
    since = 0
    for it in range(1, max_iter + 1):
        g = fixed_point_map(ps, v, vm)
        v = v + alpha * (g - v)
        r = _residual(ps, vm, v)
        if r <= tol:
            return v, r, it
        if r < 0.999 * best:
            best, since = r, 0
        else:
            since += 1
            if since >= 50:
                # stalled or cycling: shrink the step
                alpha *= 0.5
                since = 0
                if alpha < 1e-12:
                    break
        if it % 100 == 0 or since == 0:
            w = _polish(ps, vm, v)
            rw = _residual(ps, vm, w)
            if rw <= tol:
                return w, rw, it
    raise ConvergenceError(f"no fixed point within {max_iter} iterations "
                           f"(residual {best:.3g})")


@dataclass
class TransientProfile:
    pi_tilde0: np.ndarray
    U: list
    S: list
    growth: np.ndarray
    residual: float
    boundary_flag: bool
    iterations: int
    solutions: list = field(default_factory=list)

    @property
    def multiple(self):
        return len(self.solutions) > 1

    def to_dict(self):
        return {
            "pi_tilde0": self.pi_tilde0.tolist(),
            "U": self.U,
            "S": self.S,
            "growth": self.growth.tolist(),
            "residual": self.residual,
            "boundary_flag": self.boundary_flag,
            "iterations": self.iterations,
            "multiple_solutions": self.multiple,
            "solutions": [s.tolist() for s in self.solutions],
        }


def solve_fixed_point(ps, max_iter=10**6, tol=1e-10, restarts=10, seed=0):
    """Damped iteration ``v <- v + a (G(v) - v)`` from the all-ones vector.

    The step ``a`` starts at 1/2 and is halved whenever the residual stalls.
    Random restarts detect multiple solutions; the first solution (from
    all-ones) is the one reported.
    """
    vm = visit_matrix(ps)
    for j in np.flatnonzero(vm.infinite):
        if ps.p[j] != 0:
            raise ValueError(f"type {j + 1} has infinite visits and p > 0")
    v, r, its = _iterate(ps, vm, np.ones(ps.L), max_iter, tol)
    solutions = [v]
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        w, _, _ = _iterate(ps, vm, rng.random(ps.L), max_iter, tol)
        if all(np.max(np.abs(w - s)) > DISTINCT_TOL for s in solutions):
            solutions.append(w)
    gap = ps.p - v
    U = [int(i) + 1 for i in np.flatnonzero(gap > 0)]
    S = [int(i) + 1 for i in np.flatnonzero(gap < 0)]
    growth = np.where(gap > 0, gap, 0.0)
    boundary = bool(np.any(np.abs(gap) <= BOUNDARY_GAP))
    return TransientProfile(v, U, S, growth, r, boundary, its, solutions)


def _slopes_for_seed(args):
    ps, seed, horizon, stride = args
    traj = run(RingState.empty(ps.L), ps, UniformField(seed, ps.L), horizon, stride)
    return queue_growth_slopes(traj)


@dataclass
class GrowthComparison:
    seeds: list
    slopes: np.ndarray        # seeds x L
    mean: np.ndarray
    stderr: np.ndarray
    predicted: np.ndarray
    discrepancy: np.ndarray

    def to_dict(self):
        return {
            "per_seed": [{"seed": s, "slopes": row.tolist()}
                         for s, row in zip(self.seeds, self.slopes)],
            "mean_slope": self.mean.tolist(),
            "stderr": self.stderr.tolist(),
            "predicted_growth": self.predicted.tolist(),
            "discrepancy": self.discrepancy.tolist(),
        }


def compare_with_simulation(ps, profile, horizon, seeds, jobs=1, record_every=None):
    """Simulated queue slopes (trailing half of each run, from empty) against
    the predicted growth rates."""
    if stability_verdict(ps).verdict is Verdict.BOUNDARY:
        raise ValueError("growth rates are undefined at the stability boundary")
    seeds = [int(s) for s in seeds]
    stride = record_every or max(1, int(horizon) // 100_000)
    slopes = np.array(map_seeds(_slopes_for_seed,
                                [(ps, s, int(horizon), stride) for s in seeds], jobs))
    mean = slopes.mean(axis=0)
    se = (slopes.std(axis=0, ddof=1) / np.sqrt(len(seeds))
          if len(seeds) > 1 else np.zeros(ps.L))
    return GrowthComparison(seeds, slopes, mean, se, profile.growth,
                            np.abs(mean - profile.growth))
