"""Closed-form quantities of the ring model.

Cells and vehicle types are numbered 1..L throughout the public API; array
storage is 0-based, so ``q[i - 1, j - 1]`` is the probability that a type-j
vehicle leaves from cell i.
"""

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

BOUNDARY_TOL = 1e-12


class ParameterError(ValueError):
    """Invalid parameter setting."""


class InfiniteDwellError(ValueError):
    """Dwell time of a type exempt from the departure requirement."""


@dataclass(frozen=True)
class ParameterSetting:
    L: int
    p: np.ndarray
    q: np.ndarray
    zero_rate_types: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        L = int(self.L)
        if L < 1:
            raise ParameterError(f"L must be a positive integer, got {self.L}")
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if p.shape != (L,):
            raise ParameterError(f"p has shape {p.shape}, expected ({L},)")
        if q.shape != (L, L):
            raise ParameterError(f"q has shape {q.shape}, expected ({L}, {L})")
        if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p >= 1):
            raise ParameterError("arrival probabilities must lie in [0, 1)")
        if not np.all(np.isfinite(q)) or np.any(q < 0) or np.any(q > 1):
            raise ParameterError("departure probabilities must lie in [0, 1]")
        zr = frozenset(int(j) for j in self.zero_rate_types)
        for j in zr:
            if not 1 <= j <= L:
                raise ParameterError(f"zero-rate type {j} outside 1..{L}")
            if p[j - 1] != 0:
                raise ParameterError(f"zero-rate type {j} must have p_{j} = 0")
        for j in range(1, L + 1):
            if j not in zr and np.prod(1.0 - q[:, j - 1]) >= 1.0:
                raise ParameterError(
                    f"type-{j} vehicles can never leave (all q[:, {j}] are 0)")
        p.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "zero_rate_types", zr)

    def with_p(self, p):
        return ParameterSetting(self.L, p, self.q, self.zero_rate_types)

    def to_dict(self):
        return {
            "L": self.L,
            "p": self.p.tolist(),
            "q": self.q.tolist(),
            "zero_rate_types": sorted(self.zero_rate_types),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            L = d["L"]
            p = d["p"]
            q = d["q"]
        except KeyError as exc:
            raise ParameterError(f"missing field {exc.args[0]!r}") from None
        if not isinstance(L, int) or isinstance(L, bool):
            raise ParameterError("L must be an integer")
        if len(p) != L:
            raise ParameterError(f"dimension mismatch: len(p) = {len(p)} but L = {L}")
        if len(q) != L or any(len(row) != L for row in q):
            raise ParameterError(f"dimension mismatch: q must be {L}x{L}")
        return cls(L, p, q, frozenset(d.get("zero_rate_types", ())))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _qw(ps, ell, j):
    """q for cell ``ell`` (any integer, reduced mod L) and type ``j``."""
    return ps.q[(ell - 1) % ps.L, j - 1]


def _check_type(ps, j):
    if not 1 <= j <= ps.L:
        raise IndexError(f"type index {j} outside 1..{ps.L}")


def dwell_distribution(ps, j, k_max):
    """P(T_j = k) for k = 1..k_max, and the tail mass P(T_j > k_max).

    T_j counts the cells a type-j vehicle occupies; its first cell is j + 1.
    """
    _check_type(ps, j)
    if j in ps.zero_rate_types:
        raise InfiniteDwellError(f"type {j} never leaves; T_{j} is infinite")
    if k_max < 1:
        raise ValueError("k_max must be positive")
    probs = np.empty(k_max)
    survive = 1.0
    for k in range(1, k_max + 1):
        h = _qw(ps, j + k, j)
        probs[k - 1] = survive * h
        survive *= 1.0 - h
    return probs, survive


@dataclass(frozen=True)
class VisitMatrix:
    """Expected visits ``b[i-1, j-1]`` of a type-j vehicle to cell i.

    Columns of zero-rate types hold ``inf`` and are flagged in ``infinite``.
    """
    b: np.ndarray
    infinite: np.ndarray

    @property
    def L(self):
        return self.b.shape[0]

    def finite_max(self):
        fin = self.b[:, ~self.infinite]
        return float(fin.max()) if fin.size else 0.0

    def weighted(self, x):
        """``sum_j b_ij x_j``; flagged columns are skipped when ``x_j == 0``."""
        x = np.asarray(x, dtype=float)
        bad = self.infinite & (x != 0)
        if np.any(bad):
            cols = (np.flatnonzero(bad) + 1).tolist()
            raise ValueError(f"infinite visit counts for types {cols} carry nonzero mass")
        return self.b[:, ~self.infinite] @ x[~self.infinite]


def visit_matrix(ps):
    L = ps.L
    b = np.zeros((L, L))
    infinite = np.zeros(L, dtype=bool)
    for j in range(1, L + 1):
        if j in ps.zero_rate_types:
            b[:, j - 1] = np.inf
            infinite[j - 1] = True
            continue
        denom = 1.0 - np.prod(1.0 - ps.q[:, j - 1])
        for i in range(1, L + 1):
            stop = i + L - 1 if i <= j else i - 1
            num = 1.0
            for ell in range(j + 1, stop + 1):
                num *= 1.0 - _qw(ps, ell, j)
            b[i - 1, j - 1] = num / denom
    b.setflags(write=False)
    infinite.setflags(write=False)
    return VisitMatrix(b, infinite)


@dataclass(frozen=True)
class LoadProfile:
    pi: np.ndarray       # L x (L+1); column 0 is the empty-cell rate
    lam: np.ndarray      # L x (L+1) class-indexed traffic solution
    rho: np.ndarray      # L station loads


def marginal_distribution(ps, vm=None):
    """Offered-load marginals: column 0 empty, column j type j.

    Entries are returned as computed even when the load exceeds capacity,
    so ``pi[:, 0]`` may be negative.
    """
    vm = visit_matrix(ps) if vm is None else vm
    L = ps.L
    pi = np.zeros((L, L + 1))
    for j in range(L):
        if vm.infinite[j]:
            if ps.p[j] != 0:
                raise ValueError(f"type {j + 1} has infinite visits and p > 0")
            continue
        pi[:, j + 1] = vm.b[:, j] * ps.p[j]
    pi[:, 0] = 1.0 - pi[:, 1:].sum(axis=1)
    return pi


def class_index(L, i, j):
    """Flat index of class (i, j), i in 1..L, j in 0..L."""
    return (i - 1) * (L + 1) + j


def routing_matrix(ps):
    """(L^2+L) x (L^2+L) routing matrix over classes (i, j)."""
    L = ps.L
    K = L * (L + 1)
    P = np.zeros((K, K))
    for i in range(1, L + 1):
        nxt = i % L + 1
        P[class_index(L, i, 0), class_index(L, nxt, i)] = 1.0
        for j in range(1, L + 1):
            P[class_index(L, i, j), class_index(L, nxt, j)] = 1.0 - ps.q[i - 1, j - 1]
    return P


def incidence_matrix(L):
    C = np.zeros((L, L * (L + 1)))
    for i in range(L):
        C[i, i * (L + 1):(i + 1) * (L + 1)] = 1.0
    return C


def _active_classes(ps):
    """Classes kept in the linear system; zero-rate ring classes carry no flow."""
    L = ps.L
    keep = np.ones(L * (L + 1), dtype=bool)
    for j in ps.zero_rate_types:
        for i in range(1, L + 1):
            keep[class_index(L, i, j)] = False
    return keep


def class_potential(ps, x):
    """Solve ``(I - P^T) y = x`` over the class space.

    ``x`` is a class vector or a (classes, n) batch. Classes of zero-rate
    ring types are dropped (they would make the system singular); ``x``
    must vanish on them.
    """
    x = np.asarray(x, dtype=float)
    keep = _active_classes(ps)
    if np.any(x[~keep] != 0):
        raise ValueError("mass on ring classes of zero-rate types")
    P = routing_matrix(ps)[np.ix_(keep, keep)]
    A = np.eye(P.shape[0]) - P.T
    try:
        sol = np.linalg.solve(A, x[keep])
    except np.linalg.LinAlgError as exc:
        raise ParameterError("traffic equations are singular") from exc
    y = np.zeros_like(x)
    y[keep] = sol
    return y


def traffic_solution(ps):
    """Traffic solution ``lambda = (I - P^T)^{-1} p`` and loads ``rho = C lambda``."""
    L = ps.L
    ext = np.zeros(L * (L + 1))
    for i in range(1, L + 1):
        ext[class_index(L, i, 0)] = ps.p[i - 1]
    lam = class_potential(ps, ext)
    rho = incidence_matrix(L) @ lam
    return lam.reshape(L, L + 1), rho


def load_profile(ps):
    vm = visit_matrix(ps)
    lam, rho = traffic_solution(ps)
    return LoadProfile(marginal_distribution(ps, vm), lam, rho)


class Verdict(str, Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"
    BOUNDARY = "Boundary"


@dataclass(frozen=True)
class StabilityReport:
    verdict: Verdict
    margins: np.ndarray
    rho: np.ndarray
    rho_bar: float
    B: float
    delta: float
    threshold: float

    def to_dict(self):
        return {
            "verdict": self.verdict.value,
            "margins": self.margins.tolist(),
            "rho": self.rho.tolist(),
            "rho_bar": self.rho_bar,
            "B": self.B,
            "delta": self.delta if np.isfinite(self.delta) else None,
            "threshold": self.threshold,
        }


def stability_verdict(ps, threshold_override=None):
    """Stability verdict from the station loads.

    With the default threshold 1 the margins equal ``pi_i0 - p_i``. Loads
    within ``BOUNDARY_TOL`` of the threshold are reported as Boundary.
    """
    threshold = 1.0 if threshold_override is None else float(threshold_override)
    vm = visit_matrix(ps)
    _, rho = traffic_solution(ps)
    margins = threshold - rho
    rho_bar = float(rho.max())
    B = vm.finite_max()
    if abs(rho_bar - threshold) <= BOUNDARY_TOL:
        verdict = Verdict.BOUNDARY
    elif np.all(margins > 0):
        verdict = Verdict.STABLE
    else:
        verdict = Verdict.UNSTABLE
    delta = (1.0 + B) / (threshold - rho_bar) if verdict is Verdict.STABLE else np.inf
    return StabilityReport(verdict, margins, rho, rho_bar, B, float(delta), threshold)


@dataclass(frozen=True)
class StabilityRegion:
    """Open polytope ``{p : coefficients @ p < rhs}``.

    Coefficients of zero-rate types are NaN: those arrival rates are pinned at 0.
    """
    coefficients: np.ndarray
    rhs: float
    intercepts: np.ndarray | None = None
    boundary: np.ndarray | None = None

    def contains(self, p):
        p = np.asarray(p, dtype=float)
        a = np.nan_to_num(self.coefficients, nan=0.0)
        return bool(np.all(a @ p < self.rhs))

    def halfspaces(self):
        return [
            {"coefficients": [None if np.isnan(c) else float(c) for c in row],
             "rhs": self.rhs}
            for row in self.coefficients
        ]


def stability_region(ps, resolution=101, threshold_override=None):
    """Halfspaces ``(I + B) p < threshold``; for L = 2 also a sampled boundary."""
    vm = visit_matrix(ps)
    L = ps.L
    rhs = 1.0 if threshold_override is None else float(threshold_override)
    A = np.eye(L) + np.where(vm.infinite[None, :], 0.0, vm.b)
    A[:, vm.infinite] = np.nan
    intercepts = boundary = None
    if L == 2 and not vm.infinite.any():
        intercepts = np.array([rhs / A[:, k].max() for k in range(2)])
        p1 = np.linspace(0.0, intercepts[0], resolution)
        p2 = np.min((rhs - np.outer(p1, A[:, 0])) / A[:, 1], axis=1)
        boundary = np.column_stack([p1, np.clip(p2, 0.0, None)])
    return StabilityRegion(A, rhs, intercepts, boundary)
