import numpy as np
import pytest

from ringstab.analytics import ParameterSetting, marginal_distribution
from ringstab.randomness import UniformField
from ringstab.sim_ring import (RingState, estimate_marginals, queue_growth_slopes, run, step,
                               step_legacy)

from conftest import random_setting


def ref_step(s, ps, f, t):
    """Update equations for the automaton, written out term by term."""
    L = ps.L
    Q, C = s.queues, s.cells
    nQ = np.zeros(L, int)
    nC = np.zeros(L, int)
    for i in range(1, L + 1):
        enter = Q[i - 1] > 0 and C[i - 1] == 0
        nQ[i - 1] = Q[i - 1] - enter + (f.u(i, 0, t + 1) <= ps.p[i - 1])
        nxt = i % L + 1
        nC[nxt - 1] = i * enter + sum(j * (C[i - 1] == j) * (f.u(i, j, t) > ps.q[i - 1, j - 1])
                                      for j in range(1, L + 1))
    return RingState(nC, nQ)


def ref_step_legacy(s, ps, f, t):
    L = ps.L
    Q, C = s.queues, s.cells
    nQ = np.zeros(L, int)
    nC = np.zeros(L, int)
    for i in range(1, L + 1):
        a = f.u(i, 0, t) <= ps.p[i - 1]
        enter = Q[i - 1] > 0 and C[i - 1] == 0
        nQ[i - 1] = Q[i - 1] - enter + a * (not (Q[i - 1] == 0 and C[i - 1] == 0))
        nxt = i % L + 1
        nC[nxt - 1] = (i * enter + i * (Q[i - 1] == 0) * (C[i - 1] == 0) * a
                       + sum(j * (C[i - 1] == j) * (f.u(i, j, t) > ps.q[i - 1, j - 1])
                             for j in range(1, L + 1)))
    return RingState(nC, nQ)


def random_state(rng, L, qmax=5):
    return RingState(rng.integers(0, L + 1, L), rng.integers(0, qmax + 1, L))


def test_state_validation():
    with pytest.raises(ValueError):
        RingState([3, 0], [0, 0])
    with pytest.raises(ValueError):
        RingState([0, 0], [-1, 0])
    with pytest.raises(ValueError):
        RingState([0, 0], [0])


@pytest.mark.parametrize("legacy", [False, True])
def test_step_matches_update_equations(legacy):
    rng = np.random.default_rng(0)
    fn, ref = (step_legacy, ref_step_legacy) if legacy else (step, ref_step)
    for trial in range(300):
        L = int(rng.integers(1, 5))
        ps = random_setting(rng, L)
        f = UniformField(trial, L)
        s = random_state(rng, L)
        t = int(rng.integers(0, 1000))
        assert fn(s, ps, f, t) == ref(s, ps, f, t)


def test_step_examples():
    f = UniformField(0, 1)
    ps = ParameterSetting(1, [0.0], [[0.5]])
    assert step(RingState([0], [0]), ps, f, 0) == RingState([0], [0])
    assert step(RingState([0], [1]), ps, f, 0) == RingState([1], [0])
    ps2 = ParameterSetting(2, [0.0, 0.0], [[0.6, 0.5], [0.5, 0.5]])
    f2 = UniformField(1, 2)
    t = next(t for t in range(100) if f2.u(1, 1, t) <= 0.6)
    assert step(RingState([1, 0], [0, 0]), ps2, f2, t) == RingState([0, 0], [0, 0])
    t = next(t for t in range(100) if f2.u(1, 1, t) > 0.6)
    assert step(RingState([1, 0], [0, 0]), ps2, f2, t) == RingState([0, 1], [0, 0])


def test_arrival_uses_next_time_index():
    ps = ParameterSetting(1, [0.5], [[1.0]])
    f = UniformField(4, 1)
    for t in range(50):
        got = step(RingState([0], [0]), ps, f, t).queues[0]
        assert got == (f.u(1, 0, t + 1) <= 0.5)


def test_legacy_examples():
    ps = ParameterSetting(1, [0.5], [[0.5]])
    f = UniformField(2, 1)
    t = next(t for t in range(100) if f.u(1, 0, t) <= 0.5)
    assert step_legacy(RingState([0], [0]), ps, f, t) == RingState([1], [0])
    ps0 = ps.with_p([0.0])
    assert step_legacy(RingState([0], [0]), ps0, f, t) == RingState([0], [0])
    # ring vehicles move identically in both variants
    ps3 = ParameterSetting(3, [0, 0, 0], np.full((3, 3), 0.4))
    f3 = UniformField(3, 3)
    s = RingState([2, 3, 1], [0, 0, 0])
    for t in range(30):
        assert np.array_equal(step(s, ps3, f3, t).cells, step_legacy(s, ps3, f3, t).cells)


def test_run_basics(two_cell):
    f = UniformField(0, 2)
    s0 = RingState([1, 2], [3, 0])
    tr = run(s0, two_cell, f, 0)
    assert len(tr.times) == 1 and tr.final == s0
    one = ParameterSetting(1, [0.0], [[1.0]])
    tr = run(RingState([1], [0]), one, UniformField(0, 1), 10)
    assert tr.cells[1:].sum() == 0
    # stepping by hand gives the recorded path
    tr = run(s0, two_cell, f, 50)
    s = s0
    for k in range(51):
        assert tr.state(k) == s
        s = step(s, two_cell, f, k)


def test_run_reproducible_and_stride(two_cell):
    a = run(RingState.empty(2), two_cell, UniformField(9, 2), 10_000, 7)
    b = run(RingState.empty(2), two_cell, UniformField(9, 2), 10_000, 7)
    full = run(RingState.empty(2), two_cell, UniformField(9, 2), 10_000, 1)
    assert np.array_equal(a.queues, b.queues) and np.array_equal(a.cells, b.cells)
    assert a.times[-1] == 10_000 and a.final == full.final
    assert np.array_equal(a.occupancy[-1], full.occupancy[-1])
    assert np.array_equal(a.queues[:-1], full.queues[::7][: len(a.queues) - 1])


def test_path_invariants():
    rng = np.random.default_rng(5)
    for seed in range(20):
        L = int(rng.integers(1, 5))
        ps = random_setting(rng, L, p_scale=0.5)
        tr = run(random_state(rng, L), ps, UniformField(seed, L), 2000)
        assert set(np.unique(np.diff(tr.queues, axis=0))) <= {-1, 0, 1}
        assert tr.cells.min() >= 0 and tr.cells.max() <= L
        ev = tr.events[-1]
        assert np.array_equal(tr.queues[-1] - tr.queues[0], ev[0] - ev[1])


def test_marginals_two_cell(two_cell):
    tr = run(RingState.empty(2), two_cell, UniformField(0, 2), 10**6, 100)
    est = estimate_marginals(tr)
    assert est.sum(axis=1) == pytest.approx([1, 1])
    assert np.abs(est - marginal_distribution(two_cell)).max() < 0.01


def test_marginal_examples():
    ps = ParameterSetting(1, [0.3], [[0.75]])
    est = estimate_marginals(run(RingState.empty(1), ps, UniformField(1, 1), 10**6, 100))
    assert est[0, 1] == pytest.approx(0.4, abs=0.01)
    zero = ParameterSetting(2, [0, 0], [[0.5, 0.5], [0.5, 0.5]])
    est = estimate_marginals(run(RingState.empty(2), zero, UniformField(1, 2), 1000))
    assert est[:, 0].tolist() == [1, 1]
    with pytest.raises(ValueError):
        estimate_marginals(run(RingState.empty(2), zero, UniformField(1, 2), 10), burn_in=10)


def test_growth_slopes(two_cell):
    tr = run(RingState.empty(2), two_cell, UniformField(2, 2), 10**6, 100)
    assert np.all(np.abs(queue_growth_slopes(tr)) < 0.01)
    ps = ParameterSetting(1, [0.5], [[0.5]])
    tr = run(RingState.empty(1), ps, UniformField(2, 1), 10**6, 100)
    assert queue_growth_slopes(tr)[0] == pytest.approx(1 / 6, abs=0.01)
    tr = run(RingState.empty(2), two_cell.with_p([0, 0]), UniformField(2, 2), 10**4)
    assert queue_growth_slopes(tr).tolist() == [0, 0]
    with pytest.raises(ValueError):
        queue_growth_slopes(tr, window=10**5)


def test_csv_export(tmp_path, two_cell):
    tr = run(RingState.empty(2), two_cell, UniformField(0, 2), 100, 10)
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,Q_1,Q_2,C_1,C_2"
    assert len(lines) == 1 + len(tr.times)
