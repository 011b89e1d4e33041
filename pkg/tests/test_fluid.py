import numpy as np
import pytest

from ringstab.analytics import ParameterSetting
from ringstab.fluid import (HorizonTooShort, ScaledTrajectory, busy_interval_slopes,
                            circularity_check, conservation_error, drain_time,
                            entry_initial_state, fluid_experiment, lipschitz_excess, make_grid,
                            residual_work, scale_trajectory)
from ringstab.randomness import UniformField
from ringstab.sim_mcn import McnState, run_mcn


def _static(ps, entry):
    """A one-point scaled path holding the given entry-queue mass."""
    L = ps.L
    SQ = np.zeros((1, L, L + 1))
    SQ[0, :, 0] = entry
    z = np.zeros_like(SQ)
    return ScaledTrajectory(1, np.zeros(1), SQ, z, z, z)


def test_unit_norm_is_unscaled(two_cell):
    tr = run_mcn(McnState([[1, 0, 0], [0, 0, 0]]), two_cell, UniformField(0, 2), 50)
    sc = scale_trajectory(tr, 1, np.arange(51.0))
    assert np.array_equal(sc.SQ, tr.Q) and np.array_equal(sc.ST, tr.book.T)


def test_empty_start(two_cell):
    tr = run_mcn(McnState.empty(2), two_cell, UniformField(0, 2), 100)
    sc = scale_trajectory(tr, 0, make_grid(10.0))
    assert not sc.SQ[0].any()
    assert drain_time(sc, 0.05) == 0.0
    res = residual_work(sc, two_cell)
    assert circularity_check(sc, res, 0.05) == []


def test_single_unit_component(two_cell):
    x0 = McnState([[1000, 0, 0], [0, 0, 0]])
    tr = run_mcn(x0, two_cell, UniformField(1, 2), 1000)
    sc = scale_trajectory(tr, x0.norm(), make_grid(1.0))
    expected = np.zeros((2, 3))
    expected[0, 0] = 1
    assert np.array_equal(sc.SQ[0], expected)


def test_interpolation_between_integer_times(two_cell):
    tr = run_mcn(McnState([[3, 0, 0], [2, 0, 0]]), two_cell, UniformField(2, 2), 40)
    sc = scale_trajectory(tr, 5, np.array([0.0, 0.1, 0.3, 1.0]))
    # scaled time 0.1 -> real time 0.5
    assert sc.SQ[1] == pytest.approx((tr.Q[0] + tr.Q[1]) / 2 / 5)
    assert sc.SQ[3] == pytest.approx(tr.Q[5] / 5)


def test_horizon_too_short(two_cell):
    tr = run_mcn(McnState([[10, 0, 0], [0, 0, 0]]), two_cell, UniformField(0, 2), 50)
    with pytest.raises(HorizonTooShort):
        scale_trajectory(tr, 10, make_grid(6.0))
    with pytest.raises(ValueError):
        scale_trajectory(run_mcn(McnState.empty(2), two_cell, UniformField(0, 2), 50, 5), 1, [0.0])


def test_residual_examples(two_cell):
    one = ParameterSetting(1, [0.2], [[0.5]])
    assert residual_work(_static(one, [1]), one).R[0] == pytest.approx([3])
    assert residual_work(_static(two_cell, [1, 0]), two_cell).R[0] == pytest.approx([11 / 7, 8 / 7])
    assert not residual_work(_static(two_cell, [0, 0]), two_cell).R.any()


def test_residual_infinite_visits():
    ps = ParameterSetting(2, [0.1, 0.0], [[0.5, 0.0], [0.5, 0.0]], {2})
    assert residual_work(_static(ps, [1, 0]), ps).R[0] == pytest.approx([5 / 3, 4 / 3])
    with pytest.raises(ValueError):
        residual_work(_static(ps, [0, 1]), ps)


def test_residual_routes_agree_on_paths():
    rng = np.random.default_rng(0)
    for seed in range(10):
        L = int(rng.integers(1, 5))
        q = rng.uniform(0.1, 1, (L, L))
        ps = ParameterSetting(L, rng.uniform(0, 0.2, L), q)
        tr = run_mcn(entry_initial_state(L, 300), ps, UniformField(seed, L), 600)
        sc = scale_trajectory(tr, 300, make_grid(2.0))
        res = residual_work(sc, ps, check_tol=1e-9)
        assert np.all(res.R >= 0)


def test_drain_time_monotone_in_epsilon(two_cell):
    fr = fluid_experiment(two_cell, 500, 3)
    times = [drain_time(fr.scaled, e) for e in (0.01, 0.05, 0.2, 1.0)]
    times = [np.inf if t is None else t for t in times]
    assert times == sorted(times, reverse=True)


def test_fluid_properties_two_cell(two_cell):
    for seed in range(20):
        fr = fluid_experiment(two_cell, 2000, seed)
        sc = fr.scaled
        assert fr.circularity_violations == []
        assert lipschitz_excess(sc) <= 1e-12
        assert conservation_error(sc) < 1e-9
        assert sc.SQ[:, :, 1:].max() <= 1 / 2000 + 1e-15
        assert all(e <= 0.05 for e in fr.slope_errors())
        assert fr.drain_time is not None


def test_degenerate_tolerance(two_cell):
    fr = fluid_experiment(two_cell, 200, 0)
    assert circularity_check(fr.scaled, fr.residual, -1.0) == []


def test_unstable_no_drain():
    ps = ParameterSetting(1, [0.5], [[0.5]])
    fr = fluid_experiment(ps, 2000, 0, t_max=20.0)
    assert fr.drain_time is None
    n = fr.scaled.norms()
    t = fr.scaled.times
    slope = np.polyfit(t[len(t) // 2:], n[len(t) // 2:], 1)[0]
    assert slope == pytest.approx(1 / 6, abs=0.02)


def test_busy_interval_slope_on_line():
    L = 1
    t = make_grid(2.0)
    SQ = np.zeros((len(t), L, L + 1))
    SQ[:, 0, 0] = np.maximum(1 - t, 0)
    z = np.zeros_like(SQ)
    sc = ScaledTrajectory(100, t, SQ, z, z, z)
    ps = ParameterSetting(1, [0.1], [[1.0]])
    res = residual_work(sc, ps)
    (iv,) = busy_interval_slopes(sc, res, 0.05)
    assert iv.slope == pytest.approx(-2.0) and iv.start == 0.0


def test_entry_initial_state():
    x = entry_initial_state(3, 10)
    assert x.norm() == 10 and x.class_queues[:, 1:].sum() == 0
    assert entry_initial_state(2, 7, [0.25, 0.75]).class_queues[:, 0].tolist() == [1, 6]
    with pytest.raises(ValueError):
        entry_initial_state(2, 7, [0.5, 0.6])


def test_csv_export(tmp_path, two_cell):
    fr = fluid_experiment(two_cell, 100, 0, t_max=1.0)
    fr.to_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0].split(",")[:2] == ["s", "SQ_1_0"] and lines[0].endswith("R_2")
    assert len(lines) == 102
