import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eulerci.beltrami import build_modes, evaluate_beltrami
from eulerci.fields import Grid3, sym_trace
from eulerci.geometry import default_families
from eulerci.iteration import (
    CutoffFamily, EnergyGapError, EnergyProfile, EulerReynoldsState, ParamSchedule, ScheduleError,
    StepConfig, StepError, beta_from_b, chi, chi_derivative, constants, default_solvers,
    energy_gap, er_residual, new_pressure, run_iteration, run_step, stage_times, time_step,
)
from eulerci.iteration.cutoffs import SUPPORT

WINDOW = (0.5, 0.5078125)


@pytest.fixture(scope="module")
def solvers():
    return default_solvers()


@pytest.fixture(scope="module")
def schedule():
    return ParamSchedule.relaxed(delta=[1.0, 0.25], lam=[6], mu=[8])


@pytest.fixture(scope="module")
def stage1(schedule, solvers):
    return run_iteration(schedule, EnergyProfile.constant(1.0), [32], WINDOW, solvers=solvers,
                         config={"doublesum": True})


class TestCutoffs:
    @given(t=st.floats(0.0, 1.0))
    def test_partition_of_unity(self, t):
        fam = CutoffFamily(8)
        assert abs(sum(fam.value(l, t) ** 2 for l in fam.indices) - 1.0) <= 1e-14

    def test_support_and_plateau(self):
        assert chi(np.array([0.75, -0.75, 1.0])).tolist() == [0.0, 0.0, 0.0]
        assert np.allclose(chi(np.linspace(-0.25, 0.25, 11)), 1.0, atol=1e-15)

    def test_derivative_matches_finite_differences(self):
        x = np.linspace(-0.74, 0.74, 37)
        h = 1e-5
        fd = (chi(x + h) - chi(x - h)) / (2 * h)
        assert np.abs(fd - chi_derivative(x)).max() <= 1e-6 * np.abs(fd).max()

    def test_active_indices(self):
        fam = CutoffFamily(8)
        assert fam.active(0.5) == [4]
        assert fam.active(0.5625) == [4, 5]
        assert all(abs(8 * 0.55 - l) < SUPPORT for l in fam.active(0.55))

    @pytest.mark.parametrize("mu", [0, 2.5, -1])
    def test_rejects_bad_mu(self, mu):
        with pytest.raises(ValueError):
            CutoffFamily(mu)


class TestEnergy:
    def test_constant(self):
        e = EnergyProfile.constant(2.0)
        assert e(0.3) == 2.0 and e.derivative(0.3) == 0.0 and e.min() == e.max() == 2.0

    def test_derivative_matches_finite_differences(self):
        e = EnergyProfile.from_list([2.0, 0.3, -0.2, 0.1])
        t, h = 0.37, 1e-6
        assert e.derivative(t) == pytest.approx((e(t + h) - e(t - h)) / (2 * h), rel=1e-8)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            EnergyProfile.from_list([0.5, 1.0])

    def test_scaled(self):
        assert EnergyProfile.from_list([1.0, 0.5]).scaled(2.0)(0.0) == pytest.approx(3.0)


class TestSchedule:
    def test_beta(self):
        assert beta_from_b(2.0) == pytest.approx(1 / 15)

    def test_strict_sequences(self):
        s = ParamSchedule.strict(a=2.0, b=1.5, c=3.0, eps=0.1, stages=2)
        assert s.delta == pytest.approx([2.0 ** -(1.5 ** q) for q in range(4)])
        assert s.lam[0] == math.ceil(2.0 ** (3.0 * 1.5))
        assert s.stages == 2 and len(s.ell) == 2

    def test_relaxed_extrapolation(self, schedule):
        assert schedule.delta[:3] == [4.0, 1.0, 0.25]
        assert schedule.lam == [1.0, 6.0]
        assert any("extrapolated" in n for n in schedule.notes)

    def test_relaxed_validation(self):
        with pytest.raises(ScheduleError):
            ParamSchedule.relaxed(delta=[1.0, 0.25], lam=[6.5], mu=[8])
        with pytest.raises(ScheduleError):
            ParamSchedule.relaxed(delta=[1.0], lam=[6], mu=[8])

    def test_delta_gap_is_enforced(self):
        s = ParamSchedule.relaxed(delta=[1.0, 0.9], lam=[6], mu=[8], delta0=2.0)
        with pytest.raises(ScheduleError):
            s.assert_conditions(0)

    def test_relaxed_failures_only_warn(self, schedule):
        checks = schedule.assert_conditions(0)
        assert len(checks) == 10 and not all(c.passed for c in checks)


class TestStateAndResidual:
    def test_zero_state(self, grid16):
        st_ = EulerReynoldsState.zero(grid16, [0.0, 0.5])
        assert st_.is_zero(0.5) and not np.any(st_.velocity(0.5))
        assert st_.invariants(0.5)["div_rel"] == 0.0
        with pytest.raises(KeyError):
            st_.index(0.25)

    def test_beltrami_flow_is_stationary(self, grid16):
        # v Beltrami, p = -|v|^2/2 and R = 0 solve the stationary equations
        modes = build_modes(5, default_families()["even"])
        v = evaluate_beltrami(modes, [1.0] * 12, grid16).data
        p = -0.5 * np.sum(v * v, axis=0)[np.newaxis]
        p -= p.mean()
        res = er_residual(v, v, 0.1, v, p, np.zeros((6,) + grid16.shape))
        assert np.abs(res).max() <= 1e-12 * np.abs(v).max() ** 2

    def test_energy_gap(self):
        e = EnergyProfile.constant(1.0)
        assert energy_gap(e, None, 0.5, 0.25) == pytest.approx(0.75 / (3 * (2 * np.pi) ** 3))
        big = np.full((3, 4, 4, 4), 10.0)
        with pytest.raises(EnergyGapError):
            energy_gap(e, big, 0.5, 0.25)


class TestTimesAndConstants:
    def test_time_step(self, schedule):
        assert time_step(schedule) == 1 / 64 and time_step(schedule, 2) == 1 / 128

    def test_stage_times_cover_anchors(self):
        times = stage_times(WINDOW, [8, 16], 1 / 128)
        assert times[2][0] == pytest.approx(0.5 - 1 / 128) and times[2][-1] == pytest.approx(0.515625)
        for s in times[2]:
            for l in range(17):
                if abs(16 * s - l) < SUPPORT:
                    assert any(abs(x - l / 16) < 1e-12 for x in times[1])
        assert set(np.round(times[2], 12)) <= set(np.round(times[1], 12))

    def test_constants_formulae(self, solvers):
        e = EnergyProfile.constant(1.0)
        c = constants(e, list(solvers.values()), 24, 0.25)
        vol3 = 3 * (2 * np.pi) ** 3
        assert c.C0 == pytest.approx(vol3 / 0.5)
        assert c.M == pytest.approx(2 * c.C0 * 24)
        assert c.eta == pytest.approx(c.r0 / (4 * c.C0))

    def test_step_config_resolution(self):
        cfg = StepConfig(32).resolved(16)
        assert cfg.n_slow == 16 and cfg.doublesum and cfg.keep_modes
        assert not StepConfig(128).resolved(64).doublesum


class TestStep:
    def test_identities(self, stage1):
        rows = stage1.rows
        assert rows and all(r["stage"] == 1 for r in rows)
        for r in rows:
            assert r["div_v_rel"] <= 1e-10
            assert r["R_trace_rel"] <= 1e-11
            assert r["w_o_sup"] <= r["w_o_bound"]
            assert r["doublesum_residual"] <= 1e-10 * 1.0
            assert r["energy_w_o_gap_rel"] <= 1e-12
            assert r["wc_form_gap_rel"] <= 1e-8

    def test_new_state_fields(self, stage1):
        state = stage1.states[-1]
        t = state.times[1]
        inv = state.invariants(t)
        assert inv["div_rel"] <= 1e-10 and inv["p_mean"] <= 1e-14
        assert np.abs(sym_trace(state.stress(t))).max() <= 1e-12

    def test_new_pressure_mean_zero(self, grid16, rng):
        w_o, w_c, v = (rng.standard_normal((3,) + grid16.shape) for _ in range(3))
        p1, shift = new_pressure(np.zeros((1,) + grid16.shape), w_o, w_c, v, 0.5 * v)
        assert abs(p1.mean()) <= 1e-14 and shift < 0

    def test_deterministic(self, schedule, solvers, stage1):
        again = run_iteration(schedule, EnergyProfile.constant(1.0), [32], WINDOW, solvers=solvers,
                              config={"doublesum": True})
        for a, b in zip(stage1.rows, again.rows):
            assert repr(a) == repr(b)

    def test_under_resolved_grid_raises(self, schedule, solvers):
        zero = EulerReynoldsState.zero(Grid3(16), [0.5])
        with pytest.raises(StepError):
            run_step(zero, schedule, 0, EnergyProfile.constant(1.0), solvers, StepConfig(16), [0.5])
