import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eulerci.fields import AliasingError, Grid3, PeriodicField, random_band_limited, resample
from eulerci.transport import (
    FlowMap, TimeSeries, compose, direct_interpolate, eulerian_flow_maps, full_coefficients,
    solve_flow_map, step_schedule, transported_stress, trig_interpolate,
    verify_transport_estimates,
)

MU = 8.0


def shear(grid, amp=1.0):
    x2 = grid.mesh()[1]
    return np.stack([amp * np.sin(x2), np.zeros(grid.shape), np.zeros(grid.shape)])


class TestInterpolation:
    def test_nufft_matches_direct_sum(self, grid16, rng):
        f = random_band_limited(grid16, 2, 6, rng).data
        c = full_coefficients(f)
        pts = rng.uniform(-1, 8, (3, 300))
        ref = direct_interpolate(c, np.mod(pts, 2 * np.pi)).real
        assert np.abs(trig_interpolate(c, pts) - ref).max() <= 1e-10 * np.abs(f).max()

    def test_grid_points_reproduced(self, grid16, rng):
        f = random_band_limited(grid16, 1, 5, rng).data
        vals = trig_interpolate(full_coefficients(f), grid16.mesh().reshape(3, -1))
        assert np.abs(vals.reshape(f.shape) - f).max() <= 1e-10

    def test_nyquist_rejected(self, grid16):
        x1 = grid16.mesh()[0]
        with pytest.raises(AliasingError):
            full_coefficients(np.cos(8 * x1)[np.newaxis])

    def test_compose_with_shift(self, grid16):
        x1 = grid16.mesh()[0]
        f = np.sin(x1)[np.newaxis]
        disp = np.zeros((3,) + grid16.shape)
        disp[0] = 0.3
        assert np.allclose(compose(f, disp)[0], np.sin(x1 + 0.3), atol=1e-10)


class TestTimeSeries:
    def test_linear_in_time(self, grid16):
        a, b = np.zeros((3,) + grid16.shape), np.ones((3,) + grid16.shape)
        ts = TimeSeries([0.0, 1.0], [a, b])
        assert np.allclose(ts.at(0.25), 0.25)
        assert ts.bracket(1.0) == (1, 1, 0.0)

    def test_rejects_unsorted(self, grid16):
        with pytest.raises(ValueError):
            TimeSeries([1.0, 0.0], [np.zeros(3), np.zeros(3)])

    def test_out_of_range(self, grid16):
        ts = TimeSeries.constant(np.zeros((3,) + grid16.shape), 0.0, 1.0)
        with pytest.raises(ValueError):
            ts.at(1.5)

    def test_step_schedule_hits_breakpoints(self):
        nodes = step_schedule(0.0, 1.0, [0.3], 0.25)
        assert 0.3 in nodes and nodes[0] == 0.0 and nodes[-1] == 1.0
        assert max(np.diff(nodes)) <= 0.25 + 1e-15
        assert step_schedule(1.0, 0.0, [], 0.5) == [1.0, 0.5, 0.0]


class TestFlowMaps:
    @pytest.mark.parametrize("method", ["characteristics", "eulerian"])
    def test_zero_velocity_is_identity(self, grid16, method):
        v = TimeSeries.constant(np.zeros((3,) + grid16.shape), 0.0, 1.0)
        flow = solve_flow_map(v, 4, MU, 0.55, method=method)
        assert flow.is_identity and flow.deviation() == 0.0

    @pytest.mark.parametrize("method", ["characteristics", "eulerian"])
    def test_constant_velocity(self, grid16, method):
        c = np.array([0.5, -0.2, 0.1])
        v = TimeSeries.constant(np.broadcast_to(c[:, None, None, None], (3,) + grid16.shape).copy(), 0.0, 1.0)
        flow = solve_flow_map(v, 4, MU, 0.6, method=method)
        ref = -c[:, None, None, None] * (0.6 - 0.5)
        assert np.abs(flow.displacement - ref).max() <= 1e-12

    @pytest.mark.parametrize("method", ["characteristics", "eulerian"])
    @pytest.mark.parametrize("t", [0.4, 0.6])
    def test_shear_closed_form(self, grid16, method, t):
        # v = (sin x2, 0, 0): Phi(x, t) = x - (t - t0) sin(x2) e1
        v = TimeSeries.constant(shear(grid16), 0.0, 1.0)
        flow = solve_flow_map(v, 4, MU, t, method=method)
        ref = np.zeros((3,) + grid16.shape)
        ref[0] = -(t - 0.5) * np.sin(grid16.mesh()[1])
        assert np.abs(flow.displacement - ref).max() <= 1e-10
        J = flow.jacobian_minus_identity()
        assert flow.deviation() == pytest.approx(np.abs(J[0, 1]).max(), rel=1e-12)

    def test_methods_agree_on_random_flow(self, rng):
        # the displacement is not band-limited; N = 32 resolves it for a band-3 velocity
        v0 = resample(random_band_limited(Grid3(16), 1, 3, rng).data * 0.5, 32)
        v = TimeSeries([0.4, 0.6], [v0, 0.8 * v0])
        a = solve_flow_map(v, 4, MU, 0.6, method="characteristics").displacement
        b = solve_flow_map(v, 4, MU, 0.6, method="eulerian").displacement
        assert np.abs(a - b).max() <= 1e-8

    def test_eulerian_multiple_times(self, grid16):
        v = TimeSeries.constant(shear(grid16), 0.0, 1.0)
        maps = eulerian_flow_maps(v, 0.5, [0.4, 0.5, 0.55, 0.6], 1 / 160)
        assert maps[0.5].is_identity
        for t in (0.4, 0.55, 0.6):
            assert np.abs(maps[t].displacement[0] + (t - 0.5) * np.sin(grid16.mesh()[1])).max() <= 1e-10

    def test_outside_window_rejected(self, grid16):
        v = TimeSeries.constant(np.zeros((3,) + grid16.shape), 0.0, 1.0)
        with pytest.raises(ValueError):
            solve_flow_map(v, 4, MU, 0.7)

    def test_unknown_method(self, grid16):
        v = TimeSeries.constant(shear(grid16), 0.0, 1.0)
        with pytest.raises(ValueError):
            solve_flow_map(v, 4, MU, 0.6, method="magic")

    def test_large_deviation_flagged(self, grid16):
        v = TimeSeries.constant(shear(grid16, 20.0), 0.0, 1.0)
        assert any(f.startswith("cfl") for f in solve_flow_map(v, 4, MU, 0.6).flags)


class TestTransportedStress:
    def test_identity_flow(self, grid16, rng):
        R = random_band_limited(grid16, 2, 4, rng)
        flow = FlowMap(0.5, 0.5, np.zeros((3,) + grid16.shape))
        assert np.array_equal(transported_stress(R, flow).data, R.data)

    def test_shear_transport(self, grid16):
        x1, x2, _ = grid16.mesh()
        data = np.zeros((6,) + grid16.shape)
        data[3] = np.cos(x1)
        flow = solve_flow_map(TimeSeries.constant(shear(grid16), 0.0, 1.0), 4, MU, 0.6)
        out = transported_stress(PeriodicField(grid16, data, 2), flow).data
        assert np.abs(out[3] - np.cos(x1 - 0.1 * np.sin(x2))).max() <= 1e-9

    def test_chaining(self, grid16, rng):
        # Phi(., t) from t0 composed through an intermediate time equals the direct map
        v = TimeSeries.constant(random_band_limited(grid16, 1, 2, rng).data * 0.3, 0.0, 1.0)
        direct = solve_flow_map(v, 4, MU, 0.6).displacement
        mid = solve_flow_map(v, 4, MU, 0.55).displacement
        step = solve_flow_map(v, 11, 20.0, 0.6).displacement  # anchored at 0.55
        chained = step + compose(mid, step, atol=1e-6)
        assert np.abs(chained - direct).max() <= 1e-7


class TestEstimates:
    def test_shear(self, grid16):
        x1 = grid16.mesh()[0]
        f0 = PeriodicField(grid16, np.sin(x1)[np.newaxis], 0)
        rep = verify_transport_estimates(PeriodicField(grid16, shear(grid16), 1), f0, None, 1 / MU, mu=MU)
        assert rep.v_c1 == pytest.approx(1.0, rel=1e-10)
        m = rep.min_margins
        assert m["max_principle"] >= -1e-10 and m["gradient"] >= 0 and m["flow"] >= 0

    @settings(max_examples=5)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_random_instances(self, seed):
        g = Grid3(16)
        rng = np.random.default_rng(seed)
        v = random_band_limited(g, 1, 3, rng)
        f0 = random_band_limited(g, 0, 3, rng)
        src = random_band_limited(g, 0, 3, rng)
        rep = verify_transport_estimates(v, f0, src, 1 / MU, n_times=3, mu=MU)
        assert min(rep.min_margins.values()) >= -1e-10
