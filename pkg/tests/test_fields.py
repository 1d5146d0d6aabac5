import numpy as np
import pytest
from hypothesis import given, strategies as st

from eulerci.fields import (
    AliasingError, Grid3, PeriodicField, c1_norm, curl, divergence, dot, forward, friendly_size,
    gradient_field, high_band_fraction, holder_norm, inverse, load_snapshot, multiply_arrays,
    product, product_grid, random_band_limited, resample, save_snapshot, snapshot_bytes,
    spectral_band, spectral_derivative, sym_eigenvalues, sym_opnorm, sym_to_full, full_to_sym,
    sym_trace,
)


def scalar(grid, values):
    return PeriodicField(grid, np.asarray(values)[np.newaxis], 0)


class TestGrid:
    @pytest.mark.parametrize("n", [0, -4, 7])
    def test_rejects_bad_resolution(self, n):
        with pytest.raises(ValueError):
            Grid3(n)

    def test_coordinates_are_x_fastest(self):
        g = Grid3(8)
        x1, x2, x3 = g.mesh()
        assert x1[0, 0, 1] == pytest.approx(g.spacing)
        assert x2[0, 1, 0] == pytest.approx(g.spacing)
        assert x3[1, 0, 0] == pytest.approx(g.spacing)

    def test_field_shape_checked(self, grid16):
        with pytest.raises(ValueError):
            PeriodicField(grid16, np.zeros((2, 16, 16, 16)), 1)


class TestTransforms:
    @given(seed=st.integers(0, 2 ** 32 - 1), band=st.integers(1, 7))
    def test_roundtrip(self, seed, band):
        g = Grid3(16)
        f = random_band_limited(g, 1, band, np.random.default_rng(seed))
        back = inverse(forward(f.data), g.n)
        assert np.abs(back - f.data).max() <= 1e-12 * np.abs(f.data).max()

    def test_band_detection(self, grid32, rng):
        f = random_band_limited(grid32, 0, 5, rng)
        assert spectral_band(forward(f.data), 32) == 5

    def test_resample_is_exact_for_band_limited(self, grid16, rng):
        f = random_band_limited(grid16, 0, 5, rng)
        up = resample(f.data, 32)
        assert np.allclose(up[:, ::2, ::2, ::2], f.data, atol=1e-13)
        assert np.allclose(resample(up, 16), f.data, atol=1e-13)

    def test_high_band_fraction(self, grid32):
        x1 = grid32.mesh()[0]
        low = np.sin(3 * x1)[np.newaxis]
        high = np.sin(15 * x1)[np.newaxis]
        assert high_band_fraction(forward(low), 32) <= 1e-28
        assert high_band_fraction(forward(high), 32) == pytest.approx(1.0)
        assert high_band_fraction(forward(low + high), 32) == pytest.approx(0.5)


class TestDerivatives:
    def test_constant(self, grid16):
        f = scalar(grid16, np.full(grid16.shape, 3.0))
        for axis in (1, 2, 3):
            assert np.abs(spectral_derivative(f, axis).data).max() == 0.0

    @pytest.mark.parametrize("axis", [1, 2, 3])
    def test_sine(self, grid32, axis):
        x = grid32.mesh()[axis - 1]
        f = scalar(grid32, np.sin(3 * x))
        d = spectral_derivative(f, axis).data[0]
        assert np.abs(d - 3 * np.cos(3 * x)).max() <= 1e-12

    def test_nyquist_content_is_rejected(self, grid16):
        x1 = grid16.mesh()[0]
        f = scalar(grid16, np.cos(8 * x1))
        with pytest.raises(AliasingError):
            spectral_derivative(f, 1)

    def test_finite_difference_oracle_second_order(self):
        # fixed band-limited function; centered differences converge at O(h^2)
        errs = []
        for n in (16, 32, 64):
            g = Grid3(n)
            x1, x2, x3 = g.mesh()
            u = np.sin(x1 + 2 * x2) + 0.5 * np.cos(3 * x1 - x3)
            du = spectral_derivative(scalar(g, u), 1).data[0]
            fd = (np.roll(u, -1, axis=-1) - np.roll(u, 1, axis=-1)) / (2 * g.spacing)
            errs.append(np.abs(fd - du).max())
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders > 1.9)

    @given(seed=st.integers(0, 2 ** 32 - 1), a=st.floats(-3, 3), b=st.floats(-3, 3))
    def test_linearity(self, seed, a, b):
        g = Grid3(16)
        rng = np.random.default_rng(seed)
        f, h = random_band_limited(g, 0, 5, rng), random_band_limited(g, 0, 5, rng)
        lhs = spectral_derivative(f.with_data(a * f.data + b * h.data), 2).data
        rhs = a * spectral_derivative(f, 2).data + b * spectral_derivative(h, 2).data
        assert np.abs(lhs - rhs).max() <= 1e-12 * (1 + abs(a) + abs(b)) * 10


class TestDivergence:
    def test_constant_tensor(self, grid16):
        T = PeriodicField(grid16, np.stack([np.full(grid16.shape, c) for c in (1, 1, 1, 0, 0, 0)]), 2)
        assert np.abs(divergence(T).data).max() == 0.0

    def test_closed_form_tensor(self, grid32):
        x3 = grid32.mesh()[2]
        data = np.zeros((6,) + grid32.shape)
        data[4] = -np.cos(x3)  # slot 13
        d = divergence(PeriodicField(grid32, data, 2)).data
        assert np.abs(d[0] - np.sin(x3)).max() <= 1e-13
        assert np.abs(d[1:]).max() <= 1e-13

    def test_div_curl(self, grid32, rng):
        f = random_band_limited(grid32, 1, 8, rng)
        c = curl(f)
        assert divergence(c).sup() <= 1e-12 * c.sup()

    def test_leibniz_dealiased(self, grid32, rng):
        # div(f g) = f div g + grad f . g with de-aliased products
        f = random_band_limited(grid32, 0, 8, rng)
        g = random_band_limited(grid32, 1, 8, rng)
        fg = product(f, g)
        lhs = divergence(fg).data[0]
        rhs = multiply_arrays(f.data[0], divergence(g).data[0]) + dot(gradient_field(f), g).data[0]
        assert np.abs(lhs - rhs).max() <= 1e-10 * np.abs(lhs).max()


class TestProducts:
    def test_product_grid_bound(self):
        assert product_grid(32, 4, 4) == 32
        m = product_grid(32, 12, 12)
        assert m > 12 + 12 + 16
        assert friendly_size(m) == m

    def test_dealiased_matches_fine_grid(self, grid16, rng):
        f, h = random_band_limited(grid16, 0, 7, rng), random_band_limited(grid16, 0, 7, rng)
        got = multiply_arrays(f.data, h.data)
        ref = resample(resample(f.data, 64) * resample(h.data, 64), 16)
        assert np.abs(got - ref).max() <= 1e-13

    def test_outer_product_symmetric_storage(self, grid16, rng):
        f = random_band_limited(grid16, 1, 3, rng)
        P = product(f, f)
        assert np.allclose(P.data[3], f.data[0] * f.data[1], atol=1e-13)


class TestTensorHelpers:
    def test_storage_roundtrip(self, rng):
        s = rng.standard_normal((6, 4))
        assert np.array_equal(full_to_sym(sym_to_full(s)), s)

    def test_eigenvalues_and_opnorm(self, rng):
        s = rng.standard_normal((6, 50))
        ev = sym_eigenvalues(s)
        ref = np.linalg.eigvalsh(np.moveaxis(sym_to_full(s), -1, 0))
        assert np.allclose(np.sort(ev, axis=0), np.sort(ref.T, axis=0), atol=1e-12)
        assert np.allclose(sym_opnorm(s), np.abs(ref).max(axis=1), atol=1e-12)
        assert np.allclose(sym_trace(s), ref.sum(axis=1), atol=1e-12)


class TestHolder:
    def test_zero(self, grid16):
        rep = holder_norm(PeriodicField.zeros(grid16, 1), 2, 0.5)
        assert rep.value == 0.0 and rep.seminorm == 0.0

    @pytest.mark.parametrize("lam", [1, 2, 4, 8])
    def test_c1_of_sine(self, grid32, lam):
        x1 = grid32.mesh()[0]
        rep = holder_norm(scalar(grid32, np.sin(lam * x1)), 1)
        assert rep.seminorms[1] == pytest.approx(lam, rel=0.01)

    def test_value_is_sum_of_seminorms(self, grid16, rng):
        f = random_band_limited(grid16, 0, 4, rng)
        rep = holder_norm(f, 1, 0.5)
        assert rep.value == pytest.approx(sum(rep.seminorms[:2]) + rep.seminorm)

    def test_interpolation_inequality(self, grid16):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(50):
            f = random_band_limited(grid16, 0, 5, rng)
            rep = holder_norm(f, 2)
            s0, s1, s2 = rep.seminorms
            worst = max(worst, s1 / (s0 ** 0.5 * s2 ** 0.5))
        assert worst <= 2.0

    @given(seed=st.integers(0, 2 ** 32 - 1), alpha=st.sampled_from([0.0, 0.25, 0.5]))
    def test_monotone_in_resolution(self, seed, alpha):
        g = Grid3(16)
        f = random_band_limited(g, 0, 5, np.random.default_rng(seed))
        fine = PeriodicField(Grid3(32), resample(f.data, 32), 0)
        assert holder_norm(fine, 0, alpha).seminorm >= holder_norm(f, 0, alpha).seminorm - 1e-12

    def test_c1_norm(self, grid32):
        x1 = grid32.mesh()[0]
        assert c1_norm(scalar(grid32, np.sin(2 * x1))) == pytest.approx(3.0, rel=1e-10)


class TestSnapshots:
    def test_roundtrip_bytes(self, tmp_path, grid16, rng):
        f = random_band_limited(grid16, 2, 3, rng)
        f = PeriodicField(grid16, f.data, 2, time=0.25, trace_free=False, name="R")
        p = save_snapshot(f, tmp_path / "R.field")
        g = load_snapshot(p)
        assert np.array_equal(g.data, f.data) and g.time == 0.25 and g.name == "R"
        assert snapshot_bytes(g) == p.read_bytes()

    def test_header_then_little_endian_payload(self, tmp_path, grid16):
        f = scalar(grid16, np.arange(16 ** 3, dtype=float).reshape(grid16.shape))
        raw = snapshot_bytes(f)
        head, payload = raw.split(b"\n", 1)
        assert b'"N": 16' in head
        assert np.frombuffer(payload[:16], "<f8").tolist() == [0.0, 1.0]

    def test_truncated_payload_rejected(self, tmp_path, grid16):
        p = save_snapshot(scalar(grid16, np.zeros(grid16.shape)), tmp_path / "s.field")
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(ValueError):
            load_snapshot(p)
