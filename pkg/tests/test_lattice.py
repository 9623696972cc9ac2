import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fnlslab.lattice import (
    FREQUENCY,
    GridMismatchError,
    LatticeField,
    LatticeGrid,
    apply_multiplier,
    build_symbol,
    compensated_sum,
    discrete_laplacian,
    dual_l2_norm,
    forward_transform,
    inverse_transform,
    load_field,
    lp_norm,
    omega_h_at,
    save_field,
    sobolev_norm,
)

from conftest import direct_forward, direct_inverse, random_field


def rel(a, b):
    return np.linalg.norm(np.ravel(a - b)) / np.linalg.norm(np.ravel(b))


class TestGrid:
    def test_box_relation(self):
        g = LatticeGrid(3, 0.25, 64)
        assert g.L == 8.0
        assert g.m * g.h == 2 * g.L
        assert LatticeGrid.from_box(3, 0.25, 8.0) == g

    @pytest.mark.parametrize("m", [4, 12, 100])
    def test_rejects_bad_m(self, m):
        with pytest.raises(ValueError):
            LatticeGrid(1, 1.0, m)

    def test_rejects_bad_dim_and_h(self):
        with pytest.raises(ValueError):
            LatticeGrid(4, 1.0, 8)
        with pytest.raises(ValueError):
            LatticeGrid(1, 0.0, 8)

    def test_dual_grid_range(self):
        g = LatticeGrid(1, 0.5, 16)
        k = g.axis_freqs()
        assert k[0] == pytest.approx(-math.pi / g.h)
        assert k[-1] < math.pi / g.h
        assert g.dxi == pytest.approx(math.pi / g.L)


class TestTransforms:
    def test_delta_maps_to_one(self):
        g = LatticeGrid(3, 0.5, 8)
        v = np.zeros(g.shape)
        v[4, 4, 4] = 1 / g.h**3
        uh = forward_transform(LatticeField(g, v))
        assert np.allclose(uh.values, 1.0, atol=1e-14)

    def test_constant_maps_to_zero_frequency(self):
        g = LatticeGrid(2, 0.5, 16)
        uh = forward_transform(LatticeField(g, np.full(g.shape, 3.0)))
        expect = np.zeros(g.shape, complex)
        expect[8, 8] = 3.0 * (2 * g.L) ** 2
        assert np.allclose(uh.values, expect, atol=1e-11)

    def test_parseval_against_direct_sums(self, rng):
        g = LatticeGrid(1, 0.5, 16)
        u = random_field(g, rng)
        uh_direct = direct_forward(u)
        lhs = (g.dxi / (2 * math.pi)) * math.fsum(np.abs(uh_direct).ravel() ** 2)
        rhs = g.h * math.fsum(np.abs(u.values).ravel() ** 2)
        assert lhs == pytest.approx(rhs, rel=1e-12)
        assert rel(forward_transform(u).values, uh_direct) < 1e-12

    @pytest.mark.parametrize("d,h,m", [(1, 0.5, 64), (2, 0.25, 32), (3, 1.0, 16)])
    def test_parseval_all_dims(self, rng, d, h, m):
        g = LatticeGrid(d, h, m)
        u = random_field(g, rng)
        assert dual_l2_norm(forward_transform(u)) == pytest.approx(lp_norm(u, 2), rel=1e-12)

    @pytest.mark.parametrize("d,m", [(1, 32), (2, 16), (3, 8)])
    def test_matches_direct_summation(self, rng, d, m):
        g = LatticeGrid(d, 0.7, m)
        u = random_field(g, rng)
        assert rel(forward_transform(u).values, direct_forward(u)) < 1e-12
        f = forward_transform(u).values
        assert rel(inverse_transform(LatticeField(g, f, FREQUENCY)).values, direct_inverse(f, g)) < 1e-12

    @pytest.mark.parametrize("d,m", [(1, 256), (2, 64), (3, 16)])
    def test_round_trip(self, rng, d, m):
        g = LatticeGrid(d, 0.3, m)
        u = random_field(g, rng)
        back = inverse_transform(forward_transform(u))
        assert rel(back.values, u.values) < 1e-12

    def test_inverse_of_constant_is_delta(self):
        g = LatticeGrid(2, 0.5, 8)
        u = inverse_transform(LatticeField(g, np.ones(g.shape), FREQUENCY))
        expect = np.zeros(g.shape)
        expect[4, 4] = 1 / g.h**2
        assert np.allclose(u.values, expect, atol=1e-13)

    def test_inverse_of_plane_wave_is_shifted_delta(self):
        g = LatticeGrid(2, 0.5, 16)
        x0 = (g.h * 3, -g.h * 5)
        xi = g.freqs()
        f = np.exp(-1j * (x0[0] * xi[0] + x0[1] * xi[1]))
        u = inverse_transform(LatticeField(g, f, FREQUENCY))
        expect = np.zeros(g.shape)
        expect[8 + 3, 8 - 5] = 1 / g.h**2
        assert np.allclose(u.values, expect, atol=1e-12)
        assert np.allclose(direct_inverse(f, g), expect, atol=1e-12)

    def test_side_checks(self, rng):
        g = LatticeGrid(1, 1.0, 8)
        u = random_field(g, rng)
        with pytest.raises(ValueError):
            inverse_transform(u)
        with pytest.raises(ValueError):
            forward_transform(forward_transform(u))


class TestNorms:
    def test_single_site(self):
        g = LatticeGrid(3, 0.5, 8)
        v = np.zeros(g.shape)
        v[1, 2, 3] = 1
        assert lp_norm(LatticeField(g, v), 2) == pytest.approx(0.5**1.5, rel=1e-15)

    def test_sup_of_constant(self):
        g = LatticeGrid(1, 1.0, 8)
        assert lp_norm(LatticeField(g, np.ones(8)), math.inf) == 1.0

    @pytest.mark.parametrize("p", [1, 2, 3, 4.5])
    def test_against_fsum(self, rng, p):
        g = LatticeGrid(2, 0.25, 64)
        u = random_field(g, rng)
        ref = g.h ** (g.d / p) * math.fsum((np.abs(u.values) ** p).ravel()) ** (1 / p)
        assert lp_norm(u, p) == pytest.approx(ref, rel=1e-14)

    def test_rejects_p_below_one(self, rng):
        u = random_field(LatticeGrid(1, 1.0, 8), rng)
        with pytest.raises(ValueError):
            lp_norm(u, 0.5)

    @given(st.one_of(st.just(0.0), st.floats(1e-100, 50), st.floats(-50, -1e-100)), st.integers(0, 2**31))
    @settings(max_examples=25, deadline=None)
    def test_homogeneous(self, c, seed):
        g = LatticeGrid(1, 0.5, 32)
        u = random_field(g, np.random.default_rng(seed))
        for p in (1, 2, math.inf):
            assert lp_norm(u * c, p) == pytest.approx(abs(c) * lp_norm(u, p), rel=1e-12, abs=1e-300)

    @pytest.mark.parametrize("d,h", [(1, 0.5), (2, 0.25), (3, 1.0)])
    def test_sup_embedding(self, rng, d, h):
        for _ in range(5):
            u = random_field(LatticeGrid(d, h, 16), rng)
            assert lp_norm(u, math.inf) <= h ** (-d / 2) * lp_norm(u, 2)

    def test_compensated_sum_is_exact_on_cancellation(self):
        a = np.array([1e16, 1.0, -1e16] * 1000)
        assert compensated_sum(a) == 1000.0
        # long arrays: per-block error is pairwise, the block totals are summed exactly
        b = np.random.default_rng(1).standard_normal(10**6)
        assert abs(compensated_sum(b) - math.fsum(b.tolist())) < 1e-11
        assert compensated_sum(np.ones(10**6) * 0.1) == pytest.approx(1e5, rel=1e-15)


class TestSobolev:
    def test_s_zero_is_l2(self, rng):
        u = random_field(LatticeGrid(2, 0.5, 32), rng)
        assert sobolev_norm(u, 0) == pytest.approx(lp_norm(u, 2), rel=1e-12)

    def test_delta_s_one(self):
        g = LatticeGrid(1, 1.0, 8)
        v = np.zeros(8)
        v[4] = 1.0
        u = LatticeField(g, v)
        uh = direct_forward(u)
        xi = g.axis_freqs()
        ref = math.sqrt(g.dxi / (2 * math.pi) * math.fsum((1 + xi**2) * np.abs(uh) ** 2))
        assert sobolev_norm(u, 1) == pytest.approx(ref, rel=1e-13)

    def test_monotone_in_s(self, rng):
        for _ in range(5):
            u = random_field(LatticeGrid(3, 0.5, 8), rng)
            assert sobolev_norm(u, 2) >= sobolev_norm(u, 0)


class TestSymbols:
    def test_corner_value_alpha_two(self):
        g = LatticeGrid(3, 1.0, 8)
        sym = build_symbol(g, 2.0, "omega_h")
        # index 0 is xi = -pi/h on every axis
        assert sym.values[0, 0, 0] == pytest.approx(12.0, rel=1e-14)

    @pytest.mark.parametrize("alpha", [0.5, 1.5, 2.0])
    def test_vanishes_at_origin_and_nonnegative(self, alpha):
        g = LatticeGrid(2, 0.5, 16)
        for kind in ("omega_h", "omega_continuum"):
            sym = build_symbol(g, alpha, kind)
            assert sym.values[8, 8] == 0
            assert np.all(sym.values >= 0)

    @pytest.mark.parametrize("alpha", [0.0, -1.0, 2.5])
    def test_rejects_alpha(self, alpha):
        with pytest.raises(ValueError):
            build_symbol(LatticeGrid(1, 1.0, 8), alpha, "omega_h")

    def test_symbol_converges_at_second_order(self):
        xi = np.array([1.0, 0.0, 0.0])
        hs = [0.25, 0.125, 0.0625]
        gaps = [abs(float(omega_h_at(xi, h, 1.5)) - 1.0) for h in hs]
        orders = [math.log2(gaps[i] / gaps[i + 1]) for i in range(2)]
        assert min(orders) >= 1.9
        assert gaps[1] / gaps[2] == pytest.approx(4.0, rel=0.02)

    def test_lattice_grad_matches_power_of_omega(self):
        g = LatticeGrid(3, 0.5, 16)
        a = build_symbol(g, 1.5, "lattice_grad", s=0.375).values
        b = build_symbol(g, 1.5, "omega_h").values ** (0.375 / 1.5)
        assert np.allclose(a, b, rtol=1e-13, atol=1e-15)


class TestMultipliers:
    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_alpha_two_is_stencil(self, rng, d):
        g = LatticeGrid(d, 0.37, 16)
        u = random_field(g, rng)
        a = apply_multiplier(u, build_symbol(g, 2.0, "omega_h"))
        b = discrete_laplacian(u) * -1
        assert np.max(np.abs(a.values - b.values)) <= 1e-10 * np.max(np.abs(b.values))

    def test_identity(self, rng):
        g = LatticeGrid(2, 0.5, 16)
        u = random_field(g, rng)
        out = apply_multiplier(u, build_symbol(g, 1.5), lambda w: np.ones_like(w))
        assert rel(out.values, u.values) < 1e-14

    def test_commute(self, rng):
        g = LatticeGrid(3, 0.5, 16)
        u = random_field(g, rng)
        s1 = build_symbol(g, 1.5)
        s2 = build_symbol(g, kind="bracket", s=1.0)
        f = lambda w: np.exp(-0.7j * w)
        ab = apply_multiplier(apply_multiplier(u, s1, f), s2)
        ba = apply_multiplier(apply_multiplier(u, s2), s1, f)
        assert rel(ab.values, ba.values) < 1e-12

    def test_linear(self, rng):
        g = LatticeGrid(1, 0.5, 32)
        u, w = random_field(g, rng), random_field(g, rng)
        s = build_symbol(g, 1.3)
        lhs = apply_multiplier(u * 2.0 + w * 3j, s)
        rhs = apply_multiplier(u, s) * 2.0 + apply_multiplier(w, s) * 3j
        assert rel(lhs.values, rhs.values) < 1e-13

    def test_grid_mismatch(self, rng):
        u = random_field(LatticeGrid(1, 0.5, 32), rng)
        with pytest.raises(GridMismatchError):
            apply_multiplier(u, build_symbol(LatticeGrid(1, 0.25, 32), 1.5))


def test_binary_dump_round_trip(tmp_path, rng):
    g = LatticeGrid(2, 0.25, 16)
    u = random_field(g, rng)
    p = save_field(u, tmp_path / "u.bin", label="random")
    raw = np.fromfile(p, dtype="<f8")
    assert raw.size == 2 * g.size
    assert raw[0] == u.values[0, 0].real and raw[1] == u.values[0, 0].imag
    assert raw[2] == u.values[0, 1].real
    back = load_field(p)
    assert back.grid == g and back.side == "physical"
    assert np.array_equal(back.values, u.values)
