import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fnlslab.lattice import (
    FREQUENCY,
    LatticeField,
    LatticeGrid,
    forward_transform,
    inverse_transform,
    lp_norm,
    sobolev_norm,
)
from fnlslab.operators import (
    ContinuumFunction,
    LPCutoff,
    QuadratureError,
    check_dyadic,
    discretize,
    dyadic_levels,
    eta,
    gaussian,
    gaussian_sobolev_norm,
    interpolate,
    interpolate_to_grid,
    lp_project,
    psi,
)

from conftest import random_field


def fine_l2(values, fine: LatticeGrid) -> float:
    return math.sqrt(fine.h**fine.d * math.fsum((np.abs(values) ** 2).ravel()))


def order_of(errs):
    return [math.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]


class TestDiscretize:
    def test_constant(self):
        g = LatticeGrid(2, 0.5, 8)
        f = ContinuumFunction(lambda c: np.full(np.broadcast_shapes(*(x.shape for x in c)), 3.0))
        u = discretize(f, g)
        assert np.max(np.abs(u.values - 3.0)) < 1e-14

    def test_linear_is_midpoint(self):
        g = LatticeGrid(1, 0.25, 16)
        u = discretize(ContinuumFunction(lambda c: c[0]), g)
        assert np.allclose(u.values, g.axis_points() + g.h / 2, atol=1e-14)

    def test_gaussian_origin_cell_against_gauss_32(self):
        t, w = np.polynomial.legendre.leggauss(32)
        y = 0.25 * (t + 1)
        one_d = 0.5 * np.sum(w * np.exp(-(y**2)))  # mean over [0, 0.5)
        g = LatticeGrid(3, 0.5, 16)
        f = gaussian(3)
        ref = one_d**3
        assert discretize(f, g).values[8, 8, 8] == pytest.approx(ref, rel=1e-13)
        assert discretize(f, g, use_analytic=False).values[8, 8, 8] == pytest.approx(ref, rel=1e-13)

    @pytest.mark.parametrize("d,h,m", [(1, 0.25, 32), (2, 0.5, 16), (3, 0.5, 8)])
    def test_analytic_average_agrees_with_quadrature(self, d, h, m):
        g = LatticeGrid(d, h, m)
        f = gaussian(d, a=0.7, amp=2 - 1j, center=[0.3] * d)
        a = discretize(f, g).values
        b = discretize(f, g, use_analytic=False).values
        assert np.max(np.abs(a - b)) < 1e-10

    def test_non_convergence_names_cell(self):
        g = LatticeGrid(1, 1.0, 8)
        f = ContinuumFunction(lambda c: np.sin(40 * c[0]) * ((c[0] > 1.3) & (c[0] < 1.9)))
        with pytest.raises(QuadratureError) as e:
            discretize(f, g)
        assert e.value.cell == (5,)


class TestInterpolate:
    def test_reproduces_lattice_values(self, rng):
        g = LatticeGrid(3, 0.5, 8)
        u = random_field(g, rng)
        pts = np.stack(np.meshgrid(*[g.axis_points()] * 3, indexing="ij"), -1).reshape(-1, 3)
        assert np.allclose(interpolate(u, pts), u.values.ravel(), atol=1e-15)

    def test_affine_exact_in_cell(self, rng):
        g = LatticeGrid(2, 0.5, 16)
        u = LatticeField(g, np.broadcast_to(g.points()[0], g.shape))
        y = rng.uniform(-3.9, 3.4, size=(50, 2))
        assert np.allclose(interpolate(u, y), y[:, 0], atol=1e-13)

    def test_constant(self, rng):
        g = LatticeGrid(3, 0.25, 8)
        u = LatticeField(g, np.full(g.shape, 1.5 + 2j))
        y = rng.uniform(-g.L, g.L, size=(20, 3))
        assert np.allclose(interpolate(u, y), 1.5 + 2j)

    def test_composition_shift(self, rng):
        g = LatticeGrid(1, 0.25, 32)
        u = discretize(ContinuumFunction(lambda c: c[0]), g)
        y = rng.uniform(-3.5, 3.5, size=(30, 1))
        assert np.allclose(interpolate(u, y) - y[:, 0], g.h / 2, atol=1e-13)

    def test_axis_difference_form_not_multilinear(self):
        g = LatticeGrid(2, 1.0, 8)
        v = np.zeros(g.shape)
        v[5, 5] = 1.0  # corner (1, 1) of the cell at the origin
        y = np.array([0.5, 0.5])
        assert interpolate(LatticeField(g, v), y) == 0.0  # bilinear would give 1/4

    def test_grid_matches_pointwise(self, rng):
        g = LatticeGrid(2, 0.5, 8)
        u = random_field(g, rng)
        fine = g.refine(4)
        a = interpolate_to_grid(u, fine).values.ravel()
        pts = np.stack(np.meshgrid(*[fine.axis_points()] * 2, indexing="ij"), -1).reshape(-1, 2)
        assert np.allclose(a, interpolate(u, pts), atol=1e-14)

    def test_l2_bound_random(self, rng):
        g = LatticeGrid(3, 0.5, 8)
        fine = g.refine(4)
        worst = 0.0
        for _ in range(100):
            u = random_field(g, rng)
            worst = max(worst, fine_l2(interpolate_to_grid(u, fine).values, fine) / lp_norm(u, 2))
        assert worst <= 2.0


class TestTransferEstimates:
    HS = [1 / 4, 1 / 8, 1 / 16, 1 / 32]

    def test_sobolev_oracle_closed_forms(self):
        for d, a in [(1, 1.0), (3, 0.25)]:
            l2 = (math.pi / (2 * a)) ** (d / 4)
            assert gaussian_sobolev_norm(d, a, 0) == pytest.approx(l2, rel=1e-12)
            assert gaussian_sobolev_norm(d, a, 1) == pytest.approx(l2 * math.sqrt(1 + a * d), rel=1e-12)

    @pytest.mark.parametrize("s", [0.0, 0.5, 1.0])
    def test_discretization_bounded(self, s):
        f = gaussian(3)
        ref = gaussian_sobolev_norm(3, 1.0, s)
        ratios = [sobolev_norm(discretize(f, LatticeGrid.from_box(3, h, 4.0)), s) / ref
                  for h in (1 / 2, 1 / 4, 1 / 8)]
        assert max(ratios) <= 1.5
        assert all(b <= a * 1.05 for a, b in zip(ratios, ratios[1:]))

    def test_interpolation_bounded_on_gaussians(self):
        ratios = []
        for h in (1 / 2, 1 / 4, 1 / 8):
            g = LatticeGrid.from_box(2, h, 4.0)
            u = discretize(gaussian(2), g)
            fine = g.refine(int(round(h * 64)))
            ratios.append(fine_l2(interpolate_to_grid(u, fine).values, fine) / lp_norm(u, 2))
        assert max(ratios) <= 2.0
        assert all(b <= a * 1.05 for a, b in zip(ratios, ratios[1:]))

    @pytest.mark.parametrize("d", [1, 2])
    def test_interp_discretize_first_order(self, d):
        f = gaussian(d)
        fine = LatticeGrid.from_box(d, 1 / 128, 4.0)
        exact = f.on_grid(fine)
        errs = []
        for h in self.HS:
            u = discretize(f, LatticeGrid.from_box(d, h, 4.0))
            errs.append(fine_l2(interpolate_to_grid(u, fine).values - exact, fine))
        assert min(order_of(errs)) >= 0.95

    def test_nonlinearity_commutator_rate(self):
        f = gaussian(2)
        fine = LatticeGrid.from_box(2, 1 / 128, 4.0)
        errs = []
        for h in self.HS:
            u = discretize(f, LatticeGrid.from_box(2, h, 4.0))
            cubic = u.with_values(np.abs(u.values) ** 2 * u.values)
            pu = interpolate_to_grid(u, fine).values
            diff = interpolate_to_grid(cubic, fine).values - np.abs(pu) ** 2 * pu
            errs.append(fine_l2(diff, fine))
        assert min(order_of(errs)) >= 0.95


class TestLittlewoodPaley:
    def test_psi_shape(self):
        r = np.linspace(0, 8, 2001)
        p = psi(r)
        assert np.all((p >= 0) & (p <= 1))
        assert np.all(p[r <= math.pi] == 1.0)
        assert np.all(p[r >= 2 * math.pi] == 0.0)
        assert np.all(np.diff(p) <= 0)

    @given(st.floats(0, 20))
    def test_eta_support(self, r):
        e = float(eta(r))
        assert -1e-15 <= e <= 1
        if r <= math.pi / 2 or r >= 2 * math.pi:
            assert e == 0

    @given(st.floats(1e-6, math.pi))
    def test_partition_scalar(self, r):
        total = sum(float(eta(r * 2**k)) for k in range(40))
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_partition_1d_zero_mean(self, rng):
        g = LatticeGrid(1, 0.5, 256)
        u = random_field(g, rng)
        u = u.with_values(u.values - u.values.mean())
        s = sum((lp_project(u, N) for N in dyadic_levels(g)), start=u * 0)
        assert np.max(np.abs(s.values - u.values)) < 1e-12 * np.max(np.abs(u.values))

    def test_partition_3d_band_limited(self, rng):
        g = LatticeGrid(3, 0.5, 32)
        uh = forward_transform(random_field(g, rng)).values
        mask = (g.h**2 * g.freq_norm2() <= math.pi**2) & (g.freq_norm2() > 0)
        u = inverse_transform(LatticeField(g, uh * mask, FREQUENCY))
        s = sum((lp_project(u, N) for N in dyadic_levels(g)), start=u * 0)
        assert np.max(np.abs(s.values - u.values)) < 1e-12 * np.max(np.abs(u.values))

    def test_block_support(self, rng):
        g = LatticeGrid(2, 0.5, 64)
        N = 0.25
        r = g.h * np.sqrt(g.freq_norm2()) / N
        uh = forward_transform(random_field(g, rng)).values * ((r >= math.pi) & (r <= 2 * math.pi))
        u = inverse_transform(LatticeField(g, uh, FREQUENCY))
        assert np.max(np.abs((lp_project(u, N) + lp_project(u, 2 * N) - u).values)) < 1e-12
        for Np in (N / 4, N / 8):
            assert np.max(np.abs(lp_project(u, Np).values)) < 1e-14

    def test_not_idempotent(self, rng):
        g = LatticeGrid(1, 0.5, 64)
        u = random_field(g, rng)
        once = lp_project(u, 0.5)
        assert lp_norm(lp_project(once, 0.5) - once, 2) > 1e-3 * lp_norm(once, 2)

    @pytest.mark.parametrize("N", [1, 0.5, 1 / 8])
    def test_l2_contraction(self, rng, N):
        g = LatticeGrid(3, 0.5, 16)
        for _ in range(5):
            u = random_field(g, rng)
            assert lp_norm(lp_project(u, N), 2) <= lp_norm(u, 2)

    @pytest.mark.parametrize("N", [0.3, 2.0, 0.0, -0.5])
    def test_rejects_non_dyadic(self, N):
        with pytest.raises(ValueError):
            LPCutoff(N)

    def test_dyadic_exponent(self):
        assert [check_dyadic(2.0**-k) for k in range(5)] == list(range(5))

    def test_levels_reach_lowest_frequency(self):
        g = LatticeGrid(2, 0.5, 64)
        low = dyadic_levels(g)[-1]
        assert psi(2 * g.h * g.dxi / low) == 0.0
