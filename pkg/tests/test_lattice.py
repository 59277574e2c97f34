"""Lattice arithmetic, unfolding identities and two-scale estimators."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homog2s.lattice import (
    GridFunction,
    LatticeError,
    SeparableTest,
    TEST_BATTERY,
    cell_index_set,
    lattice_decompose,
    two_scale_error,
    two_scale_pairing,
    unfold,
    unfold_integral_check,
    unfold_isometry_check,
)


def random_grid_function(n, rng, mask=None):
    vals = rng.standard_normal((n + 1, n + 1))
    gf = GridFunction(n, vals, mask=mask)
    return gf.zero_masked() if mask is not None else gf


class TestLatticeDecompose:
    def test_worked_example(self):
        anchor, frac = lattice_decompose(0.25, np.array([0.30, 0.70]))
        assert np.allclose(anchor, [0.25, 0.50], atol=1e-15)
        assert np.allclose(frac, [0.20, 0.80], atol=1e-12)

    def test_lattice_point(self):
        anchor, frac = lattice_decompose(0.5, np.array([0.50, 0.00]))
        assert np.allclose(anchor, [0.50, 0.00], atol=1e-15)
        assert np.allclose(frac, [0.0, 0.0], atol=1e-15)

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0),
           st.sampled_from([0.5, 0.25, 0.125, 1.0 / 3.0]))
    @settings(max_examples=200, deadline=None)
    def test_round_trip(self, x1, x2, eps):
        x = np.array([x1, x2])
        anchor, frac = lattice_decompose(eps, x)
        assert np.max(np.abs(anchor + eps * frac - x)) < 1e-14
        assert np.all(frac >= 0.0) and np.all(frac < 1.0 + 1e-12)


class TestCellIndexSet:
    @pytest.mark.parametrize("eps,rect,count,leftover", [
        (0.25, ((0, 1), (0, 1)), 16, 0.0),
        (0.25, ((0, 0.9), (0, 1)), 12, 0.15),
        (1.0 / 3.0, ((0, 1), (0, 1)), 9, 0.0),
    ])
    def test_counts_and_measure(self, eps, rect, count, leftover):
        s = cell_index_set(eps, rect)
        assert s.count == count
        assert s.leftover_measure == pytest.approx(leftover, abs=1e-12)


class TestUnfold:
    def test_constant_stays_constant(self):
        u = GridFunction.from_expression(16, lambda p: np.ones(p.shape[:-1]))
        tu = unfold(0.25, u)
        assert np.allclose(tu.values, 1.0)

    def test_eps_periodic_function_loses_x_dependence(self):
        eps = 0.25
        u = GridFunction.from_expression(64, lambda p: np.sin(2 * np.pi * p[..., 0] / eps))
        tu = unfold(eps, u)
        # every cell block carries the same y-profile sin(2 pi y1)
        ref = tu.values[0, 0]
        for i in range(4):
            for j in range(4):
                assert np.allclose(tu.values[i, j], ref, atol=1e-12)
        y = np.linspace(0, 1, tu.micro_resolution + 1)
        assert np.allclose(ref[:, 0], np.sin(2 * np.pi * y), atol=1e-12)

    def test_misaligned_grid_rejected(self):
        u = GridFunction.from_expression(10, lambda p: p[..., 0])
        with pytest.raises(LatticeError):
            unfold(0.25, u)

    def test_integral_identity_random(self):
        rng = np.random.default_rng(0)
        for eps in (0.25, 0.125):
            for _ in range(10):
                u = random_grid_function(64, rng)
                assert unfold_integral_check(eps, u) < 1e-12

    @pytest.mark.parametrize("p", [1, 2, np.inf])
    def test_norm_identity_random(self, p):
        rng = np.random.default_rng(1)
        for eps in (0.25, 0.125):
            u = random_grid_function(64, rng)
            assert unfold_isometry_check(eps, u, p) < 1e-12

    def test_norm_identity_with_mask(self):
        rng = np.random.default_rng(2)
        mask = np.ones((64, 64), dtype=bool)
        mask[10:14, 20:24] = False
        mask[40:44, 40:44] = False
        u = random_grid_function(64, rng, mask=mask)
        assert unfold_isometry_check(0.25, u, 2) < 1e-12
        assert unfold_integral_check(0.25, u) < 1e-12

    def test_linearity(self):
        rng = np.random.default_rng(3)
        u = random_grid_function(32, rng)
        v = random_grid_function(32, rng)
        a, b = 1.7, -0.4
        w = GridFunction(32, a * u.values + b * v.values)
        tw = unfold(0.25, w)
        assert np.allclose(tw.values, a * unfold(0.25, u).values + b * unfold(0.25, v).values,
                           rtol=1e-14, atol=1e-14)

    def test_multiplicativity(self):
        rng = np.random.default_rng(4)
        u = random_grid_function(32, rng)
        v = random_grid_function(32, rng)
        w = GridFunction(32, u.values * v.values)
        tw = unfold(0.25, w)
        assert np.allclose(tw.values, unfold(0.25, u).values * unfold(0.25, v).values,
                           rtol=1e-14, atol=1e-14)


class TestPairing:
    def test_oscillating_product(self):
        eps = 0.25
        n = int(16 / eps)
        u = GridFunction.from_expression(n, lambda p: np.sin(2 * np.pi * p[..., 0] / eps),
                                         kind="quad")
        phi = SeparableTest("sin*sin", lambda p: np.ones(p.shape[:-1]),
                            lambda p: np.sin(2 * np.pi * p[..., 0]))
        val = two_scale_pairing(eps, u, phi)
        assert val == pytest.approx(0.5, abs=2e-3)

    def test_macro_only_test_function(self):
        u = GridFunction.from_expression(32, lambda p: np.ones(p.shape[:-1]))
        phi = SeparableTest("x1*1", lambda p: p[..., 0], lambda p: np.ones(p.shape[:-1]))
        assert two_scale_pairing(0.125, u, phi) == pytest.approx(0.5, abs=1e-12)

    def test_indicator_measures_material_fraction(self):
        # perforated mask: one 2x2-element hole per 8-element cell at mesh 32
        n, nc = 32, 8
        mask = np.ones((n, n), dtype=bool)
        for ci in range(n // nc):
            for cj in range(n // nc):
                mask[ci * nc + 3:ci * nc + 5, cj * nc + 3:cj * nc + 5] = False
        u = GridFunction.from_expression(n, lambda p: np.ones(p.shape[:-1]), mask=mask)
        phi = SeparableTest("1*1", lambda p: np.ones(p.shape[:-1]),
                            lambda p: np.ones(p.shape[:-1]))
        assert two_scale_pairing(0.25, u, phi) == pytest.approx(15.0 / 16.0, abs=1e-3)

    def test_battery_size_and_separability(self):
        assert len(TEST_BATTERY) == 12
        x = np.array([[0.3, 0.4]])
        y = np.array([[0.1, 0.9]])
        for t in TEST_BATTERY:
            assert np.allclose(t(x, y), t.macro(x) * t.micro(y))


class TestTwoScaleError:
    @staticmethod
    def separable_seed(eps, n):
        g = lambda p: np.cos(np.pi * p[..., 0]) * (1.0 + 0.5 * p[..., 1])
        h = lambda p: 1.0 + 0.3 * np.sin(2 * np.pi * p[..., 0])
        u = GridFunction.from_expression(
            n, lambda p: g(p) * h(lattice_decompose(eps, p)[1]))
        u0 = lambda x, y: g(x) * h(y)
        return u, u0

    def test_zero_case(self):
        u = GridFunction.from_expression(32, lambda p: np.zeros(p.shape[:-1]))
        assert two_scale_error(0.25, u, lambda x, y: np.zeros(x.shape[:-1])) == 0.0

    def test_separable_error_decays_first_order(self):
        errs = []
        for eps in (0.25, 0.125, 0.0625, 0.03125):
            n = int(round(16 / eps))
            u, u0 = self.separable_seed(eps, n)
            errs.append(two_scale_error(eps, u, u0))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))
        assert orders.mean() >= 0.9

    def test_product_property_pairing(self):
        # strongly converging u times weakly converging v: the pairing of the
        # product approaches the integral of u0 * v0 against the test function
        eps_list = (0.25, 0.125, 0.0625)
        phi = SeparableTest("1*1", lambda p: np.ones(p.shape[:-1]),
                            lambda p: np.ones(p.shape[:-1]))
        gaps = []
        for eps in eps_list:
            n = int(round(16 / eps))
            u, _ = self.separable_seed(eps, n)
            vfun = lambda p: np.cos(2 * np.pi * lattice_decompose(eps, p)[1][..., 0])
            uv = GridFunction(n, u.values * GridFunction.from_expression(n, vfun).values)
            val = two_scale_pairing(eps, uv, phi)
            # exact integral of u0 * v0 over Omega x Y (cos-mode kills h's sine)
            target = 0.0
            gaps.append(abs(val - target))
        assert gaps[-1] < gaps[0]
        assert gaps[-1] < 5e-3
