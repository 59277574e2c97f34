"""Cell map, transformations and their Jacobians against independent oracles."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homog2s.geometry import (
    CellTransform,
    EpsTransform,
    GeometryError,
    LimitTransform,
    PorosityField,
    ReferenceCell,
    displacement_consistency,
    displacement_lipschitz,
    invert_2x2,
    jacobian_bounds,
    operator_norm_2x2,
    unfold_transform_gaps,
)

CELL = ReferenceCell()
TR = CellTransform(CELL)
THETA_REF = 15.0 / 16.0


def fd_jacobian(theta, y, step=1e-5):
    """Central finite-difference oracle for the cell-map Jacobian."""
    y = np.asarray(y, dtype=float)
    cols = []
    for k in range(2):
        e = np.zeros(2)
        e[k] = step
        cols.append((TR.map(theta, y + e) - TR.map(theta, y - e)) / (2 * step))
    return np.stack(cols, axis=-1)


class TestCellMap:
    def test_reference_porosity_is_identity(self):
        y = np.array([0.30, 0.70])
        assert np.allclose(TR.map(THETA_REF, y), y, atol=1e-14)

    def test_identity_outside_blend_radius(self):
        y = np.array([0.95, 0.50])
        for theta in (0.80, 0.875, 0.97):
            assert np.array_equal(TR.map(theta, y), y)

    def test_blend_region_matches_profile(self):
        theta = 0.90
        y = np.array([0.5, 0.25])
        out = TR.map(theta, y)
        r_out = np.max(np.abs(out - 0.5))
        assert r_out == pytest.approx(float(TR.profile(theta, 0.25)), abs=1e-14)

    def test_profile_monotone_by_dense_sampling(self):
        rs = np.linspace(0.0, 0.5, 4001)
        for theta in (0.80, 0.85, 0.90, THETA_REF, 0.97):
            rho = TR.profile(theta, rs)
            assert np.all(np.diff(rho) > 0)
            assert TR.min_profile_slope(theta, theta) >= 0.1

    def test_hole_boundary_maps_to_deformed_hole_boundary(self):
        theta = 0.85
        h = float(TR.halfwidth(theta))
        y = np.array([0.5 + 0.125, 0.52])  # on the reference hole edge, off corners
        out = TR.map(theta, y)
        assert np.max(np.abs(out - 0.5)) == pytest.approx(h, abs=1e-14)

    def test_out_of_range_porosity_rejected(self):
        with pytest.raises(GeometryError):
            TR.validate_theta_range(0.30, 0.95)
        with pytest.raises(GeometryError):
            TR.validate_theta_range(0.60, 0.95)  # non-monotone Hermite range

    def test_admissible_range_accepted(self):
        TR.validate_theta_range(0.80, 0.97)

    def test_determinant_floor_rejects_tiny_holes(self):
        # near theta = 1 the hole-edge compression drops det below c_J = 0.2
        with pytest.raises(GeometryError):
            TR.validate_theta_range(0.995, 0.999)


class TestCellJacobian:
    def test_identity_at_reference_porosity(self):
        jac, det = TR.jacobian(THETA_REF, np.array([0.31, 0.62]))
        assert np.allclose(jac, np.eye(2), atol=1e-13)
        assert det == pytest.approx(1.0, abs=1e-13)

    def test_identity_outside_blend_radius(self):
        jac, det = TR.jacobian(0.85, np.array([0.05, 0.40]))
        assert np.array_equal(jac, np.eye(2))
        assert det == 1.0

    @pytest.mark.parametrize("theta,y", [
        (0.90, (0.5, 0.25)),
        (0.85, (0.62, 0.41)),
        (0.97, (0.68, 0.55)),
        (0.82, (0.44, 0.71)),
        (0.90, (0.55, 0.57)),   # inside the scaled hole region
    ])
    def test_matches_finite_differences(self, theta, y):
        jac, det = TR.jacobian(theta, np.array(y))
        ref = fd_jacobian(theta, y)
        assert np.allclose(jac, ref, rtol=1e-6, atol=1e-8)
        assert det == pytest.approx(float(np.linalg.det(ref)), rel=1e-6)

    @given(theta=st.floats(0.80, 0.99), y1=st.floats(0.01, 0.99), y2=st.floats(0.01, 0.99))
    @settings(max_examples=60, deadline=None)
    def test_determinant_positive_and_consistent(self, theta, y1, y2):
        if abs(abs(y1 - 0.5) - abs(y2 - 0.5)) < 1e-3:
            return  # stay off the inf-norm kink diagonals
        jac, det = TR.jacobian(theta, np.array([y1, y2]))
        assert det > 0.05
        assert det == pytest.approx(float(np.linalg.det(jac)), rel=1e-12)

    def test_bounds_helper(self):
        t = np.linspace(0.0, 1.0, 65)[1:-1]
        yy1, yy2 = np.meshgrid(t, t, indexing="ij")
        pts = np.stack([yy1, yy2], axis=-1).reshape(-1, 2)
        b = jacobian_bounds(TR, 0.85, pts)
        assert b["det_min"] >= 0.2
        assert b["psi_norm_max"] <= 4.0
        assert b["psi_inv_norm_max"] <= 6.0


class TestMatrixHelpers:
    @given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
    @settings(max_examples=50, deadline=None)
    def test_inverse_and_norm(self, entries):
        m = np.array(entries).reshape(2, 2)
        if abs(np.linalg.det(m)) < 1e-3:
            return
        assert np.allclose(invert_2x2(m), np.linalg.inv(m), rtol=1e-10, atol=1e-12)
        assert operator_norm_2x2(m) == pytest.approx(np.linalg.norm(m, 2), rel=1e-10)


class TestEpsTransform:
    def demo(self, eps=0.25, porosity=None):
        porosity = porosity or PorosityField.sinusoidal(0.875, 0.0625)
        return EpsTransform(eps=eps, transform=TR, porosity=porosity)

    def test_identity_configuration(self):
        tf = self.demo(porosity=PorosityField.constant(THETA_REF))
        x = np.array([0.30, 0.70])
        assert np.allclose(tf.map(x), x, atol=1e-14)

    def test_noninteger_inverse_eps_rejected(self):
        with pytest.raises(Exception):
            EpsTransform(eps=0.3, transform=TR, porosity=PorosityField.constant(THETA_REF))

    def test_displacement_bound(self):
        tf = self.demo(eps=0.125)
        rng = np.random.default_rng(7)
        x = rng.random((10_000, 2))
        disp = np.linalg.norm(tf.displacement(x), axis=-1)
        # the rescaled displacement cannot exceed the largest cell displacement
        t = np.linspace(0.0, 1.0, 41)
        yy1, yy2 = np.meshgrid(t, t, indexing="ij")
        ys = np.stack([yy1, yy2], axis=-1).reshape(-1, 2)
        lo, hi = tf.porosity.range()
        cap = max(np.linalg.norm(TR.displacement(th, ys), axis=-1).max()
                  for th in np.linspace(lo, hi, 9))
        assert disp.max() / tf.eps <= cap + 1e-12

    def test_maps_cells_into_themselves(self):
        tf = self.demo(eps=0.125)
        rng = np.random.default_rng(3)
        x = rng.random((5000, 2))
        out = tf.map(x)
        assert np.all(np.floor(x / tf.eps) == np.floor(out / tf.eps + 1e-12))

    def test_jacobian_positive_on_dense_sample(self):
        tf = self.demo(eps=0.125)
        t = (np.arange(160) + 0.43) / 160
        xx, yy = np.meshgrid(t, t, indexing="ij")
        x = np.stack([xx, yy], axis=-1)
        _, det = tf.jacobian(x)
        assert det.min() >= 0.2

    def test_inverse_round_trip(self):
        tf = self.demo(eps=0.125)
        rng = np.random.default_rng(11)
        x = rng.random((1000, 2))
        z = tf.map(x)
        back = tf.inverse(z)
        assert np.max(np.linalg.norm(back - x, axis=-1)) < 1e-10

    def test_inverse_of_identity_is_input(self):
        tf = self.demo(porosity=PorosityField.constant(THETA_REF))
        z = np.array([[0.13, 0.27], [0.91, 0.44]])
        assert np.allclose(tf.inverse(z), z, atol=1e-12)

    def test_deformed_hole_boundary_inverts_to_reference(self):
        tf = self.demo(eps=0.25, porosity=PorosityField.constant(0.85))
        y = np.array([0.625, 0.55])  # reference hole boundary point, off corners
        x = 0.25 * y + np.array([0.25, 0.5])
        z = tf.map(x)
        back = tf.inverse(z)
        assert np.max(np.abs(back - x)) < 1e-8


class TestLimitTransform:
    def demo(self):
        return LimitTransform(transform=TR, porosity=PorosityField.sinusoidal(0.875, 0.0625))

    def test_identity_where_theta_is_reference(self):
        lt = LimitTransform(TR, PorosityField.constant(THETA_REF))
        y = np.array([0.4, 0.27])
        assert np.allclose(lt.map(np.array([0.3, 0.3]), y), y, atol=1e-14)

    def test_jacobian_floor_on_grid(self):
        lt = self.demo()
        t = (np.arange(64) + 0.37) / 64
        xx, yy = np.meshgrid(t, t, indexing="ij")
        x = np.stack([xx, yy], axis=-1).reshape(-1, 2)
        _, det = lt.jacobian(x[:, None, :], x[None, : , :])
        assert det.min() >= 0.2

    def test_displacement_inverse_identity(self):
        lt = self.demo()
        rng = np.random.default_rng(5)
        x = rng.random((200, 2))
        y = rng.random((200, 2))
        pre = lt.inverse(x, y)
        lhs = lt.transform.displacement(lt.theta(x), pre)
        rhs = -lt.inverse_displacement(x, y)
        assert np.max(np.abs(lhs - rhs)) < 1e-10

    def test_membership(self):
        lt = LimitTransform(TR, PorosityField.constant(0.85))
        x = np.array([0.5, 0.5])
        h = float(TR.halfwidth(0.85))
        inside = np.array([0.5 + 0.5 * h, 0.5])
        outside = np.array([0.95, 0.5])
        assert not lt.contains(x, inside)
        assert lt.contains(x, outside)


class TestTwoScaleDiagnostics:
    def test_displacement_consistency_decreases(self):
        porosity = PorosityField.sinusoidal(0.875, 0.0625)
        gaps = [displacement_consistency(EpsTransform(e, TR, porosity))
                for e in (0.25, 0.125, 0.0625, 0.03125)]
        assert all(a > b for a, b in zip(gaps, gaps[1:]))
        lip = displacement_lipschitz(TR, *porosity.range())
        for eps, gap in zip((0.25, 0.125, 0.0625, 0.03125), gaps):
            assert gap <= lip * porosity.modulus(np.sqrt(2.0) * eps) + 1e-12

    def test_unfolded_jacobian_gaps_decrease(self):
        porosity = PorosityField.sinusoidal(0.875, 0.0625)
        rows = [unfold_transform_gaps(EpsTransform(e, TR, porosity), y_resolution=8)
                for e in (0.25, 0.125, 0.0625, 0.03125)]
        jg = [r["jacobian_gap"] for r in rows]
        pg = [r["inverse_jacobian_gap"] for r in rows]
        assert all(a > b for a, b in zip(jg, jg[1:]))
        assert all(a > b for a, b in zip(pg, pg[1:]))

    def test_constant_porosity_has_zero_gap(self):
        porosity = PorosityField.constant(0.875)
        gaps = unfold_transform_gaps(EpsTransform(0.25, TR, porosity), y_resolution=8)
        assert gaps["jacobian_gap"] < 1e-13
        assert gaps["inverse_jacobian_gap"] < 1e-13


class TestReferenceCell:
    def test_theta_ref_value(self):
        assert CELL.theta_ref == pytest.approx(15.0 / 16.0)

    def test_alignment_check(self):
        CELL.assert_grid_aligned(8)
        CELL.assert_grid_aligned(16)
        with pytest.raises(GeometryError):
            CELL.assert_grid_aligned(12)

    def test_invalid_cells_rejected(self):
        with pytest.raises(GeometryError):
            ReferenceCell(hole_halfwidth=0.4)
        with pytest.raises(GeometryError):
            ReferenceCell(hole_halfwidth=0.2, blend_radius=0.1)

    def test_solid_cell(self):
        solid = ReferenceCell(hole_halfwidth=0.0)
        assert not solid.has_hole
        assert solid.theta_ref == 1.0
        tr = CellTransform(solid)
        y = np.array([[0.3, 0.4], [0.5, 0.5]])
        assert np.array_equal(tr.map(1.0, y), y)
        tr.validate_theta_range(1.0, 1.0)
