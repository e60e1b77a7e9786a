import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polykin.core import (BoundaryDensityPair, GridSpec, MassLedger,
                          PhaseField, PhasePoint, ReducedField,
                          integrate_field, make_ledger, wrap_angle)


def make_grid(**kw):
    args = dict(x1_min=-2.0, x1_max=2.0, n_x1=16, x2_max=2.0, n_x2=17,
                n_theta=16, dt=0.05)
    args.update(kw)
    return GridSpec(**args)


class TestWrapAngle:
    def test_identity(self):
        assert wrap_angle(0.0) == 0.0

    def test_periodicity(self):
        assert wrap_angle(2 * math.pi + 0.5) == pytest.approx(0.5, abs=1e-12)

    def test_half_open_convention(self):
        assert wrap_angle(math.pi) == -math.pi

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            wrap_angle(math.inf)

    @given(st.floats(-50.0, 50.0))
    def test_idempotent_and_in_range(self, th):
        w = wrap_angle(th)
        assert -math.pi <= w < math.pi
        assert wrap_angle(w) == w

    @given(st.floats(-10.0, 10.0))
    def test_congruent_mod_2pi(self, th):
        w = wrap_angle(th)
        assert math.isclose(math.sin(w), math.sin(th), abs_tol=1e-9)
        assert math.isclose(math.cos(w), math.cos(th), abs_tol=1e-9)


class TestGridSpec:
    def test_special_angles_are_nodes(self):
        g = make_grid()
        assert g.theta[g.k_theta_minus_pi] == -math.pi
        assert g.theta[g.k_theta_zero] == 0.0
        assert g.theta[g.k_theta_minus_half_pi] == pytest.approx(
            -math.pi / 2, abs=1e-15)
        assert g.sin_theta[g.k_theta_zero] == 0.0
        assert g.sin_theta[g.k_theta_minus_pi] == 0.0
        assert g.sin_theta[g.k_theta_minus_half_pi] == -1.0

    def test_rejects_odd_theta_count(self):
        with pytest.raises(ValueError):
            make_grid(n_theta=18)

    def test_rejects_small_counts(self):
        with pytest.raises(ValueError):
            make_grid(n_x1=2)

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            make_grid(dt=-0.1)

    def test_wall_node_present(self):
        g = make_grid()
        assert g.x2[0] == 0.0
        assert g.x2[-1] == pytest.approx(g.x2_max)

    def test_theta_index_roundtrip(self):
        g = make_grid()
        for k in range(g.n_theta):
            assert g.theta_index(g.theta[k]) == k


class TestPhasePoint:
    def test_wraps_angle(self):
        p = PhasePoint(0.0, 1.0, 3 * math.pi)
        assert p.theta == pytest.approx(-math.pi)

    def test_rejects_below_wall(self):
        with pytest.raises(ValueError):
            PhasePoint(0.0, -0.1, 0.0)


class TestIntegrateField:
    def test_zero_field(self):
        g = make_grid()
        f = PhaseField(np.zeros((g.n_x1, g.n_x2, g.n_theta)), g)
        assert integrate_field(f) == 0.0

    def test_constant_field_measures_domain(self):
        g = make_grid()
        f = PhaseField(np.ones((g.n_x1, g.n_x2, g.n_theta)), g)
        vol = g.n_x1 * g.n_x2 * g.n_theta * g.cell_measure
        assert integrate_field(f) == pytest.approx(vol, rel=1e-13)

    def test_single_cell(self):
        g = make_grid()
        vals = np.zeros((g.n_x1, g.n_x2, g.n_theta))
        vals[3, 5, 7] = 4.0
        assert integrate_field(PhaseField(vals, g)) == pytest.approx(
            4.0 * g.cell_measure, rel=1e-14)

    def test_reduced_field(self):
        g = make_grid()
        vals = np.ones((g.n_x2, g.n_theta))
        got = integrate_field(ReducedField(vals, g))
        assert got == pytest.approx(g.n_x2 * g.n_theta
                                    * g.reduced_cell_measure, rel=1e-13)

    def test_linearity(self):
        g = make_grid()
        rng = np.random.default_rng(3)
        a = rng.random((g.n_x1, g.n_x2, g.n_theta))
        b = rng.random((g.n_x1, g.n_x2, g.n_theta))
        lhs = integrate_field(PhaseField(2.0 * a + 3.0 * b, g))
        rhs = 2.0 * integrate_field(PhaseField(a, g)) \
            + 3.0 * integrate_field(PhaseField(b, g))
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_shape_mismatch_rejected(self):
        g = make_grid()
        with pytest.raises(ValueError):
            PhaseField(np.zeros((3, 3, 3)), g)

    def test_negative_rejected(self):
        g = make_grid()
        vals = np.zeros((g.n_x1, g.n_x2, g.n_theta))
        vals[0, 0, 0] = -1.0
        with pytest.raises(ValueError):
            PhaseField(vals, g)


class TestMassLedger:
    def test_zero_state(self):
        g = make_grid()
        f = PhaseField(np.zeros((g.n_x1, g.n_x2, g.n_theta)), g)
        b = BoundaryDensityPair.zeros(g)
        assert make_ledger(f, b, 0.0).total == 0.0

    def test_additivity(self):
        g = make_grid()
        vals = np.zeros((g.n_x1, g.n_x2, g.n_theta))
        vals[1, 2, 3] = 0.7 / g.cell_measure
        f = PhaseField(vals, g)
        rp = np.zeros(g.n_x1)
        rp[0] = 0.2 / g.dx1
        rm = np.zeros(g.n_x1)
        rm[1] = 0.1 / g.dx1
        led = make_ledger(f, BoundaryDensityPair(rp, rm, g), 0.0)
        assert led.total == pytest.approx(1.0, rel=1e-12)
        # additivity identity is exact arithmetic
        assert led.total == led.interior + led.trapped_plus \
            + led.trapped_minus + led.escaped_top

    def test_negative_escape_rejected(self):
        g = make_grid()
        f = PhaseField(np.zeros((g.n_x1, g.n_x2, g.n_theta)), g)
        with pytest.raises(ValueError):
            make_ledger(f, BoundaryDensityPair.zeros(g), -0.5)

    def test_ledger_validates_parts(self):
        with pytest.raises(ValueError):
            MassLedger(-1.0, 0.0, 0.0, 0.0)
