"""Parameter box, properness rules and the worst-case generator."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ngaffine.model import (
    ImproperParameterBox,
    ModelPoint,
    ParameterBox,
    PropernessCase,
    StateSpace,
    classify_properness,
    corner_models,
    diffusion_interval,
    drift_interval,
    eval_G,
    eval_G_separable,
    eval_generator,
    instantiate_model,
)

BOX5 = ParameterBox(0.05, 0.15, -3.0, -0.5, 0.01, 0.02, 0.0, 0.0, 0.5, 0.5)


def dense_grid_sup(box, y, p, q, n=50):
    """Oracle: supremum over a dense n-per-axis grid including the corners.

    Drift and diffusion coordinates are independent, so the joint-grid
    supremum equals the sum of the two partial suprema computed here.
    """
    b0 = np.linspace(box.b0_lo, box.b0_hi, n)
    b1 = np.linspace(box.b1_lo, box.b1_hi, n)
    drift = ((b0[:, None] + b1[None, :] * y) * p).max()
    a0 = np.linspace(box.a0_lo, box.a0_hi, n)
    a1 = np.linspace(box.a1_lo, box.a1_hi, n)
    ga = np.linspace(box.gamma_lo, box.gamma_hi, n)
    base = (a0[:, None] + a1[None, :] * max(y, 0.0)).reshape(-1)
    diff = (0.5 * base[:, None] ** (2.0 * ga[None, :]) * q).max()
    return float(drift + diff)


def random_proper_box(rng):
    kind = rng.integers(0, 3)
    if kind == 0:  # real line
        b0 = np.sort(rng.uniform(-1, 1, 2))
        b1 = np.sort(rng.uniform(-2, 2, 2))
        a0 = np.sort(rng.uniform(0.01, 2, 2))
        a1 = np.sort(rng.uniform(0.0, 2, 2))
        ga = np.sort(rng.uniform(0.5, 1, 2))
        return ParameterBox(*b0, *b1, *a0, *a1, *ga)
    if kind == 1:  # square-root case
        a1 = np.sort(rng.uniform(0.05, 0.5, 2))
        b0_lo = a1[1] / 2 + rng.uniform(0, 0.5)
        b0 = (b0_lo, b0_lo + rng.uniform(0, 0.5))
        b1 = np.sort(rng.uniform(-2, 1, 2))
        return ParameterBox(*b0, *b1, 0.0, 0.0, *a1, 0.5, 0.5)
    ga = np.sort(rng.uniform(0.55, 1.0, 2))  # power case
    a1 = np.sort(rng.uniform(0.05, 2, 2))
    b0 = np.sort(rng.uniform(0.01, 1, 2))
    b1 = np.sort(rng.uniform(-2, 1, 2))
    return ParameterBox(*b0, *b1, 0.0, 0.0, *a1, *ga)


class TestClassification:
    def test_section5_box_is_real_line(self):
        spec = classify_properness(BOX5)
        assert spec.case is PropernessCase.CASE_R
        assert spec.space is StateSpace.REAL

    def test_cir_boundary_of_drift_condition(self):
        box = ParameterBox(0.1, 0.2, -1.0, -0.5, 0.0, 0.0, 0.1, 0.2, 0.5, 0.5)
        assert classify_properness(box).case is PropernessCase.CASE_CIR

    def test_cir_drift_condition_violated(self):
        with pytest.raises(ImproperParameterBox, match="0.04"):
            classify_properness(
                ParameterBox(0.04, 0.2, -1.0, -0.5, 0.0, 0.0, 0.1, 0.2, 0.5, 0.5))

    def test_power_case(self):
        box = ParameterBox(0.1, 0.2, -1.0, -0.5, 0.0, 0.0, 0.1, 0.2, 0.6, 0.8)
        spec = classify_properness(box)
        assert spec.case is PropernessCase.CASE_POWER
        assert spec.space is StateSpace.POSITIVE

    def test_gamma_mixing_rejected(self):
        with pytest.raises(ImproperParameterBox):
            classify_properness(
                ParameterBox(0.2, 0.3, -1.0, -0.5, 0.0, 0.0, 0.1, 0.2, 0.5, 0.7))

    def test_a0_halfopen_rejected(self):
        with pytest.raises(ImproperParameterBox, match="a0_hi"):
            classify_properness(
                ParameterBox(0.2, 0.3, -1.0, -0.5, 0.0, 0.01, 0.1, 0.2, 0.5, 0.5))

    def test_bad_intervals_rejected_at_construction(self):
        with pytest.raises(ValueError):
            ParameterBox(0.2, 0.1, 0, 0, 0.1, 0.2, 0, 0, 0.5, 0.5)
        with pytest.raises(ValueError):
            ParameterBox(0, 0, 0, 0, -0.1, 0.2, 0, 0, 0.5, 0.5)
        with pytest.raises(ValueError):
            ParameterBox(0, 0, 0, 0, 0.1, 0.2, 0, 0, 0.4, 0.5)
        with pytest.raises(ValueError):
            ParameterBox(np.nan, 0, 0, 0, 0.1, 0.2, 0, 0, 0.5, 0.5)


class TestIntervals:
    def test_drift_at_zero(self):
        assert drift_interval(BOX5, 0.0) == (0.05, 0.15)

    def test_drift_at_positive_state(self):
        lo, hi = drift_interval(BOX5, 0.1)
        assert lo == pytest.approx(0.05 - 0.3)
        assert hi == pytest.approx(0.15 - 0.05)

    def test_drift_singleton(self):
        box = ParameterBox.singleton(0.1, -0.7, 0.02, 0.0)
        lo, hi = drift_interval(box, 0.3)
        assert lo == hi == pytest.approx(0.1 - 0.21)

    def test_diffusion_constant_vol(self):
        box = ParameterBox(0, 0, 0, 0, 0.01, 0.02, 0.0, 0.0, 0.5, 0.5)
        for x in (-3.0, 0.0, 5.0):
            assert diffusion_interval(box, x) == (0.01, 0.02)

    def test_diffusion_ignores_a1_below_zero(self):
        box = ParameterBox(0, 0, 0, 0, 0.01, 0.02, 0.0, 3.0, 0.5, 0.5)
        assert diffusion_interval(box, -2.0) == (0.01, 0.02)

    def test_diffusion_gamma_range_against_dense_gamma_grid(self):
        # gamma sweep with 1e-4 step as the independent oracle
        box = ParameterBox(0, 0, 0, 0, 0.0, 0.0, 1.0, 2.0, 0.6, 1.0)
        x = 0.25
        gam = np.arange(0.6, 1.0 + 1e-9, 1e-4)
        vals = [(a1 * x) ** (2 * gam) for a1 in (1.0, 2.0)]
        expect_lo = min(v.min() for v in vals)
        expect_hi = max(v.max() for v in vals)
        lo, hi = diffusion_interval(box, x)
        assert lo == pytest.approx(expect_lo, rel=1e-6)
        assert hi == pytest.approx(expect_hi, rel=1e-6)


class TestGenerator:
    def test_singleton_arithmetic(self):
        box = ParameterBox.singleton(0.15, -0.5, 0.02, 0.0, 0.5)
        assert eval_G(box, 0.1, 1.0, 2.0) == pytest.approx(0.12)

    def test_zero_gradient_gives_zero(self):
        assert eval_G(BOX5, 0.37, 0.0, 0.0) == 0.0

    def test_section5_box_matches_dense_grid(self):
        val = eval_G(BOX5, 0.1, 1.0, 2.0)
        assert val == pytest.approx(dense_grid_sup(BOX5, 0.1, 1.0, 2.0), abs=1e-12)

    def test_corner_oracle_equivalence_random_boxes(self):
        rng = np.random.default_rng(42)
        for _ in range(250):
            box = random_proper_box(rng)
            y, p, q = rng.uniform(-5, 5, 3)
            val = eval_G(box, y, p, q)
            oracle = dense_grid_sup(box, y, p, q)
            assert abs(val - oracle) <= 1e-6 + 1e-6 * abs(val)

    def test_separable_equals_corner_enumeration(self):
        rng = np.random.default_rng(7)
        for _ in range(250):
            box = random_proper_box(rng)
            y, p, q = rng.uniform(-5, 5, 3)
            val, gp, gq = eval_G_separable(box, y, p, q)
            assert float(val) == pytest.approx(eval_G(box, y, p, q), abs=1e-13)

    def test_separable_gradient_is_envelope_coefficient(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            box = random_proper_box(rng)
            y, p, q = rng.uniform(-4, 4, 3)
            val, gp, gq = eval_G_separable(box, y, p, q)
            eps = 1e-7
            up = eval_G(box, y, p + eps, q)
            dn = eval_G(box, y, p - eps, q)
            if abs(p) > 1e-4:  # away from the kink the envelope is smooth
                assert (up - dn) / (2 * eps) == pytest.approx(float(gp), rel=1e-4, abs=1e-7)

    def test_improper_box_rejected(self):
        box = ParameterBox(0.04, 0.2, -1.0, -0.5, 0.0, 0.0, 0.1, 0.2, 0.5, 0.5)
        with pytest.raises(ImproperParameterBox):
            eval_G(box, 0.1, 1.0, 1.0)

    @given(lam=st.floats(0.0, 50.0), y=st.floats(-5, 5), p=st.floats(-5, 5),
           q=st.floats(-5, 5))
    @settings(max_examples=80, deadline=None)
    def test_positive_homogeneity(self, lam, y, p, q):
        left = eval_G(BOX5, y, lam * p, lam * q)
        assert left == pytest.approx(lam * eval_G(BOX5, y, p, q),
                                     rel=1e-10, abs=1e-10)

    @given(y=st.floats(-5, 5), p1=st.floats(-5, 5), q1=st.floats(-5, 5),
           p2=st.floats(-5, 5), q2=st.floats(-5, 5))
    @settings(max_examples=80, deadline=None)
    def test_subadditivity(self, y, p1, q1, p2, q2):
        whole = eval_G(BOX5, y, p1 + p2, q1 + q2)
        parts = eval_G(BOX5, y, p1, q1) + eval_G(BOX5, y, p2, q2)
        assert whole <= parts + 1e-10

    def test_monotone_in_box_inclusion(self):
        rng = np.random.default_rng(5)
        inner = ParameterBox(0.07, 0.13, -2.5, -0.8, 0.012, 0.018, 0.0, 0.0,
                             0.5, 0.5)
        assert BOX5.includes(inner)
        for _ in range(100):
            y, p, q = rng.uniform(-5, 5, 3)
            assert eval_G(inner, y, p, q) <= eval_G(BOX5, y, p, q) + 1e-12

    def test_singleton_reduces_to_linear_generator(self):
        rng = np.random.default_rng(9)
        theta = ModelPoint(0.11, -1.3, 0.4, 0.7, 0.8)
        box = ParameterBox.singleton(0.11, -1.3, 0.4, 0.7, 0.8)
        for _ in range(100):
            y, p, q = rng.uniform(-5, 5, 3)
            a = eval_G(box, y, p, q)
            b = eval_generator(theta, y, p, q)
            assert a == pytest.approx(b, rel=1e-15, abs=1e-15)

    def test_member_never_beats_sup(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            y, p, q = rng.uniform(-5, 5, 3)
            row = BOX5.corners[rng.integers(0, 32)]
            theta = ModelPoint(*row)
            assert eval_generator(theta, y, p, q) <= eval_G(BOX5, y, p, q) + 1e-12

    def test_cir_case_linearizes_for_monotone_convex_data(self):
        box = ParameterBox(0.10, 0.15, -1.0, -0.5, 0.0, 0.0, 0.05, 0.2, 0.5, 0.5)
        rng = np.random.default_rng(11)
        for _ in range(100):
            y = rng.uniform(0.01, 5)
            p = rng.uniform(0, 5)
            q = rng.uniform(0, 5)
            expected = (0.15 - 0.5 * y) * p + 0.5 * 0.2 * y * q
            assert eval_G(box, y, p, q) == pytest.approx(expected, rel=1e-12)

    def test_half_inside_convention_matches_for_sqrt_gamma(self):
        # with gamma = 1/2 the two conventions coincide
        val_a = eval_G(BOX5, 0.3, 1.2, -0.7, half_inside=False)
        val_b = eval_G(BOX5, 0.3, 1.2, -0.7, half_inside=True)
        assert val_a == pytest.approx(val_b, rel=1e-14)

    def test_half_inside_convention_differs_for_large_gamma(self):
        box = ParameterBox(0, 0, 0, 0, 2.0, 3.0, 0.0, 0.0, 1.0, 1.0)
        assert eval_G(box, 0.0, 0.0, 1.0) == pytest.approx(0.5 * 9.0)
        assert eval_G(box, 0.0, 0.0, 1.0, half_inside=True) == pytest.approx(2.25)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(12)
        y = rng.uniform(-2, 2, 40)
        p = rng.uniform(-2, 2, 40)
        q = rng.uniform(-2, 2, 40)
        vec = eval_G(BOX5, y, p, q)
        for i in range(40):
            assert vec[i] == pytest.approx(eval_G(BOX5, y[i], p[i], q[i]))


class TestInstantiation:
    def test_midpoint_of_section5_box(self):
        m = instantiate_model(BOX5, "midpoint")
        assert (m.b0, m.b1, m.a0) == (0.1, -1.75, 0.015)
        assert m.state_space is StateSpace.REAL

    def test_upper_corner(self):
        m = instantiate_model(BOX5, "upper")
        assert (m.b0, m.b1, m.a0, m.a1, m.gamma) == (0.15, -0.5, 0.02, 0.0, 0.5)

    def test_worst_case_cir_selector(self):
        box = ParameterBox(0.10, 0.15, -1.0, -0.5, 0.0, 0.0, 0.05, 0.2, 0.5, 0.5)
        m = instantiate_model(box, "worst_case_cir")
        assert (m.b0, m.b1, m.a0, m.a1, m.gamma) == (0.15, -0.5, 0.0, 0.2, 0.5)
        assert m.state_space is StateSpace.POSITIVE

    def test_worst_case_cir_requires_cir_box(self):
        with pytest.raises(ValueError):
            instantiate_model(BOX5, "worst_case_cir")

    def test_explicit_point_outside_box_rejected(self):
        with pytest.raises(ValueError):
            instantiate_model(BOX5, (0.5, -1.0, 0.015, 0.0, 0.5))

    def test_coefficient_functions(self):
        m = instantiate_model(BOX5, "midpoint")
        assert m.drift(0.2) == pytest.approx(0.1 - 1.75 * 0.2)
        assert m.vol(-1.0) == pytest.approx(np.sqrt(0.015))
        assert m.diffusion(3.0) == pytest.approx(0.015)

    def test_corner_models_deduplicated(self):
        models = corner_models(BOX5)
        assert len(models) == 8  # a1 and gamma are degenerate
        assert len({(m.b0, m.b1, m.a0) for m in models}) == 8
