import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from confdiv.conformal import (
    ConformalWeight,
    DivergenceSpec,
    RotatedGenerator,
    bregman,
    conformal_div,
    conjugate_bregman,
    constant_weight,
    parse_weight,
    pnorm_weight,
    rotated_bregman,
    scaled_conformal_div,
    symmetry_defect,
    tangent_angle,
    total_weight,
)
from confdiv.errors import InvalidP, NonpositiveWeight, StructureError
from confdiv.generators import get_generator
from confdiv.uv_structure import AlphaBetaStructure, make_structure


class TestClosedFormDivergences:
    """Each generator's Bregman divergence against its textbook closed form."""

    @pytest.mark.parametrize("gen_id,formula", [
        ("neg_log", lambda x, y: x / y - math.log(x / y) - 1),
        ("inverse", lambda x, y: 1 / x - 2 / y + x / y ** 2),
        ("square", lambda x, y: (x - y) ** 2),
        ("exp", lambda x, y: math.exp(x) - math.exp(y) - (x - y) * math.exp(y)),
        ("xlogx", lambda x, y: x * math.log(x / y) - x + y),
        ("power:3", lambda x, y: x ** 3 - y ** 3 - 3 * (x - y) * y ** 2),
        ("xexpx", lambda x, y: x * (math.exp(x) - math.exp(y)) + y * (y - x) * math.exp(y)),
    ])
    def test_formula(self, gen_id, formula):
        gen = get_generator(gen_id)
        rng = np.random.default_rng(3)
        for _ in range(25):
            x, y = rng.uniform(0.3, 3.0, 2)
            assert bregman(gen, [x], [y]) == pytest.approx(formula(x, y), rel=1e-10, abs=1e-13)

    def test_inverse_example(self):
        assert bregman(get_generator("inverse"), [1.0], [2.0]) == pytest.approx(0.25, abs=1e-15)


class TestWeights:
    def test_total_weight_value(self):
        # phi = x^2 at y = 1: grad = 2, g = 1/sqrt(5)
        spec = DivergenceSpec(get_generator("square"), total_weight())
        assert conformal_div(spec, [3.0], [1.0]) == pytest.approx(4 / math.sqrt(5), rel=1e-15)

    def test_constant_weight_scales(self):
        spec = DivergenceSpec(get_generator("square"), constant_weight(2.5))
        assert conformal_div(spec, [3.0], [1.0]) == pytest.approx(10.0)

    @pytest.mark.parametrize("weight", [total_weight(1.3), pnorm_weight(0.7, 4 / 3),
                                        pnorm_weight(1.0, 3.0)])
    def test_gradient_matches_finite_differences(self, weight):
        rng = np.random.default_rng(4)
        for _ in range(10):
            t = rng.normal(size=3)
            fd = np.array([(weight.value(t + h) - weight.value(t - h)) / 2e-6
                           for h in np.eye(3) * 1e-6])
            np.testing.assert_allclose(weight.grad(t), fd, rtol=1e-6, atol=1e-9)

    def test_p_equal_two_is_total(self):
        t = np.array([0.3, -1.2])
        assert pnorm_weight(1.0, 2.0).value(t) == pytest.approx(total_weight().value(t))

    @pytest.mark.parametrize("text,kind,scale,p", [
        ("const:2", "const", 2.0, 2.0),
        ("gbot:1.5", "bot", 1.5, 2.0),
        ("gp:1:1.3333333333333333", "p", 1.0, 4 / 3),
    ])
    def test_parse(self, text, kind, scale, p):
        w = parse_weight(text)
        assert (w.kind, w.scale) == (kind, scale)
        assert w.p == pytest.approx(p)

    def test_parse_composed(self):
        assert parse_weight("composed-u:2").over_u

    def test_parse_rejects_unknown(self):
        with pytest.raises(ValueError):
            parse_weight("huber:1")

    def test_nonpositive_scale(self):
        with pytest.raises(NonpositiveWeight):
            constant_weight(0.0)

    def test_p_below_one(self):
        with pytest.raises(InvalidP):
            pnorm_weight(1.0, 0.5)

    @pytest.mark.parametrize("p,k", [(2.0, 1), (4 / 3, 2), (6 / 5, 3)])
    def test_norm_order(self, p, k):
        assert pnorm_weight(1.0, p).norm_order() == k

    def test_norm_order_rejects_non_even(self):
        with pytest.raises(InvalidP):
            pnorm_weight(1.0, 1.5).norm_order()

    def test_composed_needs_structure(self):
        with pytest.raises(StructureError):
            DivergenceSpec(get_generator("square"), parse_weight("composed-u:1"))


class TestProperties:
    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.05, 10), st.floats(0.05, 10),
           st.sampled_from(["neg_log", "inverse", "square", "exp", "xlogx", "power:3"]),
           st.sampled_from(["const:1", "gbot:1", "gp:2:1.3333333333333333"]))
    def test_nonnegative(self, x, y, gen_id, weight):
        if gen_id == "exp":
            x, y = x / 5, y / 5
        spec = DivergenceSpec(get_generator(gen_id), parse_weight(weight))
        assert conformal_div(spec, [x], [y]) >= -1e-12

    @pytest.mark.parametrize("gen_id", ["neg_log", "square", "xlogx"])
    def test_zero_on_diagonal(self, gen_id):
        spec = DivergenceSpec(get_generator(gen_id), total_weight())
        assert conformal_div(spec, [1.7, 0.4], [1.7, 0.4]) == 0.0

    def test_broadcasting(self):
        spec = DivergenceSpec(get_generator("exp"), total_weight())
        xs = np.array([[0.1], [0.5], [1.0]])
        batch = conformal_div(spec, xs[:, None, :], xs[None, :, :])
        for i in range(3):
            for j in range(3):
                assert batch[i, j] == pytest.approx(conformal_div(spec, xs[i], xs[j]))


class TestScaled:
    def test_unit_scale_is_exact(self):
        spec = DivergenceSpec(get_generator("xlogx"), total_weight())
        x, y = np.array([1.3, 2.2]), np.array([0.7, 1.9])
        assert scaled_conformal_div(spec, x, y, 1.0) == conformal_div(spec, x, y)

    def test_half_square_closed_form(self):
        spec = DivergenceSpec(get_generator("half_square"))
        assert scaled_conformal_div(spec, [1.0], [3.0], 2.0) == pytest.approx((1 - 3) ** 2 / 4)

    def test_nonpositive_scale(self):
        spec = DivergenceSpec(get_generator("square"))
        with pytest.raises(NonpositiveWeight):
            scaled_conformal_div(spec, [1.0], [2.0], 0.0)


class TestSymmetry:
    def test_square_loss_is_symmetric(self):
        spec = DivergenceSpec(get_generator("square"), constant_weight())
        rng = np.random.default_rng(5)
        for _ in range(200):
            x, y = rng.uniform(-3, 3, (2, 2))
            assert symmetry_defect(spec, x, y) < 1e-12

    def test_total_square_loss_is_not(self):
        spec = DivergenceSpec(get_generator("square"), total_weight())
        assert symmetry_defect(spec, [1.0], [3.0]) > 1e-3


class TestDuality:
    @pytest.mark.parametrize("gen_id", ["neg_log", "inverse", "exp", "xlogx", "power:3", "xexpx"])
    def test_plain_structure(self, gen_id):
        gen = get_generator(gen_id)
        rng = np.random.default_rng(6)
        for _ in range(20):
            x, y = rng.uniform(0.3, 2.5, (2, 1))
            lhs = bregman(gen, x, y)
            rhs = conjugate_bregman(gen, gen.grad(y), gen.grad(x))
            assert lhs == pytest.approx(rhs, abs=1e-10, rel=1e-9)

    def test_alpha_beta_structure(self):
        s = AlphaBetaStructure(2.0, 1.0).structure()
        rng = np.random.default_rng(7)
        for _ in range(20):
            x, y = rng.uniform(0.3, 2.5, (2, 2))
            lhs = bregman(s.phi, s.v(x), s.v(y))
            rhs = conjugate_bregman(s.phi, s.u(y), s.u(x))
            assert lhs == pytest.approx(rhs, abs=1e-10)

    def test_v_conformal_uses_v(self):
        s = make_structure("identity", "log", "exp")
        spec = DivergenceSpec(s.phi, total_weight(), s)
        x, y = np.array([2.0]), np.array([0.5])
        expected = total_weight().value(y) * bregman(s.phi, np.log(x), np.log(y))
        assert conformal_div(spec, x, y) == pytest.approx(expected)


class TestRotation:
    @pytest.mark.parametrize("x,mu", [(1.5, 0.7), (-0.4, 0.2), (2.0, 1.1)])
    def test_tangent_rotation_gives_total_divergence(self, x, mu):
        gen = get_generator("half_square")
        spec = DivergenceSpec(gen, total_weight())
        got = rotated_bregman(gen, x, mu, tangent_angle(gen, mu))
        assert got == pytest.approx(conformal_div(spec, [x], [mu]), rel=1e-9)

    @pytest.mark.parametrize("theta", [-0.3, -0.1, 0.1, 0.3])
    def test_general_angle(self, theta):
        gen = get_generator("half_square")
        x, mu = 1.2, 0.4
        expected = bregman(gen, [x], [mu]) / (math.cos(theta) - mu * math.sin(theta))
        assert rotated_bregman(gen, x, mu, theta) == pytest.approx(expected, rel=1e-9)

    def test_rotated_graph_derivatives(self):
        rot = RotatedGenerator(get_generator("exp"), 0.2)
        x = np.array([0.3])
        h = 1e-6
        fd = (rot.eval(x + h) - rot.eval(x - h)) / (2 * h)
        assert rot.grad(x)[0] == pytest.approx(fd, rel=1e-7)
        fd2 = (rot.grad(x + h)[0] - rot.grad(x - h)[0]) / (2 * h)
        assert rot.hess(x)[0, 0] == pytest.approx(fd2, rel=1e-6)
        np.testing.assert_allclose(rot.inv_grad(rot.grad(x)), x, rtol=1e-10)
