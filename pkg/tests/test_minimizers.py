import math

import numpy as np
import pytest
from scipy.optimize import minimize as scipy_minimize
from scipy.special import lambertw as scipy_lambertw

from confdiv.conformal import constant_weight, parse_weight, pnorm_weight, total_weight
from confdiv.errors import (
    InvalidP,
    NonpositiveWeight,
    PreconditionError,
    SignChangeError,
)
from confdiv.generators import get_generator
from confdiv.minimizers import (
    Sample,
    augmented_distance,
    augmented_mean,
    average_divergence,
    left_minimizer,
    mahalanobis_check,
    orthogonality_residual,
    right_minimizer,
    right_minimizer_1d,
    right_minimizer_nd,
    scaled_left_minimizer,
)
from confdiv.uv_structure import AlphaBetaStructure, identity_structure, make_structure


def total_loss_1d(gen_id, pts, grid):
    """Average D_phi(x_i : m) / sqrt(1 + phi'(m)^2) over a grid of m, computed directly."""
    gen = get_generator(gen_id)
    m = grid[:, None]
    x = np.asarray(pts)[None, :]
    f = lambda t: gen.eval(t[..., None])
    df = lambda t: gen.grad(t[..., None])[..., 0]
    breg = f(x) - f(m) - (x - m) * df(m)
    return breg.mean(axis=1) / np.sqrt(1 + df(grid) ** 2)


class TestSample:
    def test_defaults_to_uniform(self):
        s = Sample.of([1.0, 2.0, 4.0])
        assert s.points.shape == (3, 1)
        np.testing.assert_allclose(s.weights, 1 / 3)

    def test_rejects_nonpositive_weight(self):
        with pytest.raises(NonpositiveWeight):
            Sample.of([1.0, 2.0], [1.0, 0.0])

    def test_contamination_weights_sum_to_one(self):
        s = Sample.of([1.0, 2.0]).contaminate([10.0], 0.2)
        assert s.weights.sum() == pytest.approx(1.0, abs=1e-15)
        assert s.weights[-1] == 0.2


class TestLeftMinimizer:
    def test_total_half_square_example(self):
        s = identity_structure(get_generator("half_square"))
        res = left_minimizer(s, total_weight(), Sample.of([0.0, 1.0]))
        assert res.mu[0] == pytest.approx(math.sqrt(2) - 1, abs=1e-15)

    def test_constant_weight_is_u_mean(self):
        s = identity_structure(get_generator("neg_log"))
        res = left_minimizer(s, constant_weight(), Sample.of([1.0, 3.0]))
        # u = -1/x, mean of u is -2/3, so mu = 1.5
        assert res.mu[0] == pytest.approx(1.5, rel=1e-15)

    @pytest.mark.parametrize("gen_id,weight", [
        ("exp", "gbot:1"), ("neg_log", "gp:1:1.3333333333333333"), ("xlogx", "gbot:2"),
        ("power:3", "const:1"), ("inverse", "gbot:1"),
    ])
    def test_matches_grid(self, gen_id, weight):
        gen = get_generator(gen_id)
        w = parse_weight(weight)
        s = identity_structure(gen)
        rng = np.random.default_rng(11)
        pts = rng.uniform(0.4, 2.5, 5)
        grid = np.linspace(pts.min(), pts.max(), 200001)
        g = np.array([w.value(gen.grad(np.array([p]))) for p in pts])
        x = pts[None, :]
        m = grid[:, None]
        f = lambda t: gen.eval(t[..., None])
        breg = f(m) - f(x) - (m - x) * gen.grad(x[..., None])[..., 0]
        best = grid[np.argmin((breg * g).mean(axis=1))]
        res = left_minimizer(s, w, Sample.of(pts))
        assert abs(res.mu[0] - best) <= 2 * (grid[1] - grid[0])

    def test_two_dimensional_against_generic_optimizer(self):
        s = make_structure("identity", "log", "exp", dim=2)
        w = total_weight()
        sample = Sample.of(np.random.default_rng(12).uniform(0.5, 3.0, (6, 2)))
        res = left_minimizer(s, w, sample)
        ref = scipy_minimize(lambda m: average_divergence(s, w, sample, np.abs(m), "left"),
                             sample.mean(), method="Nelder-Mead",
                             options={"xatol": 1e-10, "fatol": 1e-14})
        np.testing.assert_allclose(res.mu, ref.x, atol=1e-6)

    def test_stationarity_residual_reported(self):
        s = AlphaBetaStructure(2.0, 1.0).structure()
        res = left_minimizer(s, total_weight(), Sample.of([0.5, 1.0, 3.0]))
        assert res.orth_residual < 1e-12


class TestRightMinimizer1D:
    def test_example_from_rms_bracket(self):
        res = right_minimizer_1d(get_generator("square"), total_weight(), Sample.of([1.0, 7.0]))
        assert res.bracket == pytest.approx((4.0, 5.0))
        assert 4.0 < res.mu[0] < 5.0
        assert res.mu[0] == pytest.approx(4.9900697391687352, abs=1e-12)
        xbar, xphi = 4.0, 5.0
        mu = res.mu[0]
        assert abs(2 * mu ** 3 - (2 * xphi ** 2 - 1) * mu - xbar) < 1e-10

    def test_itakura_saito_against_grid(self):
        pts = [1.0, 4.0]
        grid = np.linspace(1.0, 4.0, 300001)
        best = grid[np.argmin(total_loss_1d("neg_log", pts, grid))]
        res = right_minimizer_1d(get_generator("neg_log"), total_weight(), Sample.of(pts))
        assert res.bracket == pytest.approx((2.0, 2.5))
        assert abs(res.mu[0] - best) < 2e-5
        # root of log(mu) - log(xphi) + mu^2 - xbar mu = 0
        mu = res.mu[0]
        assert abs(math.log(mu) - math.log(2.0) + mu * mu - 2.5 * mu) < 1e-10

    @pytest.mark.parametrize("gen_id,pts", [
        ("power:3", [0.5, 1.0, 2.0]),
        ("exp", [0.0, 0.5, 1.5]),
        ("xlogx", [1.2, 2.0, 3.5]),
        ("inverse", [0.5, 1.0, 3.0]),
        ("xexpx", [0.1, 1.0, 1.4]),
    ])
    def test_against_grid(self, gen_id, pts):
        grid = np.linspace(min(pts), max(pts), 200001)
        best = grid[np.argmin(total_loss_1d(gen_id, pts, grid))]
        res = right_minimizer_1d(get_generator(gen_id), total_weight(), Sample.of(pts))
        assert abs(res.mu[0] - best) <= 2 * (grid[1] - grid[0])
        assert res.diagnostics["root_residual"] < 1e-10

    def test_power_root_equation(self):
        p, pts = 3.0, np.array([0.5, 1.0, 2.0])
        res = right_minimizer_1d(get_generator("power:3"), total_weight(), Sample.of(pts))
        mu, xbar = res.mu[0], pts.mean()
        xphi = np.mean(pts ** p) ** (1 / p)
        val = p * mu ** (2 * p - 1) - p * xphi ** p * mu ** (p - 1) + mu - xbar
        assert abs(val) < 1e-10

    def test_exp_root_equation(self):
        pts = np.array([0.0, 0.5, 1.5])
        res = right_minimizer_1d(get_generator("exp"), total_weight(), Sample.of(pts))
        mu, xbar = res.mu[0], pts.mean()
        xphi = math.log(np.mean(np.exp(pts)))
        assert abs(math.exp(2 * mu) - math.exp(xphi + mu) + mu - xbar) < 1e-10

    def test_kl_root_equation(self):
        pts = np.array([1.2, 2.0, 3.5])
        res = right_minimizer_1d(get_generator("xlogx"), total_weight(), Sample.of(pts))
        mu, xbar = res.mu[0], pts.mean()
        m = np.mean(pts * np.log(pts))
        w = float(np.real(scipy_lambertw(m)))
        # the phi-mean is m / W(m) and its phi value is m itself
        assert (m / w) * math.log(m / w) == pytest.approx(m, rel=1e-12)
        assert abs((mu * math.log(mu) - m) * (1 + math.log(mu)) + mu - xbar) < 1e-10

    def test_constant_weight_gives_mean(self):
        res = right_minimizer_1d(get_generator("exp"), constant_weight(3.0), Sample.of([0.0, 1.0, 5.0]))
        assert res.mu[0] == pytest.approx(2.0)

    def test_sign_change(self):
        with pytest.raises(SignChangeError):
            right_minimizer_1d(get_generator("square"), total_weight(), Sample.of([-1.0, 7.0]))

    def test_degenerate_sample_returns_point(self):
        res = right_minimizer_1d(get_generator("square"), total_weight(), Sample.of([3.0, 3.0]))
        assert res.mu[0] == 3.0
        assert res.orth_residual == 0.0

    def test_weights_are_respected(self):
        pts, w = [1.0, 7.0], [0.8, 0.2]
        res = right_minimizer_1d(get_generator("square"), total_weight(), Sample.of(pts, w))
        dup = right_minimizer_1d(get_generator("square"), total_weight(),
                                 Sample.of([1.0, 1.0, 1.0, 1.0, 7.0]))
        assert res.mu[0] == pytest.approx(dup.mu[0], rel=1e-12)


class TestRightMinimizerGeneral:
    def test_agrees_with_bracketed_path(self):
        gen = get_generator("square")
        sample = Sample.of([1.0, 7.0])
        a = right_minimizer_1d(gen, total_weight(), sample)
        b = right_minimizer_nd(identity_structure(gen), total_weight(), sample)
        assert b.mu[0] == pytest.approx(a.mu[0], abs=1e-8)

    @pytest.mark.parametrize("k", [2, 3])
    def test_pnorm_weight_against_grid(self, k):
        p = 2 * k / (2 * k - 1)
        gen = get_generator("square")
        w = pnorm_weight(1.0, p)
        pts = np.array([1.0, 7.0])
        grid = np.linspace(1.0, 7.0, 600001)
        m = grid[:, None]
        breg = (pts[None, :] - m) ** 2
        g = (1 + np.abs(2 * grid) ** p) ** (-1 / p)
        best = grid[np.argmin(g * breg.mean(axis=1))]
        res = right_minimizer_nd(identity_structure(gen), w, Sample.of(pts))
        assert abs(res.mu[0] - best) < 1e-4

    def test_norm_value_identity(self):
        gen = get_generator("exp")
        s = identity_structure(gen)
        sample = Sample.of([0.0, 0.4, 1.0, 2.0])
        for k in (1, 2, 3):
            w = pnorm_weight(2.5, 2 * k / (2 * k - 1))
            res = right_minimizer_nd(s, w, sample)
            dist = augmented_distance(s, sample, res.mu, 2 * k)
            assert 2.5 * dist == pytest.approx(res.avg_divergence, rel=1e-9)

    def test_two_dimensional_against_generic_optimizer(self):
        gen = get_generator("xlogx")
        s = identity_structure(gen, 2)
        w = total_weight()
        sample = Sample.of(np.random.default_rng(13).uniform(1.0, 4.0, (7, 2)))
        res = right_minimizer_nd(s, w, sample)
        ref = scipy_minimize(lambda m: average_divergence(s, w, sample, np.abs(m), "right"),
                             sample.mean(), method="Nelder-Mead",
                             options={"xatol": 1e-10, "fatol": 1e-15})
        np.testing.assert_allclose(res.mu, ref.x, atol=1e-5)
        assert res.orth_residual < 1e-8

    def test_v_structure(self):
        s = make_structure("identity", "log", "exp")
        w = total_weight()
        sample = Sample.of([0.5, 1.0, 4.0])
        res = right_minimizer_nd(s, w, sample)
        grid = np.linspace(0.5, 4.0, 100001)
        vals = [average_divergence(s, w, sample, [m], "right") for m in grid]
        assert abs(res.mu[0] - grid[int(np.argmin(vals))]) < 1e-4

    def test_invalid_p(self):
        with pytest.raises(InvalidP):
            right_minimizer_nd(identity_structure(get_generator("square")), pnorm_weight(1, 1.5),
                               Sample.of([1.0, 7.0]))

    def test_k_must_match_weight(self):
        with pytest.raises(InvalidP):
            right_minimizer_nd(identity_structure(get_generator("square")), total_weight(),
                               Sample.of([1.0, 7.0]), k=2)

    def test_straddling_sample_falls_back_to_general_path(self):
        pts = [-1.0, 7.0]
        res = right_minimizer(identity_structure(get_generator("square")), total_weight(),
                              Sample.of(pts))
        grid = np.linspace(-1.0, 7.0, 800001)
        best = grid[np.argmin(total_loss_1d("square", pts, grid))]
        assert res.orth_residual < 1e-8
        assert abs(res.mu[0] - best) < 2e-5
        assert not res.multiplicity_flag

    def test_symmetric_sample_flags_multiplicity(self):
        res = right_minimizer_nd(identity_structure(get_generator("square")), total_weight(),
                                 Sample.of([-3.0, 3.0]))
        assert res.multiplicity_flag
        assert res.mu[0] < 0  # lexicographically smallest of the tied pair


class TestOrthogonality:
    def test_zero_at_solution(self):
        res = right_minimizer_1d(get_generator("square"), total_weight(), Sample.of([1.0, 7.0]))
        assert res.orth_residual < 1e-8

    def test_large_off_solution(self):
        s = identity_structure(get_generator("square"))
        assert orthogonality_residual(s, total_weight(), Sample.of([1.0, 7.0]), [4.5]) > 1e-3

    def test_constant_weight_at_mean(self):
        s = identity_structure(get_generator("exp"))
        assert orthogonality_residual(s, constant_weight(), Sample.of([0.0, 2.0]), [1.0]) == 0.0


class TestMahalanobis:
    @pytest.mark.parametrize("gen_id,pts", [
        ("exp", [0.0, 1.0]), ("square", [1.0, 7.0]), ("neg_log", [1.0, 4.0]), ("xlogx", [1.5, 4.0]),
    ])
    def test_identity(self, gen_id, pts):
        gen = get_generator(gen_id)
        sample = Sample.of(pts)
        res = right_minimizer_1d(gen, total_weight(), sample)
        lhs, rhs, rho = mahalanobis_check(gen, total_weight(), sample, res.mu)
        assert rho > 0
        assert abs(lhs - rhs) / abs(lhs) < 1e-6

    def test_precondition(self):
        with pytest.raises(PreconditionError):
            mahalanobis_check(get_generator("square"), total_weight(), Sample.of([1.0, 7.0]), [4.5])

    def test_chain_at_total_solution(self):
        gen = get_generator("exp")
        sample = Sample.of([0.0, 0.3, 1.2])
        res = right_minimizer_1d(gen, total_weight(), sample)
        mu = res.mu
        slope = gen.grad(mu)[0]
        breg_avg = np.mean([gen.eval(np.array([x])) - gen.eval(mu) - (x - mu[0]) * slope
                            for x in sample.points[:, 0]])
        _, phibar = augmented_mean(identity_structure(gen), sample)
        assert phibar - gen.eval(mu) == pytest.approx(breg_avg / (1 + slope ** 2), rel=1e-9)
        dist = augmented_distance(identity_structure(gen), sample, mu, 2)
        assert dist == pytest.approx(res.avg_divergence, rel=1e-9)


class TestScaledLeft:
    def test_example(self):
        gen = get_generator("half_square")
        res = scaled_left_minimizer(gen, constant_weight(), Sample.of([1.0, 3.0]), [1.0, 2.0])
        assert res.mu[0] == pytest.approx(5 / 3, abs=1e-12)

    def test_unit_scales_match_left(self):
        gen = get_generator("xlogx")
        sample = Sample.of([0.5, 1.5, 3.0])
        a = scaled_left_minimizer(gen, total_weight(), sample, np.ones(3))
        b = left_minimizer(identity_structure(gen), total_weight(), sample)
        assert a.mu[0] == pytest.approx(b.mu[0], abs=1e-10)

    def test_against_grid(self):
        gen = get_generator("neg_log")
        w = total_weight()
        pts, scales = np.array([0.5, 1.5, 3.0]), np.array([0.5, 1.0, 2.0])
        grid = np.linspace(0.5, 3.0, 250001)
        x = (pts / scales)[None, :]
        m = grid[:, None] / scales[None, :]
        g = 1 / np.sqrt(1 + (1 / x) ** 2)
        # w_i g(x_i/w_i) D(mu/w_i : x_i/w_i) for -log
        d = scales * g * (m / x - np.log(m / x) - 1)
        best = grid[np.argmin(d.sum(axis=1))]
        res = scaled_left_minimizer(gen, w, Sample.of(pts), scales)
        assert abs(res.mu[0] - best) <= 2 * (grid[1] - grid[0])
        assert res.orth_residual < 1e-10

    def test_nonpositive_scale(self):
        with pytest.raises(NonpositiveWeight):
            scaled_left_minimizer(get_generator("square"), constant_weight(), Sample.of([1.0, 2.0]),
                                  [1.0, -1.0])
