"""CGF correctness, tilted sampling, and change-of-measure checks."""

import math

import numpy as np
import pytest

from wrongexit import (
    IndependentModel,
    MvNormalModel,
    Normal,
    ShiftedExponential,
    TiltDomainError,
    exchangeable_mvnormal,
    siegmund_root,
)

LOG2 = math.log(2.0)


def models_under_test():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(3, 3))
    cov = a @ a.T + 1.5 * np.eye(3)
    return [
        exchangeable_mvnormal(2, -0.5, 0.0),
        exchangeable_mvnormal(4, -0.5, 0.3),
        MvNormalModel(np.array([-0.4, -1.2, -0.7]), cov),
        IndependentModel([Normal(-0.5, 1.0), Normal(-1.0, 2.0)]),
        IndependentModel([ShiftedExponential(2.0, -LOG2),
                          Normal(-0.5, 1.0),
                          ShiftedExponential(3.0, -1.0)]),
    ]


def interior_tilt(model, rng):
    if isinstance(model, IndependentModel):
        hi = np.array([min(c.domain_sup, 2.0) for c in model.components])
        return rng.uniform(-1.0, 0.8) * 0.5 + rng.uniform(-0.5, 0.5, model.dim) * 0.3 * hi
    return rng.normal(scale=0.6, size=model.dim)


class TestCgfValues:
    def test_cgf_zero_at_origin_and_gradient_is_mean(self):
        for model in models_under_test():
            z = np.zeros(model.dim)
            assert abs(model.cgf(z)) <= 1e-12
            np.testing.assert_allclose(model.cgf_grad(z), model.mean,
                                       atol=1e-12)

    def test_mvnormal_origin(self):
        model = exchangeable_mvnormal(2, -0.5, 0.0)
        assert model.cgf(np.zeros(2)) == 0.0

    def test_shifted_exponential_root_value(self):
        comp = ShiftedExponential(2.0, -LOG2)
        assert abs(comp.cgf(1.0)) <= 1e-15

    def test_exchangeable_quadratic_by_hand(self):
        # -1'theta/2 + theta'Sigma theta/2 at theta=(1,1), rho=0.5: -1 + 3/2
        model = exchangeable_mvnormal(2, -0.5, 0.5)
        assert abs(model.cgf(np.ones(2)) - 0.5) <= 1e-14

    def test_exchangeable_gradient_formula(self):
        model = exchangeable_mvnormal(5, -0.5, 0.3)
        rng = np.random.default_rng(0)
        th = rng.normal(size=5)
        expect = -0.5 + model.cov @ th
        np.testing.assert_allclose(model.cgf_grad(th), expect, atol=1e-14)

    def test_exponential_tilted_mean(self):
        comp = ShiftedExponential(2.0, -LOG2)
        assert comp.cgf_prime(1.0) == pytest.approx(1.0 - LOG2, abs=1e-15)
        # paper values for this component
        assert -comp.cgf_prime(0.0) == pytest.approx(0.1931, abs=1e-4)
        assert comp.cgf_prime(1.0) == pytest.approx(0.307, abs=1e-3)

    def test_domain_boundary_is_infinite(self):
        model = IndependentModel([ShiftedExponential(2.0, -LOG2)])
        assert model.cgf(np.array([2.0])) == math.inf
        assert model.cgf(np.array([2.5])) == math.inf
        with pytest.raises(TiltDomainError):
            model.cgf_grad(np.array([2.0]))
        with pytest.raises(TiltDomainError):
            model.sample(np.array([2.0]), np.random.default_rng(0))

    def test_dimension_mismatch(self):
        model = exchangeable_mvnormal(3, -0.5, 0.1)
        with pytest.raises(ValueError):
            model.cgf(np.zeros(2))
        with pytest.raises(ValueError):
            model.cgf_grad(np.zeros(4))


class TestConvexityAndGradients:
    def test_convexity_spot_check(self):
        rng = np.random.default_rng(7)
        for model in models_under_test():
            for _ in range(25):
                t1 = interior_tilt(model, rng)
                t2 = interior_tilt(model, rng)
                lam = rng.uniform(0.05, 0.95)
                mid = lam * t1 + (1 - lam) * t2
                lhs = model.cgf(mid)
                rhs = lam * model.cgf(t1) + (1 - lam) * model.cgf(t2)
                assert lhs <= rhs + 1e-10

    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(3)
        h = 1e-6
        for model in models_under_test():
            for _ in range(5):
                th = interior_tilt(model, rng)
                grad = model.cgf_grad(th)
                for k in range(model.dim):
                    e = np.zeros(model.dim)
                    e[k] = h
                    fd = (model.cgf(th + e) - model.cgf(th - e)) / (2 * h)
                    assert fd == pytest.approx(grad[k], rel=1e-5, abs=1e-8)


class TestSiegmundRoot:
    def test_normal_closed_form(self):
        assert siegmund_root(Normal(-0.5, 1.0)) == 1.0
        assert siegmund_root(Normal(-1.0, 1.0)) == 2.0

    def test_exponential_root(self):
        z = siegmund_root(ShiftedExponential(2.0, -LOG2))
        assert z == pytest.approx(1.0, abs=1e-12)

    def test_root_requires_negative_mean(self):
        with pytest.raises(ValueError):
            siegmund_root(ShiftedExponential(2.0, 1.0))

    def test_root_is_cgf_zero(self):
        comp = ShiftedExponential(1.3, -1.7)
        z = siegmund_root(comp)
        assert z > 0
        assert abs(comp.cgf(z)) <= 1e-12


class TestModelValidation:
    def test_zero_drift_rejected(self):
        with pytest.raises(ValueError):
            MvNormalModel(np.array([-0.5, 0.0]), np.eye(2))
        with pytest.raises(ValueError):
            Normal(0.0, 1.0)

    def test_non_pd_cov_rejected(self):
        with pytest.raises(ValueError):
            MvNormalModel(np.array([-1.0, -1.0]),
                          np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(ValueError):
            MvNormalModel(np.array([-1.0, -1.0]),
                          np.array([[1.0, 0.5], [0.4, 1.0]]))

    def test_exchangeable_detection(self):
        assert exchangeable_mvnormal(4, -0.5, 0.3).exchangeable_parameters() \
            == pytest.approx((-0.5, 1.0, 0.3))
        m = MvNormalModel(np.array([-0.5, -0.6]), np.eye(2))
        assert m.exchangeable_parameters() is None


class TestTiltedSampling:
    @pytest.mark.parametrize("model,theta", [
        (exchangeable_mvnormal(3, -0.5, 0.4), np.array([0.8, -0.2, 0.1])),
        (IndependentModel([ShiftedExponential(2.0, -LOG2),
                           Normal(-0.5, 1.0)]), np.array([0.8718, -0.3])),
    ])
    def test_empirical_mean_matches_gradient(self, model, theta):
        rng = np.random.default_rng(42)
        n = 1_000_000
        draws = model.sample(theta, rng, size=n)
        want = model.cgf_grad(theta)
        got = draws.mean(axis=0)
        sd = draws.std(axis=0, ddof=1) / math.sqrt(n)
        assert np.all(np.abs(got - want) <= 4 * sd)

    def test_zero_tilt_is_base_distribution(self):
        model = IndependentModel([ShiftedExponential(2.0, -LOG2)])
        rng = np.random.default_rng(1)
        draws = model.sample(np.zeros(1), rng, size=200_000)[:, 0]
        assert draws.min() >= -LOG2
        assert draws.mean() == pytest.approx(0.5 - LOG2, abs=4 * 0.5 / math.sqrt(200_000))

    def test_tilted_exponential_is_rate_shifted(self):
        # tilting Exp(2)+c by t gives Exp(2-t)+c: check the empirical rate
        t = 0.8718
        comp = ShiftedExponential(2.0, -LOG2)
        rng = np.random.default_rng(2)
        draws = comp.sample(t, rng, size=400_000) + LOG2
        assert draws.mean() == pytest.approx(1.0 / (2.0 - t), rel=0.01)

    def test_single_draw_shape(self):
        model = exchangeable_mvnormal(3, -0.5, 0.2)
        x = model.sample(np.zeros(3), np.random.default_rng(0))
        assert x.shape == (3,)


class TestChangeOfMeasure:
    @pytest.mark.parametrize("model,theta,n", [
        (exchangeable_mvnormal(2, -0.5, 0.3), np.array([0.6, -0.1]), 4),
        (IndependentModel([ShiftedExponential(2.0, -LOG2),
                           Normal(-0.5, 1.0),
                           Normal(-1.0, 0.5)]),
         np.array([0.5, 0.4, -0.2]), 3),
    ])
    def test_identity_on_bounded_functional(self, model, theta, n):
        """E_theta[exp(-theta.S_n + n Lambda(theta)) g(S_n)] = E[g(S_n)]."""
        n_rep = 400_000
        lam = model.cgf(theta)

        def g(s):
            return np.tanh(s.sum(axis=1))

        rng = np.random.default_rng(11)
        tilted = model.sample(theta, rng, size=n_rep * n)
        tilted = tilted.reshape(n_rep, n, model.dim)
        s_tilted = tilted.sum(axis=1)
        w = np.exp(-(s_tilted @ theta) + n * lam) * g(s_tilted)

        base = model.sample(np.zeros(model.dim), rng, size=n_rep * n)
        base = base.reshape(n_rep, n, model.dim)
        v = g(base.sum(axis=1))

        se = math.hypot(w.std(ddof=1) / math.sqrt(n_rep),
                        v.std(ddof=1) / math.sqrt(n_rep))
        assert abs(w.mean() - v.mean()) <= 4 * se
