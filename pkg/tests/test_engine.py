"""Estimator correctness: determinism, unbiasedness, and bookkeeping."""

import math

import numpy as np
import pytest

from wrongexit import (
    IndependentModel,
    MvNormalModel,
    Normal,
    ShiftedExponential,
    SiegmundRule,
    SumIntersectionRule,
    GapRule,
    exchangeable_mvnormal,
)
from wrongexit.engine import (
    EstimatorRun,
    RunConfig,
    _mixture_estimate,
    decay_scan,
    default_max_steps,
    estimate_wrong_exit,
    path_estimate,
    path_rng,
    plain_mc,
    simulate_path,
    PathStreams,
)
from wrongexit.proposals import (
    MixtureProposal,
    build_gap,
    build_siegmund,
    build_sum_intersection,
)

LOG2 = math.log(2.0)
RULE11 = SiegmundRule(1.0, 1.0)


def siegmund_d2():
    return IndependentModel([Normal(-0.5, 1.0)] * 2)


class TestRunConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            RunConfig(b=0.0, n_paths=10, seed=0)
        with pytest.raises(ValueError):
            RunConfig(b=1.0, n_paths=0, seed=0)
        with pytest.raises(ValueError):
            RunConfig(b=1.0, n_paths=10, seed=0, max_steps=0)
        with pytest.raises(ValueError):
            RunConfig(b=1.0, n_paths=10, seed=0, workers=0)


class TestStreams:
    def test_shared_stream_matches_fresh_generator(self):
        streams = PathStreams(99)
        for i in (0, 1, 17, 2**40):
            a = streams.get(i).standard_normal(8)
            b = path_rng(99, i).standard_normal(8)
            np.testing.assert_array_equal(a, b)


class TestSimulatePath:
    def test_truncation_when_regions_unreachable(self):
        model = siegmund_d2()
        out = simulate_path(model, np.zeros(2), RULE11, 50.0, 1,
                            path_rng(0, 0))
        assert out.truncated and out.region is None and out.steps == 1
        assert not out.wrong

    def test_strong_negative_drift_exits_reference(self):
        model = IndependentModel([Normal(-2.0, 0.25)])
        wrongs = 0
        for i in range(200):
            out = simulate_path(model, np.zeros(1), SiegmundRule(1, 1), 5.0,
                                10_000, path_rng(1, i))
            assert not out.truncated
            wrongs += out.wrong
        assert wrongs == 0

    def test_tally_concentrates_under_singleton_tilt(self):
        comp = ShiftedExponential(2.0, -LOG2)
        model = IndependentModel([comp] * 5)
        prop, _ = build_siegmund("theta0", model, 1.0, 1.0)
        b = 20.0
        ms = default_max_steps(model, prop.thetas, b)
        hits = {}
        for i in range(500):
            out = simulate_path(model, prop.thetas[0], RULE11, b, ms,
                                path_rng(7, i))
            key = out.region.key if out.region else "trunc"
            hits[key] = hits.get(key, 0) + 1
        assert hits.get("A=0", 0) >= 0.95 * 500

    def test_terminal_state_is_classified_region(self):
        model = exchangeable_mvnormal(3, -0.5, 0.2)
        rule = SumIntersectionRule(2)
        for i in range(50):
            out = simulate_path(model, np.zeros(3), rule, 2.0, 10_000,
                                path_rng(3, i))
            assert rule.classify(out.terminal_state, 2.0) == out.region


class TestEstimator:
    def test_plain_equals_theta_zero_mixture(self):
        model = siegmund_d2()
        cfg = RunConfig(b=4.0, n_paths=5000, seed=21)
        zero = MixtureProposal(np.zeros((1, 2)), np.zeros(1), ["plain[0]"],
                               {"kind": "siegmund"}, "plain")
        a = estimate_wrong_exit(model, zero, RULE11, cfg)
        b = plain_mc(model, RULE11, cfg)
        assert a.mean == b.mean
        assert a.second_moment == b.second_moment
        assert a.exit_tally == b.exit_tally

    def test_mixture_of_one_equivalence(self):
        model = siegmund_d2()
        prop, _ = build_siegmund("theta0", model, 1.0, 1.0)
        single = MixtureProposal(prop.thetas[:1], prop.lambdas[:1],
                                 ["beta[{0}]"], prop.problem, "one")
        cfg = RunConfig(b=4.0, n_paths=2000, seed=5)
        run = estimate_wrong_exit(model, single, RULE11, cfg)
        ms = default_max_steps(model, single.thetas, 4.0)
        from wrongexit.engine import _block_hint
        vals = []
        for i in range(2000):
            res = path_estimate(model, single, RULE11, 4.0, ms,
                                path_rng(5, i), block_hint=_block_hint(ms))
            vals.append(res.estimate)
        assert run.mean == np.mean(vals)

    def test_worker_count_invariance(self):
        model = exchangeable_mvnormal(3, -0.5, 0.2)
        prop, _ = build_siegmund("theta1", model, 1.0, 1.0)
        runs = [
            estimate_wrong_exit(model, prop, RULE11,
                                RunConfig(b=4.0, n_paths=3000, seed=9,
                                          workers=w))
            for w in (1, 2, 3)
        ]
        for r in runs[1:]:
            assert r.mean == runs[0].mean
            assert r.second_moment == runs[0].second_moment
            assert r.exit_tally == runs[0].exit_tally

    def test_chunk_reordering_stability(self):
        # pairwise summation keeps the moments stable to 1e-12 under
        # reordering of equal-sized chunks
        rng = np.random.default_rng(0)
        vals = np.exp(rng.uniform(-25, 0, size=40_000))
        chunks = vals.reshape(8, -1)
        perm = rng.permutation(8)
        m1 = float(np.mean(np.concatenate([c for c in chunks])))
        m2 = float(np.mean(np.concatenate([chunks[i] for i in perm])))
        assert m2 == pytest.approx(m1, rel=1e-12)

    def test_zero_on_reference_positive_on_rare(self):
        model = siegmund_d2()
        prop, _ = build_siegmund("theta0", model, 1.0, 1.0)
        ms = default_max_steps(model, prop.thetas, 3.0)
        for i in range(300):
            res = path_estimate(model, prop, RULE11, 3.0, ms, path_rng(2, i))
            if res.outcome.wrong:
                assert res.estimate > 0
            else:
                assert res.estimate == 0.0

    def test_tally_conservation(self):
        model = siegmund_d2()
        cfg = RunConfig(b=2.0, n_paths=4000, seed=31, max_steps=25)
        run = plain_mc(model, RULE11, cfg)
        assert sum(run.exit_tally.values()) == run.n - run.truncation_count
        assert run.truncation_count > 0  # tight cap must truncate some

    def test_unbiasedness_against_plain_mc(self):
        cases = []
        model = siegmund_d2()
        prop, _ = build_siegmund("theta1", model, 1.0, 1.0)
        cases.append((model, prop, RULE11, 4.0))
        gmodel = MvNormalModel(np.array([0.5, 0.5, -0.5, -0.5]), np.eye(4))
        gprop, _ = build_gap("t0", gmodel, 2)
        cases.append((gmodel, gprop, GapRule(2), 4.0))
        simodel = exchangeable_mvnormal(3, -0.5, 0.0)
        siprop, _ = build_sum_intersection(simodel, 2)
        cases.append((simodel, siprop, SumIntersectionRule(2), 4.0))
        for model, prop, rule, b in cases:
            mix = estimate_wrong_exit(model, prop, rule,
                                      RunConfig(b=b, n_paths=20_000, seed=41))
            plain = plain_mc(model, rule,
                             RunConfig(b=b, n_paths=200_000, seed=42))
            z = (mix.mean - plain.mean) / math.hypot(mix.std_error,
                                                     plain.std_error)
            assert abs(z) <= 3.0, (rule.kind, mix.mean, plain.mean, z)

    def test_relative_error_definition(self):
        model = siegmund_d2()
        prop, _ = build_siegmund("theta0", model, 1.0, 1.0)
        run = estimate_wrong_exit(model, prop, RULE11,
                                  RunConfig(b=4.0, n_paths=5000, seed=8))
        assert run.relative_error == pytest.approx(
            run.std_error / run.mean, rel=1e-12)

    def test_dimension_mismatch_rejected(self):
        model = siegmund_d2()
        prop = MixtureProposal(np.zeros((1, 3)), np.zeros(1), ["x"],
                               {"kind": "siegmund"})
        with pytest.raises(ValueError):
            estimate_wrong_exit(model, prop, RULE11,
                                RunConfig(b=1.0, n_paths=10, seed=0))


class TestNumerics:
    def test_log_space_safety(self):
        # |theta . S_T| up to 1e4 never raises; the astronomically large
        # realization degrades to inf, the tiny one underflows to 0
        est = _mixture_estimate(3, np.array([-1.0e4, -9.9e3, -1.01e4]))
        assert est == math.inf
        est = _mixture_estimate(2, np.array([9.9e3, 1.0e4]))
        assert est >= 0.0
        assert math.isfinite(_mixture_estimate(1, np.array([0.0])))
        est = _mixture_estimate(2, np.array([-600.0, -580.0]))
        assert math.isfinite(est) and est > 0

    def test_default_max_steps_scales_with_b(self):
        model = siegmund_d2()
        thetas = np.zeros((1, 2))
        assert default_max_steps(model, thetas, 10.0) == \
            pytest.approx(50 * 10 / 0.5, abs=1)
        assert default_max_steps(model, thetas, 20.0) >= \
            default_max_steps(model, thetas, 10.0)


class TestDecayScan:
    def test_single_point_grid(self):
        model = siegmund_d2()
        prop, _ = build_siegmund("theta0", model, 1.0, 1.0)
        rows = decay_scan(model, prop, RULE11, [3.0], 500, 3)
        assert len(rows) == 1
        assert rows[0]["p_hat"] > 0

    def test_grid_must_ascend(self):
        model = siegmund_d2()
        prop, _ = build_siegmund("theta0", model, 1.0, 1.0)
        with pytest.raises(ValueError):
            decay_scan(model, prop, RULE11, [3.0, 2.0], 100, 0)

    def test_exponential_decay_visible(self):
        model = siegmund_d2()
        prop, _ = build_siegmund("theta0", model, 1.0, 1.0)
        rows = decay_scan(model, prop, RULE11, [3.0, 5.0, 7.0], 4000, 13)
        logs = [-math.log(r["p_hat"]) for r in rows]
        assert logs[0] < logs[1] < logs[2]
