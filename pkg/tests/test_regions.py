"""Region classification and support-value checks, with an LP oracle for
the rearrangement minimum."""

import math

import numpy as np
import pytest
from itertools import combinations
from scipy.optimize import linprog

from wrongexit import (
    GapRule,
    Region,
    SiegmundRule,
    SumIntersectionRule,
    rearrangement_min,
)


def lp_oracle(theta, L):
    """min theta.x s.t. x >= 0, sum_{k in B} x_k >= 1 for all |B| = L."""
    theta = np.abs(np.asarray(theta, dtype=float))
    d = theta.size
    rows = []
    for B in combinations(range(d), L):
        row = np.zeros(d)
        row[list(B)] = -1.0
        rows.append(row)
    res = linprog(theta, A_ub=np.array(rows), b_ub=-np.ones(len(rows)),
                  bounds=[(0, None)] * d, method="highs")
    assert res.success
    return res.fun


class TestClassify:
    def test_siegmund_examples(self):
        rule = SiegmundRule(1.0, 1.0)
        assert rule.classify(np.array([-11.0, 12.0]), 10.0) == \
            Region(True, (1,))
        assert rule.classify(np.array([-11.0, -12.0]), 10.0) == Region(False)
        assert rule.classify(np.array([-11.0, 2.0]), 10.0) is None
        # boundary is open: exactly at the barrier does not stop
        assert rule.classify(np.array([-10.0, -12.0]), 10.0) is None

    def test_gap_examples(self):
        rule = GapRule(1)
        # top-1 gap 8-2=6 > 5, top set {0} = [m] -> reference
        out = rule.classify(np.array([8.0, 2.0, 1.0]), 5.0)
        assert out is not None and not out.rare
        out = rule.classify(np.array([2.0, 8.0, 1.0]), 5.0)
        assert out == Region(True, (1,))
        assert rule.classify(np.array([8.0, 3.5, 1.0]), 5.0) is None

    def test_gap_tie_handling(self):
        rule = GapRule(2)
        # tie exactly at gap == b does not stop (open regions)
        assert rule.classify(np.array([5.0, 5.0, 0.0]), 5.0) is None
        # ties inside the top set break by lowest index
        out = rule.classify(np.array([7.0, 7.0, 7.0, 0.0]), 5.0)
        assert out is None  # second/third largest tie -> gap 0
        out = rule.classify(np.array([7.0, 7.0, 0.5, 0.0]), 5.0)
        assert out is not None and not out.rare

    def test_sum_intersection_examples(self):
        rule = SumIntersectionRule(2)
        out = rule.classify(np.array([3.0, -2.0, -4.0]), 1.0)
        assert out is not None and not out.rare  # one positive < L
        out = rule.classify(np.array([3.0, 2.0, -4.0]), 1.0)
        assert out == Region(True, (0, 1))
        assert rule.classify(np.array([0.5, -0.4, -4.0]), 1.0) is None

    def test_scale_equivariance(self):
        rng = np.random.default_rng(0)
        rules = [SiegmundRule(1.0, 0.5), GapRule(2), SumIntersectionRule(2)]
        for rule in rules:
            for _ in range(200):
                x = rng.normal(scale=3.0, size=5)
                b = rng.uniform(0.5, 3.0)
                c = rng.uniform(0.1, 10.0)
                assert rule.classify(x, b) == rule.classify(c * x, c * b)

    def test_none_is_stable_under_small_perturbation(self):
        rule = SiegmundRule(1.0, 1.0)
        x = np.array([-5.0, 3.0])
        b = 10.0  # distances to barriers are >= 5
        rng = np.random.default_rng(1)
        assert rule.classify(x, b) is None
        for _ in range(100):
            assert rule.classify(x + rng.uniform(-1, 1, 2), b) is None

    def test_first_hit_matches_classify(self):
        rng = np.random.default_rng(2)
        rules = [SiegmundRule(0.7, 1.3), GapRule(2), SumIntersectionRule(2)]
        for rule in rules:
            for _ in range(50):
                states = np.cumsum(rng.normal(size=(60, 5)), axis=0) * 2.0
                b = 3.0
                idx, region = rule.first_hit(states, b)
                per_row = [rule.classify(states[i], b) for i in range(60)]
                stops = [i for i, r in enumerate(per_row) if r is not None]
                if idx < 0:
                    assert not stops
                else:
                    assert idx == stops[0]
                    assert region == per_row[idx]


class TestSupportValue:
    def test_siegmund_formula(self):
        rule = SiegmundRule(1.0, 1.0)
        val = rule.support_value(np.array([1.0, -0.5]), Region(True, (0,)))
        assert val == pytest.approx(1.5)
        # wrong sign pattern -> -inf
        val = rule.support_value(np.array([-1.0, -0.5]), Region(True, (0,)))
        assert val == -math.inf

    def test_gap_formula(self):
        rule = GapRule(2)
        t = 0.7
        theta = np.array([-t, 0.0, t, 0.0])
        val = rule.support_value(theta, Region(True, (1, 2)))
        assert val == pytest.approx(t)
        # non-zero-sum -> -inf
        val = rule.support_value(np.array([-t, 0.0, 2 * t, 0.0]),
                                 Region(True, (1, 2)))
        assert val == -math.inf

    def test_si_indicator_pattern(self):
        rule = SumIntersectionRule(3)
        t = 0.4
        theta = np.zeros(6)
        theta[[0, 2, 4]] = t
        val = rule.support_value(theta, Region(True, (0, 2, 4)))
        assert val == pytest.approx(t)

    def test_positive_homogeneity(self):
        rng = np.random.default_rng(3)
        rules = [(SiegmundRule(1.0, 2.0), Region(True, (0, 2))),
                 (SumIntersectionRule(2), Region(True, (0, 2)))]
        for rule, region in rules:
            for _ in range(50):
                theta = rng.normal(size=5)
                theta[[0, 2]] = np.abs(theta[[0, 2]])
                theta[[1, 3, 4]] = -np.abs(theta[[1, 3, 4]])
                c = rng.uniform(0.1, 5.0)
                v1 = rule.support_value(theta, region)
                v2 = rule.support_value(c * theta, region)
                assert v2 == pytest.approx(c * v1, rel=1e-12)

    def test_sign_tolerance(self):
        rule = SiegmundRule(1.0, 1.0)
        theta = np.array([1.0, 5e-13])  # slightly positive off A
        val = rule.support_value(theta, Region(True, (0,)))
        assert math.isfinite(val)


class TestRearrangementMin:
    def test_hand_examples(self):
        assert rearrangement_min([3.0, 2.0, 1.0], 1) == pytest.approx(6.0)
        t = 0.37
        assert rearrangement_min([t, t, t, 0, 0], 2) == pytest.approx(1.5 * t)

    def test_indicator_value(self):
        theta = np.zeros(7)
        theta[:3] = 2.2
        assert rearrangement_min(theta, 3) == pytest.approx(2.2)

    def test_L_bounds(self):
        with pytest.raises(ValueError):
            rearrangement_min([1.0, 2.0], 3)
        with pytest.raises(ValueError):
            rearrangement_min([1.0, 2.0], 0)

    def test_matches_lp_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            d = rng.integers(2, 7)
            L = rng.integers(1, min(4, d) + 1)
            theta = rng.uniform(0, 3, size=d) * rng.choice([-1, 1], size=d)
            got = rearrangement_min(theta, int(L))
            want = lp_oracle(theta, int(L))
            assert got == pytest.approx(want, abs=1e-9)
