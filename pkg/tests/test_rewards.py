import math

import numpy as np
import pytest

from iqa_rl.errors import BatchTooSmall, InvalidSigma, ZeroProbability
from iqa_rl.rewards import (
    GroupRatings,
    RewardCoefficients,
    normal_cdf,
    rank_reward,
    rank_rewards,
    score_reward,
    score_reward_grad,
    sft_loss,
    sft_loss_mean,
    thurstone_preference,
    total_reward,
)

# Reference values computed with 40-digit arithmetic (mpmath) and frozen here.
SCORE_2_4 = 8.1185383491440564391e-8  # exp(-4 / (2 * 0.35**2))
PHI_1 = 0.84134474606854294859
PHI_FLOORED = 0.76024993890652326884  # Phi(0.01 / sqrt(2e-4))


class TestScoreReward:
    def test_exact_match(self):
        assert score_reward(3.0, 3.0, 0.35) == 1.0

    def test_one_sigma(self):
        assert abs(score_reward(3.35, 3.0, 0.35) - math.exp(-0.5)) < 1e-12

    def test_far(self):
        assert score_reward(2.0, 4.0, 0.35) == pytest.approx(SCORE_2_4, rel=1e-12)

    def test_symmetric_and_monotone(self):
        d = np.linspace(0, 4, 50)
        left = score_reward(3.0 - d, 3.0, 0.35)
        right = score_reward(3.0 + d, 3.0, 0.35)
        np.testing.assert_allclose(left, right, rtol=1e-12)
        assert np.all(np.diff(right) <= 0)

    @pytest.mark.parametrize("sigma", [0.0, -0.1, float("nan")])
    def test_bad_sigma(self, sigma):
        with pytest.raises(InvalidSigma):
            score_reward(3.0, 3.0, sigma)

    def test_gradient_sign(self):
        assert score_reward_grad(2.9, 3.0, 0.35) > 0
        assert score_reward_grad(3.1, 3.0, 0.35) < 0
        assert score_reward_grad(3.0, 3.0, 0.35) == 0


class TestThurstone:
    def test_cdf_values(self):
        assert abs(normal_cdf(1.0) - PHI_1) < 1e-15
        assert normal_cdf(0.0) == 0.5

    def test_floor_applies(self):
        assert abs(thurstone_preference(3.01, 3.0, 0.0, 0.0) - PHI_FLOORED) < 1e-14

    def test_even(self):
        assert thurstone_preference(3.0, 3.0, 0.2, 0.3) == 0.5


def _groups(*specs):
    return [GroupRatings(f"img{i}", mos, ratings) for i, (mos, ratings) in enumerate(specs)]


class TestRankReward:
    def test_perfect_agreement(self):
        # two groups far apart, each ordered like the MOS: preference ~ 1 and matches p* = 1
        groups = _groups((4.5, [4.5, 4.6, 4.4]), (1.5, [1.5, 1.4, 1.6]))
        for arr in rank_rewards(groups):
            np.testing.assert_allclose(arr, 1.0, atol=1e-12)

    def test_inverted(self):
        groups = _groups((4.5, [1.5, 1.6]), (1.5, [4.5, 4.4]))
        for arr in rank_rewards(groups):
            np.testing.assert_allclose(arr, 0.0, atol=1e-12)

    def test_tied_mos_target_half(self):
        groups = _groups((3.0, [3.0, 3.0]), (3.0, [3.0, 3.0]))
        # p = 0.5 and p* = 0.5 -> coefficient 1
        for arr in rank_rewards(groups):
            np.testing.assert_allclose(arr, 1.0, atol=1e-15)

    def test_single_group_raises(self):
        with pytest.raises(BatchTooSmall):
            rank_rewards(_groups((3.0, [3.0, 3.2])))

    def test_scalar_accessor(self):
        groups = _groups((4.0, [3.9, 4.2]), (2.0, [2.5, 1.9]), (3.0, [3.0, 3.1]))
        arrs = rank_rewards(groups)
        assert rank_reward(groups, 1, 2) == arrs[2][1]

    def test_bounded(self):
        rng = np.random.default_rng(1)
        groups = _groups(*[(float(rng.uniform(1, 5)), list(rng.uniform(1, 5, 6))) for _ in range(5)])
        for arr in rank_rewards(groups):
            assert np.all((arr >= 0) & (arr <= 1 + 1e-15))


class TestTotalAndSft:
    def test_total_default_weights(self):
        out = total_reward(1.0, 0.5, 0.25)
        assert out.total == 1.0 + 0.5 + 2 * 0.25
        assert out.to_dict() == {"format": 1.0, "score": 0.5, "rank": 0.25, "total": 2.0}

    def test_custom_weights(self):
        assert total_reward(0.0, 1.0, 1.0, RewardCoefficients(alpha=0.5, beta=0.0)).total == 0.5

    def test_sft_ln4(self):
        assert sft_loss([0.5, 0.5]) == pytest.approx(1.3862943611198906188, abs=1e-15)
        assert sft_loss_mean([0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)

    def test_sft_zero_probability(self):
        with pytest.raises(ZeroProbability):
            sft_loss([0.5, 0.0])

    def test_coefficients_reject_sigma(self):
        with pytest.raises(InvalidSigma):
            RewardCoefficients(sigma=0)
