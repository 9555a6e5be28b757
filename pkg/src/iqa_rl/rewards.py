"""Score, rank and total rewards, plus the SFT cross-entropy over logged probabilities."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from . import kernels
from .errors import BatchTooSmall, InvalidSigma, ZeroProbability

DEFAULT_V_FLOOR = 1e-4


@dataclass(frozen=True)
class RewardCoefficients:
    alpha: float = 1.0
    beta: float = 2.0
    sigma: float = 0.35

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidSigma(f"sigma must be > 0, got {self.sigma}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")


@dataclass(frozen=True)
class RewardBreakdown:
    format: float
    score: float
    rank: float
    total: float

    def to_dict(self) -> dict:
        return {"format": self.format, "score": self.score, "rank": self.rank, "total": self.total}


@dataclass(frozen=True)
class GroupRatings:
    image_id: str
    mos: float
    ratings: Sequence[float]

    def __post_init__(self):
        if len(self.ratings) < 1:
            raise ValueError(f"group {self.image_id!r} has no ratings")


def score_reward(r_pred, r_gt, sigma: float):
    """Gaussian closeness reward ``exp(-(r_pred - r_gt)^2 / (2 sigma^2))``."""
    if not sigma > 0:
        raise InvalidSigma(f"sigma must be > 0, got {sigma}")
    diff = np.subtract(r_pred, r_gt)
    out = np.exp(-(diff * diff) / (2.0 * sigma * sigma))
    return float(out) if np.ndim(out) == 0 else out


def score_reward_grad(r_pred, r_gt, sigma: float):
    """Derivative of :func:`score_reward` with respect to ``r_pred``."""
    return -np.subtract(r_pred, r_gt) / (sigma * sigma) * score_reward(r_pred, r_gt, sigma)


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def thurstone_preference(r_ki: float, mu_j: float, v_i: float, v_j: float, v_floor: float = DEFAULT_V_FLOOR) -> float:
    """P(rollout rating ``r_ki`` beats an opponent with mean ``mu_j``)."""
    scale = math.sqrt(max(v_i, v_floor) + max(v_j, v_floor))
    return normal_cdf((r_ki - mu_j) / scale)


def _flatten(groups: Sequence[GroupRatings]):
    sizes = [len(g.ratings) for g in groups]
    offsets = np.zeros(len(groups) + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    ratings = np.fromiter((r for g in groups for r in g.ratings), dtype=np.float64, count=int(offsets[-1]))
    mos = np.array([g.mos for g in groups], dtype=np.float64)
    return ratings, offsets, mos


def rank_rewards(groups: Sequence[GroupRatings], v_floor: float = DEFAULT_V_FLOOR) -> List[np.ndarray]:
    """Rank reward of every rollout of every image in the batch.

    Returns one array per group, aligned with ``group.ratings``.
    """
    if len(groups) < 2:
        raise BatchTooSmall(f"rank reward needs at least two images, got {len(groups)}")
    ratings, offsets, mos = _flatten(groups)
    flat = kernels.rank_rewards(ratings, offsets, mos, v_floor)
    return [flat[offsets[g]:offsets[g + 1]] for g in range(len(groups))]


def rank_reward(groups: Sequence[GroupRatings], k: int, i: int, v_floor: float = DEFAULT_V_FLOOR) -> float:
    return float(rank_rewards(groups, v_floor)[i][k])


def total_reward(format: float, score: float, rank: float, coeffs: RewardCoefficients = RewardCoefficients()) -> RewardBreakdown:
    total = format + coeffs.alpha * score + coeffs.beta * rank
    return RewardBreakdown(format=format, score=score, rank=rank, total=total)


def sft_loss(logged_probs: Sequence[float]) -> float:
    """Summed negative log-likelihood of the ground-truth tokens."""
    p = np.asarray(logged_probs, dtype=np.float64)
    if np.any(p <= 0):
        raise ZeroProbability("logged probability must be > 0")
    if np.any(p > 1):
        raise ValueError("logged probability must be <= 1")
    return float(-np.log(p).sum())


def sft_loss_mean(logged_probs: Sequence[float]) -> float:
    return sft_loss(logged_probs) / len(logged_probs)
