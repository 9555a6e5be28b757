"""GRPO group advantages, the masked multi-turn surrogate and the KL-Coverage term.

Token-level quantities are gathered once per optimizer step into a
:class:`TokenBatch` (flat numpy arrays); the public operations accept either
rollout groups or a prebuilt batch.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import kernels
from .errors import EmptyBatch, GroupTooSmall, MissingDistribution, NoValidTokens, SupportMismatch
from .rewards import RewardBreakdown

NUMERIC_TOKEN = re.compile(r"^\s*[0-9.]*[0-9][0-9.]*\s*$|^\s*\.\s*$")
DIST_TOL = 1e-6


@dataclass
class TokenRecord:
    position: int
    token_text: str
    logprob_old: float
    logprob_new: float
    validity: int = 1
    in_answer_span: int = 0
    is_numeric: int = 0
    dist_old: Optional[Mapping[str, float]] = None
    dist_new: Optional[Mapping[str, float]] = None

    def __post_init__(self):
        if self.is_numeric and not NUMERIC_TOKEN.match(self.token_text):
            raise ValueError(f"token {self.token_text!r} flagged numeric but is not digits/point")
        for name in ("dist_old", "dist_new"):
            dist = getattr(self, name)
            if dist is not None:
                total = math.fsum(dist.values())
                if abs(total - 1.0) > DIST_TOL or min(dist.values()) < 0:
                    raise ValueError(f"{name} at position {self.position} is not a distribution (sum={total})")

    @property
    def is_candidate(self) -> bool:
        return bool(self.is_numeric and self.in_answer_span and self.validity)


@dataclass
class TrajectoryRecord:
    query_id: Union[str, int]
    rollout_index: int
    tokens: List[TokenRecord]
    parsed: list = field(default_factory=list)
    reward: Optional[RewardBreakdown] = None
    advantage: float = 0.0

    @property
    def valid_count(self) -> int:
        return sum(1 for t in self.tokens if t.validity)


@dataclass
class RolloutGroup:
    query_id: Union[str, int]
    trajectories: List[TrajectoryRecord]
    r_gt: float = float("nan")


@dataclass(frozen=True)
class KlcConfig:
    p: float = 0.02
    beta_kl: float = 0.04
    min_masked: int = 1

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")
        if self.beta_kl < 0:
            raise ValueError("beta_kl must be >= 0")
        if self.min_masked < 1:
            raise ValueError("min_masked must be >= 1")

    def mask_size(self, candidate_count: int) -> int:
        if candidate_count <= 0:
            return 0
        # p * count can land just below an exact integer in binary (0.29 * 100)
        raw = math.floor(self.p * candidate_count + 1e-9)
        return min(candidate_count, max(self.min_masked, raw))


@dataclass(frozen=True)
class KlcMask:
    selected: Tuple[Tuple, ...]  # (query_id, rollout_index, position), in selection order
    candidate_count: int
    cov_scores: Dict[Tuple, float]
    indices: Tuple[int, ...] = ()  # flat token indices into the TokenBatch

    def __len__(self) -> int:
        return len(self.selected)


@dataclass
class TokenBatch:
    """All tokens of one optimizer step as flat arrays (trajectory-major)."""

    lp_old: np.ndarray
    lp_new: np.ndarray
    valid: np.ndarray
    candidate: np.ndarray
    adv: np.ndarray  # trajectory advantage broadcast to its tokens
    offsets: np.ndarray  # trajectory boundaries
    traj_group: np.ndarray  # group index of each trajectory
    keys: List[Tuple]
    tokens: List[TokenRecord]

    @classmethod
    def from_groups(cls, groups: Sequence[RolloutGroup]) -> "TokenBatch":
        tokens: List[TokenRecord] = []
        keys: List[Tuple] = []
        adv: List[float] = []
        sizes: List[int] = []
        traj_group: List[int] = []
        for g_idx, group in enumerate(groups):
            for traj in group.trajectories:
                for tok in traj.tokens:
                    tokens.append(tok)
                    keys.append((traj.query_id, traj.rollout_index, tok.position))
                    adv.append(traj.advantage)
                sizes.append(len(traj.tokens))
                traj_group.append(g_idx)
        offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
        np.cumsum(sizes, out=offsets[1:])
        return cls(
            lp_old=np.array([t.logprob_old for t in tokens], dtype=np.float64),
            lp_new=np.array([t.logprob_new for t in tokens], dtype=np.float64),
            valid=np.array([1.0 if t.validity else 0.0 for t in tokens]),
            candidate=np.array([t.is_candidate for t in tokens], dtype=bool),
            adv=np.array(adv, dtype=np.float64),
            offsets=offsets,
            traj_group=np.array(traj_group, dtype=np.int64),
            keys=keys,
            tokens=tokens,
        )


def _as_batch(batch) -> TokenBatch:
    return batch if isinstance(batch, TokenBatch) else TokenBatch.from_groups(batch)


def group_advantages(group: RolloutGroup, eps: float = 1e-8) -> RolloutGroup:
    """Standardise total rewards within the group (population std)."""
    if len(group.trajectories) < 2:
        raise GroupTooSmall(f"group {group.query_id!r} has {len(group.trajectories)} trajectories")
    if not eps > 0:
        raise ValueError("eps must be > 0")
    rewards = np.array([t.reward.total for t in group.trajectories], dtype=np.float64)
    adv = standardize(rewards, eps)
    for traj, a in zip(group.trajectories, adv):
        traj.advantage = float(a)
    return group


def standardize(rewards: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    centered = rewards - rewards.mean()
    return centered / (rewards.std() + eps)


def token_covariance(batch) -> np.ndarray:
    """Centered cross-product of current log-prob and advantage per valid token.

    Returns an array aligned with the batch tokens; invalid tokens get NaN.
    """
    batch = _as_batch(batch)
    valid = batch.valid > 0
    if valid.sum() < 2:
        raise EmptyBatch("token covariance needs at least two valid tokens")
    out = np.full(len(batch.valid), np.nan)
    out[valid] = kernels.token_covariance(batch.lp_new[valid], batch.adv[valid])
    return out


def select_klc_mask(batch, cfg: KlcConfig, cov: Optional[np.ndarray] = None) -> KlcMask:
    batch = _as_batch(batch)
    cand = np.flatnonzero(batch.candidate & (batch.valid > 0))
    if len(cand) == 0:
        return KlcMask(selected=(), candidate_count=0, cov_scores={}, indices=())
    if cov is None:
        cov = token_covariance(batch)
    order = sorted(cand, key=lambda i: (-cov[i], batch.keys[i]))
    chosen = order[: cfg.mask_size(len(cand))]
    return KlcMask(
        selected=tuple(batch.keys[i] for i in chosen),
        candidate_count=len(cand),
        cov_scores={batch.keys[i]: float(cov[i]) for i in cand},
        indices=tuple(int(i) for i in chosen),
    )


def kl_divergence(p_old: Mapping[str, float], p_new: Mapping[str, float]) -> float:
    if set(p_old) != set(p_new):
        raise SupportMismatch("old and new distributions have different supports")
    total = 0.0
    for v, p in p_old.items():
        if p > 0:
            q = p_new[v]
            total += math.inf if q <= 0 else p * math.log(p / q)
    return total


def klc_loss(mask: KlcMask, batch) -> float:
    """Mean old-to-new KL over the masked tokens; 0 for an empty mask."""
    if len(mask) == 0:
        return 0.0
    batch = _as_batch(batch)
    if mask.indices:
        toks = [batch.tokens[i] for i in mask.indices]
    else:
        lookup = {k: i for i, k in enumerate(batch.keys)}
        toks = [batch.tokens[lookup[k]] for k in mask.selected]
    losses = []
    for tok in toks:
        if tok.dist_old is None or tok.dist_new is None:
            raise MissingDistribution(f"token at position {tok.position} lacks logged distributions")
        losses.append(kl_divergence(tok.dist_old, tok.dist_new))
    return math.fsum(losses) / len(losses)


def trajectory_surrogates(batch: TokenBatch, eps_clip: float) -> np.ndarray:
    n_traj = len(batch.offsets) - 1
    traj = np.repeat(np.arange(n_traj), np.diff(batch.offsets))
    if (np.bincount(traj, weights=batch.valid, minlength=n_traj) <= 0).any():
        raise NoValidTokens("every trajectory needs at least one valid token")
    return kernels.trajectory_surrogates(batch.lp_new, batch.lp_old, batch.adv, batch.valid, batch.offsets, eps_clip)


def clipped_surrogate(group: RolloutGroup, eps_clip: float = 0.2) -> float:
    """Validity-masked clipped surrogate, averaged over the group's trajectories."""
    if not 0 < eps_clip < 1:
        raise ValueError("eps_clip must lie in (0, 1)")
    batch = TokenBatch.from_groups([group])
    if len(batch.offsets) < 2:
        raise NoValidTokens(f"group {group.query_id!r} has no trajectories")
    return float(trajectory_surrogates(batch, eps_clip).mean())


@dataclass(frozen=True)
class StepReport:
    surrogate: float
    klc: float
    objective: float
    mask_size: int
    candidate_count: int

    def to_dict(self) -> dict:
        return {
            "surrogate": self.surrogate,
            "klc": self.klc,
            "objective": self.objective,
            "mask_size": self.mask_size,
            "candidate_count": self.candidate_count,
        }


def grpo_step_objective(groups: Sequence[RolloutGroup], cfg: KlcConfig, eps_clip: float = 0.2,
                        mask: Optional[KlcMask] = None) -> StepReport:
    """Mean group surrogate minus ``beta_kl`` times the KL-Coverage loss.

    ``mask`` may be supplied to hold the token selection fixed (it is a
    stop-gradient quantity); by default it is selected from ``groups``.
    """
    if not 0 < eps_clip < 1:
        raise ValueError("eps_clip must lie in (0, 1)")
    batch = TokenBatch.from_groups(groups)
    per_traj = trajectory_surrogates(batch, eps_clip)
    n_groups = len(groups)
    per_group = np.bincount(batch.traj_group, weights=per_traj, minlength=n_groups)
    per_group /= np.bincount(batch.traj_group, minlength=n_groups)
    surrogate = float(per_group.mean())
    if mask is None:
        mask = select_klc_mask(batch, cfg)
    klc = klc_loss(mask, batch)
    return StepReport(
        surrogate=surrogate,
        klc=klc,
        objective=surrogate - cfg.beta_kl * klc,
        mask_size=len(mask),
        candidate_count=mask.candidate_count,
    )
