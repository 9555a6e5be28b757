"""Desk-scale GRPO simulator on a categorical rating policy.

Each synthetic image owns one row of logits over the 17 rating symbols
1.00, 1.25, ..., 5.00. A sampled symbol is the single numeric answer token
of a minimal structured response, so every trajectory contributes exactly
one KL-Coverage candidate and the covariance ranking runs across rollouts.

The objective is differentiable in closed form, which lets
:meth:`ToyStep.gradient` return the exact gradient that the finite
difference checks compare against.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import List, Optional, Sequence

import numpy as np

from . import metrics, policy, resample, rewards
from .config import EngineConfig
from .policy import KlcMask, RolloutGroup, TokenBatch, TokenRecord, TrajectoryRecord
from .response import format_reward, parse_response, render_think

RATINGS = np.round(np.arange(1.0, 5.0001, 0.25), 2)
SYMBOLS = tuple(f"{r:.2f}" for r in RATINGS)
VOCAB = len(RATINGS)
IMAGE_DIMS = (512, 384)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def entropy(probs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log(probs), 0.0)
    return -terms.sum(axis=-1)


@dataclass
class ToyPolicy:
    logits: np.ndarray  # (contexts, VOCAB)

    @classmethod
    def random(cls, contexts: int, scale: float, rng: np.random.Generator) -> "ToyPolicy":
        return cls(rng.normal(0.0, scale, size=(contexts, VOCAB)))

    def probs(self) -> np.ndarray:
        return softmax(self.logits)

    def expected_ratings(self) -> np.ndarray:
        return self.probs() @ RATINGS

    def mean_entropy(self) -> float:
        return float(entropy(self.probs()).mean())


@dataclass(frozen=True)
class SyntheticImage:
    id: str
    context: int
    mos: float


def make_images(n: int, rng: np.random.Generator) -> List[SyntheticImage]:
    """MOS values skewed towards the upper-middle of the scale, thin tails at both ends."""
    mos = 1.0 + 4.0 * rng.beta(4.0, 3.0, size=n)
    return [SyntheticImage(f"img{i:04d}", i, round(float(m), 2)) for i, m in enumerate(mos)]


@lru_cache(maxsize=None)
def _response_text(symbol: str) -> str:
    think = render_think(
        "Synthetic image.",
        "A cleaner render would remove the simulated degradation.",
        "Simulated degradation at a fixed level.",
        "Global issue, no crop needed.",
    )
    return f'<think>\n{think}\n</think>\n<answer>{{"bbox_2d": [0, 0, 0, 0], "rating": {symbol}, "tool": "final"}}</answer>'


@lru_cache(maxsize=None)
def _parsed(symbol: str):
    return parse_response(_response_text(symbol), IMAGE_DIMS, 1)


def rollout(toy: ToyPolicy, image: SyntheticImage, G: int, rng: np.random.Generator,
            query_id: Optional[str] = None) -> RolloutGroup:
    """Sample ``G`` ratings for ``image`` and wrap each as a one-token trajectory."""
    if G < 2:
        raise ValueError("G must be >= 2")
    probs = softmax(toy.logits[image.context])
    logp = log_softmax(toy.logits[image.context])
    dist = dict(zip(SYMBOLS, probs.tolist()))
    actions = rng.choice(VOCAB, size=G, p=probs)
    qid = query_id or image.id
    trajs = []
    for k, a in enumerate(actions):
        tok = TokenRecord(
            position=0,
            token_text=SYMBOLS[a],
            logprob_old=float(logp[a]),
            logprob_new=float(logp[a]),
            validity=1,
            in_answer_span=1,
            is_numeric=1,
            dist_old=dist,
            dist_new=dist,
        )
        trajs.append(TrajectoryRecord(qid, k, [tok], parsed=[_parsed(SYMBOLS[a])]))
    return RolloutGroup(qid, trajs, r_gt=image.mos)


def score_groups(groups: Sequence[RolloutGroup], cfg: EngineConfig) -> None:
    """Attach format/score/rank/total rewards and group advantages in place."""
    ratings = [[t.parsed[-1].answer.rating for t in g.trajectories] for g in groups]
    batch = [rewards.GroupRatings(g.query_id, g.r_gt, r) for g, r in zip(groups, ratings)]
    ranks = rewards.rank_rewards(batch, cfg.v_floor)
    coeffs = cfg.coefficients()
    for g, r, rank in zip(groups, ratings, ranks):
        scores = rewards.score_reward(np.array(r), g.r_gt, cfg.sigma)
        for t, s, rk in zip(g.trajectories, scores, rank):
            t.reward = rewards.total_reward(format_reward(t.parsed[-1]), float(s), float(rk), coeffs)
        policy.group_advantages(g, cfg.adv_eps)


@dataclass
class ToyStep:
    """Frozen rollout data of one optimizer step, as flat arrays."""

    contexts: np.ndarray  # per trajectory
    actions: np.ndarray
    lp_old: np.ndarray
    adv: np.ndarray
    weight: np.ndarray  # 1 / (n_groups * G_g): the two means of the surrogate
    p_old: np.ndarray  # (contexts, VOCAB) rollout-time policy
    mask_contexts: np.ndarray  # context of every KL-masked token
    beta_kl: float
    eps_clip: float

    @classmethod
    def build(cls, groups: Sequence[RolloutGroup], mask: KlcMask, toy: ToyPolicy,
              context_of: dict, beta_kl: float, eps_clip: float) -> "ToyStep":
        contexts, actions, lp_old, adv, weight = [], [], [], [], []
        n_groups = len(groups)
        for g in groups:
            ctx = context_of[g.query_id]
            for t in g.trajectories:
                tok = t.tokens[0]
                contexts.append(ctx)
                actions.append(SYMBOLS.index(tok.token_text))
                lp_old.append(tok.logprob_old)
                adv.append(t.advantage)
                weight.append(1.0 / (n_groups * len(g.trajectories)))
        mask_ctx = [context_of[key[0]] for key in mask.selected]
        return cls(
            contexts=np.array(contexts, dtype=np.int64),
            actions=np.array(actions, dtype=np.int64),
            lp_old=np.array(lp_old),
            adv=np.array(adv),
            weight=np.array(weight),
            p_old=toy.probs(),
            mask_contexts=np.array(mask_ctx, dtype=np.int64),
            beta_kl=beta_kl,
            eps_clip=eps_clip,
        )

    def _ratio(self, logits):
        lp = log_softmax(logits)[self.contexts, self.actions]
        return np.exp(lp - self.lp_old)

    def surrogate(self, logits: np.ndarray) -> float:
        r = self._ratio(logits)
        clipped = np.clip(r, 1.0 - self.eps_clip, 1.0 + self.eps_clip)
        return float(np.sum(self.weight * np.minimum(r * self.adv, clipped * self.adv)))

    def klc(self, logits: np.ndarray) -> float:
        if len(self.mask_contexts) == 0:
            return 0.0
        p = self.p_old[self.mask_contexts]
        logq = log_softmax(logits[self.mask_contexts])
        with np.errstate(divide="ignore", invalid="ignore"):
            kl = np.where(p > 0, p * (np.log(p) - logq), 0.0).sum(axis=1)
        return float(kl.mean())

    def objective(self, logits: np.ndarray) -> float:
        return self.surrogate(logits) - self.beta_kl * self.klc(logits)

    def gradient(self, logits: np.ndarray) -> np.ndarray:
        probs = softmax(logits)
        r = self._ratio(logits)
        clipped = np.clip(r, 1.0 - self.eps_clip, 1.0 + self.eps_clip)
        # the unclipped branch carries the gradient whenever min() selects it
        active = r * self.adv <= clipped * self.adv
        coef = np.where(active, self.weight * self.adv * r, 0.0)
        grad = np.zeros_like(logits)
        np.add.at(grad, self.contexts, -coef[:, None] * probs[self.contexts])
        np.add.at(grad, (self.contexts, self.actions), coef)
        m = len(self.mask_contexts)
        if m and self.beta_kl:
            diff = probs[self.mask_contexts] - self.p_old[self.mask_contexts]
            np.add.at(grad, self.mask_contexts, -(self.beta_kl / m) * diff)
        return grad


def refresh_new(groups: Sequence[RolloutGroup], toy: ToyPolicy, context_of: dict) -> None:
    """Overwrite logprob_new / dist_new with the current policy."""
    probs = toy.probs()
    logp = log_softmax(toy.logits)
    dists = {}
    for g in groups:
        ctx = context_of[g.query_id]
        if ctx not in dists:
            dists[ctx] = dict(zip(SYMBOLS, probs[ctx].tolist()))
        for t in g.trajectories:
            tok = t.tokens[0]
            tok.logprob_new = float(logp[ctx, SYMBOLS.index(tok.token_text)])
            tok.dist_new = dists[ctx]


@dataclass
class StepStats:
    step: int
    stage: int
    mean_reward: float
    policy_entropy: float
    unique_score_ratio: float
    klc_loss: float
    mask_size: int
    candidate_count: int
    objective: float


def train_step(toy: ToyPolicy, groups: Sequence[RolloutGroup], cfg: EngineConfig, context_of: dict,
               klc_on: bool = True, step: int = 0, stage: int = 0, images=None) -> StepStats:
    """One GRPO update: rewards, advantages, KL-Coverage mask, then ``sim_inner_epochs`` ascent steps."""
    score_groups(groups, cfg)
    batch = TokenBatch.from_groups(groups)
    klc_cfg = cfg.klc()
    mask = policy.select_klc_mask(batch, klc_cfg)
    data = ToyStep.build(groups, mask, toy, context_of, klc_cfg.beta_kl if klc_on else 0.0, cfg.eps_clip)

    entropy_before = toy.mean_entropy()
    preds = toy.expected_ratings()
    if images is not None:
        preds = preds[[im.context for im in images]]
    usr = metrics.unique_score_ratio(preds, 2)
    mean_reward = float(np.mean([t.reward.total for g in groups for t in g.trajectories]))

    for _ in range(cfg.sim_inner_epochs):
        toy.logits = toy.logits + cfg.sim_lr * data.gradient(toy.logits)

    refresh_new(groups, toy, context_of)
    report = policy.grpo_step_objective(groups, klc_cfg, cfg.eps_clip, mask=mask)
    return StepStats(
        step=step,
        stage=stage,
        mean_reward=mean_reward,
        policy_entropy=entropy_before,
        unique_score_ratio=usr,
        klc_loss=report.klc,
        mask_size=report.mask_size,
        candidate_count=report.candidate_count,
        objective=report.objective if klc_on else report.surrogate,
    )


@dataclass
class RunReport:
    seed: int
    klc_on: bool
    initial: dict
    steps: List[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "klc_on": self.klc_on, "initial": self.initial,
                "steps": self.steps, "final": self.final}


def _snapshot(toy: ToyPolicy, images: Sequence[SyntheticImage]) -> dict:
    preds = toy.expected_ratings()[[im.context for im in images]]
    mos = [im.mos for im in images]
    out = {
        "policy_entropy": toy.mean_entropy(),
        "unique_score_ratio": metrics.unique_score_ratio(preds, 2),
    }
    try:
        out["plcc"] = metrics.plcc(preds, mos)
        out["srcc"] = metrics.srcc(preds, mos)
    except Exception:  # constant predictions
        out["plcc"] = out["srcc"] = float("nan")
    return out


def stage_at(step: int, steps: int, S: int) -> int:
    return min(S, step * (S + 1) // max(steps, 1))


def run_experiment(cfg: EngineConfig, klc_on: bool = True, seed: int = 0) -> RunReport:
    """Resample -> rollout -> rewards -> GRPO update, for ``cfg.sim_steps`` steps."""
    root = np.random.SeedSequence(seed)
    img_seq, pol_seq, roll_seq = root.spawn(3)
    images = make_images(cfg.sim_images, np.random.default_rng(img_seq))
    toy = ToyPolicy.random(len(images), cfg.sim_init_scale, np.random.default_rng(pol_seq))
    roll_rng = np.random.default_rng(roll_seq)
    by_id = {im.id: im for im in images}
    records = [(im.id, im.mos) for im in images]
    bins = resample.bin_scores(records, resample.default_edges(cfg.resample_K))

    report = RunReport(seed=seed, klc_on=klc_on, initial=_snapshot(toy, images))
    for step in range(cfg.sim_steps):
        stage = stage_at(step, cfg.sim_steps, cfg.resample_S)
        plan = resample.stage_weights(bins, stage, cfg.resample_S, cfg.resample_gamma)
        ids = resample.sample_epoch(records, bins, plan, cfg.sim_batch_images, seed, epoch=step)
        groups, context_of = [], {}
        for slot, image_id in enumerate(ids):
            qid = f"{image_id}@{slot}"
            context_of[qid] = by_id[image_id].context
            groups.append(rollout(toy, by_id[image_id], cfg.group_size, roll_rng, query_id=qid))
        stats = train_step(toy, groups, cfg, context_of, klc_on, step, stage, images)
        report.steps.append(asdict(stats))
    report.final = _snapshot(toy, images)
    return report


# Frozen configuration for the collapse demonstration. With 64 candidates per
# step the engine default p = 0.02 masks a single token, too weak to matter at
# this scale, so the demo regularises a quarter of the candidates.
COLLAPSE_OVERRIDES = dict(
    sim_steps=300,
    sim_images=48,
    sim_batch_images=8,
    sim_lr=10.0,
    sim_inner_epochs=4,
    sim_init_scale=0.1,
    klc_p=0.25,
    klc_beta_kl=2.0,
)


def collapse_config(base: Optional[EngineConfig] = None) -> EngineConfig:
    return (base or EngineConfig()).replace(**COLLAPSE_OVERRIDES)
