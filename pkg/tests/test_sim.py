import numpy as np
import pytest

from iqa_rl import policy
from iqa_rl.config import EngineConfig
from iqa_rl.policy import TokenBatch
from iqa_rl.sim import (
    RATINGS,
    SYMBOLS,
    VOCAB,
    ToyPolicy,
    ToyStep,
    collapse_config,
    make_images,
    refresh_new,
    rollout,
    run_experiment,
    score_groups,
    stage_at,
    train_step,
)


def build_step(seed, n_images=3, G=4, beta_kl=0.5, p=0.5, scale=1.0):
    rng = np.random.default_rng(seed)
    cfg = EngineConfig().replace(klc_p=p, klc_beta_kl=beta_kl, group_size=G)
    images = make_images(n_images, rng)
    toy = ToyPolicy.random(n_images, scale, rng)
    groups = [rollout(toy, im, G, rng) for im in images]
    context_of = {im.id: im.context for im in images}
    score_groups(groups, cfg)
    mask = policy.select_klc_mask(TokenBatch.from_groups(groups), cfg.klc())
    data = ToyStep.build(groups, mask, toy, context_of, beta_kl, cfg.eps_clip)
    return toy, groups, data, rng


class TestToyPolicy:
    def test_symbols(self):
        assert VOCAB == 17 and SYMBOLS[0] == "1.00" and SYMBOLS[-1] == "5.00"
        np.testing.assert_allclose(np.diff(RATINGS), 0.25)

    def test_rollout_shape(self):
        rng = np.random.default_rng(0)
        images = make_images(2, rng)
        toy = ToyPolicy.random(2, 0.1, rng)
        g = rollout(toy, images[1], 5, rng)
        assert len(g.trajectories) == 5 and g.r_gt == images[1].mos
        tok = g.trajectories[0].tokens[0]
        assert tok.is_candidate and tok.logprob_old == tok.logprob_new

    def test_mos_in_range(self):
        images = make_images(200, np.random.default_rng(0))
        assert all(1.0 <= im.mos <= 5.0 for im in images)


class TestToyStep:
    def test_surrogate_matches_engine(self):
        toy, groups, data, rng = build_step(0)
        # move the policy so ratios differ from 1, then compare against the engine path
        toy.logits = toy.logits + rng.normal(0, 0.3, toy.logits.shape)
        refresh_new(groups, toy, {g.query_id: i for i, g in enumerate(groups)})
        empty = policy.KlcMask(selected=(), candidate_count=0, cov_scores={})
        report = policy.grpo_step_objective(groups, policy.KlcConfig(), mask=empty)
        assert data.surrogate(toy.logits) == pytest.approx(report.surrogate, abs=1e-12)

    def test_zero_kl_gradient_at_old(self):
        toy, _, data, _ = build_step(1, beta_kl=3.0)
        data_no_kl = ToyStep(**{**data.__dict__, "beta_kl": 0.0})
        np.testing.assert_allclose(data.gradient(toy.logits), data_no_kl.gradient(toy.logits), atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_difference(self, seed):
        toy, _, data, rng = build_step(seed)
        logits = toy.logits + rng.normal(0, 0.05, toy.logits.shape)
        grad = data.gradient(logits)
        h = 1e-6
        for _ in range(10):
            c, v = rng.integers(logits.shape[0]), rng.integers(VOCAB)
            up, down = logits.copy(), logits.copy()
            up[c, v] += h
            down[c, v] -= h
            fd = (data.objective(up) - data.objective(down)) / (2 * h)
            assert fd == pytest.approx(grad[c, v], rel=1e-5, abs=1e-9)


class TestRun:
    def test_stage_schedule(self):
        assert [stage_at(s, 8, 3) for s in range(8)] == [0, 0, 1, 1, 2, 2, 3, 3]

    def test_short_run_deterministic(self):
        cfg = collapse_config().replace(sim_steps=5, sim_images=12, sim_batch_images=4)
        a = run_experiment(cfg, klc_on=True, seed=3).to_dict()
        b = run_experiment(cfg, klc_on=True, seed=3).to_dict()
        assert a == b
        assert len(a["steps"]) == 5
        row = a["steps"][0]
        assert row["candidate_count"] == 4 * cfg.group_size
        assert row["mask_size"] == cfg.klc().mask_size(row["candidate_count"])
        assert set(a["final"]) == {"policy_entropy", "unique_score_ratio", "plcc", "srcc"}

    def test_klc_off_has_no_effect_on_step_zero_stats(self):
        cfg = collapse_config().replace(sim_steps=1, sim_images=12, sim_batch_images=4)
        on = run_experiment(cfg, klc_on=True, seed=0)
        off = run_experiment(cfg, klc_on=False, seed=0)
        assert on.initial == off.initial
        assert on.steps[0]["mean_reward"] == off.steps[0]["mean_reward"]


def one_context_batch(toy, image, n_groups, G, rng):
    groups, context_of = [], {}
    for slot in range(n_groups):
        qid = f"{image.id}@{slot}"
        context_of[qid] = image.context
        groups.append(rollout(toy, image, G, rng, query_id=qid))
    return groups, context_of


class TestSpecExamples:
    def test_deterministic_policy(self):
        logits = np.full((1, VOCAB), -1e3)
        logits[0, 6] = 0.0
        g = rollout(ToyPolicy(logits), make_images(1, np.random.default_rng(0))[0], 8, np.random.default_rng(1))
        assert {t.tokens[0].token_text for t in g.trajectories} == {SYMBOLS[6]}

    def test_uniform_matches_multinomial_oracle(self):
        image = make_images(1, np.random.default_rng(0))[0]
        g = rollout(ToyPolicy(np.zeros((1, VOCAB))), image, 8, np.random.default_rng(42))
        oracle = np.random.default_rng(42).choice(VOCAB, size=8, p=np.full(VOCAB, 1 / VOCAB))
        assert [t.tokens[0].token_text for t in g.trajectories] == [SYMBOLS[a] for a in oracle]

    def test_zero_lr_leaves_policy(self):
        rng = np.random.default_rng(0)
        image = make_images(1, rng)[0]
        toy = ToyPolicy.random(1, 0.5, rng)
        before = toy.logits.copy()
        groups, context_of = one_context_batch(toy, image, 3, 4, rng)
        stats = train_step(toy, groups, collapse_config().replace(sim_lr=0.0), context_of)
        np.testing.assert_array_equal(toy.logits, before)
        assert stats.mask_size >= 1

    def test_single_context_reward_rises(self):
        rng = np.random.default_rng(5)
        image = make_images(1, rng)[0]
        toy = ToyPolicy.random(1, 0.1, rng)
        cfg = EngineConfig()
        rewards = []
        for step in range(50):
            groups, context_of = one_context_batch(toy, image, 2, 8, rng)
            rewards.append(train_step(toy, groups, cfg, context_of, step=step).mean_reward)
            assert np.allclose(toy.probs().sum(axis=1), 1.0)
        assert np.mean(rewards[-10:]) > np.mean(rewards[:10])

    def test_zero_steps(self):
        rep = run_experiment(collapse_config().replace(sim_steps=0), seed=0)
        assert rep.steps == [] and rep.final == rep.initial

    def test_large_beta_holds_masked_tokens(self):
        def masked_change(beta):
            rng = np.random.default_rng(9)
            image = make_images(1, rng)[0]
            toy = ToyPolicy.random(1, 0.5, rng)
            groups, context_of = one_context_batch(toy, image, 2, 8, rng)
            before = toy.probs()[0].copy()
            cfg = EngineConfig().replace(klc_p=1.0, klc_beta_kl=beta, sim_lr=1e-4, sim_inner_epochs=8)
            train_step(toy, groups, cfg, context_of)
            return np.abs(toy.probs()[0] - before).sum()

        assert masked_change(1e3) < masked_change(0.0)
