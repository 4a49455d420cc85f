"""Advantage pipeline, PPO loss and gradients, update loop, training driver."""
import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from psps_lab.env import PspsEnv
from psps_lab.policy import PARAM_KEYS, init_params, log_prob_of, actor_forward
from psps_lab.ppo import (Adam, Batch, PpoConfig, Sgd, TrainingDiverged, compute_gae,
                          make_optimizer, ppo_loss, ppo_update, standardize_rewards, train,
                          trajectory_standardization_ok)
from psps_lab.scenario import Scenario

from oracles import central_difference, gae_double_loop


def test_standardize_hand_case():
    out = standardize_rewards([1.0, 2.0, 3.0])
    assert np.allclose(out, [-1.22474487, 0.0, 1.22474487], atol=1e-8)


def test_standardize_constant_and_single():
    assert np.array_equal(standardize_rewards([4.0, 4.0, 4.0]), np.zeros(3))
    assert np.array_equal(standardize_rewards([-7.5]), np.zeros(1))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=2, max_size=30))
def test_standardized_moments(r):
    r = np.array(r)
    sigma = r.std()
    if sigma <= 1e-6 * max(1.0, np.abs(r.mean())):
        return
    s = standardize_rewards(r)
    assert abs(s.mean()) <= 1e-9 and abs(s.std() - 1.0) <= 1e-9


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 16), st.floats(0.5, 1.0), st.floats(0.0, 1.0), st.integers(0, 10 ** 6))
def test_gae_matches_double_loop(T, gamma, lam, seed):
    rng = np.random.default_rng(seed)
    r = rng.normal(size=T)
    v = np.append(rng.normal(size=T), 0.0)
    adv, ret = compute_gae(r, v, gamma, lam)
    a2, r2 = gae_double_loop(r, v, gamma, lam)
    assert np.allclose(adv, a2, rtol=0, atol=1e-12)
    assert np.allclose(ret, r2, rtol=0, atol=1e-12)


def test_gae_lambda_limits():
    rng = np.random.default_rng(0)
    r = rng.normal(size=8)
    v = np.append(rng.normal(size=8), 0.0)
    g = 0.9
    adv0, _ = compute_gae(r, v, g, 0.0)
    assert np.array_equal(adv0, r + g * v[1:] - v[:-1])
    adv1, ret = compute_gae(r, v, g, 1.0)
    assert np.allclose(adv1, ret - v[:-1], atol=1e-12)


def test_gae_length_check():
    with pytest.raises(ValueError):
        compute_gae([1.0, 2.0], [0.0, 0.0], 0.9, 0.9)


# ---------------------------------------------------------------- loss


def _batch(rng, d_in=5, d_a=2, n=12):
    p = init_params(d_in, d_a, 8, rng)
    for k in p:
        p[k] = p[k] + rng.normal(scale=0.2, size=p[k].shape)
    obs = rng.random((n, d_in))
    mu, ls = actor_forward(p, obs)
    acts = mu + np.exp(ls) * rng.normal(size=mu.shape)
    old = log_prob_of(mu, ls, acts) + rng.normal(scale=0.3, size=n)
    return p, Batch(obs, acts, old, rng.normal(size=n), rng.normal(size=n))


@pytest.mark.parametrize("seed", range(3))
def test_loss_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p, b = _batch(rng)
    cfg = PpoConfig()
    _, grads, _ = ppo_loss(p, b, cfg)
    f = lambda: float(ppo_loss(p, b, cfg, with_grads=False)[0])
    for k in PARAM_KEYS:
        for idx in list(np.ndindex(p[k].shape))[::3]:
            num = central_difference(f, p, k, idx)
            assert abs(num - grads[k][idx]) <= 1e-4 * max(1.0, abs(num)), (k, idx)


def test_first_epoch_ratio_is_one():
    rng = np.random.default_rng(1)
    p, b = _batch(rng)
    mu, ls = actor_forward(p, b.obs)
    b = replace(b, old_log_probs=log_prob_of(mu, ls, b.actions))
    _, _, diag = ppo_loss(p, b, PpoConfig())
    assert diag["mean_ratio"] == pytest.approx(1.0, abs=1e-12)
    assert diag["clip_frac"] == 0.0
    assert diag["policy_loss"] == pytest.approx(-b.advantages.mean(), abs=1e-12)


def test_clipped_terms_contribute_no_policy_gradient():
    rng = np.random.default_rng(2)
    p, b = _batch(rng, n=1)
    mu, ls = actor_forward(p, b.obs)
    b = replace(b, old_log_probs=log_prob_of(mu, ls, b.actions) - 1.0, advantages=np.array([1.0]))
    cfg = PpoConfig(c_ent=0.0, c_vf=0.0)
    _, grads, diag = ppo_loss(p, b, cfg)
    assert diag["mean_ratio"] > 1.2 and diag["clip_frac"] == 1.0
    assert all(np.all(grads[k] == 0) for k in PARAM_KEYS if k.startswith("a_"))


def test_small_step_reduces_loss():
    rng = np.random.default_rng(4)
    p, b = _batch(rng)
    cfg = PpoConfig(learning_rate=1e-5)
    loss0, grads, _ = ppo_loss(p, b, cfg)
    Adam(p, 1e-5).step(p, grads)
    assert ppo_loss(p, b, cfg, with_grads=False)[0] < loss0
    p2, b2 = _batch(np.random.default_rng(4))
    loss0, grads, _ = ppo_loss(p2, b2, cfg)
    Sgd(p2, 1e-5).step(p2, grads)
    assert ppo_loss(p2, b2, cfg, with_grads=False)[0] < loss0


def test_unclipped_single_epoch_is_the_policy_gradient():
    rng = np.random.default_rng(6)
    p, b = _batch(rng)
    mu, ls = actor_forward(p, b.obs)
    b = replace(b, old_log_probs=log_prob_of(mu, ls, b.actions))
    cfg = PpoConfig(clip_eps=float("inf"), update_epochs=1, c_ent=0.0, c_vf=0.0)
    _, grads, _ = ppo_loss(p, b, cfg)
    # -mean(A * grad log pi), by finite differences of the log-likelihood itself
    f = lambda: -float(np.mean(b.advantages * log_prob_of(*actor_forward(p, b.obs), b.actions)))
    for k in ("a_Wmu", "a_bls", "a_W1"):
        for idx in list(np.ndindex(p[k].shape))[::5]:
            assert grads[k][idx] == pytest.approx(central_difference(f, p, k, idx), abs=1e-7)


def test_value_loss_nonnegative_and_entropy_finite():
    rng = np.random.default_rng(7)
    p, b = _batch(rng)
    p["a_bls"][:] = 50.0
    _, _, diag = ppo_loss(p, b, PpoConfig())
    assert diag["value_loss"] >= 0 and np.isfinite(diag["entropy"])


def test_update_raises_on_non_finite():
    rng = np.random.default_rng(8)
    p, b = _batch(rng)
    b = replace(b, advantages=np.full(len(b), np.nan))
    with pytest.raises(TrainingDiverged):
        ppo_update(p, b, PpoConfig(normalize_advantages=False), make_optimizer(p, PpoConfig()))


def test_update_runs_k_epochs_and_reports():
    rng = np.random.default_rng(9)
    p, b = _batch(rng)
    before = {k: v.copy() for k, v in p.items()}
    cfg = PpoConfig(update_epochs=3)
    diag = ppo_update(p, b, cfg, make_optimizer(p, cfg))
    assert diag["loss_first"] != diag["loss"]
    assert set(diag) >= {"entropy", "clip_frac", "mean_ratio", "value_loss", "policy_loss"}
    assert any(not np.array_equal(before[k], p[k]) for k in p)


def test_minibatches_cover_the_batch():
    rng = np.random.default_rng(10)
    p, b = _batch(rng, n=10)
    cfg = PpoConfig(update_epochs=2, minibatch_size=4)
    ppo_update(p, b, cfg, make_optimizer(p, cfg), np.random.default_rng(0))


def test_config_validation():
    for bad in (dict(clip_eps=1.5), dict(gamma_rl=0.0), dict(learning_rate=0.0),
                dict(optimizer="rmsprop"), dict(momentum=1.0), dict(update_epochs=0)):
        with pytest.raises(ValueError):
            PpoConfig(**bad)


# ---------------------------------------------------------------- training driver


@pytest.fixture(scope="module")
def short_run(toy):
    cfg = PpoConfig(episodes=6, hidden=16)
    env = PspsEnv(toy)
    return toy, cfg, env, train(toy, cfg, seed=3, env=env, eval_interval=3, eval_episodes=2)


def test_training_log_records(short_run, tmp_path):
    toy, cfg, env, res = short_run
    kinds = [r["kind"] for r in res.log]
    assert kinds.count("train") == 6 and kinds.count("eval") == 2
    for r in res.log:
        if r["kind"] == "train":
            assert abs(r["std_reward_mean"]) <= 1e-9 and abs(r["std_reward_std"] - 1) <= 1e-9
            assert {"cost", "switch_cost", "failures", "loss", "entropy", "clip_frac"} <= set(r)


def test_training_is_reproducible(short_run, tmp_path):
    toy, cfg, env, res = short_run
    again = train(toy, cfg, seed=3, env=PspsEnv(toy), eval_interval=3, eval_episodes=2,
                  log_path=tmp_path / "log.jsonl")
    assert json.dumps(again.checkpoint, sort_keys=True) == json.dumps(res.checkpoint, sort_keys=True)
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert [json.loads(l) for l in lines] == json.loads(json.dumps(res.log))


def test_different_seed_differs(short_run):
    toy, cfg, env, res = short_run
    other = train(toy, cfg, seed=4, env=env)
    assert other.checkpoint["params"] != res.checkpoint["params"]


def test_checkpoint_metadata(short_run):
    toy, cfg, env, res = short_run
    ck = res.checkpoint
    assert ck["scenario_fingerprint"] == toy.fingerprint()
    assert ck["n_configs"] == [4, 3]
    assert ck["meta"]["ppo"]["optimizer"] == cfg.optimizer


def test_standardization_helper(short_run):
    from psps_lab.env import Trajectory
    t = Trajectory(standardized_rewards=standardize_rewards([1.0, 5.0, 2.0]))
    assert trajectory_standardization_ok(t)
