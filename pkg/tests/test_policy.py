"""Actor/critic networks, Gaussian helpers, action mapping, checkpoints."""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from psps_lab.policy import (LOG_STD_MAX, LOG_STD_MIN, CheckpointError, PpoPolicy, actor_backward,
                             actor_forward, checkpoint_dict, critic_backward, critic_forward,
                             gaussian_entropy, init_params, load_checkpoint, log_prob_of,
                             map_action, param_shapes, params_from_checkpoint, sample_action,
                             save_checkpoint)

from oracles import central_difference


def _zero_params(d_in=7, d_a=3, h=8):
    return {k: np.zeros(s) for k, s in param_shapes(d_in, d_a, h).items()}


def test_zero_weights_give_zero_outputs():
    p = _zero_params()
    mu, ls, cache = actor_forward(p, np.ones(7), with_cache=True)
    assert np.all(mu == 0) and np.all(cache[3] == 0) and np.all(ls == 0)
    assert critic_forward(p, np.ones(7))[0] == 0


def test_duplicate_states_identical_outputs():
    p = init_params(7, 3, 8, np.random.default_rng(0))
    x = np.random.default_rng(1).random(7)
    mu, ls = actor_forward(p, np.vstack([x, x]))
    assert np.array_equal(mu[0], mu[1]) and np.array_equal(ls[0], ls[1])
    v = critic_forward(p, np.vstack([x, x]))
    assert v[0] == v[1]


def test_log_std_clamped():
    p = init_params(4, 2, 8, np.random.default_rng(0))
    p["a_bls"][:] = [10.0, -10.0]
    _, ls = actor_forward(p, np.zeros(4))
    assert ls[0, 0] == LOG_STD_MAX and ls[0, 1] == LOG_STD_MIN


def test_initial_policy_is_near_uniform_over_configurations():
    p = init_params(20, 5, 256, np.random.default_rng(0))
    mu, ls = actor_forward(p, np.random.default_rng(1).random((50, 20)))
    assert np.abs(mu).max() < 0.1
    assert np.allclose(ls, math.log(3.0), atol=0.1)


@pytest.mark.parametrize("which", ["mu", "ls", "v"])
def test_output_gradients_match_finite_differences(which):
    rng = np.random.default_rng(5)
    p = init_params(6, 2, 8, rng)
    for k in p:
        p[k] = p[k] + rng.normal(scale=0.3, size=p[k].shape)
    x = rng.random((3, 6))
    w = rng.normal(size=(3, 2))
    wv = rng.normal(size=3)

    def f():
        if which == "v":
            return float(wv @ critic_forward(p, x))
        mu, ls = actor_forward(p, x)
        return float(np.sum(w * (mu if which == "mu" else ls)))

    if which == "v":
        _, cache = critic_forward(p, x, with_cache=True)
        grads = critic_backward(p, cache, wv)
    else:
        _, _, cache = actor_forward(p, x, with_cache=True)
        g_mu = w if which == "mu" else np.zeros_like(w)
        g_ls = w if which == "ls" else np.zeros_like(w)
        grads = actor_backward(p, cache, g_mu, g_ls)
    for k, g in grads.items():
        for idx in np.ndindex(g.shape):
            num = central_difference(f, p, k, idx)
            assert abs(num - g[idx]) <= 1e-4 * max(1.0, abs(num)), (k, idx)


def test_log_prob_at_mean():
    mu = np.array([0.3, -1.0, 2.0])
    ls = np.array([0.1, -0.5, 1.0])
    assert log_prob_of(mu, ls, mu) == pytest.approx(-ls.sum() - 1.5 * math.log(2 * math.pi))


def test_density_integrates_to_one():
    val, _ = quad(lambda a: math.exp(log_prob_of([0.4], [0.3], [a])), -40, 40)
    assert val == pytest.approx(1.0, abs=1e-8)


def test_sample_variance():
    rng = np.random.default_rng(0)
    xs = np.array([sample_action(np.zeros(1), np.zeros(1), rng).raw[0] for _ in range(100_000)])
    assert abs(xs.var() - 1.0) <= 0.02


def test_entropy_unit_sigma_five_dims():
    assert gaussian_entropy(np.zeros(5)) == pytest.approx(7.0947, abs=1e-4)
    assert gaussian_entropy(np.zeros(5)) == pytest.approx(2.5 * math.log(2 * math.pi * math.e))


def test_sample_fields_consistent():
    rng = np.random.default_rng(3)
    mu, ls = np.array([0.5, -0.2]), np.array([0.0, 0.7])
    s = sample_action(mu, ls, rng)
    assert s.log_prob == pytest.approx(log_prob_of(mu, ls, s.raw))
    assert s.entropy == pytest.approx(gaussian_entropy(ls))


@pytest.mark.parametrize("raw, n, k", [(-5.0, 4, 0), (5.0, 4, 3), (0.0, 4, 2), (-99.0, 3, 0),
                                       (99.0, 3, 2), (-2.5, 4, 1), (-2.5000001, 4, 0)])
def test_map_action_examples(raw, n, k):
    assert map_action([raw], [n]) == (k,)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=True), min_size=1, max_size=6),
       st.data())
def test_map_action_is_total(raw, data):
    n = [data.draw(st.integers(2, 5)) for _ in raw]
    k = map_action(raw, n)
    assert all(0 <= ki < ni for ki, ni in zip(k, n))


def test_map_action_bins_have_equal_width():
    # a uniform raw action hits every configuration of a group equally often
    xs = np.linspace(-5, 5, 120001)[:-1]
    counts = np.bincount([map_action([x], [4])[0] for x in xs[::10]], minlength=4)
    assert counts.max() - counts.min() <= 1


def test_policy_act(toy):
    from psps_lab.env import PspsEnv
    env = PspsEnv(toy)
    p = init_params(env.obs_size, env.action_dim, 8, np.random.default_rng(0))
    pol = PpoPolicy(p, env.groups)
    obs = env.observe(env.reset(0))
    a = pol.act(obs, None, np.random.default_rng(0), deterministic=False)
    b = pol.act(obs, None, np.random.default_rng(0), deterministic=False)
    assert a.choices == b.choices and np.array_equal(a.raw, b.raw)
    mu, ls = actor_forward(p, obs)
    assert a.log_prob == pytest.approx(log_prob_of(mu[0], ls[0], a.raw))
    assert a.value == pytest.approx(critic_forward(p, obs)[0])


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip(tmp_path):
    p = init_params(5, 2, 8, np.random.default_rng(0))
    ck = checkpoint_dict(p, n_configs=[3, 4], groups=[(1, 2), (3, 4, 5)], max_demand=2.0, horizon=24,
                         scenario_fingerprint="abc")
    save_checkpoint(tmp_path / "c.json", ck)
    back = params_from_checkpoint(load_checkpoint(tmp_path / "c.json"))
    assert all(np.array_equal(p[k], back[k]) for k in p)
    assert ck["normalization"] == {"max_demand": 2.0, "horizon": 24}


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.json")
    (tmp_path / "y.json").write_text("{")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "y.json")
    p = init_params(5, 2, 8, np.random.default_rng(0))
    p["a_b1"][0] = np.nan
    with pytest.raises(CheckpointError):
        checkpoint_dict(p, n_configs=[2, 2], max_demand=1, horizon=1, scenario_fingerprint="")
    ck = checkpoint_dict(init_params(5, 2, 8), n_configs=[2, 2], max_demand=1, horizon=1,
                         scenario_fingerprint="")
    ck["params"] = ck["params"][:-1]
    with pytest.raises(CheckpointError):
        params_from_checkpoint(ck)


def test_clamped_log_std_passes_only_inward_gradient():
    p = init_params(4, 2, 8, np.random.default_rng(0))
    p["a_bls"][:] = [3.0, -6.0]
    x = np.zeros((1, 4))
    _, _, cache = actor_forward(p, x, with_cache=True)
    zero = np.zeros((1, 2))
    # descent lowers a unit with positive loss gradient: inward at the top, outward at the bottom
    g = actor_backward(p, cache, zero, np.array([[1.0, 1.0]]))["a_bls"]
    assert g[0] == 1.0 and g[1] == 0.0
    g = actor_backward(p, cache, zero, np.array([[-1.0, -1.0]]))["a_bls"]
    assert g[0] == 0.0 and g[1] == -1.0
