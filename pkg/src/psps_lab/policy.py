"""Gaussian actor and value critic as plain numpy MLPs with manual backprop."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .env import Action

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
ACTION_CLIP = 5.0
INIT_LOG_STD = math.log(3.0)
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
HALF_LOG_2PIE = 0.5 * math.log(2.0 * math.pi * math.e)

ACTOR_KEYS = ("a_W1", "a_b1", "a_W2", "a_b2", "a_Wmu", "a_bmu", "a_Wls", "a_bls")
CRITIC_KEYS = ("c_W1", "c_b1", "c_W2", "c_b2", "c_Wv", "c_bv")
PARAM_KEYS = ACTOR_KEYS + CRITIC_KEYS

CHECKPOINT_FORMAT = "psps-lab-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def param_shapes(input_dim: int, action_dim: int, hidden: int) -> dict[str, tuple[int, ...]]:
    h = hidden
    return {
        "a_W1": (input_dim, h), "a_b1": (h,), "a_W2": (h, h), "a_b2": (h,),
        "a_Wmu": (h, action_dim), "a_bmu": (action_dim,),
        "a_Wls": (h, action_dim), "a_bls": (action_dim,),
        "c_W1": (input_dim, h), "c_b1": (h,), "c_W2": (h, h), "c_b2": (h,),
        "c_Wv": (h, 1), "c_bv": (1,),
    }


def init_params(input_dim: int, action_dim: int, hidden: int = 256, rng=None) -> dict[str, np.ndarray]:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases.

    The output heads are shrunk by 0.01 and the log-std bias starts at ln 3, so
    the first policy is roughly uniform over each group's configurations.
    """
    rng = np.random.default_rng(rng)
    p = {}
    for name, shape in param_shapes(input_dim, action_dim, hidden).items():
        if len(shape) == 1:
            p[name] = np.zeros(shape)
            continue
        lim = 1.0 / math.sqrt(shape[0])
        w = rng.uniform(-lim, lim, size=shape)
        if name in ("a_Wmu", "a_Wls"):
            w *= 0.01
        p[name] = w
    p["a_bls"][:] = INIT_LOG_STD
    return p


# --------------------------------------------------------------------------
# forward / backward


def _trunk(x, W1, b1, W2, b2):
    h1 = np.tanh(x @ W1 + b1)
    h2 = np.tanh(h1 @ W2 + b2)
    return h1, h2


def actor_forward(params, x, with_cache: bool = False):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    h1, h2 = _trunk(x, params["a_W1"], params["a_b1"], params["a_W2"], params["a_b2"])
    mu = h2 @ params["a_Wmu"] + params["a_bmu"]
    ls_raw = h2 @ params["a_Wls"] + params["a_bls"]
    ls = np.clip(ls_raw, LOG_STD_MIN, LOG_STD_MAX)
    if with_cache:
        return mu, ls, (x, h1, h2, ls_raw)
    return mu, ls


def critic_forward(params, x, with_cache: bool = False):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    h1, h2 = _trunk(x, params["c_W1"], params["c_b1"], params["c_W2"], params["c_b2"])
    v = (h2 @ params["c_Wv"] + params["c_bv"])[:, 0]
    if with_cache:
        return v, (x, h1, h2)
    return v


def _trunk_backward(params, prefix, x, h1, h2, g_h2, grads):
    g2 = g_h2 * (1.0 - h2 * h2)
    grads[prefix + "W2"] = h1.T @ g2
    grads[prefix + "b2"] = g2.sum(axis=0)
    g1 = (g2 @ params[prefix + "W2"].T) * (1.0 - h1 * h1)
    grads[prefix + "W1"] = x.T @ g1
    grads[prefix + "b1"] = g1.sum(axis=0)


def actor_backward(params, cache, g_mu, g_ls) -> dict[str, np.ndarray]:
    """Parameter gradients given dL/dmu and dL/dlog_std (post-clamp)."""
    x, h1, h2, ls_raw = cache
    # a clamped unit only receives gradient that points back inside the bounds;
    # zeroing it outright would make the bounds absorbing
    g_ls = g_ls * (((ls_raw > LOG_STD_MIN) | (g_ls < 0)) & ((ls_raw < LOG_STD_MAX) | (g_ls > 0)))
    grads = {
        "a_Wmu": h2.T @ g_mu, "a_bmu": g_mu.sum(axis=0),
        "a_Wls": h2.T @ g_ls, "a_bls": g_ls.sum(axis=0),
    }
    g_h2 = g_mu @ params["a_Wmu"].T + g_ls @ params["a_Wls"].T
    _trunk_backward(params, "a_", x, h1, h2, g_h2, grads)
    return grads


def critic_backward(params, cache, g_v) -> dict[str, np.ndarray]:
    x, h1, h2 = cache
    g_v = np.asarray(g_v, dtype=float).reshape(-1, 1)
    grads = {"c_Wv": h2.T @ g_v, "c_bv": g_v.sum(axis=0)}
    _trunk_backward(params, "c_", x, h1, h2, g_v @ params["c_Wv"].T, grads)
    return grads


# --------------------------------------------------------------------------
# diagonal Gaussian


@dataclass
class ActionSample:
    raw: np.ndarray
    log_prob: float
    entropy: float


def log_prob_of(mu, log_std, raw):
    """Log-density of ``raw`` under N(mu, exp(log_std)^2), summed over the last axis."""
    mu, log_std, raw = (np.asarray(a, dtype=float) for a in (mu, log_std, raw))
    z = (raw - mu) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - HALF_LOG_2PI, axis=-1)


def gaussian_entropy(log_std):
    return np.sum(HALF_LOG_2PIE + np.asarray(log_std, dtype=float), axis=-1)


def sample_action(mu, log_std, rng: np.random.Generator) -> ActionSample:
    mu = np.asarray(mu, dtype=float)
    log_std = np.asarray(log_std, dtype=float)
    raw = mu + np.exp(log_std) * rng.standard_normal(mu.shape)
    return ActionSample(raw, float(log_prob_of(mu, log_std, raw)), float(gaussian_entropy(log_std)))


def map_action(raw, n_configs: Sequence[int]) -> tuple[int, ...]:
    """Clamp to [-5, 5], rescale to [0, 1] and bin into ``n_i`` configurations."""
    n = np.asarray([getattr(g, "n_configs", g) for g in n_configs], dtype=int)
    a = np.clip(np.asarray(raw, dtype=float), -ACTION_CLIP, ACTION_CLIP)
    frac = (a + ACTION_CLIP) / (2 * ACTION_CLIP)
    k = np.minimum(np.floor(frac * n).astype(int), n - 1)
    return tuple(int(v) for v in k)


# --------------------------------------------------------------------------
# policy object used by rollouts


class PpoPolicy:
    """Stochastic (training) or mean-action (evaluation) switching policy."""

    def __init__(self, params, n_configs: Sequence[int], name: str = "ppo"):
        self.params = params
        self.n_configs = [int(getattr(g, "n_configs", g)) for g in n_configs]
        self.name = name

    def act(self, obs, state, rng, deterministic: bool = False) -> Action:
        mu, ls = actor_forward(self.params, obs)
        mu, ls = mu[0], ls[0]
        value = float(critic_forward(self.params, obs)[0])
        if deterministic:
            raw = mu.copy()
            logp = float(log_prob_of(mu, ls, raw))
        else:
            s = sample_action(mu, ls, rng)
            raw, logp = s.raw, s.log_prob
        return Action(map_action(raw, self.n_configs), raw, logp, value)


# --------------------------------------------------------------------------
# flat vectors and checkpoints


def flatten(params) -> np.ndarray:
    return np.concatenate([np.ravel(params[k]) for k in PARAM_KEYS])


def unflatten(flat, shapes) -> dict[str, np.ndarray]:
    if len(flat) != sum(int(np.prod(shapes[k])) for k in PARAM_KEYS):
        raise CheckpointError("parameter vector length does not match layer shapes")
    out, i = {}, 0
    for k in PARAM_KEYS:
        n = int(np.prod(shapes[k]))
        out[k] = np.asarray(flat[i:i + n], dtype=float).reshape(shapes[k]).copy()
        i += n
    return out


def checkpoint_dict(params, *, n_configs, groups=(), max_demand: float, horizon: int,
                    scenario_fingerprint: str, meta=None) -> dict:
    shapes = {k: list(params[k].shape) for k in PARAM_KEYS}
    flat = flatten(params)
    if not np.all(np.isfinite(flat)):
        raise CheckpointError("refusing to write non-finite parameters")
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "input_dim": shapes["a_W1"][0],
        "action_dim": shapes["a_bmu"][0],
        "hidden": shapes["a_b1"][0],
        "layers": [{"name": k, "shape": shapes[k]} for k in PARAM_KEYS],
        "params": [float(v) for v in flat],
        "normalization": {"max_demand": float(max_demand), "horizon": int(horizon)},
        "n_configs": [int(n) for n in n_configs],
        "groups": [list(g.lines) if hasattr(g, "lines") else list(g) for g in groups],
        "scenario_fingerprint": scenario_fingerprint,
        "meta": meta or {},
    }


def dumps_checkpoint(ckpt: dict) -> str:
    return json.dumps(ckpt, sort_keys=True, separators=(",", ":")) + "\n"


def save_checkpoint(path, ckpt: dict) -> None:
    Path(path).write_text(dumps_checkpoint(ckpt))


def load_checkpoint(path) -> dict:
    try:
        ckpt = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    if ckpt.get("format") != CHECKPOINT_FORMAT or ckpt.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    return ckpt


def params_from_checkpoint(ckpt: dict) -> dict[str, np.ndarray]:
    shapes = {layer["name"]: tuple(layer["shape"]) for layer in ckpt["layers"]}
    return unflatten(np.asarray(ckpt["params"], dtype=float), shapes)
