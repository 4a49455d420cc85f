"""PPO training loop with per-trajectory reward standardization."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .env import PspsEnv, Trajectory, rollout
from .failure import EVAL, TRAIN
from .policy import (PARAM_KEYS, PpoPolicy, actor_backward, actor_forward, checkpoint_dict,
                     critic_backward, critic_forward, gaussian_entropy, init_params)
from .scenario import Scenario


class TrainingDiverged(FloatingPointError):
    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump


@dataclass
class PpoConfig:
    learning_rate: float = 4e-4
    c_ent: float = 0.05
    c_vf: float = 0.5
    gamma_rl: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    episodes: int = 10000
    hidden: int = 256
    update_epochs: int = 10
    minibatch_size: int | None = None  # None: the whole trajectory
    eps_std: float = 1e-12
    normalize_advantages: bool = True
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    target_kl: float | None = None  # stop the epoch loop once approx. KL exceeds 1.5x this
    max_grad_norm: float | None = None
    # heavy-ball SGD; Adam's per-weight normalized steps turn the noise of a
    # 24-sample batch into a random walk of the policy mean
    optimizer: str = "sgd"  # "sgd" or "adam"
    momentum: float = 0.9  # sgd only

    def __post_init__(self):
        if not 0 < self.clip_eps < 1 and self.clip_eps != float("inf"):
            raise ValueError("clip_eps must lie in (0, 1)")
        if not (0 < self.gamma_rl <= 1 and 0 <= self.gae_lambda <= 1):
            raise ValueError("gamma_rl must lie in (0, 1] and gae_lambda in [0, 1]")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        for name in ("learning_rate", "episodes", "hidden", "update_epochs", "eps_std"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


# --------------------------------------------------------------------------
# advantage pipeline


def standardize_rewards(rewards, eps_std: float = 1e-12) -> np.ndarray:
    """``(r - mean) / (std + eps)`` with the population std of the episode."""
    r = np.asarray(rewards, dtype=float)
    mu = r.mean()
    sigma = np.sqrt(np.mean((r - mu) ** 2))
    return (r - mu) / (sigma + eps_std)


def compute_gae(rewards, values, gamma: float, lam: float):
    """GAE advantages and discounted reward-to-go.

    ``values`` has one more entry than ``rewards``; the last one is the value
    after the final step (0 for a finished episode).
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    if v.shape != (r.size + 1,):
        raise ValueError(f"values must have length {r.size + 1}, got {v.size}")
    T = r.size
    adv = np.zeros(T)
    ret = np.zeros(T)
    gae = 0.0
    g = 0.0
    for t in range(T - 1, -1, -1):
        delta = r[t] + gamma * v[t + 1] - v[t]
        gae = delta + gamma * lam * gae
        adv[t] = gae
        g = r[t] + gamma * g
        ret[t] = g
    return adv, ret


# --------------------------------------------------------------------------
# loss and gradients


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return self.obs.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(self.obs[idx], self.actions[idx], self.old_log_probs[idx],
                     self.advantages[idx], self.returns[idx])


def ppo_loss(params, batch: Batch, cfg: PpoConfig, with_grads: bool = True):
    """Total loss ``-(L_clip + c_ent H) + c_vf E[(V - G)^2]`` and its gradient."""
    B = len(batch)
    mu, ls, acache = actor_forward(params, batch.obs, with_cache=True)
    v, ccache = critic_forward(params, batch.obs, with_cache=True)
    A = batch.advantages
    inv_std = np.exp(-ls)
    diff = batch.actions - mu
    z = diff * inv_std
    logp = np.sum(-0.5 * z * z - ls - 0.5 * np.log(2 * np.pi), axis=1)
    ratio = np.exp(logp - batch.old_log_probs)
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
    surr1 = ratio * A
    surr2 = clipped * A
    l_clip = np.mean(np.minimum(surr1, surr2))
    entropy = np.mean(gaussian_entropy(ls))
    value_err = v - batch.returns
    l_value = np.mean(value_err ** 2)
    loss = -(l_clip + cfg.c_ent * entropy) + cfg.c_vf * l_value
    diag = {
        "loss": float(loss),
        "policy_loss": float(-l_clip),
        "value_loss": float(l_value),
        "entropy": float(entropy),
        "mean_ratio": float(ratio.mean()),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps)),
        "approx_kl": float(np.mean(ratio - 1.0 - np.log(ratio))),
    }
    if not with_grads:
        return loss, None, diag

    # the min() follows the unclipped branch when surr1 <= surr2; otherwise the
    # ratio sits outside the clip band and the term is flat in theta
    active = (surr1 <= surr2).astype(float)
    g_logp = -(active * A * ratio) / B  # dL/dlogp
    g_mu = g_logp[:, None] * z * inv_std
    g_ls = g_logp[:, None] * (z * z - 1.0) - cfg.c_ent / B
    grads = actor_backward(params, acache, g_mu, g_ls)
    grads.update(critic_backward(params, ccache, cfg.c_vf * 2.0 * value_err / B))
    return loss, grads, diag


class Adam:
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in PARAM_KEYS:
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class Sgd:
    """Plain gradient descent with optional heavy-ball momentum."""

    def __init__(self, params, lr, momentum=0.0):
        self.lr = lr
        self.momentum = momentum
        self.buf = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads) -> None:
        for k in PARAM_KEYS:
            b = self.buf[k]
            b *= self.momentum
            b += grads[k]
            params[k] -= self.lr * b


def make_optimizer(params, cfg: PpoConfig):
    if cfg.optimizer == "sgd":
        return Sgd(params, cfg.learning_rate, cfg.momentum)
    return Adam(params, cfg.learning_rate, cfg.adam_betas, cfg.adam_eps)


def make_batch(env: PspsEnv, trajectories) -> Batch:
    obs, acts, logp, adv, ret = [], [], [], [], []
    for traj in trajectories:
        for rec in traj.records:
            obs.append(env.observe(rec.state))
            acts.append(rec.raw_action)
            logp.append(rec.log_prob)
        adv.append(traj.advantages)
        ret.append(traj.returns)
    return Batch(np.array(obs), np.array(acts), np.array(logp),
                 np.concatenate(adv), np.concatenate(ret))


def ppo_update(params, batch: Batch, cfg: PpoConfig, opt, rng=None) -> dict:
    """K epochs of (mini)batch Adam steps on the PPO loss; mutates ``params``."""
    if cfg.normalize_advantages and len(batch) > 1:
        a = batch.advantages
        batch = Batch(batch.obs, batch.actions, batch.old_log_probs,
                      (a - a.mean()) / (a.std() + 1e-8), batch.returns)
    B = len(batch)
    mb = B if not cfg.minibatch_size else min(cfg.minibatch_size, B)
    history = []
    for _ in range(cfg.update_epochs):
        order = np.arange(B) if mb == B else rng.permutation(B)
        for start in range(0, B, mb):
            sub = batch if mb == B else batch.subset(order[start:start + mb])
            loss, grads, diag = ppo_loss(params, sub, cfg)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged("non-finite PPO loss or gradient",
                                       dump={"params": params, "batch": sub, "diag": diag})
            if cfg.target_kl is not None and diag["approx_kl"] > 1.5 * cfg.target_kl:
                history.append(diag)
                break
            if cfg.max_grad_norm is not None:
                norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if norm > cfg.max_grad_norm:
                    grads = {k: g * (cfg.max_grad_norm / norm) for k, g in grads.items()}
            opt.step(params, grads)
            history.append(diag)
        else:
            continue
        break
    first, last = history[0], history[-1]
    out = {k: last[k] for k in last}
    out["loss_first"] = first["loss"]
    out["clip_frac"] = float(np.mean([h["clip_frac"] for h in history]))
    out["mean_ratio"] = float(np.mean([h["mean_ratio"] for h in history]))
    return out


# --------------------------------------------------------------------------
# training driver


@dataclass
class TrainResult:
    params: dict
    checkpoint: dict
    log: list = field(default_factory=list)
    seconds: float = 0.0


def _dump(path: Path, params, extra):
    np.savez(path, **{k: v for k, v in params.items()}, **extra)


def train(scenario: Scenario, cfg: PpoConfig | None = None, seed: int = 0,
          env: PspsEnv | None = None, log_path=None, eval_interval: int = 0,
          eval_episodes: int = 20, dump_dir=None, progress=None,
          presolve: bool = True) -> TrainResult:
    """Run PPO for ``cfg.episodes`` episodes; fully determined by ``seed``.

    With ``presolve`` an empty cache is filled with every radial topology
    up front; otherwise stage LPs are solved and memoized on first use.
    """
    cfg = cfg or PpoConfig()
    env = env or PspsEnv(scenario)
    if presolve and len(env.cache) == 0:
        env.prepare_cache()
    init_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    params = init_params(env.obs_size, env.action_dim, cfg.hidden, init_rng)
    opt = make_optimizer(params, cfg)
    mb_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 8]))
    policy = PpoPolicy(params, env.n_configs)
    log: list[dict] = []
    fh = open(log_path, "w") if log_path else None
    t0 = time.perf_counter()

    def emit(rec):
        log.append(rec)
        if fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()

    try:
        for ep in range(cfg.episodes):
            traj = rollout(policy, env, seed=seed, episode=ep, deterministic=False, purpose=TRAIN)
            r = traj.rewards
            r_mu = float(r.mean())
            r_sigma = float(np.sqrt(np.mean((r - r_mu) ** 2)))
            traj.standardized_rewards = standardize_rewards(r, cfg.eps_std)
            values = np.array([rec.value for rec in traj.records] + [0.0])
            traj.advantages, traj.returns = compute_gae(
                traj.standardized_rewards, values, cfg.gamma_rl, cfg.gae_lambda)
            batch = make_batch(env, [traj])
            try:
                diag = ppo_update(params, batch, cfg, opt, mb_rng)
            except TrainingDiverged as exc:
                if dump_dir is not None:
                    path = Path(dump_dir) / f"diverged_ep{ep}.npz"
                    _dump(path, params, {"obs": batch.obs, "actions": batch.actions})
                    exc.dump = str(path)
                raise
            rec = {
                "kind": "train",
                "episode": ep,
                "cost": traj.total_cost,
                "switch_cost": traj.switch_cost,
                "failures": traj.failures,
                "reward_mean": r_mu,
                "reward_std": r_sigma,
                "std_reward_mean": float(traj.standardized_rewards.mean()),
                "std_reward_std": float(traj.standardized_rewards.std()),
                **{k: diag[k] for k in ("loss", "loss_first", "policy_loss", "value_loss",
                                        "entropy", "clip_frac", "mean_ratio")},
            }
            emit(rec)
            if eval_interval and (ep + 1) % eval_interval == 0:
                costs, fails = [], []
                for k in range(eval_episodes):
                    et = rollout(policy, env, seed=seed, episode=k, deterministic=True, purpose=EVAL)
                    costs.append(et.total_cost)
                    fails.append(et.failures)
                emit({"kind": "eval", "episode": ep, "cost_mean": float(np.mean(costs)),
                      "cost_std": float(np.std(costs)), "failures_mean": float(np.mean(fails))})
            if progress is not None:
                progress(ep, rec)
    finally:
        if fh:
            fh.close()

    ckpt = checkpoint_dict(
        params, n_configs=env.n_configs, groups=env.groups, max_demand=env.network.max_demand,
        horizon=env.horizon, scenario_fingerprint=scenario.fingerprint(),
        meta={"seed": int(seed), "episodes": cfg.episodes, "ppo": _cfg_dict(cfg),
              "scenario": scenario.name},
    )
    return TrainResult(params, ckpt, log, time.perf_counter() - t0)


def _cfg_dict(cfg: PpoConfig) -> dict:
    d = asdict(cfg)
    d["adam_betas"] = list(d["adam_betas"])
    return d


def trajectory_standardization_ok(traj: Trajectory, tol: float = 1e-9) -> bool:
    s = traj.standardized_rewards
    return abs(s.mean()) <= tol and abs(s.std() - 1.0) <= tol
