"""Episodic PSPS environment: switching action -> stage LP -> reward -> failures."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .failure import EVAL, EpisodeStreams, line_failure_probs, sample_transitions
from .powerflow import PfSolution, PowerFlowCache
from .scenario import Scenario
from .topology import (SwitchConfig, SwitchGroup, config_for_network, config_from_choices,
                       decompose_groups, enumerate_configs, is_radial)


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class State:
    av: np.ndarray  # per line, True = available
    z_pre: np.ndarray  # per switchable line, True = closed before the decision
    d_p: np.ndarray
    d_q: np.ndarray
    hour: int


@dataclass
class StepRecord:
    state: State
    choices: tuple[int, ...]
    switch_config: SwitchConfig  # as commanded
    effective_config: SwitchConfig  # commanded, with failed lines forced open
    pf: PfSolution
    switch_ops: int
    switch_cost: float
    reward: float
    next_state: State | None
    failures_this_step: int
    failed_lines: tuple[int, ...] = ()
    done: bool = False
    raw_action: np.ndarray | None = None
    log_prob: float | None = None
    value: float | None = None

    @property
    def cost(self) -> float:
        return -self.reward


def stage_reward(pf: PfSolution, switch_cost: float) -> float:
    return -(pf.energy_cost + switch_cost + pf.load_loss_cost)


@dataclass
class Trajectory:
    records: list[StepRecord] = field(default_factory=list)
    seed: int = 0
    episode: int = 0
    standardized_rewards: np.ndarray | None = None
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self):
        return len(self.records)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([r.reward for r in self.records])

    @property
    def total_cost(self) -> float:
        return float(-self.rewards.sum())

    @property
    def switch_cost(self) -> float:
        return float(sum(r.switch_cost for r in self.records))

    @property
    def failures(self) -> int:
        return int(sum(r.failures_this_step for r in self.records))


def observation_size(network) -> int:
    return network.n_line + len(network.switchable_ids) + 2 * network.n_bus + 1


def normalize_state(state: State, max_demand: float, horizon: int) -> np.ndarray:
    """Policy input: bits as 0/1, demands over the network maximum, hour as t/T."""
    return np.concatenate([
        state.av.astype(float),
        state.z_pre.astype(float),
        state.d_p / max_demand,
        state.d_q / max_demand,
        [state.hour / horizon],
    ])


class PspsEnv:
    """One environment instance; not shared between workers."""

    def __init__(self, scenario: Scenario, cache: PowerFlowCache | None = None,
                 groups: Sequence[SwitchGroup] | None = None):
        self.scenario = scenario
        self.network = scenario.network
        self.groups = list(decompose_groups(self.network) if groups is None else groups)
        self.cache = cache if cache is not None else PowerFlowCache(self.network)
        if self.cache.network is not self.network:
            raise ConfigurationError("power-flow cache belongs to a different network")
        self.horizon = scenario.horizon
        self.initial_config = config_for_network(self.network, scenario.initial_closed)
        if not is_radial(self.network, self.initial_config):
            raise ConfigurationError(
                f"initial topology {sorted(scenario.initial_closed)} is not radial")
        self._state: State | None = None
        self._streams: EpisodeStreams | None = None

    @property
    def action_dim(self) -> int:
        return len(self.groups)

    @property
    def n_configs(self) -> list[int]:
        return [g.n_configs for g in self.groups]

    @property
    def obs_size(self) -> int:
        return observation_size(self.network)

    def prepare_cache(self, progress=None) -> None:
        """Pre-solve every radial configuration at full availability."""
        self.cache.prepopulate(enumerate_configs(self.groups),
                               range(1, self.horizon + 1), progress=progress)

    def observe(self, state: State) -> np.ndarray:
        return normalize_state(state, self.network.max_demand, self.horizon)

    @property
    def streams(self) -> EpisodeStreams:
        return self._streams

    @property
    def state(self) -> State:
        return self._state

    def _demand(self, hour: int):
        d_p, d_q = self.network.demand_at(hour)
        if self.scenario.demand_noise > 0:
            f = self._noise[hour - 1]
            return d_p * f, d_q * f
        return d_p.copy(), d_q.copy()

    def reset(self, seed: int | None = None, episode: int = 0, purpose: int = EVAL) -> State:
        seed = self.scenario.seed if seed is None else seed
        self._streams = EpisodeStreams(seed, purpose, episode, self.horizon, self.network.n_line)
        if self.scenario.demand_noise > 0:
            eps = self._streams.demand_rng.standard_normal((self.horizon, self.network.n_bus))
            self._noise = np.maximum(1.0 + self.scenario.demand_noise * eps, 0.0)
        d_p, d_q = self._demand(1)
        self._state = State(
            av=np.ones(self.network.n_line, dtype=bool),
            z_pre=self.initial_config.mask,
            d_p=d_p, d_q=d_q, hour=1,
        )
        return self._state

    def step(self, choices) -> StepRecord:
        """Apply one switching decision (one index per group, or a SwitchConfig)."""
        s = self._state
        if s is None:
            raise RuntimeError("call reset() first")
        if isinstance(choices, SwitchConfig):
            config = choices
            choices = ()
        else:
            choices = tuple(int(k) for k in choices)
            config = config_from_choices(self.groups, choices)
        net = self.network
        z = config.mask
        switch_ops = int(np.count_nonzero(z != s.z_pre))
        switch_cost = net.c_switch * switch_ops

        # a failed switchable line cannot carry power whatever was commanded
        av_sw = s.av[net.switchable_pos]
        effective = SwitchConfig(config.switchable_ids, tuple(z & av_sw))
        pf = self.cache.solve(effective, s.av, s.hour)
        reward = stage_reward(pf, switch_cost)

        probs = line_failure_probs(self.scenario.failure, net, pf.f_p, s.hour)
        av_next = sample_transitions(s.av, probs, self._streams.failure_uniforms[s.hour - 1])
        newly = np.flatnonzero(s.av & ~av_next)
        done = s.hour >= self.horizon
        next_state = None
        if not done:
            d_p, d_q = self._demand(s.hour + 1)
            next_state = State(av=av_next, z_pre=z.copy(), d_p=d_p, d_q=d_q, hour=s.hour + 1)
        self._state = next_state
        return StepRecord(
            state=s, choices=choices, switch_config=config, effective_config=effective, pf=pf,
            switch_ops=switch_ops, switch_cost=switch_cost, reward=reward, next_state=next_state,
            failures_this_step=int(newly.size),
            failed_lines=tuple(net.lines[i].id for i in newly), done=done,
        )


@dataclass
class Action:
    choices: tuple[int, ...]
    raw: np.ndarray | None = None
    log_prob: float | None = None
    value: float | None = None


def rollout(policy, env: PspsEnv, seed: int | None = None, episode: int = 0,
            deterministic: bool = True, purpose: int = EVAL) -> Trajectory:
    """Run one full episode.

    ``policy.act(obs, state, rng, deterministic)`` must return an :class:`Action`.
    """
    state = env.reset(seed=seed, episode=episode, purpose=purpose)
    rng = env.streams.action_rng
    traj = Trajectory(seed=env.streams.seed, episode=episode)
    while state is not None:
        act = policy.act(env.observe(state), state, rng, deterministic)
        rec = env.step(act.choices)
        rec.raw_action = act.raw
        rec.log_prob = act.log_prob
        rec.value = act.value
        traj.records.append(rec)
        state = rec.next_state
    return traj
