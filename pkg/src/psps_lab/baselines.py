"""Static switching policies and the exhaustive static-topology oracle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import Action, ConfigurationError, PspsEnv, rollout
from .failure import EVAL
from .scenario import Scenario
from .synthetic import OPT_DDU_54, OPT_DDU_138, OPT_DIU_54, OPT_DIU_138
from .topology import (SwitchConfig, choices_from_config, count_topologies, enumerate_configs,
                       is_radial)

# published line sets, keyed by system size
PRESETS = {
    "opt-diu-54": frozenset(OPT_DIU_54),
    "opt-ddu-54": frozenset(OPT_DDU_54),
    "opt-diu-138": frozenset(OPT_DIU_138),
    "opt-ddu-138": frozenset(OPT_DDU_138),
}

ORACLE_BUDGET = 500


class OracleBudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class StaticPolicy:
    """Hold one switch configuration for the whole horizon."""

    name: str
    config: SwitchConfig

    @property
    def closed_lines(self) -> frozenset[int]:
        return self.config.closed_ids

    @property
    def open_lines(self) -> frozenset[int]:
        return frozenset(self.config.switchable_ids) - self.config.closed_ids

    def act(self, obs, state, rng, deterministic: bool = True) -> Action:
        # the env accepts a SwitchConfig directly; failed lines are forced open there
        return Action(self.config)

    def choices(self, groups) -> tuple[int, ...]:
        return choices_from_config(groups, self.config)


def make_static(network, name: str, closed) -> StaticPolicy:
    closed = frozenset(int(i) for i in closed)
    unknown = closed - set(network.switchable_ids)
    if unknown:
        raise ConfigurationError(f"{name}: lines {sorted(unknown)} are not switchable")
    config = SwitchConfig.from_closed(network.switchable_ids, closed)
    if not is_radial(network, config):
        raise ConfigurationError(f"{name}: closing {sorted(closed)} creates a loop")
    return StaticPolicy(name, config)


def all_open_policy(network) -> StaticPolicy:
    return make_static(network, "all-open", ())


def resolve_static(scenario: Scenario, spec) -> StaticPolicy:
    """A static policy from a scenario preset name, a global preset name or a line list."""
    if isinstance(spec, str):
        if spec in scenario.presets:
            return make_static(scenario.network, spec, scenario.presets[spec])
        if spec in PRESETS:
            return make_static(scenario.network, spec, PRESETS[spec])
        if spec == "all-open":
            return all_open_policy(scenario.network)
        if spec == "initial":
            return make_static(scenario.network, "initial", scenario.initial_closed)
        raise ConfigurationError(
            f"unknown preset {spec!r}; known: {sorted(scenario.presets) + sorted(PRESETS)}")
    closed = sorted(int(i) for i in spec)
    return make_static(scenario.network, "closed=" + ",".join(map(str, closed)), closed)


def run_static(policy: StaticPolicy, env: PspsEnv, seed: int, episodes: int,
               purpose: int = EVAL):
    return [rollout(policy, env, seed=seed, episode=k, purpose=purpose) for k in range(episodes)]


@dataclass
class OracleRow:
    closed: tuple[int, ...]
    mean_cost: float
    std_cost: float
    mean_failures: float
    std_failures: float
    mean_switch_cost: float

    def to_dict(self) -> dict:
        return {"closed": list(self.closed), "mean_cost": self.mean_cost,
                "std_cost": self.std_cost, "mean_failures": self.mean_failures,
                "std_failures": self.std_failures, "mean_switch_cost": self.mean_switch_cost}


def enumerate_static_oracle(scenario: Scenario, episodes: int = 200, seed: int = 0,
                            env: PspsEnv | None = None, budget: int = ORACLE_BUDGET,
                            progress=None) -> list[OracleRow]:
    """Monte Carlo cost of every radial static topology, cheapest first.

    Every topology is evaluated on the same episode indices, so they share
    failure draws.
    """
    env = env or PspsEnv(scenario)
    n = count_topologies(env.groups)
    if n > budget:
        raise OracleBudgetError(f"{n} topologies exceed the oracle budget of {budget}")
    rows = []
    for i, cfg in enumerate(enumerate_configs(env.groups)):
        pol = StaticPolicy("oracle", cfg)
        trajs = run_static(pol, env, seed, episodes)
        costs = np.array([t.total_cost for t in trajs])
        fails = np.array([t.failures for t in trajs], dtype=float)
        rows.append(OracleRow(tuple(sorted(cfg.closed_ids)), float(costs.mean()),
                              float(costs.std()), float(fails.mean()), float(fails.std()),
                              float(np.mean([t.switch_cost for t in trajs]))))
        if progress is not None:
            progress(i, n)
    rows.sort(key=lambda r: (r.mean_cost, r.closed))
    return rows
