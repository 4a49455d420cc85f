"""Scenario files: a network plus failure model, initial topology and run settings."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .failure import FailureModel
from .grid import (Network, NetworkError, RiskSchedule, load_network, network_to_dict,
                   replace_costs, replace_risk)

SCENARIO_SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    pass


def data_path(*parts) -> Path:
    """Path of a file shipped in ``psps_lab/data``."""
    return Path(str(resources.files("psps_lab").joinpath("data", *parts)))


@dataclass(frozen=True)
class Scenario:
    name: str
    network: Network
    failure: FailureModel
    initial_closed: frozenset = frozenset()
    horizon: int = 24
    seed: int = 0
    eval_episodes: int = 200
    demand_noise: float = 0.0
    presets: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "initial_closed", frozenset(int(i) for i in self.initial_closed))
        if not 1 <= self.horizon <= self.network.horizon:
            raise ScenarioError(f"horizon {self.horizon} exceeds the network profile length")
        unknown = self.initial_closed - set(self.network.switchable_ids)
        if unknown:
            raise ScenarioError(f"initial topology closes non-switchable lines {sorted(unknown)}")
        if self.demand_noise < 0:
            raise ScenarioError("demand_noise must be >= 0")

    @property
    def tau(self) -> float:
        return self.failure.tau

    def with_tau(self, tau: float) -> "Scenario":
        return replace(self, failure=replace(self.failure, tau=float(tau)),
                       name=f"{self.name}@tau={tau:g}")

    def _identity(self, with_tau: bool) -> dict:
        fm = self.failure.to_dict()
        if not with_tau:
            fm.pop("tau")
        return {
            "network": network_to_dict(self.network),
            "failure": fm,
            "initial_closed": sorted(self.initial_closed),
            "horizon": self.horizon,
            "demand_noise": self.demand_noise,
        }

    def fingerprint(self) -> str:
        """Hash of everything that changes episode dynamics (not seeds or counts)."""
        blob = json.dumps(self._identity(True), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def family_fingerprint(self) -> str:
        """Like :meth:`fingerprint` but ignoring the step threshold."""
        blob = json.dumps(self._identity(False), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def apply_plateau(network: Network, plateau: float) -> Network:
    """Set beta so that ``gamma + beta * F`` equals ``plateau`` at peak hours."""
    rk = network.risk
    if rk is None:
        raise ScenarioError("plateau_probability needs a risk section in the network")
    if not 0 < plateau <= 1:
        raise ScenarioError("plateau_probability must lie in (0, 1]")
    f = np.array([network.f_max[network.line_pos[i]] for i in rk.line_ids])
    beta = np.maximum(plateau - rk.gamma_peak, 0.0) / f
    return replace_risk(network, RiskSchedule(rk.line_ids, rk.gamma_peak, beta,
                                              rk.peak_hours, rk.offpeak_fraction))


def scenario_from_dict(data: dict, base_dir: Path | None = None) -> Scenario:
    if data.get("schema_version") != SCENARIO_SCHEMA_VERSION:
        raise ScenarioError(f"unsupported scenario schema_version {data.get('schema_version')!r}")
    try:
        ref = data["network"]
        if isinstance(ref, dict):
            from .grid import network_from_dict
            network = network_from_dict(ref)
        else:
            path = Path(ref)
            if str(ref).startswith("builtin:"):
                path = data_path("networks", str(ref)[len("builtin:"):] + ".json")
            elif not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            network = load_network(path)

        costs = data.get("costs") or {}
        if costs:
            network = replace_costs(network, **costs)
        risk_over = data.get("risk") or {}
        if risk_over and network.risk is not None:
            rk = network.risk
            gscale = float(risk_over.get("gamma_scale", 1.0))
            network = replace_risk(network, RiskSchedule(
                rk.line_ids, rk.gamma_peak * gscale, rk.beta_peak,
                frozenset(risk_over.get("peak_hours", rk.peak_hours)),
                float(risk_over.get("offpeak_fraction", rk.offpeak_fraction))))

        fm = dict(data.get("failure") or {})
        plateau = fm.pop("plateau_probability", None)
        if plateau is not None:
            network = apply_plateau(network, float(plateau))
        if "curve_x" in fm:
            fm["curve_x"] = tuple(fm["curve_x"])
            fm["curve_y"] = tuple(fm["curve_y"])
        failure = FailureModel(**fm)

        return Scenario(
            name=str(data.get("name", network.name)),
            network=network,
            failure=failure,
            initial_closed=frozenset(data.get("initial_topology", [])),
            horizon=int(data.get("horizon", network.horizon)),
            seed=int(data.get("seed", 0)),
            eval_episodes=int(data.get("eval_episodes", 200)),
            demand_noise=float(data.get("demand_noise", 0.0)),
            presets={k: frozenset(v) for k, v in (data.get("presets") or {}).items()},
        )
    except (NetworkError, ScenarioError):
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc


def load_scenario(path) -> Scenario:
    p = Path(path)
    if not p.exists() and not p.suffix:
        p = data_path("scenarios", f"{path}.json")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{p}: {exc}") from exc
    return scenario_from_dict(data, p.parent)
