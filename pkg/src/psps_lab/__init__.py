"""Wildfire shutoff (PSPS) switching laboratory: simulator, LP power flow and PPO."""
from .grid import Bus, Line, Network, RiskSchedule, load_network, risk_params_at
from .topology import SwitchConfig, SwitchGroup, count_topologies, decompose_groups
from .powerflow import PfSolution, PowerFlowCache, build_lp, solve_cached, solve_pf
from .failure import FailureModel, failure_prob
from .scenario import Scenario, load_scenario
from .env import PspsEnv, Trajectory, rollout

__version__ = "0.1.0"
