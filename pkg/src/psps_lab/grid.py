"""Distribution network data model, validation and JSON ingestion.

Electrical quantities follow one convention throughout the package:
flows, demands, injections and line capacities are in MW / MVAr (MVA),
resistances and reactances are per-unit on ``base_mva``, and voltages are
squared per-unit magnitudes.  Hours are 1-based (``1..horizon``).
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np

SCHEMA_VERSION = 1

SUBSTATION = "substation"
LOAD = "load"


class NetworkError(ValueError):
    """Base class for problems with a network description."""


class NetworkParseError(NetworkError):
    """The file is not valid JSON or does not follow the schema layout."""


class NetworkValidationError(NetworkError):
    """A field value violates a model invariant."""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    v_min_sq: float
    v_max_sq: float
    p_max_inj: float | None = None
    q_min_inj: float | None = None
    q_max_inj: float | None = None

    @property
    def is_substation(self) -> bool:
        return self.kind == SUBSTATION


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    f_max: float
    switchable: bool = False
    wildfire_area: bool = False


@dataclass(frozen=True)
class RiskSchedule:
    """Peak-hour failure parameters of the wildfire-area lines.

    ``gamma_peak`` and ``beta_peak`` are aligned with ``line_ids``.  Outside
    ``peak_hours`` both are multiplied by ``offpeak_fraction``.
    """

    line_ids: tuple[int, ...]
    gamma_peak: np.ndarray
    beta_peak: np.ndarray
    peak_hours: frozenset[int] = frozenset(range(12, 21))
    offpeak_fraction: float = 0.2

    def __post_init__(self):
        g = np.array(self.gamma_peak, dtype=float)
        b = np.array(self.beta_peak, dtype=float)
        g.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "gamma_peak", g)
        object.__setattr__(self, "beta_peak", b)
        object.__setattr__(self, "line_ids", tuple(int(i) for i in self.line_ids))
        object.__setattr__(self, "peak_hours", frozenset(int(h) for h in self.peak_hours))

    def factor(self, hour: int) -> float:
        return 1.0 if hour in self.peak_hours else self.offpeak_fraction

    def to_dict(self) -> dict[str, Any]:
        return {
            "line_ids": list(self.line_ids),
            "gamma_peak": [float(v) for v in self.gamma_peak],
            "beta_peak": [float(v) for v in self.beta_peak],
            "peak_hours": sorted(self.peak_hours),
            "offpeak_fraction": float(self.offpeak_fraction),
        }


def risk_params_at(schedule: RiskSchedule, hour: int, horizon: int | None = None):
    """Return ``(gamma, beta)`` arrays over ``schedule.line_ids`` at ``hour``."""
    if hour < 1 or (horizon is not None and hour > horizon):
        raise ValueError(f"hour {hour} outside 1..{horizon}")
    s = schedule.factor(hour)
    return s * schedule.gamma_peak, s * schedule.beta_peak


@dataclass(frozen=True, eq=False)
class Network:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    horizon: int
    demand_p: np.ndarray
    demand_q: np.ndarray
    c_energy: float
    c_switch: float
    c_load_loss: float
    v_ref_sq: float = 1.0
    base_mva: float = 1.0
    name: str = "network"
    risk: RiskSchedule | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for attr in ("demand_p", "demand_q"):
            a = np.array(getattr(self, attr), dtype=float)
            if a.ndim == 1:
                a = a.reshape(-1, 1)
            a.setflags(write=False)
            object.__setattr__(self, attr, a)
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return network_to_dict(self) == network_to_dict(other)

    __hash__ = object.__hash__

    # index helpers -----------------------------------------------------
    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_line(self) -> int:
        return len(self.lines)

    @cached_property
    def bus_pos(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def line_pos(self) -> dict[int, int]:
        return {l.id: i for i, l in enumerate(self.lines)}

    @cached_property
    def from_idx(self) -> np.ndarray:
        return np.array([self.bus_pos[l.from_bus] for l in self.lines], dtype=int)

    @cached_property
    def to_idx(self) -> np.ndarray:
        return np.array([self.bus_pos[l.to_bus] for l in self.lines], dtype=int)

    @cached_property
    def r(self) -> np.ndarray:
        return np.array([l.r for l in self.lines], dtype=float)

    @cached_property
    def x(self) -> np.ndarray:
        return np.array([l.x for l in self.lines], dtype=float)

    @cached_property
    def f_max(self) -> np.ndarray:
        return np.array([l.f_max for l in self.lines], dtype=float)

    @cached_property
    def wildfire_mask(self) -> np.ndarray:
        return np.array([l.wildfire_area for l in self.lines], dtype=bool)

    @cached_property
    def switchable_ids(self) -> tuple[int, ...]:
        # switchable lines are always addressed in ascending id order
        return tuple(sorted(l.id for l in self.lines if l.switchable))

    @cached_property
    def switchable_pos(self) -> np.ndarray:
        """Positions in ``lines`` of the switchable lines, in ascending id order."""
        return np.array([self.line_pos[i] for i in self.switchable_ids], dtype=int)

    @cached_property
    def substation_pos(self) -> np.ndarray:
        return np.array([i for i, b in enumerate(self.buses) if b.is_substation], dtype=int)

    @cached_property
    def max_demand(self) -> float:
        m = max(float(np.abs(self.demand_p).max(initial=0.0)),
                float(np.abs(self.demand_q).max(initial=0.0)))
        return m if m > 0 else 1.0

    def demand_at(self, hour: int) -> tuple[np.ndarray, np.ndarray]:
        if hour < 1 or hour > self.horizon:
            raise ValueError(f"hour {hour} outside 1..{self.horizon}")
        return self.demand_p[:, hour - 1], self.demand_q[:, hour - 1]

    def risk_per_line(self, hour: int) -> tuple[np.ndarray, np.ndarray]:
        """Full-length ``(gamma, beta)`` arrays; zero on lines without risk data."""
        gamma = np.zeros(self.n_line)
        beta = np.zeros(self.n_line)
        if self.risk is not None:
            g, b = risk_params_at(self.risk, hour, self.horizon)
            idx = [self.line_pos[i] for i in self.risk.line_ids]
            gamma[idx] = g
            beta[idx] = b
        return gamma, beta


# ----------------------------------------------------------------------
# validation


def validate_network(net: Network) -> Network:
    def fail(msg):
        raise NetworkValidationError(msg)

    if not net.buses:
        fail("network has no buses")
    ids = [b.id for b in net.buses]
    if len(set(ids)) != len(ids):
        fail("duplicate bus ids")
    if not any(b.is_substation for b in net.buses):
        fail("network needs at least one substation bus")
    for b in net.buses:
        if b.kind not in (SUBSTATION, LOAD):
            fail(f"bus {b.id}: unknown kind {b.kind!r}")
        if not b.v_min_sq > 0:
            fail(f"bus {b.id}: v_min_sq must be > 0")
        if b.v_min_sq > b.v_max_sq:
            fail(f"bus {b.id}: v_min_sq > v_max_sq")
        inj = (b.p_max_inj, b.q_min_inj, b.q_max_inj)
        if b.is_substation:
            if any(v is None for v in inj):
                fail(f"bus {b.id}: substation needs p_max_inj, q_min_inj, q_max_inj")
            if b.p_max_inj < 0:
                fail(f"bus {b.id}: p_max_inj must be >= 0")
            if b.q_min_inj > b.q_max_inj:
                fail(f"bus {b.id}: q_min_inj > q_max_inj")
            if not b.v_min_sq <= net.v_ref_sq <= b.v_max_sq:
                fail(f"bus {b.id}: v_ref_sq outside the substation voltage box")
        elif any(v is not None for v in inj):
            fail(f"bus {b.id}: injection limits given for a load bus")

    lids = [l.id for l in net.lines]
    if len(set(lids)) != len(lids):
        fail("duplicate line ids")
    known = set(ids)
    for l in net.lines:
        if l.from_bus not in known or l.to_bus not in known:
            fail(f"line {l.id}: references unknown bus")
        if l.from_bus == l.to_bus:
            fail(f"line {l.id}: from_bus == to_bus")
        if l.r < 0 or l.x < 0:
            fail(f"line {l.id}: r and x must be >= 0")
        if not l.f_max > 0:
            fail(f"line {l.id}: f_max must be > 0")

    if net.horizon < 1:
        fail("horizon must be >= 1")
    shape = (net.n_bus, net.horizon)
    for name in ("demand_p", "demand_q"):
        a = getattr(net, name)
        if a.shape != shape:
            fail(f"{name} has shape {a.shape}, expected {shape}")
        if not np.all(np.isfinite(a)):
            fail(f"{name} has non-finite entries")
    if np.any(net.demand_p < 0) or np.any(net.demand_q < 0):
        fail("demands must be >= 0")
    for name in ("c_energy", "c_switch", "c_load_loss"):
        if getattr(net, name) < 0:
            fail(f"{name} must be >= 0")
    if not net.v_ref_sq > 0 or not net.base_mva > 0:
        fail("v_ref_sq and base_mva must be > 0")

    if net.risk is not None:
        rk = net.risk
        if len(rk.gamma_peak) != len(rk.line_ids) or len(rk.beta_peak) != len(rk.line_ids):
            fail("risk arrays must match the wildfire line list")
        wf = {l.id for l in net.lines if l.wildfire_area}
        if set(rk.line_ids) != wf:
            fail("risk.line_ids must equal the set of wildfire-area lines")
        if np.any(rk.gamma_peak <= 0) or np.any(rk.gamma_peak > 1):
            fail("risk gamma_peak must lie in (0, 1]")
        if np.any(rk.beta_peak < 0):
            fail("risk beta_peak must be >= 0")
        if not 0 < rk.offpeak_fraction <= 1:
            fail("risk offpeak_fraction must lie in (0, 1]")
        if any(h < 1 or h > net.horizon for h in rk.peak_hours):
            fail("risk peak_hours outside the horizon")

    if not _is_connected(net):
        warnings.warn(f"network {net.name!r}: line graph is not connected", stacklevel=2)
    return net


def _is_connected(net: Network) -> bool:
    parent = list(range(net.n_bus))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in zip(net.from_idx, net.to_idx):
        parent[find(a)] = find(b)
    return len({find(i) for i in range(net.n_bus)}) == 1


# ----------------------------------------------------------------------
# (de)serialization


def network_to_dict(net: Network) -> dict[str, Any]:
    buses = []
    for b in net.buses:
        d = {"id": b.id, "kind": b.kind, "v_min_sq": b.v_min_sq, "v_max_sq": b.v_max_sq}
        if b.is_substation:
            d.update(p_max_inj=b.p_max_inj, q_min_inj=b.q_min_inj, q_max_inj=b.q_max_inj)
        buses.append(d)
    out = {
        "schema_version": SCHEMA_VERSION,
        "name": net.name,
        "system": {
            "base_mva": net.base_mva,
            "horizon": net.horizon,
            "v_ref_sq": net.v_ref_sq,
            "c_energy": net.c_energy,
            "c_switch": net.c_switch,
            "c_load_loss": net.c_load_loss,
        },
        "buses": buses,
        "lines": [
            {"id": l.id, "from_bus": l.from_bus, "to_bus": l.to_bus, "r": l.r, "x": l.x,
             "f_max": l.f_max, "switchable": l.switchable, "wildfire_area": l.wildfire_area}
            for l in net.lines
        ],
        "demand_p": net.demand_p.tolist(),
        "demand_q": net.demand_q.tolist(),
    }
    if net.risk is not None:
        out["risk"] = net.risk.to_dict()
    if net.meta:
        out["meta"] = net.meta
    return out


def network_from_dict(data: dict[str, Any]) -> Network:
    try:
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise NetworkParseError(f"unsupported schema_version {version!r}")
        system = data["system"]
        buses = [
            Bus(id=int(b["id"]), kind=str(b["kind"]), v_min_sq=float(b["v_min_sq"]),
                v_max_sq=float(b["v_max_sq"]),
                p_max_inj=_opt_float(b.get("p_max_inj")),
                q_min_inj=_opt_float(b.get("q_min_inj")),
                q_max_inj=_opt_float(b.get("q_max_inj")))
            for b in data["buses"]
        ]
        lines = [
            Line(id=int(l["id"]), from_bus=int(l["from_bus"]), to_bus=int(l["to_bus"]),
                 r=float(l["r"]), x=float(l["x"]), f_max=float(l["f_max"]),
                 switchable=bool(l.get("switchable", False)),
                 wildfire_area=bool(l.get("wildfire_area", False)))
            for l in data["lines"]
        ]
        risk = None
        if data.get("risk") is not None:
            rk = data["risk"]
            wf_ids = rk.get("line_ids")
            if wf_ids is None:
                wf_ids = [l.id for l in lines if l.wildfire_area]
            risk = RiskSchedule(
                line_ids=tuple(wf_ids),
                gamma_peak=np.asarray(rk["gamma_peak"], dtype=float),
                beta_peak=np.asarray(rk["beta_peak"], dtype=float),
                peak_hours=frozenset(rk.get("peak_hours", range(12, 21))),
                offpeak_fraction=float(rk.get("offpeak_fraction", 0.2)),
            )
        net = Network(
            buses=tuple(buses),
            lines=tuple(lines),
            horizon=int(system["horizon"]),
            demand_p=np.asarray(data["demand_p"], dtype=float),
            demand_q=np.asarray(data["demand_q"], dtype=float),
            c_energy=float(system["c_energy"]),
            c_switch=float(system["c_switch"]),
            c_load_loss=float(system["c_load_loss"]),
            v_ref_sq=float(system.get("v_ref_sq", 1.0)),
            base_mva=float(system.get("base_mva", 1.0)),
            name=str(data.get("name", "network")),
            risk=risk,
            meta=dict(data.get("meta", {})),
        )
    except NetworkError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkParseError(f"malformed network description: {exc!r}") from exc
    return validate_network(net)


def _opt_float(v):
    return None if v is None else float(v)


def load_network(path) -> Network:
    """Read and validate a network file (see ``docs`` section of the README)."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkParseError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise NetworkParseError(f"{path}: top level must be an object")
    return network_from_dict(data)


def dumps_network(net: Network) -> str:
    return json.dumps(network_to_dict(net), indent=1, sort_keys=True)


def save_network(net: Network, path) -> None:
    Path(path).write_text(dumps_network(net) + "\n")


def replace_costs(net: Network, **costs) -> Network:
    """Copy of ``net`` with some of c_energy / c_switch / c_load_loss replaced."""
    d = network_to_dict(net)
    for k, v in costs.items():
        if k not in ("c_energy", "c_switch", "c_load_loss"):
            raise KeyError(k)
        if v is not None:
            d["system"][k] = float(v)
    return network_from_dict(d)


def replace_risk(net: Network, risk: RiskSchedule | None) -> Network:
    d = network_to_dict(net)
    if risk is None:
        d.pop("risk", None)
    else:
        d["risk"] = risk.to_dict()
    return network_from_dict(d)
