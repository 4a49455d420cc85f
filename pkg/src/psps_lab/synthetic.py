"""Builders for the synthetic networks shipped in ``psps_lab/data``.

Each builder returns a validated :class:`~psps_lab.grid.Network`.  Running the
module regenerates the JSON files::

    python -m psps_lab.synthetic
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .grid import Bus, Line, Network, RiskSchedule, save_network, validate_network

V_MIN_SQ = 0.95 ** 2
V_MAX_SQ = 1.05 ** 2
Q_RATIO = 0.4  # reactive demand as a fraction of active demand


def daily_profile(horizon: int = 24, low: float = 0.65, peak_hour: int = 17) -> np.ndarray:
    """Smooth load multiplier in [low, 1] with its maximum at ``peak_hour``."""
    t = np.arange(1, horizon + 1)
    return low + (1.0 - low) * 0.5 * (1.0 + np.cos(2.0 * np.pi * (t - peak_hour) / 24.0))


class _Builder:
    def __init__(self, name: str, switchable_ids, n_lines: int):
        self.name = name
        self.switchable_ids = set(switchable_ids)
        self.n_lines = n_lines
        self.buses: list[Bus] = []
        self.load: dict[int, float] = {}
        self.fixed: list[dict] = []
        self.switched: dict[int, dict] = {}

    def substation(self, p_max: float = 20.0) -> int:
        bid = len(self.buses) + 1
        self.buses.append(Bus(bid, "substation", V_MIN_SQ, V_MAX_SQ, p_max, -p_max, p_max))
        self.load[bid] = 0.0
        return bid

    def bus(self, p: float) -> int:
        bid = len(self.buses) + 1
        self.buses.append(Bus(bid, "load", V_MIN_SQ, V_MAX_SQ))
        self.load[bid] = p
        return bid

    def line(self, a: int, b: int, f_max: float = 10.0, wildfire: bool = False,
             r: float = 0.002, x: float = 0.004, sw: int | None = None) -> None:
        d = dict(from_bus=a, to_bus=b, r=r, x=x, f_max=f_max, wildfire_area=wildfire)
        if sw is None:
            self.fixed.append(d)
        else:
            if sw not in self.switchable_ids or sw in self.switched:
                raise ValueError(f"bad switchable id {sw}")
            self.switched[sw] = d

    def chain(self, root: int, loads, **kw) -> list[int]:
        out, prev = [], root
        for p in loads:
            b = self.bus(p)
            self.line(prev, b, **kw)
            out.append(b)
            prev = b
        return out

    def tree(self, root: int, n: int, p: float, rng, **kw) -> list[int]:
        """``n`` new buses hung below ``root``, mostly extending recent branches."""
        nodes = [root]
        out = []
        for _ in range(n):
            parent = nodes[-1] if rng.random() < 0.6 else nodes[rng.integers(len(nodes))]
            b = self.bus(p)
            self.line(parent, b, **kw)
            nodes.append(b)
            out.append(b)
        return out

    def build(self, *, horizon=24, costs, risk_gamma: float, risk_beta_frac: float,
              base_mva: float = 10.0, meta=None) -> Network:
        if set(self.switched) != self.switchable_ids:
            raise ValueError("not every switchable id was placed")
        free = [i for i in range(1, self.n_lines + 1) if i not in self.switchable_ids]
        if len(free) != len(self.fixed):
            raise ValueError(f"{len(self.fixed)} fixed lines for {len(free)} free ids")
        lines = [Line(lid, switchable=False, **d) for lid, d in zip(free, self.fixed)]
        lines += [Line(lid, switchable=True, **d) for lid, d in self.switched.items()]
        lines.sort(key=lambda l: l.id)
        prof = daily_profile(horizon)
        base = np.array([self.load[b.id] for b in self.buses])
        dp = np.round(np.outer(base, prof), 6)
        dq = np.round(Q_RATIO * dp, 6)
        wf = [l for l in lines if l.wildfire_area]
        risk = RiskSchedule(
            line_ids=tuple(l.id for l in wf),
            gamma_peak=np.full(len(wf), risk_gamma),
            beta_peak=np.array([risk_beta_frac / l.f_max for l in wf]),
        )
        net = Network(
            buses=tuple(self.buses), lines=tuple(lines), horizon=horizon,
            demand_p=dp, demand_q=dq, v_ref_sq=1.0, base_mva=base_mva, name=self.name,
            risk=risk, meta=meta or {}, **costs,
        )
        return validate_network(net)


# --------------------------------------------------------------------------


def toy6() -> Network:
    """Six buses, two switch groups (3 and 2 lines), 12 radial topologies.

    Island X (buses 4, 5) can be fed from bus 2 over a weak line, or from the
    wildfire branch at bus 3 over two strong ones.  Island Y (bus 6) hangs off
    bus 2 or bus 3.
    """
    b = _Builder("toy6", {3, 4, 5, 6, 7}, 8)
    s = b.substation(10.0)
    n2 = b.bus(0.6)
    n3 = b.bus(0.3)
    n4 = b.bus(0.5)
    n5 = b.bus(0.4)
    n6 = b.bus(0.3)
    b.line(s, n2, f_max=4.0)
    b.line(s, n3, f_max=2.0, wildfire=True)
    b.line(n4, n5, f_max=4.0)
    b.line(n2, n4, f_max=0.7, sw=3)
    b.line(n3, n4, f_max=2.0, wildfire=True, sw=4)
    b.line(n3, n5, f_max=2.0, wildfire=True, sw=5)
    b.line(n2, n6, f_max=0.12, sw=6)
    b.line(n3, n6, f_max=2.0, wildfire=True, sw=7)
    return b.build(costs=dict(c_energy=10.0, c_switch=20.0, c_load_loss=200.0),
                   risk_gamma=0.002, risk_beta_frac=0.3,
                   meta={"description": "6-bus teaching network"})


SYNTH54_SWITCHABLE = (3, 5, 9, 13, 17, 19, 27, 34, 37, 47, 52)


def synth54() -> Network:
    """54 buses, 57 lines (11 switchable), 14 wildfire-area lines, 324 topologies.

    Feeder A leaves substation 1 through four wildfire-area trunk lines that
    stay below 10% of capacity with their own load.  The pocket island P can
    only be fed from that trunk (lines 17 and 52, both in the wildfire area),
    and doing so pushes the trunk above 10%.  Island D is fed from the trunk
    (47, wildfire), from feeder B (19) or over a weak tie from feeder C (13).
    """
    rng = np.random.default_rng(54)
    b = _Builder("synth54", SYNTH54_SWITCHABLE, 57)
    sa, sb, sc = b.substation(), b.substation(), b.substation()
    # feeder A: wildfire trunk plus a clean branch
    trunk = b.chain(sa, [0.2, 0.2, 0.2, 0.2], f_max=10.0, wildfire=True)
    b.tree(sa, 6, 0.25, rng, f_max=10.0)
    # feeders B and C, each with two light wildfire laterals
    fb = b.tree(sb, 8, 0.25, rng, f_max=10.0)
    fc = b.tree(sc, 8, 0.25, rng, f_max=10.0)
    for root in (fb[1], fb[5], fc[2], fc[6]):
        b.chain(root, [0.05], f_max=5.0, wildfire=True)
    # pocket island P
    p = [b.bus(0.25)]
    p += b.chain(p[0], [0.25, 0.25, 0.25], f_max=1.2, wildfire=True)
    b.line(trunk[3], p[0], f_max=5.0, wildfire=True, sw=52)
    b.line(trunk[1], p[3], f_max=5.0, wildfire=True, sw=17)
    # island D
    d = [b.bus(0.3)]
    d += b.tree(d[0], 4, 0.3, rng, f_max=5.0)
    b.line(trunk[2], d[0], f_max=5.0, wildfire=True, sw=47)
    b.line(fb[7], d[2], f_max=5.0, sw=19)
    b.line(fc[4], d[4], f_max=0.6, sw=13)
    # islands I1..I3, each with a good and a weak (or equivalent) tie
    for good, alt, alt_cap, gsrc, asrc in ((3, 27, 0.5, fb[3], fc[3]),
                                           (5, 34, 5.0, fb[6], fc[7]),
                                           (37, 9, 0.4, fb[2], fc[5])):
        isl = [b.bus(0.2)]
        isl += b.tree(isl[0], 3, 0.2, rng, f_max=5.0)
        b.line(gsrc, isl[0], f_max=5.0, sw=good)
        b.line(asrc, isl[-1], f_max=alt_cap, sw=alt)
    return b.build(costs=dict(c_energy=10.0, c_switch=100.0, c_load_loss=500.0),
                   risk_gamma=0.001, risk_beta_frac=0.05,
                   meta={"description": "synthetic 54-bus feeder system"})


SYNTH138_SWITCHABLE = (2, 18, 30, 37, 110, 131, 136, 137, 138, 140, 141, 142)


def synth138() -> Network:
    """138 buses, 142 lines (12 switchable), 13 wildfire-area lines, 432 topologies.

    Same layout idea as :func:`synth54`: a wildfire trunk on feeder A, a pocket
    island (110/141) that can only be fed from it, and three islands whose
    cheapest-looking ties (2, 18, 30) run from the trunk while the
    alternatives (136, 137, 138) come from clean feeders.
    """
    rng = np.random.default_rng(138)
    b = _Builder("synth138", SYNTH138_SWITCHABLE, 142)
    sa, sb, sc = b.substation(40.0), b.substation(40.0), b.substation(40.0)
    trunk = b.chain(sa, [0.15, 0.15, 0.15, 0.15], f_max=12.0, wildfire=True)
    b.tree(sa, 20, 0.2, rng, f_max=12.0)
    fb = b.tree(sb, 24, 0.2, rng, f_max=12.0)
    fc = b.tree(sc, 24, 0.2, rng, f_max=12.0)
    b.chain(fb[3], [0.05], f_max=5.0, wildfire=True)
    p = [b.bus(0.3)]
    p += b.chain(p[0], [0.3, 0.3, 0.3], f_max=1.5, wildfire=True)
    b.line(trunk[3], p[0], f_max=5.0, wildfire=True, sw=110)
    b.line(trunk[1], p[3], f_max=5.0, wildfire=True, sw=141)
    spec = (
        (2, trunk[2], True, 5.0, 136, fb[10], 131, fc[5], 0.4),
        (18, trunk[3], True, 5.0, 137, fc[12], 142, fb[15], 0.4),
        (30, trunk[0], True, 5.0, 138, fb[20], None, None, None),
        (37, fc[20], False, 5.0, None, None, 140, fb[22], 0.3),
    )
    for first, src, wild, cap, clean, csrc, weak, wsrc, wcap in spec:
        isl = [b.bus(0.2)]
        isl += b.tree(isl[0], 7, 0.2, rng, f_max=6.0)
        b.line(src, isl[0], f_max=cap, wildfire=wild, sw=first)
        if clean is not None:
            b.line(csrc, isl[3], f_max=5.0, sw=clean)
        if weak is not None:
            b.line(wsrc, isl[-1], f_max=wcap, sw=weak)
    # remaining buses extend feeder C
    b.tree(fc[0], 138 - len(b.buses), 0.2, rng, f_max=12.0)
    return b.build(costs=dict(c_energy=10.0, c_switch=100.0, c_load_loss=500.0),
                   risk_gamma=0.001, risk_beta_frac=0.05,
                   meta={"description": "synthetic 138-bus feeder system"})


BUILDERS = {"toy6": toy6, "synth54": synth54, "synth138": synth138}

OPT_DIU_54 = (3, 5, 37, 47, 52)
OPT_DDU_54 = (3, 17, 19, 34, 37)
OPT_DIU_138 = (2, 18, 30, 37, 110)
OPT_DDU_138 = (37, 110, 136, 137, 138)


def builtin_scenarios() -> dict[str, dict]:
    presets54 = {"opt-diu": list(OPT_DIU_54), "opt-ddu": list(OPT_DDU_54)}
    presets138 = {"opt-diu": list(OPT_DIU_138), "opt-ddu": list(OPT_DDU_138)}
    extreme = {"kind": "step", "tau": 0.1, "plateau_probability": 0.9}
    extreme_costs = {"c_energy": 50.0, "c_switch": 200.0, "c_load_loss": 1000.0}
    return {
        "toy6": {
            "schema_version": 1, "name": "toy6", "network": "builtin:toy6",
            "failure": {"kind": "step", "tau": 0.5}, "initial_topology": [3, 6],
            "eval_episodes": 200, "seed": 0,
        },
        "synth54": {
            "schema_version": 1, "name": "synth54", "network": "builtin:synth54",
            "failure": {"kind": "step", "tau": 0.5}, "initial_topology": list(OPT_DIU_54),
            "presets": presets54, "eval_episodes": 200, "seed": 0,
        },
        "synth54_extreme": {
            "schema_version": 1, "name": "synth54_extreme", "network": "builtin:synth54",
            "costs": extreme_costs, "failure": extreme,
            "initial_topology": list(OPT_DIU_54), "presets": presets54,
            "eval_episodes": 200, "seed": 0,
        },
        "synth138_extreme": {
            "schema_version": 1, "name": "synth138_extreme", "network": "builtin:synth138",
            "costs": extreme_costs, "failure": extreme,
            "initial_topology": list(OPT_DIU_138), "presets": presets138,
            "eval_episodes": 200, "seed": 0,
        },
    }


def write_builtin_data(root: Path | None = None) -> list[Path]:
    root = Path(root) if root else Path(__file__).parent / "data"
    (root / "networks").mkdir(parents=True, exist_ok=True)
    (root / "scenarios").mkdir(parents=True, exist_ok=True)
    out = []
    for name, fn in BUILDERS.items():
        path = root / "networks" / f"{name}.json"
        save_network(fn(), path)
        out.append(path)
    for name, sc in builtin_scenarios().items():
        path = root / "scenarios" / f"{name}.json"
        path.write_text(json.dumps(sc, indent=1, sort_keys=True) + "\n")
        out.append(path)
    return out


if __name__ == "__main__":
    for p in write_builtin_data():
        print(p)
