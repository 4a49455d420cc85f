"""Stage-wise operational LP (linearized AC) and the pre-solved solution cache.

Variable layout of :class:`LpProblem` (L lines, N buses, S substations)::

    f_p[L] f_q[L] v[N] p_sub[S] q_sub[S] dDp+[N] dDp-[N] dDq+[N] dDq-[N]

Flows are in MW/MVAr, so the voltage-drop term uses ``2 (R f_p + X f_q) / base_mva``.
The constraint matrices depend only on the network; switch status,
availability and demand enter through the right-hand sides, which is why a
template is assembled once per network and reused.
"""
from __future__ import annotations

import threading
import weakref
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .grid import Network
from .topology import SwitchConfig, mask_key

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"

# ub-row families, in row order
UB_FAMILIES = (
    "voltage_switchable",
    "voltage_all",
    "voltage_box",
    "thermal_switchable",
    "thermal_all",
    "thermal_all_reactive",
    "octagon",
    "injection",
    "shed_bounds",
    "nonneg",
)
EQ_FAMILIES = ("balance_substation", "balance_load", "voltage_ref")


class PowerFlowError(RuntimeError):
    """The LP could not be solved to optimality."""


def big_m(network: Network) -> float:
    vmax = max(b.v_max_sq for b in network.buses)
    vmin = min(b.v_min_sq for b in network.buses)
    drop = 2.0 * float(np.max((network.r + network.x) * network.f_max)) / network.base_mva
    return (vmax - vmin) + drop


def octagon_coefficients():
    """Rows ``(a_e, s_e - a_e c_e)`` so that ``+-f_q - a_e f_p <= rhs_e * F``."""
    out = []
    for e in (1, 2, 3, 4):
        a = 1.0 / np.tan((0.5 - e) * np.pi / 4)
        c, s = np.cos(e * np.pi / 4), np.sin(e * np.pi / 4)
        out.append((a, s - a * c))
    return out


@dataclass(frozen=True)
class VarLayout:
    n_line: int
    n_bus: int
    n_sub: int

    @property
    def size(self) -> int:
        return 2 * self.n_line + self.n_bus + 2 * self.n_sub + 4 * self.n_bus

    @property
    def slices(self) -> dict[str, slice]:
        L, N, S = self.n_line, self.n_bus, self.n_sub
        out, start = {}, 0
        for name, n in (("f_p", L), ("f_q", L), ("v", N), ("p_sub", S), ("q_sub", S),
                        ("dDp_plus", N), ("dDp_minus", N), ("dDq_plus", N), ("dDq_minus", N)):
            out[name] = slice(start, start + n)
            start += n
        return out


@dataclass
class _Template:
    layout: VarLayout
    c: np.ndarray
    A_ub: sparse.csr_matrix
    A_eq: sparse.csr_matrix
    ub_rows: dict[str, slice]
    eq_rows: dict[str, slice]
    M: float
    # static rhs pieces
    vbox_rhs: np.ndarray
    oct_rhs: np.ndarray
    inj_rhs: np.ndarray
    v_ref_rhs: np.ndarray
    balance_order: np.ndarray  # eq row -> bus position, substations first


_templates: "weakref.WeakKeyDictionary[Network, _Template]" = weakref.WeakKeyDictionary()
_template_lock = threading.Lock()


def _template(network: Network) -> _Template:
    with _template_lock:
        tpl = _templates.get(network)
        if tpl is None:
            tpl = _build_template(network)
            _templates[network] = tpl
        return tpl


def _build_template(net: Network) -> _Template:
    L, N = net.n_line, net.n_bus
    subs = net.substation_pos
    S = len(subs)
    lay = VarLayout(L, N, S)
    sl = lay.slices
    fp0, fq0, v0 = sl["f_p"].start, sl["f_q"].start, sl["v"].start
    ps0, qs0 = sl["p_sub"].start, sl["q_sub"].start
    dpp0, dpm0 = sl["dDp_plus"].start, sl["dDp_minus"].start
    dqp0, dqm0 = sl["dDq_plus"].start, sl["dDq_minus"].start
    sw = net.switchable_pos
    Lsw = len(sw)
    fr, to = net.from_idx, net.to_idx
    kr = 2.0 * net.r / net.base_mva
    kx = 2.0 * net.x / net.base_mva
    F = net.f_max

    rows, cols, vals = [], [], []
    ub_rows: dict[str, slice] = {}
    r = 0

    def add(row, col, val):
        rows.append(row)
        cols.append(col)
        vals.append(val)

    def voltage_pair(lines, r):
        for l in lines:
            for sign in (1.0, -1.0):
                add(r, v0 + fr[l], -sign)
                add(r, v0 + to[l], sign)
                add(r, fp0 + l, sign * kr[l])
                add(r, fq0 + l, sign * kx[l])
                r += 1
        return r

    start = r
    r = voltage_pair(sw, r)
    ub_rows["voltage_switchable"] = slice(start, r)
    start = r
    r = voltage_pair(range(L), r)
    ub_rows["voltage_all"] = slice(start, r)

    start = r
    vbox_rhs = []
    for b, bus in enumerate(net.buses):
        add(r, v0 + b, 1.0)
        add(r + 1, v0 + b, -1.0)
        vbox_rhs += [bus.v_max_sq, -bus.v_min_sq]
        r += 2
    ub_rows["voltage_box"] = slice(start, r)

    start = r
    for l in sw:
        for col in (fp0 + l, fq0 + l):
            add(r, col, 1.0)
            add(r + 1, col, -1.0)
            r += 2
    ub_rows["thermal_switchable"] = slice(start, r)

    for name, base in (("thermal_all", fp0), ("thermal_all_reactive", fq0)):
        start = r
        for l in range(L):
            add(r, base + l, 1.0)
            add(r + 1, base + l, -1.0)
            r += 2
        ub_rows[name] = slice(start, r)

    start = r
    oct_rhs = []
    for l in range(L):
        for a, rhs in octagon_coefficients():
            for qsign in (1.0, -1.0):
                add(r, fq0 + l, qsign)
                add(r, fp0 + l, -a)
                oct_rhs.append(rhs * F[l])
                r += 1
    ub_rows["octagon"] = slice(start, r)

    start = r
    inj_rhs = []
    for k, b in enumerate(subs):
        bus = net.buses[b]
        add(r, ps0 + k, 1.0)
        add(r + 1, ps0 + k, -1.0)
        add(r + 2, qs0 + k, 1.0)
        add(r + 3, qs0 + k, -1.0)
        inj_rhs += [bus.p_max_inj, 0.0, bus.q_max_inj, -bus.q_min_inj]
        r += 4
    ub_rows["injection"] = slice(start, r)

    start = r
    for b in range(N):
        add(r, dpm0 + b, 1.0)
        add(r + 1, dqm0 + b, 1.0)
        r += 2
    ub_rows["shed_bounds"] = slice(start, r)

    start = r
    for base in (dpp0, dpm0, dqp0, dqm0):
        for b in range(N):
            add(r, base + b, -1.0)
            r += 1
    ub_rows["nonneg"] = slice(start, r)
    A_ub = sparse.csr_matrix((vals, (rows, cols)), shape=(r, lay.size))

    # equality rows: p and q balance per bus (substations first), then v_ref
    rows, cols, vals = [], [], []
    is_sub = np.zeros(N, dtype=bool)
    is_sub[subs] = True
    order = np.concatenate([subs, np.flatnonzero(~is_sub)]).astype(int)
    sub_k = {int(b): k for k, b in enumerate(subs)}
    r = 0
    for b in order:
        for fbase, ibase, pbase, mbase in ((fp0, ps0, dpp0, dpm0), (fq0, qs0, dqp0, dqm0)):
            if b in sub_k:
                add(r, ibase + sub_k[b], 1.0)
            for l in np.flatnonzero(to == b):
                add(r, fbase + l, 1.0)
            for l in np.flatnonzero(fr == b):
                add(r, fbase + l, -1.0)
            add(r, pbase + b, -1.0)
            add(r, mbase + b, 1.0)
            r += 1
    eq_rows = {"balance_substation": slice(0, 2 * S), "balance_load": slice(2 * S, 2 * N)}
    for k, b in enumerate(subs):
        add(r, v0 + b, 1.0)
        r += 1
    eq_rows["voltage_ref"] = slice(2 * N, r)
    A_eq = sparse.csr_matrix((vals, (rows, cols)), shape=(r, lay.size))

    c = np.zeros(lay.size)
    c[sl["p_sub"]] = net.c_energy
    for name in ("dDp_plus", "dDp_minus", "dDq_plus", "dDq_minus"):
        c[sl[name]] = net.c_load_loss

    return _Template(
        layout=lay, c=c, A_ub=A_ub, A_eq=A_eq, ub_rows=ub_rows, eq_rows=eq_rows,
        M=big_m(net), vbox_rhs=np.array(vbox_rhs), oct_rhs=np.array(oct_rhs),
        inj_rhs=np.array(inj_rhs, dtype=float), v_ref_rhs=np.full(S, net.v_ref_sq),
        balance_order=order,
    )


@dataclass(frozen=True)
class LpProblem:
    """A fully specified stage LP: ``min c x + const`` s.t. ``A_ub x <= b_ub``, ``A_eq x = b_eq``."""

    c: np.ndarray
    const: float
    A_ub: sparse.csr_matrix
    b_ub: np.ndarray
    A_eq: sparse.csr_matrix
    b_eq: np.ndarray
    layout: VarLayout
    ub_rows: dict
    eq_rows: dict
    big_m: float
    hour: int = 0
    c_energy: float = 0.0
    c_load_loss: float = 0.0

    @property
    def n_vars(self) -> int:
        return self.layout.size


def _as_mask(values, n, name) -> np.ndarray:
    if values is None:
        return np.ones(n, dtype=bool)
    m = np.asarray(values, dtype=bool)
    if m.shape != (n,):
        raise ValueError(f"{name} must have length {n}")
    return m


def build_lp(network: Network, config: SwitchConfig, availability=None, hour: int = 1,
             switch_ops_cost: float = 0.0, demand=None) -> LpProblem:
    """Assemble the stage LP for a fixed switch configuration.

    ``availability`` is a per-line mask (default all available).  ``demand``
    optionally overrides the network profile at ``hour`` with a
    ``(d_p, d_q)`` pair.  The switching cost only shifts the objective.
    """
    tpl = _template(network)
    if tuple(config.switchable_ids) != network.switchable_ids:
        raise ValueError("config does not match the network's switchable lines")
    z = config.mask.astype(float)
    av = _as_mask(availability, network.n_line, "availability").astype(float)
    if demand is None:
        d_p, d_q = network.demand_at(hour)
    else:
        d_p, d_q = (np.asarray(d, dtype=float) for d in demand)
    F = network.f_max
    M = tpl.M
    F_sw = F[network.switchable_pos]
    # an open switch must also release the all-lines voltage pair, otherwise
    # open ties would pin the voltages of the feeders they join
    gate = av.copy()
    gate[network.switchable_pos] *= z

    b_ub = np.concatenate([
        np.repeat((1.0 - z) * M, 2),
        np.repeat((1.0 - gate) * M, 2),
        tpl.vbox_rhs,
        np.repeat(F_sw * z, 4),
        np.repeat(F * av, 2),
        np.repeat(F * av, 2),
        tpl.oct_rhs,
        tpl.inj_rhs,
        np.column_stack([d_p, d_q]).ravel(),
        np.zeros(4 * network.n_bus),
    ])
    order = tpl.balance_order
    b_eq = np.concatenate([np.column_stack([d_p[order], d_q[order]]).ravel(), tpl.v_ref_rhs])
    return LpProblem(
        c=tpl.c, const=float(switch_ops_cost), A_ub=tpl.A_ub, b_ub=b_ub, A_eq=tpl.A_eq,
        b_eq=b_eq, layout=tpl.layout, ub_rows=tpl.ub_rows, eq_rows=tpl.eq_rows, big_m=M,
        hour=hour, c_energy=network.c_energy, c_load_loss=network.c_load_loss,
    )


@dataclass(frozen=True)
class PfSolution:
    f_p: np.ndarray
    f_q: np.ndarray
    v: np.ndarray
    p_sub: np.ndarray
    q_sub: np.ndarray
    dDp_plus: np.ndarray
    dDp_minus: np.ndarray
    dDq_plus: np.ndarray
    dDq_minus: np.ndarray
    objective: float
    energy_cost: float
    load_loss_cost: float
    status: str = OPTIMAL
    x: np.ndarray = field(default=None, repr=False)

    @property
    def shed_p(self) -> float:
        return float(self.dDp_minus.sum())

    def to_dict(self) -> dict:
        out = {k: getattr(self, k).tolist() for k in
               ("f_p", "f_q", "v", "p_sub", "q_sub", "dDp_plus", "dDp_minus", "dDq_plus", "dDq_minus")}
        out.update(objective=self.objective, energy_cost=self.energy_cost,
                   load_loss_cost=self.load_loss_cost, status=self.status)
        return out


def solution_from_x(problem: LpProblem, x: np.ndarray) -> PfSolution:
    parts = {k: x[s].copy() for k, s in problem.layout.slices.items()}
    for a in parts.values():
        a.setflags(write=False)
    energy = problem.c_energy * float(parts["p_sub"].sum())
    loss = problem.c_load_loss * float(parts["dDp_plus"].sum() + parts["dDp_minus"].sum()
                                       + parts["dDq_plus"].sum() + parts["dDq_minus"].sum())
    return PfSolution(**parts, objective=float(problem.c @ x) + problem.const,
                      energy_cost=energy, load_loss_cost=loss, x=x)


def solve_lp(problem: LpProblem) -> PfSolution:
    """Solve with the HiGHS dual simplex; returns a basic optimal solution."""
    res = linprog(problem.c, A_ub=problem.A_ub, b_ub=problem.b_ub, A_eq=problem.A_eq,
                  b_eq=problem.b_eq, bounds=(None, None), method="highs-ds")
    if res.status != 0:
        raise PowerFlowError(
            f"stage LP not solved (status {res.status}: {res.message}); hour {problem.hour}, "
            f"{problem.n_vars} vars, {problem.A_ub.shape[0]} ub rows, {problem.A_eq.shape[0]} eq rows")
    x = np.asarray(res.x, dtype=float)
    x.setflags(write=False)
    return solution_from_x(problem, x)


def solve_pf(network: Network, config: SwitchConfig, availability=None, hour: int = 1,
             switch_ops_cost: float = 0.0, demand=None) -> PfSolution:
    return solve_lp(build_lp(network, config, availability, hour, switch_ops_cost, demand))


def balance_residuals(network: Network, sol: PfSolution, hour: int, demand=None) -> np.ndarray:
    """Per-bus ``(p, q)`` balance residuals, shape ``(N, 2)``."""
    d_p, d_q = network.demand_at(hour) if demand is None else demand
    res = np.zeros((network.n_bus, 2))
    for col, (f, d, plus, minus, inj) in enumerate((
            (sol.f_p, d_p, sol.dDp_plus, sol.dDp_minus, sol.p_sub),
            (sol.f_q, d_q, sol.dDq_plus, sol.dDq_minus, sol.q_sub))):
        net_in = np.zeros(network.n_bus)
        np.add.at(net_in, network.to_idx, f)
        np.add.at(net_in, network.from_idx, -f)
        net_in[network.substation_pos] += inj
        res[:, col] = net_in - d - plus + minus
    return res


class PowerFlowCache:
    """Solutions keyed by ``(config, availability, hour)``.

    Full-availability entries are meant to be pre-populated with
    :meth:`prepopulate`.  Queries with failed lines are solved fresh; when
    ``memoize`` is set the result is kept so that a repeated failure pattern
    does not trigger a second identical solve.
    """

    def __init__(self, network: Network, memoize: bool = True):
        self.network = network
        self.memoize = memoize
        self._full: dict[tuple[int, int], PfSolution] = {}
        self._fresh: dict[tuple[int, int, int], PfSolution] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.fresh_solves = 0
        self.memo_hits = 0
        self._full_key = mask_key([True] * network.n_line)

    def __len__(self):
        return len(self._full)

    def prepopulate(self, configs, hours=None, progress=None) -> None:
        hours = range(1, self.network.horizon + 1) if hours is None else hours
        for cfg in configs:
            for h in hours:
                key = (cfg.key, h)
                if key not in self._full:
                    sol = solve_pf(self.network, cfg, None, h)
                    with self._lock:
                        self._full[key] = sol
            if progress is not None:
                progress(cfg)

    def lookup(self, config: SwitchConfig, availability, hour: int) -> PfSolution | None:
        av_key = mask_key(availability) if availability is not None else self._full_key
        if av_key == self._full_key:
            return self._full.get((config.key, hour))
        return self._fresh.get((config.key, av_key, hour))

    def solve(self, config: SwitchConfig, availability, hour: int) -> PfSolution:
        av = _as_mask(availability, self.network.n_line, "availability")
        av_key = mask_key(av)
        if av_key == self._full_key:
            sol = self._full.get((config.key, hour))
            if sol is not None:
                self.hits += 1
                return sol
            sol = solve_pf(self.network, config, None, hour)
            self.fresh_solves += 1
            with self._lock:
                self._full[(config.key, hour)] = sol
            return sol
        key = (config.key, av_key, hour)
        if self.memoize:
            sol = self._fresh.get(key)
            if sol is not None:
                self.memo_hits += 1
                return sol
        sol = solve_pf(self.network, config, av, hour)
        self.fresh_solves += 1
        if self.memoize:
            with self._lock:
                self._fresh[key] = sol
        return sol

    def stats(self) -> dict:
        return {"entries": len(self._full), "memo_entries": len(self._fresh), "hits": self.hits,
                "memo_hits": self.memo_hits, "fresh_solves": self.fresh_solves}

    # persistence: only the pre-solved full-availability table is stored
    def save(self, path) -> None:
        keys = sorted(self._full)
        sols = [self._full[k] for k in keys]
        np.savez_compressed(
            path,
            config_keys=np.array([k[0] for k in keys], dtype=np.int64),
            hours=np.array([k[1] for k in keys], dtype=np.int64),
            x=np.array([s.x for s in sols]),
            fingerprint=np.array(_network_signature(self.network)),
        )

    def load(self, path) -> int:
        data = np.load(path)
        if str(data["fingerprint"]) != _network_signature(self.network):
            raise ValueError(f"{path}: cache was built for a different network")
        tpl_cfg = SwitchConfig.all_open(self.network.switchable_ids)
        for ck, h, x in zip(data["config_keys"], data["hours"], data["x"]):
            prob = build_lp(self.network, tpl_cfg, None, int(h))
            x = np.array(x)
            x.setflags(write=False)
            self._full[(int(ck), int(h))] = solution_from_x(prob, x)
        return len(data["hours"])


def _network_signature(network: Network) -> str:
    import hashlib

    from .grid import dumps_network
    return hashlib.sha256(dumps_network(network).encode()).hexdigest()


def solve_cached(network: Network, config: SwitchConfig, availability, hour: int,
                 cache: PowerFlowCache) -> PfSolution:
    if cache.network is not network:
        raise ValueError("cache belongs to a different network")
    return cache.solve(config, availability, hour)
