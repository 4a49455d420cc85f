"""Evaluation harness, threshold sweeps and report tables.

Metric conventions: ``op_cost`` is the per-episode sum of stage costs
``-r_t`` and therefore already contains switching; ``op_cost_ex_switch``
removes it and ``switch_cost`` reports it on its own.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import resolve_static
from .env import PspsEnv, Trajectory, rollout
from .failure import EVAL
from .policy import PpoPolicy, load_checkpoint, params_from_checkpoint
from .scenario import Scenario

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
HIST_EDGES = tuple(np.round(np.linspace(0.0, 1.0, 21), 2))
RECORD_VERSION = 1


class FingerprintError(ValueError):
    """A checkpoint was trained on a different scenario than the one requested."""


class ReportError(ValueError):
    pass


@dataclass
class LoadedPolicy:
    policy: object
    name: str
    kind: str  # "ppo" or "static"
    source: str


def policy_from_checkpoint(scenario: Scenario, ckpt, name: str | None = None,
                           check_fingerprint: bool = True, source: str = "") -> LoadedPolicy:
    if not isinstance(ckpt, dict):
        source = source or str(ckpt)
        ckpt = load_checkpoint(ckpt)
    fp = scenario.fingerprint()
    if check_fingerprint and ckpt.get("scenario_fingerprint") != fp:
        raise FingerprintError(
            f"checkpoint was trained on scenario {ckpt.get('scenario_fingerprint')}, "
            f"not {fp} ({scenario.name})")
    norm = ckpt.get("normalization", {})
    if abs(norm.get("max_demand", scenario.network.max_demand) - scenario.network.max_demand) > 1e-12:
        raise FingerprintError("checkpoint normalization does not match the network")
    params = params_from_checkpoint(ckpt)
    return LoadedPolicy(PpoPolicy(params, ckpt["n_configs"]), name or "ppo", "ppo", source)


def load_policy(scenario: Scenario, source, name: str | None = None) -> LoadedPolicy:
    """``source``: checkpoint path or dict, preset name, or iterable of closed line ids."""
    if isinstance(source, dict) or (isinstance(source, (str, Path)) and str(source).endswith(".json")):
        return policy_from_checkpoint(scenario, source, name, source=str(source) if not isinstance(source, dict) else "")
    pol = resolve_static(scenario, source)
    return LoadedPolicy(pol, name or pol.name, "static", pol.name)


# --------------------------------------------------------------------------


def run_episodes(policy, env: PspsEnv, n_episodes: int, seed: int) -> list[Trajectory]:
    return [rollout(policy, env, seed=seed, episode=k, deterministic=True, purpose=EVAL)
            for k in range(n_episodes)]


def wildfire_flow_fractions(trajs, network) -> dict[int, np.ndarray]:
    """``|f_p| / F`` of every wildfire-area line over all evaluated hours."""
    wf = np.flatnonzero(network.wildfire_mask)
    if not trajs:
        return {}
    stacked = np.array([[rec.pf.f_p[wf] for rec in t.records] for t in trajs]).reshape(-1, wf.size)
    frac = np.abs(stacked) / network.f_max[wf]
    return {network.lines[i].id: frac[:, j] for j, i in enumerate(wf)}


def flow_distribution(fractions: dict[int, np.ndarray]) -> dict:
    out = {}
    for lid, v in fractions.items():
        counts, _ = np.histogram(np.clip(v, 0.0, 1.0), bins=np.asarray(HIST_EDGES))
        out[str(lid)] = {
            "quantiles": [_r(q) for q in np.quantile(v, QUANTILES)],
            "hist_counts": [int(c) for c in counts],
            "mean": _r(v.mean()),
        }
    return {"quantile_levels": list(QUANTILES), "hist_edges": list(HIST_EDGES), "lines": out}


def _r(v) -> float:
    # 12 significant digits keeps records stable across BLAS/platform noise
    return float(f"{float(v):.12g}")


def _stats(a) -> tuple[float, float]:
    a = np.asarray(a, dtype=float)
    return _r(a.mean()), _r(a.std())


def metrics_from_trajectories(trajs, scenario: Scenario, name: str, kind: str, seed: int,
                              source: str = "", with_flows: bool = True) -> dict:
    cost = np.array([t.total_cost for t in trajs])
    sw = np.array([t.switch_cost for t in trajs])
    fails = np.array([t.failures for t in trajs], dtype=float)
    energy = np.array([sum(r.pf.energy_cost for r in t.records) for t in trajs])
    shed = np.array([sum(r.pf.load_loss_cost for r in t.records) for t in trajs])
    rec = {
        "record_version": RECORD_VERSION,
        "policy": name,
        "kind": kind,
        "source": source,
        "scenario": scenario.name,
        "scenario_fingerprint": scenario.fingerprint(),
        "family_fingerprint": scenario.family_fingerprint(),
        "tau": scenario.tau,
        "failure_kind": scenario.failure.kind,
        "seed": int(seed),
        "episodes": len(trajs),
    }
    rec["op_cost_mean"], rec["op_cost_std"] = _stats(cost)
    rec["op_cost_ex_switch_mean"], rec["op_cost_ex_switch_std"] = _stats(cost - sw)
    rec["switch_cost_mean"], rec["switch_cost_std"] = _stats(sw)
    rec["energy_cost_mean"], _ = _stats(energy)
    rec["load_loss_cost_mean"], _ = _stats(shed)
    rec["failures_mean"], rec["failures_std"] = _stats(fails)
    rec["per_episode"] = {
        "op_cost": [_r(v) for v in cost],
        "switch_cost": [_r(v) for v in sw],
        "failures": [int(v) for v in fails],
    }
    if with_flows:
        rec["wildfire_flows"] = flow_distribution(wildfire_flow_fractions(trajs, scenario.network))
    return rec


def evaluate(scenario: Scenario, source, n_episodes: int | None = None, seed: int | None = None,
             env: PspsEnv | None = None, name: str | None = None,
             return_trajectories: bool = False):
    """Mean +- std raw operating cost, switching cost and line failures per episode.

    PPO policies act with their mean action.  Every policy sees the same
    failure draws for a given ``(seed, episode)``.
    """
    n_episodes = scenario.eval_episodes if n_episodes is None else int(n_episodes)
    seed = scenario.seed if seed is None else int(seed)
    lp = source if isinstance(source, LoadedPolicy) else load_policy(scenario, source, name)
    env = env or PspsEnv(scenario)
    trajs = run_episodes(lp.policy, env, n_episodes, seed)
    rec = metrics_from_trajectories(trajs, scenario, name or lp.name, lp.kind, seed, lp.source)
    return (rec, trajs) if return_trajectories else rec


def dumps_record(rec) -> str:
    return json.dumps(rec, sort_keys=True, indent=1) + "\n"


def write_record(path, rec) -> None:
    Path(path).write_text(dumps_record(rec))


def read_record(path) -> dict:
    return json.loads(Path(path).read_text())


# --------------------------------------------------------------------------
# threshold sweep


def default_taus() -> list[float]:
    return [round(0.1 * k, 1) for k in range(11)]


def threshold_sweep(template: Scenario, taus, sources: dict, n_episodes: int | None = None,
                    seed: int | None = None, progress=None) -> dict:
    """Evaluate each policy source at each threshold.

    ``sources`` maps a column name to a static spec, a checkpoint, or a
    callable ``tau -> spec`` (e.g. a per-tau checkpoint path).  Sources that
    cannot be resolved for a tau are listed under ``missing`` and skipped.
    """
    rows, missing = [], []
    for tau in taus:
        sc = template.with_tau(tau)
        env = PspsEnv(sc)
        for name, src in sources.items():
            spec = src(tau) if callable(src) else src
            try:
                if spec is None or (isinstance(spec, (str, Path)) and str(spec).endswith(".json")
                                    and not Path(spec).exists()):
                    raise FileNotFoundError(str(spec))
                rec = evaluate(sc, load_policy(sc, spec, name), n_episodes, seed, env=env, name=name)
            except (FileNotFoundError, FingerprintError) as exc:
                missing.append({"tau": tau, "policy": name, "reason": f"{type(exc).__name__}: {exc}"})
                continue
            rows.append(rec)
            if progress is not None:
                progress(tau, name, rec)
    return {"taus": [float(t) for t in taus], "records": rows, "missing": missing}


# --------------------------------------------------------------------------
# reports


def _fmt_money(mean, std=None) -> str:
    s = f"{mean:,.0f}"
    return s if std is None else f"{s} +- {std:,.0f}"


def _check_family(records) -> None:
    if not records:
        raise ReportError("nothing to report")
    fams = {r["family_fingerprint"] for r in records}
    if len(fams) > 1:
        names = sorted({f"{r['scenario']} ({r['family_fingerprint']})" for r in records})
        raise ReportError("records come from different scenarios and cannot share a table: "
                          + ", ".join(names))


def report_table(records) -> str:
    """Aligned text table: one block per threshold, one column per policy."""
    _check_family(records)
    policies = list(dict.fromkeys(r["policy"] for r in records))
    taus = sorted({r["tau"] for r in records})
    by_key = {(r["tau"], r["policy"]): r for r in records}
    metrics = (
        ("Op. Cost ($)", lambda r: _fmt_money(r["op_cost_mean"], r["op_cost_std"])),
        ("Op. Cost excl. switching ($)",
         lambda r: _fmt_money(r["op_cost_ex_switch_mean"], r["op_cost_ex_switch_std"])),
        ("Switch Cost ($)", lambda r: _fmt_money(r["switch_cost_mean"])),
        ("Line Failures", lambda r: f"{r['failures_mean']:.2f}"),
    )
    header = ["tau", "Metric"] + policies
    body = []
    for tau in taus:
        for i, (label, fn) in enumerate(metrics):
            row = [f"{tau:g}" if i == 0 else "", label]
            for p in policies:
                r = by_key.get((tau, p))
                row.append(fn(r) if r else "-")
            body.append(row)
    widths = [max(len(row[j]) for row in [header] + body) for j in range(len(header))]
    rule = "-" * (sum(widths) + 2 * (len(widths) - 1))
    lines = [f"Scenario: {records[0]['scenario']}  (op. cost includes switching)", rule,
             "  ".join(h.ljust(w) for h, w in zip(header, widths)), rule]
    for k, row in enumerate(body):
        if k and k % len(metrics) == 0:
            lines.append(rule)
        lines.append("  ".join(c.ljust(w) if j < 2 else c.rjust(w)
                               for j, (c, w) in enumerate(zip(row, widths))))
    lines.append(rule)
    return "\n".join(lines) + "\n"


SUMMARY_FIELDS = ("policy", "kind", "scenario", "tau", "seed", "episodes", "op_cost_mean",
                  "op_cost_std", "op_cost_ex_switch_mean", "op_cost_ex_switch_std",
                  "switch_cost_mean", "energy_cost_mean", "load_loss_cost_mean",
                  "failures_mean", "failures_std")


def summary_csv(records) -> str:
    _check_family(records)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    for r in records:
        w.writerow([r[k] for k in SUMMARY_FIELDS])
    return buf.getvalue()


def flows_csv(records) -> str:
    """Plot data for the wildfire-line flow distributions (quantiles and histogram)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "tau", "line", "mean"] + [f"q{q:g}" for q in QUANTILES]
               + [f"h{HIST_EDGES[i]:g}-{HIST_EDGES[i + 1]:g}" for i in range(len(HIST_EDGES) - 1)])
    for r in records:
        fl = r.get("wildfire_flows")
        if not fl:
            continue
        for lid in sorted(fl["lines"], key=int):
            d = fl["lines"][lid]
            w.writerow([r["policy"], r["tau"], lid, d["mean"]] + d["quantiles"] + d["hist_counts"])
    return buf.getvalue()


def write_report(records, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "report.txt": report_table(records),
        "summary.csv": summary_csv(records),
        "flows.csv": flows_csv(records),
    }
    paths = []
    for fname, text in files.items():
        (out / fname).write_text(text)
        paths.append(out / fname)
    return paths


def paired_difference_test(a, b, z: float = 1.6448536269514722) -> dict:
    """One-sided test that ``mean(a) < mean(b)`` on paired per-episode values."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    n = d.size
    mean = float(d.mean())
    se = float(d.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    upper = mean + z * se
    return {"mean_diff": mean, "se": se, "upper": upper, "significant": bool(upper < 0)}
