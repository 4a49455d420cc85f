"""``psps`` command line: train, evaluate, compare and inspect switching policies.

Exit codes: 0 success, 1 invalid input (files, arguments, fingerprints),
2 runtime failure (solver, divergence, I/O).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import baselines, evaluation
from .env import ConfigurationError, PspsEnv
from .evaluation import FingerprintError, ReportError
from .grid import NetworkError, load_network
from .policy import CheckpointError, save_checkpoint
from .powerflow import PowerFlowError, solve_pf
from .ppo import PpoConfig, TrainingDiverged, train
from .scenario import Scenario, ScenarioError, load_scenario
from .topology import (TopologyError, config_for_network, count_topologies, decompose_groups,
                       enumerate_configs)

log = logging.getLogger("psps")

VALIDATION_ERRORS = (NetworkError, ScenarioError, ConfigurationError, CheckpointError,
                     FingerprintError, ReportError, TopologyError, baselines.OracleBudgetError,
                     FileNotFoundError, KeyError, ValueError)
RUNTIME_ERRORS = (PowerFlowError, TrainingDiverged, OSError, RuntimeError, FloatingPointError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _ids(text: str | None) -> list[int]:
    if not text:
        return []
    return [int(t) for t in text.replace(" ", "").split(",") if t]


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _scenario(args) -> Scenario:
    if not args.scenario:
        raise UsageError("--scenario is required for this command")
    return load_scenario(args.scenario)


def _out(args) -> Path:
    p = Path(args.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


# --------------------------------------------------------------------------
# parallel helpers (results do not depend on the worker count)


def _eval_chunk(payload):
    scenario, loaded, seed, episodes = payload
    env = PspsEnv(scenario)
    from .env import rollout
    return [rollout(loaded.policy, env, seed=seed, episode=k) for k in episodes]


def _evaluate(scenario, loaded, n, seed, workers):
    if workers <= 1:
        return evaluation.evaluate(scenario, loaded, n, seed, name=loaded.name)
    chunks = [list(range(n))[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(workers) as ex:
        parts = list(ex.map(_eval_chunk, [(scenario, loaded, seed, c) for c in chunks]))
    by_ep = {t.episode: t for part in parts for t in part}
    trajs = [by_ep[k] for k in range(n)]
    return evaluation.metrics_from_trajectories(trajs, scenario, loaded.name, loaded.kind, seed,
                                                loaded.source)


def _emit_record(args, rec, stem):
    out = _out(args)
    path = out / f"{stem}.json"
    evaluation.write_record(path, rec)
    print(evaluation.report_table([rec]), end="")
    print(f"wrote {path}")


# --------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    sc = _scenario(args)
    cfg = PpoConfig(
        episodes=args.episodes, learning_rate=args.lr, update_epochs=args.update_epochs,
        hidden=args.hidden, target_kl=args.target_kl,
        max_grad_norm=args.max_grad_norm, normalize_advantages=not args.no_adv_norm,
        optimizer=args.optimizer, momentum=args.momentum)
    out = Path(args.checkpoint_dir or args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = PspsEnv(sc)
    if not args.no_presolve:
        log.info("pre-solving %d topologies x %d hours", count_topologies(env.groups), env.horizon)
        env.prepare_cache()

    def progress(ep, rec):
        if args.verbose and (ep + 1) % max(1, args.episodes // 20) == 0:
            log.info("episode %d cost %.1f entropy %.2f", ep + 1, rec["cost"], rec["entropy"])

    res = train(sc, cfg, seed=args.seed, env=env, log_path=out / "train_log.jsonl",
                eval_interval=args.eval_interval, eval_episodes=args.eval_episodes,
                dump_dir=out, progress=progress, presolve=not args.no_presolve)
    path = out / "checkpoint.json"
    save_checkpoint(path, res.checkpoint)
    print(f"trained {cfg.episodes} episodes in {res.seconds:.1f}s; wrote {path}")
    return 0


def cmd_evaluate(args) -> int:
    sc = _scenario(args)
    if args.checkpoint:
        source, name = args.checkpoint, args.name or "ppo"
    elif args.preset or args.closed is not None:
        source = args.preset or _ids(args.closed)
        name = args.name
    else:
        raise UsageError("give --checkpoint, --preset or --closed")
    loaded = evaluation.load_policy(sc, source, name)
    rec = _evaluate(sc, loaded, args.episodes or sc.eval_episodes, args.seed, args.workers)
    _emit_record(args, rec, f"metrics_{loaded.name}")
    return 0


def cmd_baseline(args) -> int:
    if not args.preset and args.closed is None:
        raise UsageError("give --preset or --closed")
    args.checkpoint = None
    return cmd_evaluate(args)


def _oracle_chunk(payload):
    scenario, closed_sets, episodes, seed = payload
    env = PspsEnv(scenario)
    rows = []
    for closed in closed_sets:
        pol = baselines.make_static(scenario.network, "oracle", closed)
        trajs = baselines.run_static(pol, env, seed, episodes)
        costs = np.array([t.total_cost for t in trajs])
        fails = np.array([t.failures for t in trajs], dtype=float)
        rows.append(baselines.OracleRow(
            tuple(sorted(closed)), float(costs.mean()), float(costs.std()), float(fails.mean()),
            float(fails.std()), float(np.mean([t.switch_cost for t in trajs]))))
    return rows


def cmd_oracle(args) -> int:
    sc = _scenario(args)
    n_eps = args.episodes
    if args.workers <= 1:
        rows = baselines.enumerate_static_oracle(sc, n_eps, args.seed, budget=args.budget)
    else:
        groups = decompose_groups(sc.network)
        n = count_topologies(groups)
        if n > args.budget:
            raise baselines.OracleBudgetError(f"{n} topologies exceed the oracle budget of {args.budget}")
        sets = [sorted(c.closed_ids) for c in enumerate_configs(groups)]
        chunks = [sets[i::args.workers] for i in range(args.workers)]
        with ProcessPoolExecutor(args.workers) as ex:
            rows = [r for part in ex.map(_oracle_chunk, [(sc, c, n_eps, args.seed) for c in chunks])
                    for r in part]
        rows.sort(key=lambda r: (r.mean_cost, r.closed))
    out = _out(args)
    (out / "oracle.json").write_text(json.dumps(
        {"scenario": sc.name, "scenario_fingerprint": sc.fingerprint(), "seed": args.seed,
         "episodes": n_eps, "rows": [r.to_dict() for r in rows]}, sort_keys=True, indent=1) + "\n")
    print(f"{'rank':>4}  {'closed lines':<24} {'mean cost':>12} {'std':>10} {'failures':>9}")
    for i, r in enumerate(rows[: args.top or None], 1):
        closed = ",".join(map(str, r.closed)) or "(none)"
        print(f"{i:>4}  {closed:<24} {r.mean_cost:>12,.1f} {r.std_cost:>10,.1f} {r.mean_failures:>9.3f}")
    print(f"wrote {out / 'oracle.json'}")
    return 0


def cmd_sweep(args) -> int:
    sc = _scenario(args)
    taus = _floats(args.taus) if args.taus else evaluation.default_taus()
    sources = {}
    for p in args.preset or []:
        sources[p] = p
    if args.checkpoint_pattern:
        pattern = args.checkpoint_pattern
        sources[args.name or "ppo"] = lambda tau, pattern=pattern: pattern.format(tau=f"{tau:g}")
    if not sources:
        raise UsageError("give at least one --preset or a --checkpoint-pattern")
    res = evaluation.threshold_sweep(sc, taus, sources, args.episodes, args.seed)
    out = _out(args)
    (out / "sweep.json").write_text(json.dumps(res, sort_keys=True, indent=1) + "\n")
    for m in res["missing"]:
        print(f"missing: tau={m['tau']:g} {m['policy']}: {m['reason']}", file=sys.stderr)
    if res["records"]:
        evaluation.write_report(res["records"], out)
        print(evaluation.report_table(res["records"]), end="")
    print(f"wrote {out / 'sweep.json'}")
    return 0


def cmd_enumerate(args) -> int:
    if args.network:
        net = load_network(args.network)
    else:
        net = _scenario(args).network
    groups = decompose_groups(net)
    print(f"network {net.name}: {net.n_bus} buses, {net.n_line} lines, "
          f"{len(net.switchable_ids)} switchable, {int(net.wildfire_mask.sum())} wildfire-area")
    for i, g in enumerate(groups, 1):
        print(f"group {i}: lines {list(g.lines)} ({g.n_configs} configurations)")
    print(f"radial topologies: {count_topologies(groups)}")
    if args.list:
        for cfg in enumerate_configs(groups):
            print(",".join(map(str, sorted(cfg.closed_ids))) or "(none)")
    return 0


def cmd_solve_pf(args) -> int:
    if args.network:
        net = load_network(args.network)
        default_closed = []
    else:
        sc = _scenario(args)
        net = sc.network
        default_closed = sorted(sc.initial_closed)
    closed = _ids(args.closed) if args.closed is not None else default_closed
    config_for_network(net, closed)  # validates the commanded set
    failed = set(_ids(args.failed))
    unknown = failed - set(net.line_pos)
    if unknown:
        raise ValueError(f"unknown failed lines {sorted(unknown)}")
    av = np.array([l.id not in failed for l in net.lines])
    eff_closed = [i for i in closed if i not in failed]
    sol = solve_pf(net, config_for_network(net, eff_closed), av, args.hour)
    print(f"hour {args.hour}, closed {closed or '(none)'}, failed {sorted(failed) or '(none)'}")
    print(f"objective {sol.objective:,.4f}  energy {sol.energy_cost:,.4f}  "
          f"load loss {sol.load_loss_cost:,.4f}  status {sol.status}")
    print(f"{'line':>5} {'from':>5} {'to':>5} {'f_p':>10} {'f_q':>10} {'|f_p|/F':>8}")
    for i, l in enumerate(net.lines):
        print(f"{l.id:>5} {l.from_bus:>5} {l.to_bus:>5} {sol.f_p[i]:>10.4f} {sol.f_q[i]:>10.4f} "
              f"{abs(sol.f_p[i]) / l.f_max:>8.3f}")
    print(f"{'bus':>5} {'v':>8} {'shed_p':>9} {'shed_q':>9}")
    for b, bus in enumerate(net.buses):
        print(f"{bus.id:>5} {sol.v[b]:>8.5f} {sol.dDp_minus[b]:>9.4f} {sol.dDq_minus[b]:>9.4f}")
    if args.json:
        Path(args.json).write_text(json.dumps(sol.to_dict(), sort_keys=True, indent=1) + "\n")
    return 0


def cmd_report(args) -> int:
    records = []
    for path in args.records:
        data = evaluation.read_record(path)
        records.extend(data["records"] if "records" in data else [data])
    paths = evaluation.write_report(records, _out(args))
    print(evaluation.report_table(records), end="")
    for p in paths:
        print(f"wrote {p}")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario file or built-in scenario name")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out-dir", default="psps_out")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="psps", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", parents=[common], help="train a PPO switching policy")
    t.add_argument("--episodes", type=int, default=10000)
    t.add_argument("--eval-interval", type=int, default=0)
    t.add_argument("--eval-episodes", type=int, default=20)
    t.add_argument("--checkpoint-dir")
    t.add_argument("--lr", type=float, default=PpoConfig.learning_rate)
    t.add_argument("--update-epochs", type=int, default=PpoConfig.update_epochs)
    t.add_argument("--hidden", type=int, default=PpoConfig.hidden)
    t.add_argument("--target-kl", type=float, default=PpoConfig.target_kl)
    t.add_argument("--max-grad-norm", type=float, default=PpoConfig.max_grad_norm)
    t.add_argument("--optimizer", choices=("sgd", "adam"), default=PpoConfig.optimizer)
    t.add_argument("--momentum", type=float, default=PpoConfig.momentum)
    t.add_argument("--no-adv-norm", action="store_true")
    t.add_argument("--no-presolve", action="store_true",
                   help="solve topologies on first use instead of up front")
    t.set_defaults(fn=cmd_train)

    for name, fn, help_ in (("evaluate", cmd_evaluate, "evaluate a checkpoint or static policy"),
                            ("baseline", cmd_baseline, "evaluate a static topology")):
        e = sub.add_parser(name, parents=[common], help=help_)
        if name == "evaluate":
            e.add_argument("--checkpoint")
        e.add_argument("--preset")
        e.add_argument("--closed", help="comma-separated closed switchable lines")
        e.add_argument("--episodes", type=int)
        e.add_argument("--name")
        e.set_defaults(fn=fn)

    o = sub.add_parser("oracle", parents=[common], help="rank every static topology")
    o.add_argument("--episodes", type=int, default=200)
    o.add_argument("--budget", type=int, default=baselines.ORACLE_BUDGET)
    o.add_argument("--top", type=int, default=0)
    o.set_defaults(fn=cmd_oracle)

    s = sub.add_parser("sweep", parents=[common], help="evaluate policies over step thresholds")
    s.add_argument("--taus", help="comma-separated thresholds (default 0,0.1,...,1)")
    s.add_argument("--preset", action="append")
    s.add_argument("--checkpoint-pattern", help="path with a {tau} placeholder")
    s.add_argument("--name")
    s.add_argument("--episodes", type=int)
    s.set_defaults(fn=cmd_sweep)

    n = sub.add_parser("enumerate-topologies", parents=[common], help="list switch groups")
    n.add_argument("--network")
    n.add_argument("--list", action="store_true")
    n.set_defaults(fn=cmd_enumerate)

    f = sub.add_parser("solve-pf", parents=[common], help="solve one stage power flow")
    f.add_argument("--network")
    f.add_argument("--closed")
    f.add_argument("--failed")
    f.add_argument("--hour", type=int, default=1)
    f.add_argument("--json")
    f.set_defaults(fn=cmd_solve_pf)

    r = sub.add_parser("report", parents=[common], help="tabulate metrics records")
    r.add_argument("records", nargs="+")
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return args.fn(args)
    except UsageError as exc:
        print(f"psps: error: {exc}", file=sys.stderr)
        return 1
    except VALIDATION_ERRORS as exc:
        print(f"psps: invalid input: {exc}", file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as exc:
        print(f"psps: runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
