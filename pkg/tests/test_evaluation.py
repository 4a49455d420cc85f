"""Evaluation records, threshold sweeps, report tables and the paired test."""
import numpy as np
import pytest

from psps_lab.env import PspsEnv
from psps_lab.evaluation import (FingerprintError, ReportError, default_taus, dumps_record,
                                 evaluate, flows_csv, load_policy, paired_difference_test,
                                 report_table, summary_csv, threshold_sweep, write_report)
from psps_lab.failure import STEP, FailureModel
from psps_lab.grid import replace_risk, risk_params_at
from psps_lab.policy import checkpoint_dict, init_params
from psps_lab.scenario import Scenario


@pytest.fixture(scope="module")
def toy_env(toy):
    return PspsEnv(toy)


def _ckpt(sc, env, seed=0):
    p = init_params(env.obs_size, env.action_dim, 8, np.random.default_rng(seed))
    return checkpoint_dict(p, n_configs=env.n_configs, max_demand=sc.network.max_demand,
                           horizon=sc.horizon, scenario_fingerprint=sc.fingerprint())


def test_record_fields_and_round_trip_audit(toy, toy_env):
    rec, trajs = evaluate(toy, [3, 7], n_episodes=6, seed=1, env=toy_env, return_trajectories=True)
    assert rec["episodes"] == 6 and rec["kind"] == "static"
    per_ep = [-sum(r.reward for r in t.records) for t in trajs]
    assert rec["op_cost_mean"] == pytest.approx(np.mean(per_ep), rel=1e-11)
    assert rec["op_cost_ex_switch_mean"] == pytest.approx(
        rec["op_cost_mean"] - rec["switch_cost_mean"], rel=1e-11)
    assert rec["per_episode"]["failures"] == [t.failures for t in trajs]
    assert set(rec["wildfire_flows"]["lines"]) == {str(i) for i in toy.network.risk.line_ids}


def test_default_episode_count(toy):
    assert toy.eval_episodes == 200


def test_checkpoint_evaluation_is_deterministic(toy, toy_env):
    ck = _ckpt(toy, toy_env)
    a = evaluate(toy, ck, n_episodes=3, seed=2, env=toy_env)
    b = evaluate(toy, ck, n_episodes=3, seed=2, env=toy_env)
    assert dumps_record(a) == dumps_record(b)
    assert a["kind"] == "ppo"


def test_fingerprint_mismatch_is_refused(toy, toy_env):
    ck = _ckpt(toy, toy_env)
    with pytest.raises(FingerprintError):
        load_policy(toy.with_tau(0.3), ck)


def test_zero_risk_static_policy_has_no_spread(toy):
    net = replace_risk(toy.network, None)
    sc = Scenario("calm", net, FailureModel(STEP, tau=0.5), toy.initial_closed)
    rec = evaluate(sc, "initial", n_episodes=4, seed=0)
    assert rec["op_cost_std"] == 0 and rec["failures_mean"] == 0


def test_failures_below_threshold_match_bernoulli_expectation(toy):
    # tau = 1: no flow can exceed tau * F, so each live wildfire line fails w.p. gamma(t)
    sc = toy.with_tau(1.0)
    rec = evaluate(sc, "all-open", n_episodes=400, seed=5)
    rk = sc.network.risk
    g = np.array([risk_params_at(rk, h)[0] for h in range(1, sc.horizon + 1)])  # (T, n_wf)
    alive = np.cumprod(np.vstack([np.ones(g.shape[1]), 1 - g[:-1]]), axis=0)
    expect = float((alive * g).sum())
    naive = float(g.sum())  # T * sum(gamma) when absorption is negligible
    assert abs(expect - naive) / naive < 0.05
    se = np.std(rec["per_episode"]["failures"]) / np.sqrt(400)
    assert abs(rec["failures_mean"] - expect) < 4 * se + 1e-9


def test_sweep_eleven_rows_and_missing_checkpoints(toy, tmp_path):
    taus = default_taus()
    assert len(taus) == 11 and taus[0] == 0.0 and taus[-1] == 1.0
    res = threshold_sweep(toy, taus, {"best": [3, 7],
                                      "ppo": lambda tau: str(tmp_path / f"ck_{tau:g}.json")},
                          n_episodes=1, seed=0)
    assert len(res["records"]) == 11
    assert len(res["missing"]) == 11 and all("FileNotFound" in m["reason"] for m in res["missing"])
    assert [r["tau"] for r in res["records"]] == taus


def test_report_layout_three_policies(toy, toy_env):
    recs = [evaluate(toy, src, n_episodes=2, seed=0, env=toy_env, name=name)
            for name, src in (("PPO", [3, 7]), ("Opt-DIU", [3, 6]), ("Opt-DDU", [4]))]
    table = report_table(recs)
    lines = table.splitlines()
    header = next(l for l in lines if l.startswith("tau"))
    assert header.split()[-3:] == ["PPO", "Opt-DIU", "Opt-DDU"]
    for label in ("Op. Cost ($)", "Switch Cost ($)", "Line Failures"):
        assert sum(label in l for l in lines) == 1
    single = report_table(recs[:1]).splitlines()
    assert next(l for l in single if l.startswith("tau")).split()[-1] == "PPO"
    assert summary_csv(recs).count("\n") == 4
    assert flows_csv(recs).splitlines()[0].startswith("policy,tau,line,mean,q0.05")


def test_report_refuses_mixed_scenarios(toy, synth54x, toy_env):
    a = evaluate(toy, [3, 7], n_episodes=1, seed=0, env=toy_env)
    b = dict(a, scenario="other", family_fingerprint="ffff")
    with pytest.raises(ReportError, match="different scenarios"):
        report_table([a, b])
    with pytest.raises(ReportError):
        report_table([])
    # records at different thresholds of one scenario share a table
    c = evaluate(toy.with_tau(0.2), [3, 7], n_episodes=1, seed=0)
    assert "0.2" in report_table([a, c])


def test_written_files_are_byte_reproducible(toy, toy_env, tmp_path):
    recs = [evaluate(toy, [3, 7], n_episodes=2, seed=0, env=toy_env)]
    a = [p.read_bytes() for p in write_report(recs, tmp_path / "a")]
    recs2 = [evaluate(toy, [3, 7], n_episodes=2, seed=0, env=PspsEnv(toy))]
    b = [p.read_bytes() for p in write_report(recs2, tmp_path / "b")]
    assert a == b


def test_paired_difference_test():
    rng = np.random.default_rng(0)
    base = rng.normal(100, 10, size=200)
    res = paired_difference_test(base - 5, base + rng.normal(0, 1, 200))
    assert res["significant"] and res["mean_diff"] < 0
    assert not paired_difference_test(base, base)["significant"]
