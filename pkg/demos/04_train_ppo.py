"""
Training a switching agent
==========================

PPO on the toy feeder.  One episode is one day; after each episode the
rewards are standardized, GAE advantages computed and the actor-critic
updated.  Two thousand episodes are enough for the agent to settle on the
best static topology; this demo runs fewer and reports where it got to.
"""

import sys

import numpy as np

from psps_lab.baselines import enumerate_static_oracle
from psps_lab.env import PspsEnv, rollout
from psps_lab.policy import PpoPolicy
from psps_lab.ppo import PpoConfig, train
from psps_lab.scenario import load_scenario

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 600

sc = load_scenario("toy6")
env = PspsEnv(sc)


def report(ep, rec):
    if (ep + 1) % 100 == 0:
        print(f"episode {ep + 1:>5}: cost {rec['cost']:>8,.0f}  entropy {rec['entropy']:.2f}")


res = train(sc, PpoConfig(episodes=episodes), seed=0, env=env, progress=report)
print(f"trained in {res.seconds:.0f}s")

###############################################################################
# Evaluation uses the mean action, on held-out failure draws.

pol = PpoPolicy(res.params, env.n_configs)
trajs = [rollout(pol, env, seed=0, episode=k) for k in range(100)]
chosen = {tuple(sorted(r.switch_config.closed_ids)) for t in trajs for r in t.records}
cost = np.mean([t.total_cost for t in trajs])
best = enumerate_static_oracle(sc, episodes=100, seed=0, env=env)[0]
print(f"PPO cost {cost:,.1f} with topologies {sorted(chosen)}")
print(f"best static {best.closed}: {best.mean_cost:,.1f}")
