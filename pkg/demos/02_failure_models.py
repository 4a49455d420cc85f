"""
Flow-dependent line failures
============================

Wildfire-area lines fail with a probability that grows with the flow they
carry.  The linear model rises from the baseline gamma; the step model stays
at gamma until the flow passes tau * F and then jumps to the plateau
gamma + beta * F.
"""

import numpy as np

from psps_lab.failure import LINEAR, STEP, FailureModel, failure_prob, sample_transitions

F, gamma = 4.0, 0.01
beta = (0.9 - gamma) / F  # plateau probability 0.9
flows = np.linspace(0.0, F, 9)

for name, model in (("linear", FailureModel(LINEAR)),
                    ("step tau=0.1", FailureModel(STEP, tau=0.1)),
                    ("step tau=0.5", FailureModel(STEP, tau=0.5))):
    p = failure_prob(model, flows, F, gamma, beta)
    print(f"{name:>13}: " + " ".join(f"{v:.2f}" for v in p))

###############################################################################
# Failures are absorbing within an episode.  Simulate 24 hours of a line held
# at 30% loading under the extreme setting and count how often it survives.

rng = np.random.default_rng(0)
p = failure_prob(FailureModel(STEP, tau=0.1), 0.3 * F, F, gamma, beta)
alive = np.ones(10_000, bool)
for hour in range(24):
    alive = sample_transitions(alive, np.full(alive.size, p), rng)
print(f"per-hour failure probability {p:.2f}; survived a day: {alive.mean():.4f}")

###############################################################################
# Below the threshold only gamma applies, so a lightly loaded line usually
# lives through the day.

p_low = failure_prob(FailureModel(STEP, tau=0.1), 0.05 * F, F, gamma, beta)
print(f"at 5% loading: {p_low:.2f} per hour, day survival {(1 - p_low) ** 24:.3f}")
