"""Flow-dependent line failure probabilities and availability sampling.

Random draws are keyed rather than shared: every episode owns a Philox stream
derived from ``(master seed, purpose, episode)``, and the failure uniforms for
all ``(hour, line)`` cells are drawn from it up front.  A given line at a given
hour therefore sees the same uniform whatever order lines or episodes are
processed in, and different policies evaluated on the same episode index face
the same weather.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Network

LINEAR = "linear"
STEP = "step"
CURVE = "curve"
KINDS = (LINEAR, STEP, CURVE)

# stream purposes
TRAIN = 1
EVAL = 2


@dataclass(frozen=True)
class FailureModel:
    """How a wildfire-area line's failure probability depends on ``|f_p|``.

    ``curve_x`` holds flow fractions ``|f_p| / F`` and ``curve_y`` the peak-hour
    probabilities at those knots; off-peak they are scaled by the same factor as
    gamma and beta.  Non-wildfire lines fail with the flow-independent
    ``background`` probability.
    """

    kind: str = STEP
    tau: float = 0.5
    background: float = 0.0
    curve_x: tuple[float, ...] = ()
    curve_y: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown failure model kind {self.kind!r}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if not 0.0 <= self.background <= 1.0:
            raise ValueError("background probability must lie in [0, 1]")
        if self.kind == CURVE:
            xs, ys = np.asarray(self.curve_x, float), np.asarray(self.curve_y, float)
            if xs.size == 0 or xs.size != ys.size:
                raise ValueError("curve needs matching, non-empty knot lists")
            if np.any(np.diff(xs) < 0):
                raise ValueError("curve_x must be nondecreasing")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "tau": self.tau, "background": self.background}
        if self.kind == CURVE:
            d.update(curve_x=list(self.curve_x), curve_y=list(self.curve_y))
        return d


def curve_lookup(xs, ys, x):
    """Piecewise-linear interpolation, left-continuous at repeated knots.

    With ``xs = (0, .5, .5, 1)`` and ``ys = (a, a, b, b)`` the value is ``a``
    up to and including 0.5 and ``b`` beyond it, i.e. an exact step.
    """
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    x = np.asarray(x, float)
    idx = np.searchsorted(xs, x, side="left")
    out = np.empty_like(x)
    below = idx == 0
    above = idx >= xs.size
    mid = ~below & ~above
    out[below] = ys[0]
    out[above] = ys[-1]
    i = idx[mid]
    x0, x1, y0, y1 = xs[i - 1], xs[i], ys[i - 1], ys[i]
    xm = x[mid]
    on_knot = xm == x1
    w = np.where(on_knot, 1.0, (xm - x0) / np.where(x1 > x0, x1 - x0, 1.0))
    out[mid] = np.where(on_knot, y1, y0 + w * (y1 - y0))
    return out


def failure_prob(model: FailureModel, flow_abs, f_max, gamma, beta, scale: float = 1.0):
    """Failure probability of one or more wildfire-area lines.

    linear: ``gamma + beta |f|``; step: ``gamma`` up to ``tau F`` and
    ``gamma + beta F`` above it; curve: table lookup on ``|f| / F`` times
    ``scale``.  Results are clamped to [0, 1].
    """
    flow_abs = np.asarray(flow_abs, float)
    f_max = np.asarray(f_max, float)
    gamma = np.asarray(gamma, float)
    beta = np.asarray(beta, float)
    if model.kind == LINEAR:
        p = gamma + beta * flow_abs
    elif model.kind == STEP:
        p = np.where(flow_abs > model.tau * f_max, gamma + beta * f_max, gamma)
    else:
        p = scale * curve_lookup(model.curve_x, model.curve_y, flow_abs / f_max)
    p = np.clip(p, 0.0, 1.0)
    return float(p) if p.ndim == 0 else p


def line_failure_probs(model: FailureModel, network: Network, flows, hour: int) -> np.ndarray:
    """Per-line probabilities at ``hour`` given the stage active flows."""
    gamma, beta = network.risk_per_line(hour)
    scale = network.risk.factor(hour) if network.risk is not None else 1.0
    wf = network.wildfire_mask
    p = np.full(network.n_line, model.background, dtype=float)
    if wf.any():
        p[wf] = failure_prob(model, np.abs(np.asarray(flows)[wf]), network.f_max[wf],
                             gamma[wf], beta[wf], scale)
    return p


def sample_transitions(availability, probs, draws) -> np.ndarray:
    """Next-hour availability.

    ``draws`` is either a ``numpy.random.Generator`` or an array of uniforms in
    [0, 1), one per line.  Failed lines stay failed.
    """
    av = np.asarray(availability, dtype=bool)
    if isinstance(draws, np.random.Generator):
        u = draws.random(av.size)
    else:
        u = np.asarray(draws, dtype=float)
    return av & ~(u < np.asarray(probs, float))


def episode_stream(seed: int, purpose: int, episode: int, sub: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), int(purpose), int(episode), int(sub)])
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class EpisodeStreams:
    """The keyed random streams of one episode."""

    seed: int
    purpose: int
    episode: int
    horizon: int
    n_line: int

    def __post_init__(self):
        self.failure_uniforms = episode_stream(self.seed, self.purpose, self.episode, 0).random(
            (self.horizon, self.n_line))
        self.action_rng = episode_stream(self.seed, self.purpose, self.episode, 1)
        self.demand_rng = episode_stream(self.seed, self.purpose, self.episode, 2)
