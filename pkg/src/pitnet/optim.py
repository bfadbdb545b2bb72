"""AdaBound: Adam-style moments with step rates clipped into a band that
starts wide and converges onto the terminal rate lr2.

``bound_mode`` selects the clipping band: ``adabound`` uses the closing
schedule, ``adam_limit`` leaves rates unclipped (pure Adam with bias
correction folded into the step size), ``sgd_limit`` collapses the band to
lr2 so every step is exactly theta - lr2 * m.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError

BOUND_MODES = ("adabound", "adam_limit", "sgd_limit")


@dataclass
class OptimizerConfig:
    lr1: float = 0.001          # initial (Adam-side) rate
    lr2: float = 0.01           # terminal (SGD-side) rate
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    bound_mode: str = "adabound"

    def __post_init__(self):
        if self.bound_mode not in BOUND_MODES:
            raise ConfigError(f"bound_mode must be one of {BOUND_MODES}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")
        if self.lr1 <= 0.0 or self.lr2 <= 0.0 or self.eps <= 0.0:
            raise ConfigError("rates and eps must be positive")


@dataclass
class OptimizerState:
    """Per-parameter first/second moments plus the shared step counter."""
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 1


def bound_schedule(t: int, config: OptimizerConfig) -> tuple[float, float]:
    """Lower/upper rate bounds at 1-based step t.

    lower(t) = lr2 * (1 - 1 / ((1 - beta2) * t + 1))
    upper(t) = lr2 * (1 + 1 / ((1 - beta2) * t))

    Both converge monotonically onto lr2.
    """
    if t < 1:
        raise ConfigError(f"step index must be >= 1, got {t}")
    one_minus = 1.0 - config.beta2
    lower = config.lr2 * (1.0 - 1.0 / (one_minus * t + 1.0))
    upper = config.lr2 * (1.0 + 1.0 / (one_minus * t))
    return lower, upper


def adabound_step(params, grads: dict, state: OptimizerState,
                  config: OptimizerConfig) -> None:
    """Apply one optimizer step in place.

    ``params`` is an iterable of objects with ``name``, ``data`` and
    ``trainable``; ``grads`` maps names to gradient arrays. Parameters
    without a gradient entry (frozen) are untouched. A non-finite gradient
    aborts the whole step before any state is mutated.
    """
    updates = []
    for p in params:
        if not p.trainable or p.name not in grads:
            continue
        g = grads[p.name]
        if g.shape != p.data.shape:
            raise ConfigError(
                f"gradient shape {g.shape} does not match {p.name} {p.data.shape}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {p.name}; step aborted")
        updates.append((p, g))

    t = state.t
    b1, b2 = config.beta1, config.beta2
    step_size = config.lr1 * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    if config.bound_mode == "adabound":
        lower, upper = bound_schedule(t, config)
    elif config.bound_mode == "adam_limit":
        lower, upper = 0.0, np.inf
    else:  # sgd_limit
        lower = upper = config.lr2

    for p, g in updates:
        m = state.m.get(p.name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.v[p.name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        rate = np.clip(step_size / (np.sqrt(v) + config.eps), lower, upper)
        p.data -= rate * m
        state.m[p.name] = m
        state.v[p.name] = v
    state.t = t + 1
