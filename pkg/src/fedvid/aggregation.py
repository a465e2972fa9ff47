"""Server-side aggregation: pseudo-gradients, FedAvg / loss weighting,
alpha-blending, a server step and weight averaging over past global models.

One fedvssl round, on the aggregated roles (backbone only in partial mode)::

    g_m        = theta_g(r-1) - theta_m(r)
    delta      = alpha * sum_m softmax(-L)_m g_m + (1 - alpha) * sum_m n_m/N g_m
    candidate  = theta_g(r-1) - server_lr * delta
    theta_g(r) = mean(candidate, theta_g(r-1), ..., theta_g(r-beta))

The pseudo-gradient points from the client towards the old global model so
that ``server_lr = 1`` with ``alpha = beta = 0`` is exactly sample-weighted
averaging of the client models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .params import BACKBONE, HEAD, WeightSet, check_compatible, sub, weighted_sum

FEDAVG_BASELINE = "fedavg_baseline"
FEDVSSL = "fedvssl"
STRATEGIES = (FEDAVG_BASELINE, FEDVSSL)


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    weights: WeightSet
    sample_count: int
    mean_loss: float

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError(f"client {self.client_id}: sample_count must be >= 1")
        if not math.isfinite(self.mean_loss):
            raise ValueError(f"client {self.client_id}: mean_loss is not finite")


@dataclass(frozen=True)
class AggregationConfig:
    strategy: str = FEDVSSL
    alpha: float = 0.9
    beta: int = 0
    server_lr: float = 1.0
    partial_update: bool = True

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"aggregation.strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"aggregation.alpha must lie in [0, 1], got {self.alpha}")
        if int(self.beta) != self.beta or self.beta < 0:
            raise ConfigError(f"aggregation.beta must be a nonnegative integer, got {self.beta}")
        if not self.server_lr > 0:
            raise ConfigError(f"aggregation.server_lr must be > 0, got {self.server_lr}")

    @property
    def roles(self) -> tuple[str, ...]:
        """Roles that travel between server and clients."""
        return (BACKBONE,) if self.partial_update else (BACKBONE, HEAD)


@dataclass(frozen=True)
class GlobalState:
    round: int
    global_weights: WeightSet
    # Most recent first: theta_g(r-1), theta_g(r-2), ...
    swa_history: tuple[WeightSet, ...] = field(default_factory=tuple)

    @classmethod
    def initial(cls, weights: WeightSet, cfg: AggregationConfig) -> "GlobalState":
        w = weights.filter_role(cfg.roles)
        history = (w,) if cfg.beta > 0 else ()
        return cls(0, w, history)


@dataclass(frozen=True)
class AggregateDelta:
    delta: WeightSet
    per_client_weights: dict[int, float]
    fedavg_weights: dict[int, float]
    loss_weights: dict[int, float]


def pseudo_gradient(prev_global: WeightSet, client: ClientUpdate | WeightSet, roles=(BACKBONE,)) -> WeightSet:
    """``prev_global - client`` restricted to ``roles``."""
    theta_m = client.weights if isinstance(client, ClientUpdate) else client
    return sub(prev_global.filter_role(roles), theta_m.filter_role(roles))


def fedavg_weights(counts) -> list[float]:
    counts = list(counts)
    if not counts:
        raise ValueError("fedavg_weights needs at least one count")
    if any(c < 1 for c in counts):
        raise ValueError("sample counts must be >= 1")
    total = sum(counts)
    return [c / total for c in counts]


def loss_weights(losses) -> list[float]:
    """Softmax of the negated losses (max-shifted)."""
    losses = np.asarray(list(losses), dtype=np.float64)
    if losses.size == 0:
        raise ValueError("loss_weights needs at least one loss")
    if not np.isfinite(losses).all():
        raise ValueError("losses must be finite")
    z = -losses
    e = np.exp(z - z.max())
    return list(e / e.sum())


def blend_deltas(alpha: float, delta_loss: WeightSet, delta_fedavg: WeightSet) -> WeightSet:
    """``alpha * delta_loss + (1 - alpha) * delta_fedavg`` with exact endpoints."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    check_compatible(delta_loss, delta_fedavg)
    if alpha == 0.0:
        return delta_fedavg
    if alpha == 1.0:
        return delta_loss
    return weighted_sum([alpha, 1.0 - alpha], [delta_loss, delta_fedavg])


def swa_update(candidate: WeightSet, history, beta: int) -> WeightSet:
    """Mean of ``candidate`` and up to ``beta`` most recent history entries."""
    if beta == 0:
        return candidate
    past = list(history)[:beta]
    if not past:
        return candidate
    # Shifting by the candidate keeps a constant window exactly constant.
    k = len(past) + 1
    spread = weighted_sum([1.0 / k] * (k - 1), [sub(p, candidate) for p in past])
    return weighted_sum([1.0, 1.0], [candidate, spread])


def blended_coefficients(alpha: float, w_loss, w_avg) -> list[float]:
    """Per-client coefficients of the blended pseudo-gradient, renormalized."""
    c = [alpha * a + (1.0 - alpha) * b for a, b in zip(w_loss, w_avg)]
    total = sum(c)
    return [x / total for x in c]


def server_step(prev: WeightSet, client_weights, coeffs, server_lr: float) -> WeightSet:
    """``prev - server_lr * sum_m c_m (prev - theta_m)`` in mixture form.

    With ``sum(c) == 1`` this equals ``(1 - lr) * prev + lr * sum_m c_m theta_m``;
    evaluating it that way makes a lone client with ``lr == 1`` come back
    bit-for-bit.
    """
    mixed = weighted_sum(coeffs, client_weights)
    if server_lr == 1.0:
        return mixed
    return weighted_sum([1.0 - server_lr, server_lr], [prev, mixed])


def _validate(state: GlobalState, updates, roles):
    if not updates:
        raise ValueError("aggregate_round needs at least one client update")
    ids = [u.client_id for u in updates]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate client ids in updates: {ids}")
    for u in updates:
        check_compatible(state.global_weights, u.weights.filter_role(roles))


def aggregate_round(state: GlobalState, updates, cfg: AggregationConfig) -> tuple[GlobalState, AggregateDelta]:
    roles = cfg.roles
    updates = sorted(updates, key=lambda u: u.client_id)
    _validate(state, updates, roles)
    ids = [u.client_id for u in updates]
    w_avg = fedavg_weights([u.sample_count for u in updates])
    w_loss = loss_weights([u.mean_loss for u in updates])
    prev = state.global_weights

    if cfg.strategy == FEDAVG_BASELINE:
        new = weighted_sum(w_avg, [u.weights.filter_role(roles) for u in updates])
        delta = sub(prev, new)
        coeffs = w_avg
        history = ()
    else:
        grads = [pseudo_gradient(prev, u, roles) for u in updates]
        d_avg = weighted_sum(w_avg, grads)
        d_loss = weighted_sum(w_loss, grads)
        delta = blend_deltas(cfg.alpha, d_loss, d_avg)
        coeffs = blended_coefficients(cfg.alpha, w_loss, w_avg)
        candidate = server_step(prev, [u.weights.filter_role(roles) for u in updates],
                                coeffs, cfg.server_lr)
        new = swa_update(candidate, state.swa_history, cfg.beta)
        history = (new, *state.swa_history)[:cfg.beta]

    report = AggregateDelta(
        delta=delta,
        per_client_weights=dict(zip(ids, coeffs)),
        fedavg_weights=dict(zip(ids, w_avg)),
        loss_weights=dict(zip(ids, w_loss)),
    )
    return GlobalState(state.round + 1, new, history), report
