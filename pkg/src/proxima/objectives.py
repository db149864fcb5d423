"""Surrogate objectives, the combined actor-critic loss, and the adaptive KL controller.

Everything here is written as an objective to *maximize*.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigurationError, NumericError

VARIANTS = ("noclip", "clip", "fixedkl", "adaptivekl")
RATIO_CAP = 1e8


@dataclass
class ObjectiveConfig:
    """Which policy surrogate to use, plus value/entropy coefficients.

    ``variant`` is one of ``noclip``, ``clip``, ``fixedkl``, ``adaptivekl``.
    ``beta`` is the fixed KL coefficient or the controller's starting value.
    """

    variant: str = "clip"
    epsilon: float = 0.2
    beta: float = 1.0
    d_targ: float = 0.01
    c1: float = 1.0
    c2: float = 0.0
    shared_network: bool = False

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown objective variant {self.variant!r}; choose from {VARIANTS}")
        if self.variant == "clip" and not 0.0 < self.epsilon < 1.0:
            raise ConfigurationError(f"clip epsilon must be in (0, 1), got {self.epsilon}")
        if self.variant in ("fixedkl", "adaptivekl") and not self.beta > 0:
            raise ConfigurationError(f"beta must be > 0, got {self.beta}")
        if self.variant == "adaptivekl" and not self.d_targ > 0:
            raise ConfigurationError(f"d_targ must be > 0, got {self.d_targ}")

    @property
    def label(self) -> str:
        if self.variant == "clip":
            return f"clip(eps={self.epsilon:g})"
        if self.variant == "fixedkl":
            return f"fixedkl(beta={self.beta:g})"
        if self.variant == "adaptivekl":
            return f"adaptivekl(d_targ={self.d_targ:g})"
        return "noclip"

    @classmethod
    def parse(cls, text: str, **kw) -> "ObjectiveConfig":
        """Parse ``clip:0.2``, ``fixedkl:3``, ``adaptivekl:0.01`` or ``noclip``."""
        name, _, arg = text.partition(":")
        name = name.strip().lower()
        if arg:
            key = {"clip": "epsilon", "fixedkl": "beta", "adaptivekl": "d_targ"}.get(name)
            if key is None:
                raise ConfigurationError(f"variant {name!r} takes no argument")
            kw[key] = float(arg)
        return cls(variant=name, **kw)


@dataclass
class KlControllerState:
    beta: float
    d_targ: float


def kl_controller_update(state: KlControllerState, d: float) -> KlControllerState:
    """Halve beta when the measured KL is well under target, double it when well over."""
    if d < 0:
        raise ConfigurationError(f"KL must be non-negative, got {d}")
    beta = state.beta
    if d < state.d_targ / 1.5:
        beta = beta / 2.0
    elif d > state.d_targ * 1.5:
        beta = beta * 2.0
    return KlControllerState(beta, state.d_targ)


@dataclass
class Batch:
    observations: np.ndarray
    actions: np.ndarray
    advantages: np.ndarray
    value_targets: np.ndarray
    old_log_probs: np.ndarray
    old_dist_params: np.ndarray

    def __len__(self):
        return self.advantages.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(*(getattr(self, f.name)[idx] for f in fields(self)))

    @classmethod
    def from_segments(cls, segments, estimates) -> "Batch":
        return cls(
            np.concatenate([s.observations[:-1] for s in segments]),
            np.concatenate([s.actions for s in segments]),
            np.concatenate([e.advantages for e in estimates]),
            np.concatenate([e.value_targets for e in estimates]),
            np.concatenate([s.old_log_probs for s in segments]),
            np.concatenate([s.old_dist_params for s in segments]),
        )


@dataclass
class MinibatchLossReport:
    total_loss: float
    policy_term: float
    value_term: float
    entropy_term: float
    mean_kl: float
    clip_fraction: float
    mean_ratio: float

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def mean(cls, reports: list["MinibatchLossReport"]) -> "MinibatchLossReport":
        if not reports:
            return cls(*([float("nan")] * len(fields(cls))))
        return cls(*(float(np.mean([getattr(r, n) for r in reports])) for n in cls.field_names()))


# -- per-sample terms -----------------------------------------------------------

def prob_ratio(new_log_prob, old_log_prob):
    """``exp(new - old)``, capped at 1e8."""
    diff = np.asarray(new_log_prob, dtype=np.float64) - np.asarray(old_log_prob, dtype=np.float64)
    with np.errstate(over="ignore"):
        r = np.exp(diff)
    if np.any(r > RATIO_CAP):
        warnings.warn("probability ratio exceeded 1e8 and was capped; the policy has diverged",
                      RuntimeWarning, stacklevel=2)
        r = np.minimum(r, RATIO_CAP)
    return float(r) if np.ndim(r) == 0 else r


def cpi_term(r, adv):
    return np.asarray(r) * np.asarray(adv) if np.ndim(r) or np.ndim(adv) else float(r) * float(adv)


def clip_term(r, adv, epsilon):
    r = np.asarray(r, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    out = np.minimum(r * adv, np.clip(r, 1.0 - epsilon, 1.0 + epsilon) * adv)
    return float(out) if out.ndim == 0 else out


def clip_term_grad(r, adv, epsilon):
    """d clip_term / d r.  At ties the unclipped branch wins, so the slope is ``adv``."""
    r = np.asarray(r, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    unclipped = r * adv
    clipped = np.clip(r, 1.0 - epsilon, 1.0 + epsilon) * adv
    return np.where(unclipped <= clipped, adv, 0.0)


def _policy_surrogate(variant, r, adv, epsilon):
    """Per-sample surrogate value and its derivative w.r.t. the ratio."""
    if variant == "clip":
        return clip_term(r, adv, epsilon), clip_term_grad(r, adv, epsilon)
    return r * adv, adv


# -- batch objectives -------------------------------------------------------------

def _finite(name, value):
    if not np.isfinite(value):
        raise NumericError(f"non-finite {name} ({value})")
    return float(value)


def combined_loss(batch: Batch, params, config: ObjectiveConfig, model, beta: float | None = None,
                  epsilon: float | None = None, need_grad: bool = True):
    """Actor-critic objective and its gradient.

    ``mean_t[ policy_t - c1 * (V(s_t) - V_targ_t)^2 + c2 * entropy_t ]``

    where ``policy_t`` follows ``config.variant``; KL variants subtract
    ``beta * KL[old || new]`` per state.  With separate networks the value error
    only drives the value network and ``c1`` is ignored (weight 1).
    ``beta``/``epsilon`` override the config (controller state, annealing).
    Returns ``(MinibatchLossReport, AgentParams gradient or None)``.
    """
    variant = config.variant
    eps = config.epsilon if epsilon is None else epsilon
    if beta is None:
        beta = config.beta
    c1 = config.c1 if model.shared else 1.0
    c2 = config.c2
    n = len(batch)

    fwd = model.forward(params, batch.observations)
    dist = fwd.dist
    old = model.dist_from_params(batch.old_dist_params)
    new_lp = dist.log_prob(batch.actions)
    r = prob_ratio(new_lp, batch.old_log_probs)
    r = np.atleast_1d(r)
    adv = batch.advantages

    surr, dsurr_dr = _policy_surrogate(variant, r, adv, eps)
    kl = old.kl(dist)
    use_kl = variant in ("fixedkl", "adaptivekl")
    policy_per = surr - beta * kl if use_kl else surr
    err = fwd.values - batch.value_targets
    ent = dist.entropy()

    policy_term = _finite("policy term", np.mean(policy_per))
    value_term = _finite("value term", np.mean(err * err))
    entropy_term = _finite("entropy term", np.mean(ent))
    total = _finite("total loss", policy_term - c1 * value_term + c2 * entropy_term)
    if variant == "clip":
        # share of samples sitting on a plateau (clipped branch strictly smaller)
        clip_fraction = float(np.mean(np.clip(r, 1.0 - eps, 1.0 + eps) * adv < r * adv))
    else:
        clip_fraction = 0.0
    report = MinibatchLossReport(total, policy_term, value_term, entropy_term,
                                 float(np.mean(kl)), clip_fraction, float(np.mean(r)))
    if not need_grad:
        return report, None

    # d/d(log prob) of the surrogate: dS/dr * r
    g_lp = (dsurr_dr * r) / n
    g_dist = [g_lp[:, None] * g for g in dist.log_prob_grad(batch.actions)]
    if c2:
        for i, g in enumerate(dist.entropy_grad()):
            g_dist[i] = g_dist[i] + (c2 / n) * g
    if use_kl:
        for i, g in enumerate(old.kl_grad(dist)):
            g_dist[i] = g_dist[i] - (beta / n) * g
    g_values = -2.0 * c1 * err / n
    grad = model.backward(fwd, tuple(g_dist), g_values)
    return report, grad


def klpen_loss(batch: Batch, params, beta: float, model) -> MinibatchLossReport:
    """``mean_t[ r_t * A_t - beta * KL[old || new](s_t) ]`` as a report (no value/entropy terms)."""
    if not beta >= 0:
        raise ConfigurationError(f"beta must be >= 0, got {beta}")
    report, _ = combined_loss(batch, params, ObjectiveConfig("noclip", c2=0.0), model, need_grad=False)
    report.policy_term = report.policy_term - beta * report.mean_kl
    report.total_loss = report.policy_term
    report.value_term = 0.0
    report.entropy_term = 0.0
    return report


def trpo_diagnostics(batch: Batch, params, model) -> tuple[float, float]:
    """Unconstrained surrogate ``mean(r * A)`` and mean ``KL[old || new]``."""
    fwd = model.forward(params, batch.observations)
    old = model.dist_from_params(batch.old_dist_params)
    r = np.atleast_1d(prob_ratio(fwd.dist.log_prob(batch.actions), batch.old_log_probs))
    return float(np.mean(r * batch.advantages)), float(np.mean(old.kl(fwd.dist)))
