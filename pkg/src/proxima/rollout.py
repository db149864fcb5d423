"""Fixed-length segment collection and advantage estimation.

Episode boundaries inside a segment come in two kinds:

* terminal  -- the environment ended; no bootstrapping through it.
* truncated -- a time limit cut the episode; the TD residual bootstraps from
  the value of the final (pre-reset) observation, kept in ``bootstrap_values``.

Either kind stops the GAE recursion, since the next sample belongs to a new
episode.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError

log = logging.getLogger(__name__)
_warned_flat = False


@dataclass
class Segment:
    observations: np.ndarray        # (T+1, obs_dim), last row is the bootstrap state s_T
    actions: np.ndarray             # (T, act_dim) floats or (T,) ints
    rewards: np.ndarray             # (T,)
    terminal: np.ndarray            # (T,) bool
    old_values: np.ndarray          # (T+1,) V_old(s_t)
    old_log_probs: np.ndarray | None = None   # (T,)
    truncated: np.ndarray | None = None       # (T,) bool
    bootstrap_values: np.ndarray | None = None  # (T,) V_old(final obs), read only where truncated
    old_dist_params: np.ndarray | None = None   # (T, p)
    episode_returns: list = field(default_factory=list)
    episode_lengths: list = field(default_factory=list)

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        T = self.rewards.shape[0]
        self.observations = np.asarray(self.observations, dtype=np.float64)
        if self.observations.ndim == 1:
            self.observations = self.observations[:, None]
        self.actions = np.asarray(self.actions)
        self.terminal = np.asarray(self.terminal, dtype=bool)
        self.old_values = np.asarray(self.old_values, dtype=np.float64)
        self.truncated = (np.zeros(T, dtype=bool) if self.truncated is None
                          else np.asarray(self.truncated, dtype=bool))
        self.bootstrap_values = (np.zeros(T) if self.bootstrap_values is None
                                 else np.asarray(self.bootstrap_values, dtype=np.float64))
        self.old_log_probs = (np.zeros(T) if self.old_log_probs is None
                              else np.asarray(self.old_log_probs, dtype=np.float64))
        checks = {
            "observations": (self.observations.shape[0], T + 1),
            "actions": (self.actions.shape[0], T),
            "terminal": (self.terminal.shape[0], T),
            "truncated": (self.truncated.shape[0], T),
            "old_values": (self.old_values.shape[0], T + 1),
            "old_log_probs": (self.old_log_probs.shape[0], T),
            "bootstrap_values": (self.bootstrap_values.shape[0], T),
        }
        if self.old_dist_params is not None:
            self.old_dist_params = np.asarray(self.old_dist_params, dtype=np.float64)
            checks["old_dist_params"] = (self.old_dist_params.shape[0], T)
        for name, (got, want) in checks.items():
            if got != want:
                raise ConfigurationError(f"segment field {name} has length {got}, expected {want}")
        if not (np.all(np.isfinite(self.old_values)) and np.all(np.isfinite(self.old_log_probs))):
            raise NumericError("segment carries non-finite old values or log-probs")

    @property
    def T(self) -> int:
        return self.rewards.shape[0]

    @property
    def dones(self) -> np.ndarray:
        return self.terminal | self.truncated


@dataclass
class AdvantageEstimate:
    advantages: np.ndarray
    value_targets: np.ndarray
    raw_advantages: np.ndarray


class Actor:
    """One environment instance plus its own sampling RNG; episodes persist across segments."""

    def __init__(self, env, seed: int):
        env_seed, policy_seed = np.random.SeedSequence(seed).generate_state(2)
        self.env = env
        self.rng = np.random.default_rng(int(policy_seed))
        self.obs = env.reset(seed=int(env_seed))
        self.episode_return = 0.0
        self.episode_length = 0

    def collect(self, model, params, T: int) -> Segment:
        if T < 1:
            raise ConfigurationError(f"segment length must be >= 1, got {T}")
        obs_buf = np.zeros((T + 1, self.env.observation_dim))
        if model.continuous:
            act_buf = np.zeros((T, model.head_dim))
        else:
            act_buf = np.zeros(T, dtype=np.int64)
        rew = np.zeros(T)
        term = np.zeros(T, dtype=bool)
        trunc = np.zeros(T, dtype=bool)
        values = np.zeros(T + 1)
        boot = np.zeros(T)
        logps = np.zeros(T)
        dparams = None
        ep_returns, ep_lengths = [], []
        for t in range(T):
            obs_buf[t] = self.obs
            action, lp, v, dp = model.step(params, self.obs, self.rng)
            if dparams is None:
                dparams = np.zeros((T, dp.shape[0]))
            act_buf[t] = action
            logps[t] = lp
            values[t] = v
            dparams[t] = dp
            res = self.env.step(action)
            if not (np.isfinite(res.reward) and np.all(np.isfinite(res.observation))):
                raise NumericError(f"environment returned a non-finite value at timestep {t}")
            rew[t] = res.reward
            term[t] = res.terminal
            trunc[t] = res.truncated
            self.episode_return += res.reward
            self.episode_length += 1
            if res.terminal or res.truncated:
                if res.truncated:
                    boot[t] = float(model.value(params, res.observation)[0])
                ep_returns.append(self.episode_return)
                ep_lengths.append(self.episode_length)
                self.episode_return = 0.0
                self.episode_length = 0
                self.obs = self.env.reset()
            else:
                self.obs = res.observation
        obs_buf[T] = self.obs
        values[T] = float(model.value(params, self.obs)[0])
        return Segment(obs_buf, act_buf, rew, term, values, logps, trunc, boot, dparams,
                       ep_returns, ep_lengths)

    def get_state(self) -> dict:
        return {"env": self.env.get_state(), "rng": self.rng.bit_generator.state,
                "obs": self.obs.tolist(), "episode_return": self.episode_return,
                "episode_length": self.episode_length}

    def set_state(self, state: dict) -> None:
        self.env.set_state(state["env"])
        bg = getattr(np.random, state["rng"]["bit_generator"])()
        bg.state = state["rng"]
        self.rng = np.random.Generator(bg)
        self.obs = np.array(state["obs"], dtype=np.float64)
        self.episode_return = float(state["episode_return"])
        self.episode_length = int(state["episode_length"])


def collect_segment(env, model, params, T: int, seed: int = 0) -> Segment:
    """Reset ``env`` and collect one segment of ``T`` transitions from it."""
    return Actor(env, seed).collect(model, params, T)


def collect_segments(actors: list[Actor], model, params, T: int, workers: int = 1) -> list[Segment]:
    """Collect one segment per actor; output order always follows ``actors``."""
    if workers <= 1:
        return [a.collect(model, params, T) for a in actors]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda a: a.collect(model, params, T), actors))


def compute_deltas(segment: Segment, gamma: float) -> np.ndarray:
    """TD residuals ``r_t + gamma * V(s_{t+1}) - V(s_t)``, no bootstrap through terminals."""
    if not 0.0 < gamma <= 1.0:
        raise ConfigurationError(f"gamma must lie in (0, 1], got {gamma}")
    next_values = np.where(segment.truncated, segment.bootstrap_values, segment.old_values[1:])
    mask = 1.0 - segment.terminal.astype(np.float64)
    return segment.rewards + gamma * mask * next_values - segment.old_values[:-1]


def compute_gae(deltas, dones, gamma: float, lam: float) -> np.ndarray:
    """Truncated GAE by the backward recursion ``A_t = d_t + gamma*lam*(1-done_t)*A_{t+1}``.

    ``dones[t]`` marks that an episode ended at step ``t``; the sum never
    crosses it.  ``A_T = 0`` closes the segment.
    """
    if not 0.0 <= lam <= 1.0:
        raise ConfigurationError(f"lambda must lie in [0, 1], got {lam}")
    deltas = np.asarray(deltas, dtype=np.float64)
    mask = 1.0 - np.asarray(dones, dtype=np.float64)
    adv = np.zeros_like(deltas)
    running = 0.0
    for t in range(deltas.shape[0] - 1, -1, -1):
        running = deltas[t] + gamma * lam * mask[t] * running
        adv[t] = running
    return adv


def compute_nstep_return_advantage(segment: Segment, gamma: float) -> np.ndarray:
    """Finite-horizon advantage: discounted rewards up to the segment end, then ``V(s_T)``.

    Evaluated directly per start index (not by recursion).  The sum stops at an
    episode end: a terminal contributes no bootstrap, a truncation bootstraps
    from ``bootstrap_values``.
    """
    T = segment.T
    adv = np.zeros(T)
    for t in range(T):
        total = 0.0
        disc = 1.0
        for k in range(t, T):
            total += disc * segment.rewards[k]
            disc *= gamma
            if segment.terminal[k]:
                break
            if segment.truncated[k]:
                total += disc * segment.bootstrap_values[k]
                break
        else:
            total += disc * segment.old_values[T]
        adv[t] = total - segment.old_values[t]
    return adv


def build_advantages(segments: list[Segment], gamma: float, lam: float,
                     normalize: bool = True) -> list[AdvantageEstimate]:
    """GAE per segment; optional standardization over the pooled batch.

    Value targets use the raw advantages and are never normalized.
    """
    if len({s.T for s in segments}) > 1:
        raise ConfigurationError("all segments must share the same horizon")
    raws = [compute_gae(compute_deltas(s, gamma), s.dones, gamma, lam) for s in segments]
    out = []
    if normalize:
        pooled = np.concatenate(raws)
        mean = pooled.mean()
        std = pooled.std()
        if std < 1e-8:
            global _warned_flat
            # a converged deterministic policy hits this every iteration; say it once
            log.log(logging.DEBUG if _warned_flat else logging.WARNING,
                    "pooled advantage std %.3g < 1e-8; subtracting mean only", std)
            _warned_flat = True
            std = 1.0
    for s, raw in zip(segments, raws):
        adv = (raw - mean) / std if normalize else raw.copy()
        out.append(AdvantageEstimate(adv, raw + s.old_values[:-1], raw))
    return out
