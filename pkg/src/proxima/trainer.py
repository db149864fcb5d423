"""PPO actor-critic training loop: N actors x T steps, K epochs of minibatch Adam ascent."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import ActorCritic, AgentParams
from .envs import chain_optimal_values, make_env, point_mass_optimal_return
from .errors import ConfigurationError, NumericError
from .mlp import AdamState, adam_step, read_params, write_params
from .objectives import (Batch, KlControllerState, MinibatchLossReport, ObjectiveConfig, combined_loss,
                         kl_controller_update, trpo_diagnostics)
from .rollout import Actor, build_advantages, collect_segments

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
METRIC_COLUMNS = [
    "iteration", "timesteps_so_far", "mean_episode_return", "episodes_completed",
    *MinibatchLossReport.field_names(),
    "final_kl", "beta", "stepsize", "epsilon", "log_std_mean",
]


@dataclass
class TrainConfig:
    env_name: str = "point_mass"
    horizon_T: int = 256
    num_actors_N: int = 4
    epochs_K: int = 10
    minibatch_M: int = 64
    gamma: float = 0.99
    lam: float = 0.95
    stepsize: float = 3e-4
    total_timesteps: int = 150_000
    anneal: bool = False
    normalize_advantages: bool = True
    seed: int = 0
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    hidden_dims: tuple = (64, 64)
    log_std_init: float = 0.0
    # (start, end) switches the log-std to a linear schedule and freezes its gradient
    log_std_anneal: tuple | None = None
    workers: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.log_std_anneal is not None:
            self.log_std_anneal = tuple(float(v) for v in self.log_std_anneal)
        for name in ("horizon_T", "num_actors_N", "minibatch_M", "total_timesteps"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.epochs_K < 0:
            raise ConfigurationError("epochs_K must be >= 0")
        nt = self.horizon_T * self.num_actors_N
        if self.minibatch_M > nt or nt % self.minibatch_M:
            raise ConfigurationError(
                f"minibatch_M={self.minibatch_M} must divide N*T={nt} and not exceed it"
            )
        if self.stepsize < 0:
            raise ConfigurationError("stepsize must be >= 0")

    @property
    def batch_size(self) -> int:
        return self.horizon_T * self.num_actors_N

    @property
    def n_iterations(self) -> int:
        return math.ceil(self.total_timesteps / self.batch_size)

    @classmethod
    def preset(cls, env_name: str, **overrides) -> "TrainConfig":
        """Toy-scale defaults; discrete tasks get an entropy bonus of 0.01."""
        if env_name.startswith("chain"):
            base = dict(env_name=env_name, total_timesteps=50_000,
                        objective=ObjectiveConfig("clip", epsilon=0.2, c2=0.01))
        else:
            base = dict(env_name=env_name, total_timesteps=150_000,
                        objective=ObjectiveConfig("clip", epsilon=0.2, c2=0.0))
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        d["log_std_anneal"] = None if self.log_std_anneal is None else list(self.log_std_anneal)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["objective"] = ObjectiveConfig(**d.get("objective", {}))
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha1(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:10]


@dataclass
class IterationMetrics:
    iteration: int
    timesteps_so_far: int
    mean_episode_return: float
    episodes_completed: int
    report: MinibatchLossReport
    final_kl: float
    beta: float
    stepsize: float
    epsilon: float
    log_std_mean: float
    wall_time_s: float = 0.0

    def row(self) -> list:
        vals = [self.iteration, self.timesteps_so_far, self.mean_episode_return, self.episodes_completed,
                *(getattr(self.report, n) for n in MinibatchLossReport.field_names()),
                self.final_kl, self.beta, self.stepsize, self.epsilon, self.log_std_mean]
        return [repr(float(v)) if isinstance(v, float) else v for v in vals]


@dataclass
class TrainState:
    model: ActorCritic
    params: AgentParams
    policy_adam: AdamState
    value_adam: AdamState | None
    kl: KlControllerState | None
    actors: list
    shuffle_rng: np.random.Generator
    iteration: int = 0
    timesteps: int = 0
    episodes_completed: int = 0
    recent_returns: deque = field(default_factory=lambda: deque(maxlen=100))
    dump_dir: Path | None = None


def init_state(config: TrainConfig) -> TrainState:
    probe = make_env(config.env_name)
    model = ActorCritic.for_env(probe, config.hidden_dims, shared=config.objective.shared_network,
                                log_std_init=config.log_std_init)
    ss = np.random.SeedSequence(config.seed)
    param_seq, shuffle_seq, *actor_seqs = ss.spawn(2 + config.num_actors_N)
    params = model.init_params(int(param_seq.generate_state(1)[0]))
    actors = [Actor(make_env(config.env_name), int(s.generate_state(1)[0])) for s in actor_seqs]
    value_adam = None if params.value is None else AdamState.zeros(params.value.size, config.stepsize)
    kl = None
    if config.objective.variant == "adaptivekl":
        kl = KlControllerState(config.objective.beta, config.objective.d_targ)
    return TrainState(model, params, AdamState.zeros(params.policy.size, config.stepsize), value_adam, kl,
                      actors, np.random.default_rng(shuffle_seq))


def anneal_fraction(config: TrainConfig, timesteps: int) -> float:
    """Progress in [0, 1], linear in timesteps; exactly 1 at the last iteration."""
    last_start = config.batch_size * (config.n_iterations - 1)
    return 1.0 if last_start <= 0 else min(timesteps / last_start, 1.0)


def _dump_minibatch(state: TrainState, mb: Batch, err: Exception) -> str:
    if state.dump_dir is None:
        return ""
    state.dump_dir.mkdir(parents=True, exist_ok=True)
    path = state.dump_dir / f"bad_minibatch_iter{state.iteration:04d}.npz"
    np.savez(path, **{f.name: getattr(mb, f.name) for f in dataclasses.fields(mb)})
    return f" (minibatch dumped to {path})"


def train_iteration(state: TrainState, config: TrainConfig) -> tuple[TrainState, IterationMetrics]:
    """Collect under the current (old) policy, then K epochs of minibatch ascent."""
    t0 = time.perf_counter()
    model, obj = state.model, config.objective
    frac = anneal_fraction(config, state.timesteps)
    alpha = 1.0 - frac if config.anneal else 1.0
    stepsize = config.stepsize * alpha
    epsilon = obj.epsilon * alpha
    freeze_log_std = config.log_std_anneal is not None and model.n_log_std > 0
    if freeze_log_std:
        start, end = config.log_std_anneal
        model.set_log_std(state.params, start + frac * (end - start))

    segments = collect_segments(state.actors, model, state.params, config.horizon_T, config.workers)
    for seg in segments:
        state.recent_returns.extend(seg.episode_returns)
        state.episodes_completed += len(seg.episode_returns)
    estimates = build_advantages(segments, config.gamma, config.lam, config.normalize_advantages)
    batch = Batch.from_segments(segments, estimates)

    state.policy_adam.stepsize = stepsize
    if state.value_adam is not None:
        state.value_adam.stepsize = stepsize
    beta = state.kl.beta if state.kl is not None else obj.beta
    reports = []
    n = len(batch)
    for _ in range(config.epochs_K):
        perm = state.shuffle_rng.permutation(n)
        for start in range(0, n, config.minibatch_M):
            mb = batch.take(perm[start:start + config.minibatch_M])
            try:
                report, grad = combined_loss(mb, state.params, obj, model, beta=beta, epsilon=epsilon)
                if freeze_log_std:
                    grad.policy[grad.policy.size - model.n_log_std:] = 0.0
                state.params.policy, state.policy_adam = adam_step(
                    state.policy_adam, state.params.policy, grad.policy, maximize=True)
                if state.value_adam is not None:
                    state.params.value, state.value_adam = adam_step(
                        state.value_adam, state.params.value, grad.value, maximize=True)
            except NumericError as exc:
                raise NumericError(f"iteration {state.iteration}: {exc}{_dump_minibatch(state, mb, exc)}") from exc
            reports.append(report)

    _, final_kl = trpo_diagnostics(batch, state.params, model)
    if state.kl is not None:
        state.kl = kl_controller_update(state.kl, final_kl)
    state.iteration += 1
    state.timesteps += n
    metrics = IterationMetrics(
        iteration=state.iteration,
        timesteps_so_far=state.timesteps,
        mean_episode_return=float(np.mean(state.recent_returns)) if state.recent_returns else float("nan"),
        episodes_completed=state.episodes_completed,
        report=MinibatchLossReport.mean(reports),
        final_kl=final_kl,
        beta=state.kl.beta if state.kl is not None else (beta if obj.variant == "fixedkl" else float("nan")),
        stepsize=stepsize,
        epsilon=epsilon if obj.variant == "clip" else float("nan"),
        log_std_mean=float(np.mean(model.log_std(state.params))) if model.n_log_std else float("nan"),
        wall_time_s=time.perf_counter() - t0,
    )
    return state, metrics


# -- checkpoints ------------------------------------------------------------------

def save_checkpoint(state: TrainState, config: TrainConfig, path) -> Path:
    """Directory checkpoint: parameter/optimizer records plus ``state.json``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    m = state.model
    write_params(path / "policy.bin", m.policy_spec, state.params.policy, extra=m.n_log_std)
    write_params(path / "policy_adam_m.bin", m.policy_spec, state.policy_adam.m, extra=m.n_log_std)
    write_params(path / "policy_adam_v.bin", m.policy_spec, state.policy_adam.v, extra=m.n_log_std)
    if state.params.value is not None:
        write_params(path / "value.bin", m.value_spec, state.params.value)
        write_params(path / "value_adam_m.bin", m.value_spec, state.value_adam.m)
        write_params(path / "value_adam_v.bin", m.value_spec, state.value_adam.v)
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "iteration": state.iteration,
        "timesteps": state.timesteps,
        "episodes_completed": state.episodes_completed,
        "recent_returns": list(state.recent_returns),
        "policy_adam_steps": state.policy_adam.step_count,
        "value_adam_steps": None if state.value_adam is None else state.value_adam.step_count,
        "kl_beta": None if state.kl is None else state.kl.beta,
        "shuffle_rng": state.shuffle_rng.bit_generator.state,
        "actors": [a.get_state() for a in state.actors],
    }
    (path / "state.json").write_text(json.dumps(meta, indent=1))
    return path


def load_params(path) -> tuple[AgentParams, dict]:
    """Read just the parameters (and metadata) of a checkpoint directory."""
    path = Path(path)
    meta = json.loads((path / "state.json").read_text())
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint version {meta.get('format_version')}")
    _, pol, _ = read_params(path / "policy.bin")
    val = read_params(path / "value.bin")[1] if (path / "value.bin").exists() else None
    return AgentParams(pol, val), meta


def load_checkpoint(path) -> tuple[TrainState, TrainConfig]:
    path = Path(path)
    params, meta = load_params(path)
    config = TrainConfig.from_dict(meta["config"])
    state = init_state(config)
    if params.policy.size != state.params.policy.size:
        raise ConfigurationError(f"{path}: policy record does not match the configured network")
    state.params = params
    state.policy_adam = AdamState(config.stepsize, read_params(path / "policy_adam_m.bin")[1],
                                  read_params(path / "policy_adam_v.bin")[1], meta["policy_adam_steps"])
    if params.value is not None:
        state.value_adam = AdamState(config.stepsize, read_params(path / "value_adam_m.bin")[1],
                                     read_params(path / "value_adam_v.bin")[1], meta["value_adam_steps"])
    if meta["kl_beta"] is not None:
        state.kl = KlControllerState(meta["kl_beta"], config.objective.d_targ)
    bg = getattr(np.random, meta["shuffle_rng"]["bit_generator"])()
    bg.state = meta["shuffle_rng"]
    state.shuffle_rng = np.random.Generator(bg)
    for actor, s in zip(state.actors, meta["actors"]):
        actor.set_state(s)
    state.iteration = meta["iteration"]
    state.timesteps = meta["timesteps"]
    state.episodes_completed = meta["episodes_completed"]
    state.recent_returns.extend(meta["recent_returns"])
    return state, config


# -- full runs --------------------------------------------------------------------

@dataclass
class TrainResult:
    state: TrainState
    config: TrainConfig
    metrics: list
    run_dir: Path | None
    artifacts: list


def train(config: TrainConfig, run_dir=None, resume_from=None, max_iterations: int | None = None) -> TrainResult:
    """Run ``ceil(total_timesteps / (N*T))`` iterations.

    Writes ``metrics.csv`` (deterministic columns), ``timing.csv`` (wall time),
    periodic checkpoints and ``final/`` under ``run_dir`` when given.
    ``max_iterations`` stops early without changing the annealing schedule.
    """
    if resume_from is not None:
        state, saved = load_checkpoint(resume_from)
        if saved.to_dict() != config.to_dict():
            log.warning("resuming with a config that differs from the checkpoint's; using the checkpoint's")
        config = saved
    else:
        state = init_state(config)
    run_dir = Path(run_dir) if run_dir is not None else None
    artifacts = []
    metrics_file = timing_file = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        state.dump_dir = run_dir
        mpath, tpath = run_dir / "metrics.csv", run_dir / "timing.csv"
        fresh = resume_from is None or not mpath.exists()
        metrics_file = mpath.open("w" if fresh else "a", newline="")
        timing_file = tpath.open("w" if fresh else "a", newline="")
        mw, tw = csv.writer(metrics_file), csv.writer(timing_file)
        if fresh:
            mw.writerow(METRIC_COLUMNS)
            tw.writerow(["iteration", "wall_time_s"])
        artifacts += [mpath, tpath]
        if config.checkpoint_every and resume_from is None:
            artifacts.append(save_checkpoint(state, config, run_dir / "checkpoints" / "iter_0000"))
    history = []
    stop = config.n_iterations if max_iterations is None else min(config.n_iterations, max_iterations)
    try:
        while state.iteration < stop:
            state, m = train_iteration(state, config)
            history.append(m)
            log.info("iter %d  t=%d  return=%.4g  kl=%.3g", m.iteration, m.timesteps_so_far,
                     m.mean_episode_return, m.final_kl)
            if metrics_file is not None:
                mw.writerow(m.row())
                tw.writerow([m.iteration, f"{m.wall_time_s:.6f}"])
                metrics_file.flush()
                timing_file.flush()
                if config.checkpoint_every and state.iteration % config.checkpoint_every == 0:
                    artifacts.append(save_checkpoint(
                        state, config, run_dir / "checkpoints" / f"iter_{state.iteration:04d}"))
        if run_dir is not None:
            artifacts.append(save_checkpoint(state, config, run_dir / "final"))
    finally:
        if metrics_file is not None:
            metrics_file.close()
            timing_file.close()
    return TrainResult(state, config, history, run_dir, artifacts)


# -- evaluation -------------------------------------------------------------------

def evaluate_policy(policy, env, episodes: int = 10, seed: int = 0) -> tuple[float, float]:
    """Mean and std of undiscounted episode returns of ``policy(obs) -> action``."""
    returns = run_episodes(policy, env, episodes, seed)[0]
    return float(np.mean(returns)), float(np.std(returns))


def evaluate_params(model: ActorCritic, params: AgentParams, env, episodes: int = 10,
                    deterministic: bool = True, seed: int = 0) -> tuple[float, float]:
    rng = np.random.default_rng(seed)
    return evaluate_policy(model.policy_fn(params, deterministic, rng), env, episodes, seed)


def run_episodes(policy, env, episodes: int, seed: int = 0, gamma: float = 1.0):
    """Roll out full episodes; returns ``(returns, start_observations)``."""
    if episodes < 1:
        raise ConfigurationError("episodes must be >= 1")
    returns, starts = [], []
    obs = env.reset(seed=seed)
    for _ in range(episodes):
        starts.append(obs.copy())
        total, disc = 0.0, 1.0
        while True:
            res = env.step(policy(obs))
            total += disc * res.reward
            disc *= gamma
            obs = res.observation
            if res.terminal or res.truncated:
                break
        returns.append(total)
        obs = env.reset()
    return np.array(returns), np.array(starts)


def oracle_fraction(ret: float, oracle: float, baseline: float) -> float:
    """Position of ``ret`` between a baseline (0) and the optimum (1)."""
    return (ret - baseline) / (oracle - baseline)


def point_mass_score(policy, episodes: int = 20, seed: int = 10_000) -> dict:
    """Score a point-mass policy against the exact optimum on the same start states.

    The baseline is the passive (zero-force) policy, whose return from rest at
    ``x0`` is ``-100 |x0|^2``.
    """
    env = make_env("point_mass")
    returns, starts = run_episodes(policy, env, episodes, seed)
    oracle = np.array([point_mass_optimal_return(s, env.max_episode_length)[0] for s in starts])
    passive = np.array([-env.max_episode_length * float(s[:2] @ s[:2]) for s in starts])
    return {
        "mean_return": float(returns.mean()),
        "oracle_return": float(oracle.mean()),
        "passive_return": float(passive.mean()),
        "fraction": oracle_fraction(returns.mean(), oracle.mean(), passive.mean()),
        "cost_ratio": float(oracle.mean() / returns.mean()),
    }


def chain_greedy_is_optimal(model: ActorCritic, params: AgentParams, env_name: str,
                            gamma: float = 0.99) -> bool:
    """Greedy policy's discounted return from the start equals the optimal value."""
    env = make_env(env_name)
    ret = run_episodes(model.policy_fn(params, True), env, 1, 0, gamma)[0][0]
    return abs(ret - chain_optimal_values(env.n_states, gamma)[env.start]) < 1e-12
