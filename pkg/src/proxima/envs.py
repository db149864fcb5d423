"""Built-in toy environments with exact oracles.

``point_mass``  2-D damped point mass pushed toward the origin (continuous actions).
``chain:<n>``   1-D chain, left/right moves, big reward at the right end (discrete).

Both follow a reset/step protocol.  Auto-reset after an episode ends is the
caller's job; stepping a finished episode raises :class:`UsageError`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import lsq_linear

from .errors import ConfigurationError, UsageError


@dataclass(frozen=True)
class Continuous:
    dim: int


@dataclass(frozen=True)
class Discrete:
    n: int


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    terminal: bool
    truncated: bool


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    bg = getattr(np.random, state["bit_generator"])()
    bg.state = state
    return np.random.Generator(bg)


class PointMassEnv:
    """2-D point mass.

    State is position ``x`` and velocity ``v``; observation is ``[x, v]``.
    Each step: reward ``-|x|^2 - 0.01|a|^2`` (pre-step state), then
    ``x <- x + 0.05 v``, ``v <- 0.95 v + 0.1 a`` with ``a`` clamped to [-1, 1].
    Episodes start at rest, uniform in [-1, 1]^2, and truncate after 100 steps.
    """

    name = "point_mass"
    observation_dim = 4
    action_space = Continuous(2)
    dt = 0.05
    damping = 0.95
    force_gain = 0.1
    action_cost = 0.01

    def __init__(self, seed: int | None = None, max_episode_length: int = 100):
        self.max_episode_length = max_episode_length
        self.rng = np.random.default_rng(seed)
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.t = 0
        self.done = True

    def _obs(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel])

    def reset(self, seed: int | None = None, start=None) -> np.ndarray:
        """Start a new episode; ``start`` optionally pins ``[x1, x2, v1, v2]``."""
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        if start is None:
            self.pos = self.rng.uniform(-1.0, 1.0, size=2)
            self.vel = np.zeros(2)
        else:
            start = np.asarray(start, dtype=np.float64)
            self.pos, self.vel = start[:2].copy(), start[2:].copy()
        self.t = 0
        self.done = False
        return self._obs()

    def step(self, action) -> StepResult:
        if self.done:
            raise UsageError("step() called on a finished episode; call reset() first")
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(2), -1.0, 1.0)
        reward = -float(self.pos @ self.pos) - self.action_cost * float(a @ a)
        self.pos = self.pos + self.dt * self.vel
        self.vel = self.damping * self.vel + self.force_gain * a
        self.t += 1
        truncated = self.t >= self.max_episode_length
        self.done = truncated
        return StepResult(self._obs(), reward, False, truncated)

    def get_state(self) -> dict:
        return {"pos": self.pos.tolist(), "vel": self.vel.tolist(), "t": self.t,
                "done": self.done, "rng": _rng_state(self.rng)}

    def set_state(self, state: dict) -> None:
        self.pos = np.array(state["pos"], dtype=np.float64)
        self.vel = np.array(state["vel"], dtype=np.float64)
        self.t = int(state["t"])
        self.done = bool(state["done"])
        self.rng = _restore_rng(state["rng"])


class ChainEnv:
    """Chain of ``n_states`` cells; both ends are terminal.

    Action 0 moves left, 1 moves right.  Entering the right end pays 1.0,
    entering the left end pays 0.01.  Start in the middle cell; truncate after
    ``2 * n_states`` steps.  Observation is a one-hot position.
    """

    goal_reward = 1.0
    distractor_reward = 0.01
    action_space = Discrete(2)

    def __init__(self, n_states: int = 9, seed: int | None = None):
        if n_states < 3:
            raise ConfigurationError(f"chain needs at least 3 states, got {n_states}")
        self.n_states = n_states
        self.name = f"chain:{n_states}"
        self.observation_dim = n_states
        self.max_episode_length = 2 * n_states
        self.start = n_states // 2
        self.rng = np.random.default_rng(seed)  # unused by the dynamics; kept for a uniform interface
        self.pos = self.start
        self.t = 0
        self.done = True

    def _obs(self) -> np.ndarray:
        obs = np.zeros(self.n_states)
        obs[self.pos] = 1.0
        return obs

    def reset(self, seed: int | None = None, start=None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.pos = self.start if start is None else int(start)
        self.t = 0
        self.done = False
        return self._obs()

    def step(self, action) -> StepResult:
        if self.done:
            raise UsageError("step() called on a finished episode; call reset() first")
        a = int(np.asarray(action).reshape(()))
        if a not in (0, 1):
            raise ConfigurationError(f"chain action must be 0 or 1, got {action!r}")
        self.pos += 1 if a == 1 else -1
        self.t += 1
        reward = 0.0
        terminal = False
        if self.pos == self.n_states - 1:
            reward, terminal = self.goal_reward, True
        elif self.pos == 0:
            reward, terminal = self.distractor_reward, True
        truncated = (not terminal) and self.t >= self.max_episode_length
        self.done = terminal or truncated
        return StepResult(self._obs(), reward, terminal, truncated)

    def get_state(self) -> dict:
        return {"pos": self.pos, "t": self.t, "done": self.done, "rng": _rng_state(self.rng)}

    def set_state(self, state: dict) -> None:
        self.pos = int(state["pos"])
        self.t = int(state["t"])
        self.done = bool(state["done"])
        self.rng = _restore_rng(state["rng"])


def point_mass_env(seed: int | None = None) -> PointMassEnv:
    return PointMassEnv(seed)


def chain_env(n_states: int, seed: int | None = None) -> ChainEnv:
    return ChainEnv(n_states, seed)


def make_env(name: str, seed: int | None = None):
    """Build an environment from its config name: ``point_mass`` or ``chain:<n>``."""
    if name == "point_mass":
        return PointMassEnv(seed)
    if name.startswith("chain"):
        _, _, n = name.partition(":")
        try:
            return ChainEnv(int(n) if n else 9, seed)
        except ValueError:
            raise ConfigurationError(f"bad chain size in env name {name!r}") from None
    raise ConfigurationError(f"unknown environment {name!r}")


def env_reset(env, seed: int | None = None):
    return env.reset(seed)


def env_step(env, action) -> StepResult:
    return env.step(action)


# -- oracles ------------------------------------------------------------------

def point_mass_optimal_return(start, horizon: int = 100) -> tuple[float, np.ndarray]:
    """Exact optimal return of the point mass from ``start = [x1, x2, v1, v2]``.

    The dynamics are linear and the cost is convex quadratic, so the optimal
    open-loop force sequence under the box constraint solves a bounded linear
    least-squares problem per axis.  Returns ``(return, actions[horizon, 2])``.
    """
    env = PointMassEnv
    start = np.asarray(start, dtype=np.float64)
    # positions x_t for t = 0..H-1 as affine functions of actions a_0..a_{H-2}
    H = horizon
    vel_from_a = np.zeros((H, H))  # v_t = damping^t v0 + sum_s vel_from_a[t, s] a_s
    for t in range(1, H):
        vel_from_a[t] = env.damping * vel_from_a[t - 1]
        vel_from_a[t, t - 1] += env.force_gain
    pos_from_a = np.zeros((H, H))
    for t in range(1, H):
        pos_from_a[t] = pos_from_a[t - 1] + env.dt * vel_from_a[t - 1]
    total = 0.0
    actions = np.zeros((H, 2))
    w = np.sqrt(env.action_cost)
    for axis in range(2):
        x0, v0 = start[axis], start[2 + axis]
        vel0 = v0 * env.damping ** np.arange(H)
        pos0 = x0 + env.dt * np.concatenate([[0.0], np.cumsum(vel0[:-1])])
        A = np.vstack([pos_from_a, w * np.eye(H)])
        b = np.concatenate([-pos0, np.zeros(H)])
        sol = lsq_linear(A, b, bounds=(-1.0, 1.0), method="bvls", tol=1e-14)
        a = np.clip(sol.x, -1.0, 1.0)
        resid = A @ a - b
        total -= float(resid @ resid)
        actions[:, axis] = a
    return total, actions


def point_mass_controller(obs, kp: float = 6.0, kd: float = 5.0) -> np.ndarray:
    """Hand-tuned saturated PD controller; near-optimal on the point mass."""
    obs = np.asarray(obs, dtype=np.float64)
    return np.clip(-kp * obs[..., :2] - kd * obs[..., 2:], -1.0, 1.0)


def chain_optimal_values(n_states: int, gamma: float = 0.99, tol: float = 1e-14) -> np.ndarray:
    """Tabular value iteration; ``V[s]`` for every cell (terminal cells are 0).

    Time-limit truncation is ignored: on the chain the optimal walk is far
    shorter than the horizon.
    """
    V = np.zeros(n_states)
    while True:
        new = np.zeros(n_states)
        for s in range(1, n_states - 1):
            best = -np.inf
            for nxt in (s - 1, s + 1):
                if nxt == n_states - 1:
                    q = ChainEnv.goal_reward
                elif nxt == 0:
                    q = ChainEnv.distractor_reward
                else:
                    q = gamma * V[nxt]
                best = max(best, q)
            new[s] = best
        if np.max(np.abs(new - V)) < tol:
            return new
        V = new


def chain_optimal_actions(n_states: int, gamma: float = 0.99) -> np.ndarray:
    """Greedy optimal action per non-terminal cell (index 0 and n-1 are -1)."""
    V = chain_optimal_values(n_states, gamma)
    acts = -np.ones(n_states, dtype=int)
    for s in range(1, n_states - 1):
        q = []
        for nxt in (s - 1, s + 1):
            if nxt == n_states - 1:
                q.append(ChainEnv.goal_reward)
            elif nxt == 0:
                q.append(ChainEnv.distractor_reward)
            else:
                q.append(gamma * V[nxt])
        acts[s] = int(np.argmax(q))
    return acts
