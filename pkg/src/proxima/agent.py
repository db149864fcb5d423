"""Actor-critic parameter bundle: policy network (+ state-independent log-std) and value network.

With ``shared=True`` one network emits the distribution parameters and the
value in its last output unit, so policy and value losses share a trunk.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import Categorical, DiagGaussian
from .envs import Continuous, Discrete
from .errors import ConfigurationError
from .mlp import MlpSpec, init_params, mlp_backward, mlp_forward


@dataclass
class AgentParams:
    policy: np.ndarray
    value: np.ndarray | None = None

    def copy(self) -> "AgentParams":
        return AgentParams(self.policy.copy(), None if self.value is None else self.value.copy())

    def vectors(self) -> list[np.ndarray]:
        return [self.policy] if self.value is None else [self.policy, self.value]

    def flat(self) -> np.ndarray:
        return np.concatenate(self.vectors())

    def lerp(self, other: "AgentParams", alpha: float) -> "AgentParams":
        """``self + alpha * (other - self)``."""
        pol = self.policy + alpha * (other.policy - self.policy)
        val = None if self.value is None else self.value + alpha * (other.value - self.value)
        return AgentParams(pol, val)

    def with_flat(self, flat: np.ndarray) -> "AgentParams":
        n = self.policy.size
        flat = np.asarray(flat, dtype=np.float64)
        return AgentParams(flat[:n].copy(), None if self.value is None else flat[n:].copy())


@dataclass
class _Forward:
    policy_cache: object
    value_cache: object
    dist: object
    values: np.ndarray
    squeeze: bool


class ActorCritic:
    def __init__(self, observation_dim: int, action_space, hidden_dims=(64, 64),
                 shared: bool = False, log_std_init: float = 0.0):
        self.observation_dim = observation_dim
        self.action_space = action_space
        self.shared = shared
        self.log_std_init = log_std_init
        if isinstance(action_space, Continuous):
            self.continuous = True
            self.dist_cls = DiagGaussian
            self.head_dim = action_space.dim
            self.n_log_std = action_space.dim
        elif isinstance(action_space, Discrete):
            self.continuous = False
            self.dist_cls = Categorical
            self.head_dim = action_space.n
            self.n_log_std = 0
        else:
            raise ConfigurationError(f"unsupported action space {action_space!r}")
        hidden = tuple(hidden_dims)
        if shared:
            self.policy_spec = MlpSpec(observation_dim, self.head_dim + 1, hidden)
            self.value_spec = None
        else:
            self.policy_spec = MlpSpec(observation_dim, self.head_dim, hidden)
            self.value_spec = MlpSpec(observation_dim, 1, hidden)

    @classmethod
    def for_env(cls, env, hidden_dims=(64, 64), shared=False, log_std_init=0.0) -> "ActorCritic":
        return cls(env.observation_dim, env.action_space, hidden_dims, shared, log_std_init)

    def init_params(self, seed: int) -> AgentParams:
        ss = np.random.SeedSequence(seed)
        pseed, vseed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
        pol = init_params(self.policy_spec, pseed, final_layer_scale=0.01)
        pol = np.concatenate([pol, np.full(self.n_log_std, float(self.log_std_init))])
        val = None if self.shared else init_params(self.value_spec, vseed, final_layer_scale=1.0)
        return AgentParams(pol, val)

    # -- log-std slot --------------------------------------------------------

    def log_std(self, params: AgentParams) -> np.ndarray:
        return params.policy[params.policy.size - self.n_log_std:]

    def set_log_std(self, params: AgentParams, value) -> None:
        if self.n_log_std:
            params.policy[params.policy.size - self.n_log_std:] = value

    # -- evaluation ------------------------------------------------------------

    def forward(self, params: AgentParams, obs) -> _Forward:
        obs = np.asarray(obs, dtype=np.float64)
        squeeze = obs.ndim == 1
        x = obs[None, :] if squeeze else obs
        net = params.policy[:self.policy_spec.n_params]
        out, pcache = mlp_forward(self.policy_spec, net, x)
        if self.shared:
            head, values = out[:, :self.head_dim], out[:, self.head_dim]
            vcache = None
        else:
            head = out
            vout, vcache = mlp_forward(self.value_spec, params.value, x)
            values = vout[:, 0]
        if self.continuous:
            dist = DiagGaussian(head, np.broadcast_to(self.log_std(params), head.shape))
        else:
            dist = Categorical(head)
        return _Forward(pcache, vcache, dist, values, squeeze)

    def backward(self, fwd: _Forward, g_dist: tuple, g_values) -> AgentParams:
        """Pull gradients w.r.t. distribution parameters and values back to parameters.

        ``g_dist`` is ``(g_mean, g_log_std)`` for Gaussians or ``(g_logits,)``.
        """
        g_head = np.asarray(g_dist[0], dtype=np.float64).reshape(-1, self.head_dim)
        g_values = np.asarray(g_values, dtype=np.float64).reshape(-1)
        if self.shared:
            g_out = np.concatenate([g_head, g_values[:, None]], axis=1)
            g_net = mlp_backward(fwd.policy_cache, g_out)
            g_val = None
        else:
            g_net = mlp_backward(fwd.policy_cache, g_head)
            g_val = mlp_backward(fwd.value_cache, g_values[:, None])
        if self.continuous:
            g_log_std = np.asarray(g_dist[1]).reshape(-1, self.head_dim).sum(axis=0)
            g_pol = np.concatenate([g_net, g_log_std])
        else:
            g_pol = g_net
        return AgentParams(g_pol, g_val)

    def distribution(self, params: AgentParams, obs):
        return self.forward(params, obs).dist

    def value(self, params: AgentParams, obs) -> np.ndarray:
        return self.forward(params, obs).values

    def dist_from_params(self, dist_params):
        return self.dist_cls.from_params(dist_params)

    def step(self, params: AgentParams, obs, rng: np.random.Generator, deterministic: bool = False):
        """Act in one state: returns ``(action, log_prob, value, dist_params)``."""
        fwd = self.forward(params, obs)
        dist = fwd.dist
        action = dist.mode() if deterministic else dist.sample(rng)
        lp = dist.log_prob(action)
        if self.continuous:
            action = action[0]
        else:
            action = int(np.asarray(action).reshape(-1)[0])
        return action, float(lp[0]), float(fwd.values[0]), dist.params()[0]

    def policy_fn(self, params: AgentParams, deterministic: bool = True, rng=None):
        """Wrap as a plain ``obs -> action`` callable for evaluation."""
        rng = np.random.default_rng(0) if rng is None else rng

        def act(obs):
            return self.step(params, obs, rng, deterministic)[0]
        return act
