"""Action distributions for policies: diagonal Gaussian and categorical.

Both classes are batched: parameters carry a leading batch axis (or none, for a
single state).  Each quantity has a companion ``*_grad`` method returning the
gradient with respect to the distribution parameters, which the objectives
feed into the network backward pass.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
LOG_2PI = np.log(2.0 * np.pi)


class DiagGaussian:
    """Gaussian with diagonal covariance; ``log_std`` is clamped to [-20, 2]."""

    n_param_groups = 2

    def __init__(self, mean, log_std):
        self.mean = np.asarray(mean, dtype=np.float64)
        raw = np.broadcast_to(np.asarray(log_std, dtype=np.float64), self.mean.shape)
        if not np.all(np.isfinite(raw)):
            raise ConfigurationError("log_std entries must be finite")
        self.raw_log_std = raw
        self.log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        self.std = np.exp(self.log_std)
        # zero gradient where the clamp is active
        self._clamp_mask = ((raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX)).astype(np.float64)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def params(self) -> np.ndarray:
        return np.concatenate([self.mean, self.raw_log_std], axis=-1)

    @classmethod
    def from_params(cls, params):
        params = np.asarray(params, dtype=np.float64)
        d = params.shape[-1] // 2
        return cls(params[..., :d], params[..., d:])

    def log_prob(self, action) -> np.ndarray:
        z = (np.asarray(action, dtype=np.float64) - self.mean) / self.std
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(self.log_std, axis=-1) - 0.5 * self.dim * LOG_2PI

    def log_prob_grad(self, action):
        """Returns ``(d/d mean, d/d log_std)``."""
        diff = np.asarray(action, dtype=np.float64) - self.mean
        var = self.std * self.std
        return diff / var, (diff * diff / var - 1.0) * self._clamp_mask

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal(self.mean.shape)

    def mode(self) -> np.ndarray:
        return self.mean.copy()

    def entropy(self) -> np.ndarray:
        return np.sum(self.log_std, axis=-1) + 0.5 * self.dim * (1.0 + LOG_2PI)

    def entropy_grad(self):
        return np.zeros_like(self.mean), np.ones_like(self.mean) * self._clamp_mask

    def kl(self, other: "DiagGaussian") -> np.ndarray:
        """KL(self || other) in closed form."""
        _check_family(self, other)
        var_q = other.std * other.std
        num = self.std * self.std + (self.mean - other.mean) ** 2
        return np.sum(other.log_std - self.log_std + num / (2.0 * var_q) - 0.5, axis=-1)

    def kl_grad(self, other: "DiagGaussian"):
        """Gradient of KL(self || other) w.r.t. ``other``'s mean and log_std."""
        _check_family(self, other)
        var_q = other.std * other.std
        diff = other.mean - self.mean
        num = self.std * self.std + diff * diff
        return diff / var_q, (1.0 - num / var_q) * other._clamp_mask


class Categorical:
    n_param_groups = 1

    def __init__(self, logits):
        self.logits = np.asarray(logits, dtype=np.float64)
        shifted = self.logits - np.max(self.logits, axis=-1, keepdims=True)
        self.log_probs = shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
        self.probs = np.exp(self.log_probs)

    @property
    def n(self) -> int:
        return self.logits.shape[-1]

    def params(self) -> np.ndarray:
        return self.logits

    @classmethod
    def from_params(cls, params):
        return cls(params)

    def _onehot(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=np.int64)
        return (np.arange(self.n) == a[..., None]).astype(np.float64)

    def log_prob(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=np.int64)
        return np.take_along_axis(self.log_probs, a[..., None], axis=-1)[..., 0]

    def log_prob_grad(self, action):
        return (self._onehot(action) - self.probs,)

    def sample(self, rng: np.random.Generator):
        # inverse-CDF draw; one uniform per distribution
        cdf = np.cumsum(self.probs, axis=-1)
        u = rng.random(self.logits.shape[:-1])
        idx = np.sum(cdf <= np.asarray(u)[..., None], axis=-1)
        idx = np.minimum(idx, self.n - 1)
        return int(idx) if np.ndim(idx) == 0 else idx

    def mode(self):
        idx = np.argmax(self.logits, axis=-1)
        return int(idx) if np.ndim(idx) == 0 else idx

    def entropy(self) -> np.ndarray:
        return -np.sum(self.probs * self.log_probs, axis=-1)

    def entropy_grad(self):
        h = self.entropy()
        return (-self.probs * (self.log_probs + np.asarray(h)[..., None]),)

    def kl(self, other: "Categorical") -> np.ndarray:
        _check_family(self, other)
        return np.sum(self.probs * (self.log_probs - other.log_probs), axis=-1)

    def kl_grad(self, other: "Categorical"):
        _check_family(self, other)
        return (other.probs - self.probs,)


def _check_family(p, q):
    if type(p) is not type(q):
        raise ConfigurationError(f"KL between different families: {type(p).__name__} vs {type(q).__name__}")
    if np.shape(p.params())[-1] != np.shape(q.params())[-1]:
        raise ConfigurationError("KL between distributions of different dimension")


# Functional aliases mirroring the method API.

def log_prob(dist, action):
    return dist.log_prob(action)


def sample(dist, rng):
    return dist.sample(rng)


def entropy(dist):
    return dist.entropy()


def kl(p, q):
    return p.kl(q)
