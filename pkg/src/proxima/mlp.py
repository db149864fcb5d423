"""Dense tanh MLPs with a hand-written backward pass, Adam, and flat parameter vectors.

Parameters of a network live in one flat float64 vector.  Layout is
layer-major: for each layer the weight matrix of shape ``(out, in)`` in
row-major order, followed by its bias vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, NumericError

MAGIC = b"PROXIMA1"


@dataclass(frozen=True)
class MlpSpec:
    """Shape of a tanh MLP with an identity output layer."""

    input_dim: int
    output_dim: int
    hidden_dims: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ConfigurationError(f"all layer sizes must be positive, got {dims}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        d = self.dims
        return [(d[i + 1], d[i]) for i in range(len(d) - 1)]

    @property
    def n_params(self) -> int:
        return sum(o * (i + 1) for o, i in self.layer_shapes)


def unflatten(spec: MlpSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into ``[(W, b), ...]`` views (no copy)."""
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.size != spec.n_params:
        raise ConfigurationError(
            f"parameter vector has {params.size} entries, spec {spec.dims} needs {spec.n_params}"
        )
    layers = []
    pos = 0
    for out_dim, in_dim in spec.layer_shapes:
        w = params[pos:pos + out_dim * in_dim].reshape(out_dim, in_dim)
        pos += out_dim * in_dim
        b = params[pos:pos + out_dim]
        pos += out_dim
        layers.append((w, b))
    return layers


def flatten(layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    parts = []
    for w, b in layers:
        parts.append(np.asarray(w, dtype=np.float64).ravel())
        parts.append(np.asarray(b, dtype=np.float64).ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


@dataclass
class ForwardCache:
    spec: MlpSpec
    layers: list
    # activations[0] is the input; activations[i] is the tanh output of hidden layer i
    activations: list
    squeeze: bool


def mlp_forward(spec: MlpSpec, params: np.ndarray, x) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate the network on one input vector or a ``(batch, input_dim)`` array."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != spec.input_dim:
        raise ConfigurationError(f"input of shape {x.shape} does not match input_dim={spec.input_dim}")
    layers = unflatten(spec, params)
    activations = [h]
    for w, b in layers[:-1]:
        h = np.tanh(h @ w.T + b)
        activations.append(h)
    w, b = layers[-1]
    out = h @ w.T + b
    cache = ForwardCache(spec, layers, activations, squeeze)
    return (out[0] if squeeze else out), cache


def mlp_backward(cache: ForwardCache, upstream_grad) -> np.ndarray:
    """Vector-Jacobian product of the network output w.r.t. its parameters.

    For a batched forward pass the parameter gradient is summed over the batch.
    """
    g = np.asarray(upstream_grad, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :] if g.ndim == 1 else g
    n = cache.activations[0].shape[0]
    if g.shape != (n, cache.spec.output_dim):
        raise ConfigurationError(
            f"upstream gradient of shape {np.shape(upstream_grad)} does not match output "
            f"({n}, {cache.spec.output_dim})"
        )
    grads = []
    for idx in range(len(cache.layers) - 1, -1, -1):
        w, _ = cache.layers[idx]
        h_in = cache.activations[idx]
        grads.append((g.T @ h_in, g.sum(axis=0)))
        if idx > 0:
            g = (g @ w) * (1.0 - h_in * h_in)
    grads.reverse()
    return flatten(grads)


def init_params(spec: MlpSpec, seed: int, final_layer_scale: float = 1.0) -> np.ndarray:
    """Fan-in scaled normal init: ``W ~ N(0, 1/fan_in)``, biases zero.

    The last layer's weights are multiplied by ``final_layer_scale``; 0.01 keeps
    a fresh policy close to uniform / zero-mean.
    """
    if not final_layer_scale > 0:
        raise ConfigurationError(f"final_layer_scale must be > 0, got {final_layer_scale}")
    rng = np.random.default_rng(seed)
    layers = []
    shapes = spec.layer_shapes
    for i, (out_dim, in_dim) in enumerate(shapes):
        w = rng.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim)
        if i == len(shapes) - 1:
            w = w * final_layer_scale
        layers.append((w, np.zeros(out_dim)))
    return flatten(layers)


@dataclass
class AdamState:
    stepsize: float
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_guard: float = 1e-8

    @classmethod
    def zeros(cls, n: int, stepsize: float) -> "AdamState":
        return cls(stepsize=stepsize, m=np.zeros(n), v=np.zeros(n))

    def copy(self) -> "AdamState":
        return AdamState(self.stepsize, self.m.copy(), self.v.copy(), self.step_count,
                         self.beta1, self.beta2, self.eps_guard)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray,
              maximize: bool = False) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Returns new params and a new state."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if not (params.shape == grad.shape == state.m.shape == state.v.shape):
        raise ConfigurationError(
            f"length mismatch: params {params.shape}, grad {grad.shape}, moments {state.m.shape}"
        )
    if state.stepsize < 0:
        raise ConfigurationError(f"stepsize must be non-negative, got {state.stepsize}")
    if not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(grad))
        raise NumericError(
            f"non-finite gradient at Adam step {state.step_count + 1} "
            f"({bad.size} entries, first index {bad[0]})"
        )
    if maximize:
        grad = -grad
    t = state.step_count + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.stepsize * m_hat / (np.sqrt(v_hat) + state.eps_guard)
    new_state = AdamState(state.stepsize, m, v, t, state.beta1, state.beta2, state.eps_guard)
    return new_params, new_state


# -- checkpoint records -------------------------------------------------------

def write_params(path, spec: MlpSpec, values: np.ndarray, extra: int = 0) -> None:
    """Write one parameter record.

    Layout::

        b"PROXIMA1\\n"
        b"<d0> <d1> ... <dL>\\n"      layer sizes, decimal
        b"<extra>\\n"                 trailing non-network floats (e.g. log-std)
        (n_params + extra) float64, little-endian
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size != spec.n_params + extra:
        raise ConfigurationError(
            f"record holds {values.size} floats, expected {spec.n_params} + {extra}"
        )
    header = MAGIC + b"\n" + " ".join(str(d) for d in spec.dims).encode() + b"\n" + f"{extra}\n".encode()
    Path(path).write_bytes(header + values.astype("<f8").tobytes())


def read_params(path) -> tuple[MlpSpec, np.ndarray, int]:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != MAGIC:
        raise ConfigurationError(f"{path}: not a PROXIMA1 parameter record")
    dims = [int(tok) for tok in parts[1].split()]
    if len(dims) < 2:
        raise ConfigurationError(f"{path}: malformed dims line {parts[1]!r}")
    extra = int(parts[2])
    spec = MlpSpec(dims[0], dims[-1], tuple(dims[1:-1]))
    n = spec.n_params + extra
    payload = parts[3]
    if len(payload) != 8 * n:
        raise ConfigurationError(f"{path}: payload has {len(payload)} bytes, expected {8 * n}")
    return spec, np.frombuffer(payload, dtype="<f8").astype(np.float64), extra
