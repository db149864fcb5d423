import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from proxima.errors import ConfigurationError, NumericError
from proxima.mlp import (AdamState, MlpSpec, adam_step, flatten, init_params, mlp_backward,
                         mlp_forward, read_params, unflatten, write_params)

from conftest import assert_grad_close, central_diff, reference_forward


def test_param_count():
    spec = MlpSpec(3, 2, (64, 64))
    assert spec.n_params == (3 + 1) * 64 + (64 + 1) * 64 + (64 + 1) * 2
    assert init_params(spec, 0).size == spec.n_params


def test_zero_network_outputs_zero():
    spec = MlpSpec(5, 3, (7,))
    out, _ = mlp_forward(spec, np.zeros(spec.n_params), np.arange(5.0))
    assert np.array_equal(out, np.zeros(3))


def test_identity_linear_layer():
    spec = MlpSpec(4, 4, ())
    params = flatten([(np.eye(4), np.zeros(4))])
    x = np.array([0.5, -1.0, 2.0, 3.0])
    out, _ = mlp_forward(spec, params, x)
    assert np.array_equal(out, x)


def test_forward_matches_reference():
    spec = MlpSpec(2, 1, (3,))
    params = np.random.default_rng(7).standard_normal(spec.n_params)
    x = np.array([0.3, -1.2])
    out, _ = mlp_forward(spec, params, x)
    assert np.max(np.abs(out - reference_forward(spec.dims, params, x))) < 1e-12


def test_batched_forward_matches_rows():
    spec = MlpSpec(3, 2, (5, 4))
    params = init_params(spec, 3)
    X = np.random.default_rng(1).standard_normal((6, 3))
    out, _ = mlp_forward(spec, params, X)
    for i in range(6):
        assert np.allclose(out[i], mlp_forward(spec, params, X[i])[0], atol=1e-14)


def test_dimension_mismatch():
    spec = MlpSpec(3, 2, (4,))
    with pytest.raises(ConfigurationError):
        mlp_forward(spec, np.zeros(spec.n_params), np.zeros(2))
    with pytest.raises(ConfigurationError):
        mlp_forward(spec, np.zeros(spec.n_params + 1), np.zeros(3))
    _, cache = mlp_forward(spec, np.zeros(spec.n_params), np.zeros(3))
    with pytest.raises(ConfigurationError):
        mlp_backward(cache, np.zeros(3))


def test_backward_zero_cotangent():
    spec = MlpSpec(3, 2, (4,))
    _, cache = mlp_forward(spec, init_params(spec, 0), np.ones(3))
    assert np.array_equal(mlp_backward(cache, np.zeros(2)), np.zeros(spec.n_params))


def test_backward_linear_layer():
    spec = MlpSpec(3, 2, ())
    params = np.random.default_rng(0).standard_normal(spec.n_params)
    x = np.array([1.0, -2.0, 0.5])
    g = np.array([0.3, -0.7])
    _, cache = mlp_forward(spec, params, x)
    (gw, gb), = unflatten(spec, mlp_backward(cache, g))
    assert np.allclose(gw, np.outer(g, x), atol=0, rtol=0)
    assert np.array_equal(gb, g)


def test_backward_finite_differences_64x64():
    spec = MlpSpec(3, 2, (64, 64))
    rng = np.random.default_rng(11)
    params = init_params(spec, 11)
    x = rng.standard_normal(3)
    g = rng.standard_normal(2)
    _, cache = mlp_forward(spec, params, x)
    analytic = mlp_backward(cache, g)
    numeric = central_diff(lambda p: float(g @ mlp_forward(spec, p, x)[0]), params, h=1e-6)
    assert_grad_close(analytic, numeric, rel=1e-5)


@pytest.mark.parametrize("seed", range(20))
def test_backward_batched_random_specs(seed):
    rng = np.random.default_rng(seed)
    hidden = tuple(int(h) for h in rng.integers(1, 9, size=rng.integers(1, 3)))
    spec = MlpSpec(int(rng.integers(1, 5)), int(rng.integers(1, 4)), hidden)
    params = rng.standard_normal(spec.n_params)
    X = rng.standard_normal((4, spec.input_dim))
    G = rng.standard_normal((4, spec.output_dim))
    _, cache = mlp_forward(spec, params, X)
    numeric = central_diff(lambda p: float(np.sum(G * mlp_forward(spec, p, X)[0])), params)
    assert_grad_close(mlp_backward(cache, G), numeric, rel=1e-4)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.lists(st.integers(1, 10), max_size=3), st.integers(0, 2**31))
def test_flatten_round_trip(n_in, n_out, hidden, seed):
    spec = MlpSpec(n_in, n_out, tuple(hidden))
    params = np.random.default_rng(seed).standard_normal(spec.n_params)
    assert np.array_equal(flatten(unflatten(spec, params)), params)


def test_init_deterministic_and_zero_biases():
    spec = MlpSpec(4, 2)
    a, b = init_params(spec, 5), init_params(spec, 5)
    assert np.array_equal(a, b)
    for _, bias in unflatten(spec, a):
        assert np.all(bias == 0)
    assert not np.array_equal(a, init_params(spec, 6))


def test_init_rejects_zero_scale():
    with pytest.raises(ConfigurationError):
        init_params(MlpSpec(2, 2), 0, final_layer_scale=0.0)


def test_init_final_layer_scale_statistics():
    # ~10k final-layer weights per network; RMS scales with final_layer_scale
    spec = MlpSpec(3, 100, (100,))
    small = unflatten(spec, init_params(spec, 1, final_layer_scale=1e-2))[-1][0]
    unit = unflatten(spec, init_params(spec, 2, final_layer_scale=1.0))[-1][0]
    assert small.size >= 10_000
    ratio = np.sqrt(np.mean(small ** 2)) / np.sqrt(np.mean(unit ** 2))
    assert abs(ratio / 1e-2 - 1) < 0.05


def reference_adam(x0, grad_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    x, m, v = x0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        x = x - lr * mh / (vh ** 0.5 + eps)
    return x


def test_adam_zero_grad():
    state = AdamState.zeros(3, 0.1)
    p = np.array([1.0, 2.0, 3.0])
    new, st2 = adam_step(state, p, np.zeros(3))
    assert np.array_equal(new, p)
    assert st2.step_count == 1


@pytest.mark.parametrize("g", [1e-3, -0.5, 3.0, 1e4])
def test_adam_first_step_magnitude(g):
    lr = 0.01
    new, _ = adam_step(AdamState.zeros(1, lr), np.zeros(1), np.array([g]))
    assert 0.999 * lr <= abs(new[0]) <= lr


def test_adam_matches_reference_on_quadratic():
    state = AdamState.zeros(1, 0.1)
    x = np.array([1.0])
    for _ in range(10):
        x, state = adam_step(state, x, 2 * x)
    assert abs(x[0] - reference_adam(1.0, lambda v: 2 * v, 0.1, 10)) < 1e-12


def test_adam_maximize_equals_minimize_negated():
    rng = np.random.default_rng(0)
    p = rng.standard_normal(8)
    s1 = s2 = AdamState.zeros(8, 0.05)
    p1 = p2 = p
    for _ in range(5):
        g = rng.standard_normal(8)
        p1, s1 = adam_step(s1, p1, g, maximize=True)
        p2, s2 = adam_step(s2, p2, -g)
    assert np.array_equal(p1, p2)


def test_adam_non_finite():
    with pytest.raises(NumericError, match="step 1"):
        adam_step(AdamState.zeros(2, 0.1), np.zeros(2), np.array([1.0, np.nan]))


def test_checkpoint_round_trip(tmp_path):
    spec = MlpSpec(4, 2, (64, 64))
    values = np.concatenate([init_params(spec, 0), [-0.5, 0.25]])
    path = tmp_path / "p.bin"
    write_params(path, spec, values, extra=2)
    raw = path.read_bytes()
    assert raw.startswith(b"PROXIMA1\n4 64 64 2\n2\n")
    spec2, values2, extra = read_params(path)
    assert spec2 == spec and extra == 2
    assert np.array_equal(values2, values)
    assert np.frombuffer(raw[-8:], dtype="<f8")[0] == 0.25
