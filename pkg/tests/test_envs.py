import numpy as np
import pytest
import cvxpy as cp

from proxima.envs import (ChainEnv, PointMassEnv, chain_env, chain_optimal_actions, chain_optimal_values,
                          env_reset, env_step, make_env, point_mass_controller, point_mass_env,
                          point_mass_optimal_return)
from proxima.errors import ConfigurationError, UsageError
from proxima.trainer import evaluate_policy, oracle_fraction

# frozen from point_mass_optimal_return([1, 1, 0, 0]); cross-checked below by direct optimization
OPTIMAL_RETURN_1100 = -26.172271432838357


def simulate(start, actions):
    env = PointMassEnv(0)
    env.reset(start=start)
    return sum(env.step(a).reward for a in actions)


def test_point_mass_fixed_point():
    env = point_mass_env(0)
    env.reset(start=[0, 0, 0, 0])
    total = 0.0
    for _ in range(100):
        r = env.step(np.zeros(2))
        assert r.reward == 0.0
        total += r.reward
    assert total == 0.0 and r.truncated and not r.terminal


def test_point_mass_clamps_actions():
    a, b = PointMassEnv(0), PointMassEnv(0)
    a.reset(start=[0.2, -0.1, 0.3, 0.0])
    b.reset(start=[0.2, -0.1, 0.3, 0.0])
    ra, rb = a.step([2.0, 2.0]), b.step([1.0, 1.0])
    assert ra.reward == rb.reward
    assert np.array_equal(ra.observation, rb.observation)


def test_point_mass_dynamics_constants():
    env = PointMassEnv(0)
    env.reset(start=[0.5, -0.5, 1.0, -2.0])
    r = env.step([0.5, -1.0])
    assert r.reward == pytest.approx(-(0.25 + 0.25) - 0.01 * (0.25 + 1.0))
    assert np.allclose(r.observation, [0.55, -0.6, 0.95 + 0.05, -1.9 - 0.1])


def test_point_mass_truncation_and_usage_error():
    env = PointMassEnv(3)
    env.reset()
    for t in range(99):
        r = env.step(np.zeros(2))
        assert not r.truncated
    r = env.step(np.zeros(2))
    assert r.truncated and not r.terminal
    with pytest.raises(UsageError):
        env.step(np.zeros(2))


def test_point_mass_start_distribution():
    env = PointMassEnv(4)
    starts = np.array([env.reset()[:2] for _ in range(2000)])
    assert np.all(np.abs(starts) <= 1.0)
    assert abs(starts.mean()) < 0.05


def test_determinism():
    rng = np.random.default_rng(0)
    actions = rng.uniform(-1.5, 1.5, size=(100, 2))
    runs = []
    for _ in range(2):
        env = make_env("point_mass")
        obs = [env_reset(env, seed=9)]
        rewards = []
        for a in actions:
            r = env_step(env, a)
            obs.append(r.observation)
            rewards.append(r.reward)
        runs.append((np.array(obs), np.array(rewards)))
    assert np.array_equal(runs[0][0], runs[1][0]) and np.array_equal(runs[0][1], runs[1][1])


def test_point_mass_reward_bounds():
    env = PointMassEnv(1)
    rng = np.random.default_rng(1)
    obs = env.reset()
    for _ in range(100):
        pos = obs[:2]
        r = env.step(rng.uniform(-3, 3, 2))
        assert -(pos @ pos + 0.02) <= r.reward <= 0
        obs = r.observation


def test_point_mass_oracle_value():
    ret, actions = point_mass_optimal_return([1, 1, 0, 0])
    assert ret == pytest.approx(OPTIMAL_RETURN_1100, abs=1e-9)
    assert simulate([1, 1, 0, 0], actions) == pytest.approx(ret, abs=1e-9)
    assert np.all(np.abs(actions) <= 1.0)


@pytest.mark.parametrize("start", [[1, 1, 0, 0], [-0.4, 0.7, 0.0, 0.0], [0.9, -0.2, 0.5, -1.0]])
def test_point_mass_oracle_against_direct_optimization(start):
    # independent route: state trajectory as variables, dynamics as equality constraints
    ret, _ = point_mass_optimal_return(start)
    H = 100
    x, v, a = cp.Variable((H, 2)), cp.Variable((H, 2)), cp.Variable((H, 2))
    cons = [x[0] == np.array(start[:2], float), v[0] == np.array(start[2:], float), cp.abs(a) <= 1]
    cons += [x[1:] == x[:-1] + 0.05 * v[:-1], v[1:] == 0.95 * v[:-1] + 0.1 * a[:-1]]
    prob = cp.Problem(cp.Minimize(cp.sum_squares(x) + 0.01 * cp.sum_squares(a)), cons)
    prob.solve(solver=cp.CLARABEL)
    assert -prob.value <= ret + 1e-6          # nothing beats the oracle
    assert -prob.value == pytest.approx(ret, rel=1e-7)
    assert simulate(start, np.clip(a.value, -1, 1)) == pytest.approx(ret, rel=1e-5)


def test_controller_near_oracle():
    env = PointMassEnv(0)
    starts = [np.r_[np.random.default_rng(s).uniform(-1, 1, 2), 0, 0] for s in range(20)]
    for s in starts + [np.array([1.0, 1.0, 0, 0])]:
        env.reset(start=s)
        total, obs = 0.0, s
        for _ in range(100):
            r = env.step(point_mass_controller(obs, 20, 10))
            total += r.reward
            obs = r.observation
        opt, _ = point_mass_optimal_return(s)
        passive = -100 * float(s[:2] @ s[:2])
        assert oracle_fraction(total, opt, passive) >= 0.95


def test_chain_walk():
    env = chain_env(5)
    obs = env.reset()
    assert obs.sum() == 1 and obs[2] == 1
    r1 = env.step(1)
    r2 = env.step(1)
    assert (r1.reward, r1.terminal) == (0.0, False)
    assert (r2.reward, r2.terminal, r2.truncated) == (1.0, True, False)
    with pytest.raises(UsageError):
        env.step(1)


def test_chain_left_end_and_truncation():
    env = ChainEnv(5)
    env.reset()
    env.step(0)
    r = env.step(0)
    assert r.reward == 0.01 and r.terminal
    env.reset()
    for t in range(10):
        r = env.step(t % 2)
        assert r.observation.sum() == 1
    assert r.truncated and not r.terminal


def test_chain_rewards_only_known_values():
    env = ChainEnv(7)
    rng = np.random.default_rng(0)
    env.reset()
    for _ in range(500):
        r = env.step(int(rng.integers(2)))
        assert r.reward in (0.0, 0.01, 1.0)
        assert not (r.terminal and r.truncated)
        if r.terminal or r.truncated:
            env.reset()


def test_chain_value_iteration():
    gamma = 0.99
    V = chain_optimal_values(9, gamma)
    # always-right from the centre: 3 discounted zero steps, then the goal
    assert V[4] == pytest.approx(gamma ** 3, abs=1e-12)
    assert np.all(chain_optimal_actions(9, gamma)[1:-1] == 1)
    # short chain: left distractor can never beat the goal either
    assert chain_optimal_values(3, gamma)[1] == pytest.approx(1.0)


def test_chain_min_size():
    with pytest.raises(ConfigurationError):
        ChainEnv(2)


def test_make_env_names():
    assert isinstance(make_env("chain:9"), ChainEnv)
    assert make_env("chain:9").observation_dim == 9
    with pytest.raises(ConfigurationError):
        make_env("cartpole")


def test_evaluate_controller_from_goal_is_zero():
    env = PointMassEnv(0)
    env.reset = lambda seed=None, start=None, _r=env.reset: _r(seed, start=[0, 0, 0, 0])
    mean, std = evaluate_policy(lambda o: np.zeros(2), env, episodes=1, seed=0)
    assert mean == 0.0 and std == 0.0


def test_state_round_trip():
    env = PointMassEnv(2)
    env.reset()
    env.step([0.3, 0.1])
    snap = env.get_state()
    a = [env.step([0.1, 0.1]).observation for _ in range(3)]
    env.set_state(snap)
    b = [env.step([0.1, 0.1]).observation for _ in range(3)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
