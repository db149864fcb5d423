import csv
import math

import numpy as np
import pytest

from proxima import harness
from proxima.agent import AgentParams
from proxima.errors import ConfigurationError
from proxima.harness import (clip_geometry_table, emit_plot_data, interpolate_objectives, normalize_score,
                             read_long, score_suite)
from proxima.trainer import METRIC_COLUMNS, TrainConfig, init_state, train


def test_normalize_anchors():
    assert normalize_score(-3.0, -3.0, 5.0) == 0.0
    assert normalize_score(5.0, -3.0, 5.0) == 1.0
    assert normalize_score(1.0, -3.0, 5.0) == 0.5


def test_score_suite_best_is_one_and_failures_excluded():
    runs = [
        {"env": "a", "variant": "x", "seed": 0, "score": 10.0, "status": "ok"},
        {"env": "a", "variant": "y", "seed": 0, "score": 4.0, "status": "ok"},
        {"env": "a", "variant": "y", "seed": 1, "score": math.nan, "status": "failed: boom"},
        {"env": "b", "variant": "x", "seed": 0, "score": -1.0, "status": "ok"},
        {"env": "b", "variant": "y", "seed": 0, "score": -5.0, "status": "ok"},
    ]
    res = score_suite(runs, {"a": 0.0, "b": -5.0})
    assert res.per_env_variant[("a", "x")] == 1.0
    assert res.per_env_variant[("b", "y")] == 0.0
    assert res.per_variant["x"] == 1.0
    assert res.per_variant["y"] == pytest.approx(0.2)
    assert len(res.failures) == 1 and math.isnan(runs[2]["normalized"])


def test_single_cell_suite_scores_one(monkeypatch, tmp_path):
    monkeypatch.setattr(harness, "random_policy_score", lambda env, seed: -50.0)
    res = harness.run_suite(["chain:5"], ["clip:0.2"], [0], budget=1024, out_dir=tmp_path,
                            overrides=dict(hidden_dims=(8,)))
    assert res.per_variant == {"clip:0.2": 1.0}
    rows = list(csv.reader((tmp_path / "suite_table.csv").open()))
    assert rows[0] == ["variant", "env", "avg_normalized_score"]


def test_failed_cell_warns(monkeypatch):
    real = harness.train

    def flaky(cfg, run_dir=None):
        if cfg.seed == 1:
            raise harness.ProximaError("diverged")
        return real(cfg, run_dir=run_dir)

    monkeypatch.setattr(harness, "train", flaky)
    monkeypatch.setattr(harness, "random_policy_score", lambda env, seed: 0.0)
    with pytest.warns(UserWarning, match="seed 1 excluded"):
        res = harness.run_suite(["chain:5"], ["clip:0.2"], [0, 1], budget=1024, overrides=dict(hidden_dims=(8,)))
    assert len(res.failures) == 1
    assert "clip:0.2" in res.per_variant


def test_suite_rejects_empty_grid():
    with pytest.raises(ConfigurationError):
        harness.run_suite([], ["clip:0.2"], [0], 1024)


def test_clip_geometry_examples():
    pos = clip_geometry_table("positive", 0.2, [0.5, 1.0, 1.2, 2.0])
    np.testing.assert_allclose(pos[:, 1], [0.5, 1.0, 1.2, 1.2])
    neg = clip_geometry_table("negative", 0.2, [0.5, 0.8, 1.0, 2.0])
    np.testing.assert_allclose(neg[:, 1], [-0.8, -0.8, -1.0, -2.0])


def test_clip_geometry_errors():
    with pytest.raises(ConfigurationError):
        clip_geometry_table("sideways", 0.2)
    with pytest.raises(ConfigurationError):
        clip_geometry_table("positive", 0.2, [0.0, 1.0])


@pytest.fixture(scope="module")
def first_iteration_pair():
    cfg = TrainConfig.preset("point_mass", horizon_T=64, num_actors_N=2, minibatch_M=32, hidden_dims=(16,),
                             total_timesteps=128, seed=4)
    state = init_state(cfg)
    old = state.params.copy()
    from proxima.objectives import Batch
    from proxima.rollout import build_advantages, collect_segments
    segs = collect_segments(state.actors, state.model, state.params, cfg.horizon_T)
    batch = Batch.from_segments(segs, build_advantages(segs, cfg.gamma, cfg.lam))
    res = train(cfg, max_iterations=1)
    return state.model, old, res.state.params, batch


def test_interpolation_identity_and_bound(first_iteration_pair):
    model, old, new, batch = first_iteration_pair
    sweep = interpolate_objectives(model, old, new, batch)
    assert sweep.alphas[0] == 0.0 and sweep.alphas[-1] == pytest.approx(1.2) and len(sweep.alphas) == 61
    assert sweep.clip[0] == pytest.approx(sweep.cpi[0], abs=1e-10)
    assert sweep.cpi[0] == pytest.approx(np.mean(batch.advantages), abs=1e-10)
    assert abs(sweep.kl[0]) < 1e-10
    assert np.all(sweep.clip <= sweep.cpi + 1e-12)
    np.testing.assert_allclose(sweep.klpen, sweep.cpi - sweep.beta * sweep.kl, atol=1e-12)


def test_interpolation_spec_mismatch(first_iteration_pair):
    model, old, _, batch = first_iteration_pair
    with pytest.raises(ConfigurationError):
        interpolate_objectives(model, old, AgentParams(old.policy[:-1], old.value), batch)


def write_metrics(path, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow(r)


def metric_row(t, ret):
    row = [0.0] * len(METRIC_COLUMNS)
    row[METRIC_COLUMNS.index("timesteps_so_far")] = t
    row[METRIC_COLUMNS.index("mean_episode_return")] = ret
    return [repr(float(v)) for v in row]


def test_plot_data_empty_is_header_only(tmp_path):
    write_metrics(tmp_path / "m.csv", [])
    long_path, band_path = emit_plot_data([tmp_path / "m.csv"], tmp_path / "out")
    assert long_path.read_text().strip() == "run_id,x,series,y"
    assert band_path.read_text().strip() == "series,x,mean,min,max,n_runs"


def test_plot_data_band_and_roundtrip(tmp_path):
    write_metrics(tmp_path / "s0.csv", [metric_row(10, -5.0), metric_row(20, -1.0 / 3.0)])
    write_metrics(tmp_path / "s1.csv", [metric_row(10, -7.0), metric_row(20, -2.0)])
    long_path, band_path = emit_plot_data([tmp_path / "s0.csv", tmp_path / "s1.csv"], tmp_path / "out",
                                          series=("mean_episode_return",))
    rows = read_long(long_path)
    assert rows[1] == ("s0", 20.0, "mean_episode_return", -1.0 / 3.0)
    band = list(csv.DictReader(band_path.open()))
    assert band[0] == {"series": "mean_episode_return", "x": "10.0", "mean": "-6.0", "min": "-7.0",
                       "max": "-5.0", "n_runs": "2"}


def test_plot_data_skips_malformed_rows(tmp_path):
    path = tmp_path / "m.csv"
    write_metrics(path, [metric_row(10, -5.0)])
    with path.open("a") as fh:
        fh.write("1,2,3\n")
        fh.write(",".join(["oops"] * len(METRIC_COLUMNS)) + "\n")
    with pytest.warns(UserWarning) as record:
        long_path, _ = emit_plot_data([path], tmp_path / "out", series=("mean_episode_return",))
    messages = [str(w.message) for w in record]
    assert any("m.csv:3" in m for m in messages) and any("m.csv:4" in m for m in messages)
    assert len(read_long(long_path)) == 1
