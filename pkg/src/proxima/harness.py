"""Ablation suite with normalized scores, objective interpolation, clip geometry and plot-ready CSVs."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import ActorCritic, AgentParams
from .errors import ConfigurationError, ProximaError
from .objectives import Batch, ObjectiveConfig, clip_term, klpen_loss, combined_loss
from .rollout import build_advantages, collect_segments
from .trainer import TrainConfig, init_state, load_checkpoint, load_params, run_episodes, train

log = logging.getLogger(__name__)

DEFAULT_VARIANTS = ("noclip", "clip:0.1", "clip:0.2", "clip:0.3")
DEFAULT_ENVS = ("point_mass", "chain:9")


# -- suite ---------------------------------------------------------------------------

def normalize_score(score: float, random_score: float, best_score: float) -> float:
    """Affine map sending the random-policy score to 0 and the best score to 1."""
    if best_score == random_score:
        return 0.0
    return (score - random_score) / (best_score - random_score)


def random_policy_score(env_name: str, seed: int, episodes: int = 100) -> float:
    """Mean return of a freshly initialized (untrained, sampling) policy over ``episodes``."""
    state = init_state(TrainConfig.preset(env_name, seed=seed))
    env = state.actors[0].env
    rng = np.random.default_rng(seed)
    policy = state.model.policy_fn(state.params, deterministic=False, rng=rng)
    returns, _ = run_episodes(policy, env, episodes, seed)
    return float(np.mean(returns[-100:]))


@dataclass
class SuiteResult:
    runs: list                       # dicts: env, variant, seed, score, status, normalized
    random_scores: dict
    best_scores: dict
    per_variant: dict = field(default_factory=dict)       # variant -> pooled normalized mean
    per_env_variant: dict = field(default_factory=dict)   # (env, variant) -> normalized mean

    @property
    def failures(self) -> list:
        return [r for r in self.runs if r["status"] != "ok"]

    def write(self, out_dir) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        runs_path = out_dir / "suite_runs.csv"
        with runs_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["env", "variant", "seed", "status", "score", "normalized"])
            for r in self.runs:
                w.writerow([r["env"], r["variant"], r["seed"], r["status"], repr(r["score"]), repr(r["normalized"])])
        table_path = out_dir / "suite_table.csv"
        with table_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "env", "avg_normalized_score"])
            for v, s in self.per_variant.items():
                w.writerow([v, "pooled", repr(s)])
            for (e, v), s in self.per_env_variant.items():
                w.writerow([v, e, repr(s)])
        anchors_path = out_dir / "suite_anchors.csv"
        with anchors_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["env", "random_score", "best_score"])
            for e in self.random_scores:
                w.writerow([e, repr(self.random_scores[e]), repr(self.best_scores.get(e, math.nan))])
        return [runs_path, table_path, anchors_path]


def _cell_config(env_name: str, variant: str, seed: int, budget: int, overrides: dict) -> TrainConfig:
    preset = TrainConfig.preset(env_name, seed=seed, total_timesteps=budget, **overrides)
    base = preset.objective
    obj = ObjectiveConfig.parse(variant, c1=base.c1, c2=base.c2, shared_network=base.shared_network)
    preset.objective = obj
    return preset


def _run_cell(args):
    env_name, variant, seed, budget, overrides, cell_dir = args
    cfg = _cell_config(env_name, variant, seed, budget, overrides)
    try:
        res = train(cfg, run_dir=cell_dir)
    except (ProximaError, FloatingPointError) as exc:
        return {"env": env_name, "variant": variant, "seed": seed, "score": math.nan, "status": f"failed: {exc}"}
    returns = list(res.state.recent_returns)
    score = float(np.mean(returns)) if returns else math.nan
    return {"env": env_name, "variant": variant, "seed": seed, "score": score,
            "status": "ok" if returns else "failed: no completed episodes"}


def score_suite(runs: list, random_scores: dict) -> SuiteResult:
    """Attach normalized scores; the best successful run per env defines 1."""
    best = {}
    for r in runs:
        if r["status"] == "ok":
            best[r["env"]] = max(best.get(r["env"], -math.inf), r["score"])
    per_variant = defaultdict(list)
    per_env_variant = defaultdict(list)
    for r in runs:
        if r["status"] != "ok":
            r["normalized"] = math.nan
            continue
        r["normalized"] = normalize_score(r["score"], random_scores[r["env"]], best[r["env"]])
        per_variant[r["variant"]].append(r["normalized"])
        per_env_variant[(r["env"], r["variant"])].append(r["normalized"])
    return SuiteResult(
        runs, dict(random_scores), best,
        {v: float(np.mean(s)) for v, s in per_variant.items()},
        {k: float(np.mean(s)) for k, s in per_env_variant.items()},
    )


def run_suite(envs=DEFAULT_ENVS, variants=DEFAULT_VARIANTS, seeds=(0, 1, 2), budget: int = 61_440,
              out_dir=None, workers: int = 1, overrides: dict | None = None) -> SuiteResult:
    """Train every (env, variant, seed) cell and score it by its last 100 episodes.

    A failing cell is recorded, warned about and left out of the averages.
    """
    if not envs or not variants or not seeds:
        raise ConfigurationError("suite needs at least one env, one variant and one seed")
    overrides = dict(overrides or {})
    out_dir = Path(out_dir) if out_dir is not None else None
    jobs = []
    for env_name in envs:
        for variant in variants:
            ObjectiveConfig.parse(variant)  # fail fast on typos
            for seed in seeds:
                cell_dir = None
                if out_dir is not None:
                    cell_dir = out_dir / "cells" / f"{env_name.replace(':', '')}_{variant.replace(':', '')}_s{seed}"
                jobs.append((env_name, variant, seed, budget, overrides, cell_dir))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_run_cell, jobs))
    else:
        runs = [_run_cell(j) for j in jobs]
    for r in runs:
        if r["status"] != "ok":
            warnings.warn(f"suite cell {r['env']}/{r['variant']}/seed {r['seed']} excluded: {r['status']}")
    random_scores = {e: random_policy_score(e, seeds[0]) for e in envs}
    result = score_suite(runs, random_scores)
    if out_dir is not None:
        result.write(out_dir)
    return result


# -- interpolation sweep --------------------------------------------------------------------

@dataclass
class InterpolationSweep:
    alphas: np.ndarray
    cpi: np.ndarray
    clip: np.ndarray
    kl: np.ndarray
    clip_fraction: np.ndarray
    klpen: np.ndarray
    epsilon: float
    beta: float

    COLUMNS = ("alpha", "cpi", "clip", "kl", "clip_fraction", "klpen")

    def rows(self):
        return zip(self.alphas, self.cpi, self.clip, self.kl, self.clip_fraction, self.klpen)

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for row in self.rows():
                w.writerow([repr(float(v)) for v in row])
        return path


def default_alphas() -> np.ndarray:
    return np.round(np.arange(0, 61) * 0.02, 10)


def interpolate_objectives(model: ActorCritic, old_params: AgentParams, new_params: AgentParams, batch: Batch,
                           alphas=None, epsilon: float = 0.2, beta: float = 1.0) -> InterpolationSweep:
    """Evaluate surrogate curves at ``old + alpha * (new - old)`` on a fixed batch."""
    if old_params.policy.shape != new_params.policy.shape or (
            (old_params.value is None) != (new_params.value is None)):
        raise ConfigurationError("checkpoints do not share a network spec")
    alphas = default_alphas() if alphas is None else np.asarray(alphas, dtype=np.float64)
    cfg = ObjectiveConfig("clip", epsilon=epsilon, c2=0.0)
    out = {k: np.zeros(alphas.size) for k in ("cpi", "clip", "kl", "clip_fraction", "klpen")}
    for i, a in enumerate(alphas):
        params = old_params.lerp(new_params, float(a)) if a != 0 else old_params
        rep, _ = combined_loss(batch, params, cfg, model, need_grad=False)
        pen = klpen_loss(batch, params, beta, model)
        out["clip"][i] = rep.policy_term
        out["clip_fraction"][i] = rep.clip_fraction
        out["kl"][i] = rep.mean_kl
        out["klpen"][i] = pen.total_loss
        out["cpi"][i] = pen.total_loss + beta * pen.mean_kl
    return InterpolationSweep(alphas, out["cpi"], out["clip"], out["kl"], out["clip_fraction"], out["klpen"],
                              epsilon, beta)


def batch_for_checkpoint(checkpoint) -> tuple[ActorCritic, AgentParams, Batch, TrainConfig]:
    """Recollect the batch a checkpoint's next iteration would train on."""
    state, config = load_checkpoint(checkpoint)
    segments = collect_segments(state.actors, state.model, state.params, config.horizon_T)
    estimates = build_advantages(segments, config.gamma, config.lam, config.normalize_advantages)
    return state.model, state.params, Batch.from_segments(segments, estimates), config


def interpolate_checkpoints(old_checkpoint, new_checkpoint, alphas=None, epsilon=None,
                            beta: float = 1.0) -> InterpolationSweep:
    model, old_params, batch, config = batch_for_checkpoint(old_checkpoint)
    new_params, _ = load_params(new_checkpoint)
    eps = config.objective.epsilon if epsilon is None else epsilon
    return interpolate_objectives(model, old_params, new_params, batch, alphas, eps, beta)


# -- clip geometry ------------------------------------------------------------------------------

def clip_geometry_table(adv_sign: str, epsilon: float = 0.2, r_grid=None) -> np.ndarray:
    """``(r, clip_term(r, A))`` rows for a single sample with ``A = +1`` or ``A = -1``."""
    signs = {"positive": 1.0, "+": 1.0, "pos": 1.0, "negative": -1.0, "-": -1.0, "neg": -1.0}
    if adv_sign not in signs:
        raise ConfigurationError(f"adv_sign must be 'positive' or 'negative', got {adv_sign!r}")
    r = np.linspace(0.01, 2.0, 200) if r_grid is None else np.asarray(r_grid, dtype=np.float64)
    if np.any(r <= 0):
        raise ConfigurationError("ratio grid must be positive")
    return np.column_stack([r, clip_term(r, signs[adv_sign], epsilon)])


# -- plot data -----------------------------------------------------------------------------------

def read_metrics(path) -> list[dict]:
    """Parse a metrics CSV; malformed rows are skipped with a line-numbered warning."""
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return rows
        for lineno, raw in enumerate(reader, 2):
            if len(raw) != len(header):
                warnings.warn(f"{path}:{lineno}: expected {len(header)} fields, got {len(raw)}; row skipped")
                continue
            try:
                rows.append({k: float(v) for k, v in zip(header, raw)})
            except ValueError:
                warnings.warn(f"{path}:{lineno}: non-numeric field; row skipped")
    return rows


LONG_COLUMNS = ["run_id", "x", "series", "y"]
BAND_COLUMNS = ["series", "x", "mean", "min", "max", "n_runs"]


def emit_plot_data(metrics_paths, out_dir, x: str = "timesteps_so_far",
                   series=("mean_episode_return", "final_kl", "clip_fraction", "entropy_term"),
                   run_ids=None) -> tuple[Path, Path]:
    """Write ``plot_long.csv`` (run_id, x, series, y) and ``plot_band.csv`` (per-x mean/min/max)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [Path(p) for p in metrics_paths]
    if run_ids is None:
        run_ids = [p.parent.name if p.name == "metrics.csv" else p.stem for p in paths]
    long_rows = []
    for rid, p in zip(run_ids, paths):
        for row in read_metrics(p):
            for s in series:
                if s in row:
                    long_rows.append((rid, row[x], s, row[s]))
    long_path = out_dir / "plot_long.csv"
    with long_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LONG_COLUMNS)
        for rid, xv, s, yv in long_rows:
            w.writerow([rid, repr(xv), s, repr(yv)])
    groups = defaultdict(list)
    for _, xv, s, yv in long_rows:
        groups[(s, xv)].append(yv)
    band_path = out_dir / "plot_band.csv"
    with band_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BAND_COLUMNS)
        for (s, xv) in sorted(groups, key=lambda k: (series.index(k[0]) if k[0] in series else 0, k[1])):
            ys = np.array(groups[(s, xv)])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                w.writerow([s, repr(xv), repr(float(np.nanmean(ys))), repr(float(np.nanmin(ys))),
                            repr(float(np.nanmax(ys))), len(ys)])
    return long_path, band_path


def read_long(path) -> list[tuple]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [(r[0], float(r[1]), r[2], float(r[3])) for r in reader]
