"""Command-line entry point: ``proxima <train|eval|suite|interp|clipgeom|plotdata> ...``.

Exit codes: 0 success, 1 usage/configuration error, 2 numeric failure,
3 suite finished with some failed cells.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import harness, plotting
from .config import ALIASES, dump_config, load_config, parse_pairs
from .envs import make_env
from .errors import ConfigurationError, NumericError, UsageError
from .trainer import (
    chain_greedy_is_optimal, evaluate_params, load_checkpoint, point_mass_score, train,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("proxima")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad arguments; 2 is reserved for numeric failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable), e.g. --set objective.epsilon=0.1")
    p.add_argument("--run-dir", type=Path, help="output directory (default runs/<timestamp>-<hash>)")
    p.add_argument("--runs-root", type=Path, default=Path("runs"))
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="proxima", description="Clipped-surrogate policy optimization on toy environments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one agent")
    _common(p)
    p.add_argument("--resume", type=Path, help="checkpoint directory to resume from")
    p.add_argument("--max-iterations", type=int)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p)
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--stochastic", action="store_true", help="sample actions instead of the mode")
    p.add_argument("--seed", type=int, default=10_000)

    p = sub.add_parser("suite", help="ablation grid with normalized scores")
    _common(p)
    p.add_argument("--envs", default=",".join(harness.DEFAULT_ENVS))
    p.add_argument("--variants", default=",".join(harness.DEFAULT_VARIANTS))
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--budget", type=int, default=61_440)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("interp", help="surrogate curves between two parameter vectors")
    _common(p)
    p.add_argument("--old", type=Path, help="checkpoint the batch is collected under")
    p.add_argument("--new", type=Path, help="updated checkpoint")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--alpha-max", type=float, default=1.2)
    p.add_argument("--alpha-step", type=float, default=0.02)

    p = sub.add_parser("clipgeom", help="single-sample clipped term as a function of the ratio")
    _common(p)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--r-max", type=float, default=2.0)
    p.add_argument("--points", type=int, default=200)

    p = sub.add_parser("plotdata", help="merge metrics CSVs into long and band CSVs")
    _common(p)
    p.add_argument("metrics", nargs="+", type=Path)
    p.add_argument("--x", default="timesteps_so_far")
    p.add_argument("--series", default="mean_episode_return,final_kl,clip_fraction,entropy_term")
    return parser


def _run_dir(args, config) -> Path:
    if args.run_dir is not None:
        path = args.run_dir
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = args.runs_root / f"{stamp}-{config.digest()[:8]}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(run_dir: Path, command: str, config, artifacts) -> Path:
    root = run_dir.resolve()
    files = set()
    for a in map(Path, artifacts):
        if a.is_dir():
            files.update(f for f in a.rglob("*") if f.is_file())
        else:
            files.add(a)
    rels = sorted(str(f.resolve().relative_to(root)) for f in files)
    manifest = {"command": command, "config": config.to_dict(), "artifacts": rels}
    path = run_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def _csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _learning_curve(run_dir: Path, metrics_paths, run_ids=None) -> list[Path]:
    long_path, band_path = harness.emit_plot_data(metrics_paths, run_dir, run_ids=run_ids)
    with band_path.open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        band = [(r[0], float(r[1]), float(r[2]), float(r[3]), float(r[4])) for r in reader]
    fig = plotting.plot_learning_curves(band, run_dir / "learning_curve.png")
    return [long_path, band_path, fig]


def cmd_train(args, config, run_dir):
    result = train(config, run_dir=run_dir, resume_from=args.resume, max_iterations=args.max_iterations)
    artifacts = list(result.artifacts)
    artifacts += _learning_curve(run_dir, [run_dir / "metrics.csv"], run_ids=[run_dir.name])
    (run_dir / "config.txt").write_text(dump_config(result.config))
    artifacts.append(run_dir / "config.txt")
    last = result.metrics[-1] if result.metrics else None
    if last is not None:
        print(f"iterations={last.iteration} timesteps={last.timesteps_so_far} "
              f"mean_episode_return={last.mean_episode_return:.6g}")
    return EXIT_OK, artifacts


def cmd_eval(args, config, run_dir):
    state, ckpt_config = load_checkpoint(args.checkpoint)
    env = make_env(ckpt_config.env_name)
    mean, std = evaluate_params(state.model, state.params, env, args.episodes,
                                deterministic=not args.stochastic, seed=args.seed)
    rows = [("mean_return", mean), ("std_return", std)]
    if ckpt_config.env_name == "point_mass":
        rng = np.random.default_rng(args.seed)
        score = point_mass_score(state.model.policy_fn(state.params, not args.stochastic, rng),
                                 args.episodes, args.seed)
        rows += [(k, v) for k, v in score.items() if k != "mean_return"]
    else:
        rows.append(("greedy_optimal", float(chain_greedy_is_optimal(
            state.model, state.params, ckpt_config.env_name, ckpt_config.gamma))))
    path = _csv(run_dir / "eval.csv", ["metric", "value"], [(k, repr(float(v))) for k, v in rows])
    for k, v in rows:
        print(f"{k}={v:.6g}")
    return EXIT_OK, [path]


def _split(text: str, cast=str):
    items = [t.strip() for t in text.split(",") if t.strip()]
    try:
        return [cast(t) for t in items]
    except ValueError:
        raise ConfigurationError(f"cannot parse list {text!r}") from None


def cmd_suite(args, config, run_dir):
    # forward only keys the user set explicitly; each env otherwise keeps its preset
    set_keys = {ALIASES.get(k, k) for k in parse_pairs(args.overrides)}
    if args.config is not None:
        set_keys |= {ALIASES.get(k, k) for k in parse_pairs(args.config.read_text().splitlines())}
    forwardable = ("horizon_T", "num_actors_N", "epochs_K", "minibatch_M", "gamma", "lam", "stepsize",
                   "hidden_dims", "log_std_init", "normalize_advantages", "anneal")
    overrides = {k: getattr(config, k) for k in forwardable if k in set_keys}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = harness.run_suite(_split(args.envs), _split(args.variants), _split(args.seeds, int),
                                   args.budget, out_dir=run_dir, workers=args.workers, overrides=overrides)
    for w in caught:
        if "excluded" in str(w.message):
            log.warning("%s", w.message)
    artifacts = [run_dir / n for n in ("suite_runs.csv", "suite_table.csv", "suite_anchors.csv")]
    artifacts.append(plotting.plot_suite(result, run_dir / "suite_scores.png"))
    cell_metrics = sorted((run_dir / "cells").glob("*/metrics.csv"))
    if cell_metrics:
        artifacts += _learning_curve(run_dir, cell_metrics)
    print("variant,avg_normalized_score")
    for v, s in result.per_variant.items():
        print(f"{v},{s:.4f}")
    return (EXIT_PARTIAL if result.failures else EXIT_OK), artifacts


def cmd_interp(args, config, run_dir):
    if (args.old is None) != (args.new is None):
        raise UsageError("--old and --new must be given together")
    old, new = args.old, args.new
    artifacts = []
    if old is None:
        # one fresh iteration from the configured seed gives the pair
        config.checkpoint_every = 1
        res = train(config, run_dir=run_dir / "train", max_iterations=1)
        artifacts += res.artifacts
        old, new = run_dir / "train" / "checkpoints" / "iter_0000", run_dir / "train" / "checkpoints" / "iter_0001"
    n = int(round(args.alpha_max / args.alpha_step))
    alphas = np.round(np.arange(n + 1) * args.alpha_step, 10)
    sweep = harness.interpolate_checkpoints(old, new, alphas, args.epsilon, args.beta)
    artifacts.append(sweep.write_csv(run_dir / "interpolation.csv"))
    artifacts.append(plotting.plot_interpolation(sweep, run_dir / "interpolation.png"))
    best = int(np.argmax(sweep.clip))
    print(f"argmax_alpha_clip={sweep.alphas[best]:.4g} kl_at_1={np.interp(1.0, sweep.alphas, sweep.kl):.4g}")
    return EXIT_OK, artifacts


def cmd_clipgeom(args, config, run_dir):
    eps = config.objective.epsilon if args.epsilon is None else args.epsilon
    grid = np.linspace(args.r_max / args.points, args.r_max, args.points)
    grid = np.union1d(grid, [1.0 - eps, 1.0, 1.0 + eps])
    tables = {s: harness.clip_geometry_table(s, eps, grid) for s in ("positive", "negative")}
    rows = [(s, repr(float(r)), repr(float(v))) for s, t in tables.items() for r, v in t]
    path = _csv(run_dir / "clip_geometry.csv", ["adv_sign", "r", "clip_term"], rows)
    fig = plotting.plot_clip_geometry(tables["positive"], tables["negative"], eps, run_dir / "clip_geometry.png")
    return EXIT_OK, [path, fig]


def cmd_plotdata(args, config, run_dir):
    missing = [str(p) for p in args.metrics if not p.exists()]
    if missing:
        raise ConfigurationError(f"metrics file(s) not found: {', '.join(missing)}")
    series = tuple(_split(args.series))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        long_path, band_path = harness.emit_plot_data(args.metrics, run_dir, x=args.x, series=series)
    for w in caught:
        log.warning("%s", w.message)
    return EXIT_OK, [long_path, band_path]


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "suite": cmd_suite, "interp": cmd_interp,
            "clipgeom": cmd_clipgeom, "plotdata": cmd_plotdata}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config, args.overrides)
        run_dir = _run_dir(args, config)
        code, artifacts = COMMANDS[args.command](args, config, run_dir)
        _write_manifest(run_dir, args.command, config, artifacts)
        print(f"run_dir={run_dir}")
        return code
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigurationError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
