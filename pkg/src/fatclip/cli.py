"""Command-line entry point: run, sweep, estimate-alpha, schedule."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path
from statistics import median
from typing import Callable, Sequence

import numpy as np

from .config import PRESETS, ConfigError, RunManifest, parse_config, parse_value, with_values
from .core import RngStream
from .engine import Trajectory, run_experiment, with_trial
from .metrics import detect_failure, final_error, fit_rate_exponent, round_noise_norms
from .noise import estimate_tail_index
from .objectives import quad_loss
from .schedules import SETTINGS, plan

log = logging.getLogger("fatclip")

TRAJECTORY_HEADER = ("round", "loss", "grad_norm", "max_delta_norm", "mean_delta_norm", "clipped_fraction", "diverged")
CLIENT_HEADER = ("round", "client", "delta_norm", "transmitted_norm")
SWEEP_HEADER = ("kind", "axis", "value", "median_error", "success_rate", "trials", "slope", "intercept", "r_squared")
SWEEP_AXES = {"T": "rounds", "m": "clients", "K": "local_steps", "alpha": "noise.alpha", "lambda": "lambda"}
MIN_ALPHA_SAMPLES = 10_000

EXIT_CONFIG = 2
EXIT_IO = 3


# -- manifest loading -------------------------------------------------------------


def load_manifest(source: str | None, preset: str | None, sets: Sequence[str] = (),
                  seed: int | None = None, trials: int | None = None, threads: int | None = None,
                  out: str | None = None) -> RunManifest:
    """Config file (or preset) plus command-line overrides, in that order of precedence."""
    text = ""
    if source is not None:
        text = Path(source).read_text(encoding="utf-8")
    overrides = {}
    if preset is not None:
        overrides["preset"] = preset
    for item in sets:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = parse_value(value)
    for key, value in (("seed", seed), ("trials", trials), ("threads", threads), ("output.dir", out)):
        if value is not None:
            overrides[key] = value
    if source is None and "preset" not in overrides:
        raise ConfigError("give a config file or --preset")
    return parse_config(text, overrides)


# -- writers ------------------------------------------------------------------------


def _num(v: float) -> str:
    return repr(float(v))


def trajectory_rows(traj: Trajectory) -> list[list[str]]:
    rows = []
    for rec in traj.records:
        norms = rec.client_delta_norms
        rows.append([
            str(rec.t),
            _num(rec.global_loss),
            _num(rec.global_grad_norm),
            _num(max(norms)),
            _num(sum(norms) / len(norms)),
            _num(rec.clipped_fraction),
            "1" if rec.diverged else "0",
        ])
    return rows


def write_trajectory_csv(traj: Trajectory, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        w.writerows(trajectory_rows(traj))


def write_client_norms_csv(traj: Trajectory, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CLIENT_HEADER)
        for rec in traj.records:
            for i, raw, sent in zip(rec.clients, rec.client_delta_norms, rec.transmitted_norms):
                w.writerow([rec.t, i, _num(raw), _num(sent)])


def _weighted_loss(traj: Trajectory) -> float | None:
    if traj.weighted_output is None or traj.config.objective.kind != "quadratic":
        return None
    return quad_loss(traj.weighted_output)


def trial_summary(manifest: RunManifest, traj: Trajectory, trial: int, wall: float) -> dict:
    failed, at = detect_failure(traj, manifest.failure)
    recs = traj.records
    applications = sum(r.clip_applications for r in recs)
    last = recs[-1]
    return {
        "trial": trial,
        "seed": traj.config.seed,
        "algorithm": traj.config.algorithm,
        "rounds_executed": len(recs),
        "final_loss": last.global_loss,
        "final_grad_norm": last.global_grad_norm,
        "final_accuracy": None if math.isnan(last.accuracy) else last.accuracy,
        "weighted_output_loss": _weighted_loss(traj),
        "final_error": final_error(traj),
        "failed": failed,
        "failure_round": at,
        "terminated_early": traj.terminated_early,
        "clipped_fraction": (sum(r.clipped_count for r in recs) / applications) if applications else 0.0,
        "wall_clock_s": wall,
    }


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    return obj


# -- commands ---------------------------------------------------------------------


def run_trials(manifest: RunManifest) -> list[tuple[Trajectory, float]]:
    out = []
    for k in range(manifest.trials):
        start = time.perf_counter()
        traj = run_experiment(with_trial(manifest.config, k), threads=manifest.threads)
        out.append((traj, time.perf_counter() - start))
    return out


def cmd_run(manifest: RunManifest) -> list[dict]:
    """Run every trial and write its outputs; returns the summary records."""
    out = Path(manifest.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summaries = []
    for k, (traj, wall) in enumerate(run_trials(manifest)):
        if manifest.emit_trajectory:
            write_trajectory_csv(traj, out / f"trajectory_trial{k:03d}.csv")
        if manifest.emit_client_norms:
            write_client_norms_csv(traj, out / f"client_norms_trial{k:03d}.csv")
        summary = trial_summary(manifest, traj, k, wall)
        summaries.append(summary)
        log.info("trial %d: final loss %.6g, failed=%s", k, summary["final_loss"], summary["failed"])
    if manifest.emit_summary:
        with (out / "summary.jsonl").open("w", encoding="utf-8") as fh:
            for s in summaries:
                fh.write(json.dumps(_json_safe(s), sort_keys=True) + "\n")
    return summaries


SweepRunner = Callable[[RunManifest], Sequence[tuple[float, bool]]]


def default_sweep_runner(manifest: RunManifest) -> list[tuple[float, bool]]:
    """(final error, failed) for each trial of ``manifest``."""
    return [(final_error(traj), detect_failure(traj, manifest.failure)[0]) for traj, _ in run_trials(manifest)]


def sweep_point(manifest: RunManifest, axis: str, value: float) -> RunManifest:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {tuple(SWEEP_AXES)}")
    key = SWEEP_AXES[axis]
    changes: dict = {key: value}
    if axis in ("T", "m", "K"):
        if value != int(value):
            raise ConfigError(f"axis {axis} needs integer values, got {value}")
        changes[key] = int(value)
    if axis == "m":
        # keep full participation when it was full, otherwise cap n at the new m
        c = manifest.config
        changes["participants"] = int(value) if c.n == c.m else min(c.n, int(value))
    if axis == "alpha":
        family = manifest.config.noise.family
        if family in ("gaussian", "cauchy"):
            changes["noise.family"] = "alpha_stable"
    return with_values(manifest, changes)


def cmd_sweep(manifest: RunManifest, axis: str, values: Sequence[float],
              runner: SweepRunner = default_sweep_runner) -> list[dict]:
    if len(values) < 3:
        raise ConfigError("a sweep needs at least 3 values")
    rows = []
    points = []
    for v in values:
        results = list(runner(sweep_point(manifest, axis, v)))
        errors = [e for e, _ in results]
        med = float(median(errors))
        rate = sum(not f for _, f in results) / len(results)
        rows.append({"kind": "point", "axis": axis, "value": v, "median_error": med,
                     "success_rate": rate, "trials": len(results)})
        points.append((float(v), med))
    if axis in ("T", "m", "K"):
        row = {"kind": "fit", "axis": axis}
        try:
            fit = fit_rate_exponent(points)
            row.update(slope=fit.slope, intercept=fit.intercept, r_squared=fit.r_squared)
        except ValueError as exc:
            log.warning("no rate fit: %s", exc)
        rows.append(row)
    out = Path(manifest.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([_cell(r.get(col)) for col in SWEEP_HEADER])
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_samples(path: Path) -> np.ndarray:
    """Numbers from the first column of a text/CSV file; non-numeric lines are skipped."""
    vals = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            head = line.strip().split(",")[0].strip()
            if not head:
                continue
            try:
                vals.append(float(head))
            except ValueError:
                continue
    return np.asarray(vals, dtype=np.float64)


def run_noise_samples(manifest: RunManifest) -> np.ndarray:
    """Pseudo-gradient noise norms from the manifest's trials, given random signs.

    Norms are one-sided; the estimator works on symmetric data, so each norm
    gets an independent sign drawn from stream ``[trial, 0, 2]``.
    """
    chunks = []
    for k, (traj, _) in enumerate(run_trials(manifest)):
        norms = np.asarray(round_noise_norms(traj), dtype=np.float64)
        gen = RngStream(manifest.config.seed, (k, 0, 2)).generator()
        chunks.append(norms * gen.choice((-1.0, 1.0), size=norms.size))
    return np.concatenate(chunks) if chunks else np.empty(0)


def cmd_estimate_alpha(samples: np.ndarray) -> dict:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size < MIN_ALPHA_SAMPLES:
        raise ValueError(f"insufficient samples: {samples.size} < {MIN_ALPHA_SAMPLES}")
    est = estimate_tail_index(samples)
    return {"alpha_hat": est.alpha_hat, "n_samples": est.n_samples,
            "block_size": est.block_size, "block_count": est.block_count}


# -- argument parsing ---------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker threads per round (results do not depend on it)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fatclip", description="Federated clipping experiments under fat-tailed noise.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run all trials of a config")
    p.add_argument("config", nargs="?")
    _common(p)

    p = sub.add_parser("sweep", help="vary one parameter and fit the error rate")
    p.add_argument("config", nargs="?")
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    p.add_argument("--values", required=True, help="comma-separated list")
    _common(p)

    p = sub.add_parser("estimate-alpha", help="tail index of a sample file or of a run's noise norms")
    p.add_argument("input", nargs="?", help="samples file (.csv/.txt) or config file")
    _common(p)

    p = sub.add_parser("schedule", help="print a theorem schedule")
    p.add_argument("setting", choices=SETTINGS)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--c", type=float)
    return parser


def _manifest(args, source: str | None) -> RunManifest:
    return load_manifest(source, args.preset, args.set, args.seed, args.trials, args.threads, args.out)


def _is_sample_file(path: str) -> bool:
    return Path(path).suffix.lower() in (".csv", ".txt", ".dat")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            summaries = cmd_run(_manifest(args, args.config))
            failed = sum(s["failed"] for s in summaries)
            print(f"{len(summaries)} trial(s), {failed} failed")
        elif args.command == "sweep":
            values = [float(v) for v in args.values.split(",") if v.strip()]
            for row in cmd_sweep(_manifest(args, args.config), args.axis, values):
                print(json.dumps(_json_safe(row)))
        elif args.command == "estimate-alpha":
            if args.input is not None and _is_sample_file(args.input):
                samples = read_samples(Path(args.input))
            else:
                samples = run_noise_samples(_manifest(args, args.input))
            print(json.dumps(cmd_estimate_alpha(samples)))
        elif args.command == "schedule":
            p = plan(args.setting, args.m, args.k, args.t, args.alpha, args.mu, args.c)
            print(json.dumps(p.as_dict(), indent=2))
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
