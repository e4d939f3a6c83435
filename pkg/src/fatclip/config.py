"""Run configuration files, presets and the run manifest.

Format: UTF-8 ``key = value`` lines, ``#`` starts a comment, dotted keys for
nested sections (``noise.alpha = 1.5``) and vectors as ``[a, b, c]``::

    preset = cauchy-convex
    algorithm = fat_pr
    rounds = 500
    noise.scale = 1.0

A ``preset`` line loads that preset's values first; every other line then
overrides it, wherever it appears.  ``schedule = <setting>`` replaces the
explicit ``eta``, ``eta_l`` and ``lambda`` keys with the theorem plan for the
configured ``clients``, ``local_steps`` and ``rounds``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Callable

from .engine import ALGORITHMS, DIVISORS, FLConfig, ObjectiveSpec
from .metrics import FailurePolicy
from .noise import FAMILIES, NoiseSpec
from .schedules import ALGORITHM_OF, SETTINGS, STRONGLY_CONVEX, plan


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class RunManifest:
    config: FLConfig
    preset: str | None = None
    trials: int = 1
    threads: int = 1
    out_dir: str = "runs"
    emit_trajectory: bool = True
    emit_client_norms: bool = False
    emit_summary: bool = True
    schedule: str | None = None
    schedule_alpha: float | None = None
    schedule_c: float | None = None
    failure: FailurePolicy = field(default_factory=FailurePolicy)

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ConfigError("must be >= 1", key="trials")
        if self.threads < 1:
            raise ConfigError("must be >= 1", key="threads")


# -- value parsing --------------------------------------------------------------


def _parse_scalar(text: str) -> Any:
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low == "null":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_value(text: str) -> Any:
    text = text.strip()
    if text.startswith("["):
        if not text.endswith("]"):
            raise ValueError("unterminated vector")
        inner = text[1:-1].strip()
        return [] if not inner else [_parse_scalar(p.strip()) for p in inner.split(",")]
    return _parse_scalar(text)


def _strip_comment(line: str) -> str:
    # '#' starts a comment at line start or after whitespace, so paths like a#b survive
    for i, ch in enumerate(line):
        if ch == "#" and (i == 0 or line[i - 1].isspace()):
            return line[:i]
    return line


def parse_pairs(text: str) -> dict[str, tuple[Any, int]]:
    """Raw ``key -> (value, line number)`` mapping; duplicate keys are an error."""
    pairs: dict[str, tuple[Any, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError("missing key", line=lineno)
        if key in pairs:
            raise ConfigError("duplicate key", key=key, line=lineno)
        try:
            pairs[key] = (parse_value(value), lineno)
        except ValueError as exc:
            raise ConfigError(str(exc), key=key, line=lineno) from None
    return pairs


# -- key table ------------------------------------------------------------------


def _int(lo: int) -> Callable[[Any], int]:
    def conv(v: Any) -> int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ValueError(f"expected an integer, got {v!r}")
        if v < lo:
            raise ValueError(f"must be >= {lo}, got {v}")
        return v
    return conv


def _float(lo: float | None = None, strict: bool = False) -> Callable[[Any], float]:
    def conv(v: Any) -> float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValueError(f"expected a number, got {v!r}")
        v = float(v)
        if not math.isfinite(v):
            raise ValueError("must be finite")
        if lo is not None and (v <= lo if strict else v < lo):
            raise ValueError(f"must be {'>' if strict else '>='} {lo}, got {v}")
        return v
    return conv


def _choice(options) -> Callable[[Any], str]:
    def conv(v: Any) -> str:
        if v not in options:
            raise ValueError(f"expected one of {tuple(options)}, got {v!r}")
        return v
    return conv


def _bool(v: Any) -> bool:
    if not isinstance(v, bool):
        raise ValueError(f"expected true or false, got {v!r}")
    return v


def _str(v: Any) -> str:
    if not isinstance(v, str) or not v:
        raise ValueError(f"expected a non-empty string, got {v!r}")
    return v


def _opt(conv: Callable[[Any], Any]) -> Callable[[Any], Any]:
    return lambda v: None if v is None else conv(v)


def _vector(v: Any) -> tuple[float, ...]:
    if not isinstance(v, list) or not v:
        raise ValueError("expected a non-empty vector [a, b, ...]")
    return tuple(_float()(x) for x in v)


def _lambda(v: Any) -> float | tuple[float, ...]:
    if isinstance(v, list):
        out = _vector(v)
        if any(x <= 0 for x in out):
            raise ValueError("clipping thresholds must be positive")
        return out
    return _float(0.0, strict=True)(v)


KEYS: dict[str, Callable[[Any], Any]] = {
    "preset": _str,
    "algorithm": _choice(ALGORITHMS),
    "clients": _int(1),
    "participants": _int(1),
    "local_steps": _int(1),
    "rounds": _int(1),
    "eta": _float(0.0),
    "eta_l": _float(0.0),
    "lambda": _lambda,
    "seed": _int(0),
    "mu": _float(0.0),
    "divergence_cap": _float(0.0, strict=True),
    "aggregate_divisor": _choice(DIVISORS),
    "x0": _opt(_vector),
    "dim": _int(1),
    "trials": _int(1),
    "threads": _int(1),
    "schedule": _choice(SETTINGS),
    "schedule.alpha": _float(),
    "schedule.c": _float(1.0),
    "noise.family": _choice(FAMILIES),
    "noise.alpha": _float(0.0, strict=True),
    "noise.scale": _float(0.0, strict=True),
    "noise.location": _float(),
    "objective.kind": _choice(("quadratic", "logistic")),
    "objective.classes": _int(2),
    "objective.features": _int(1),
    "objective.samples_per_class": _int(1),
    "objective.test_samples_per_class": _int(0),
    "objective.separation": _float(0.0),
    "objective.data_seed": _int(0),
    "objective.classes_per_client": _int(1),
    "objective.batch_size": _int(1),
    "objective.l2_reg": _float(0.0),
    "objective.csv_path": _opt(_str),
    "output.dir": _str,
    "output.trajectory": _bool,
    "output.client_norms": _bool,
    "output.summary": _bool,
    "failure.nonfinite_fails": _bool,
    "failure.loss_blowup_factor": _float(1.0, strict=True),
    "failure.accuracy_drop": _float(0.0, strict=True),
    "failure.min_rounds_observed": _int(0),
}

SCHEDULED_KEYS = ("eta", "eta_l", "lambda")


# -- presets ----------------------------------------------------------------------


def _cauchy_convex(algorithm: str) -> dict[str, Any]:
    # server coefficient eta*eta_l/m = 0.1 with eta_l = 0.1 and m = 5 gives eta = 5
    out = {
        "algorithm": "fat_pi",
        "clients": 5,
        "participants": 5,
        "local_steps": 2,
        "rounds": 300,
        "eta": 5.0,
        "eta_l": 0.1,
        "mu": 1.0,
        "dim": 3,
        "x0": [2.0, 1.0, 1.5],
        "objective.kind": "quadratic",
        "noise.family": "cauchy",
        "noise.alpha": 1.0,
        "noise.scale": 2.1,
    }
    lam = {"fat_pi": 3.0, "fat_pr": 5.0}.get(algorithm)
    if lam is not None:
        out["lambda"] = lam
    return out


def _alpha_sweep(algorithm: str) -> dict[str, Any]:
    out = _cauchy_convex(algorithm)
    out.update({"noise.family": "alpha_stable", "noise.alpha": 1.5, "noise.scale": 1.0})
    return out


def _noniid_logistic(algorithm: str) -> dict[str, Any]:
    # 10 classes x 200 samples over 10 clients: 200 samples per client; two local
    # epochs at batch 50 gives K = 2 * ceil(200 / 50) = 8
    out = {
        "algorithm": "fat_pi",
        "clients": 10,
        "participants": 5,
        "local_steps": 8,
        "rounds": 150,
        "eta": 1.0,
        "eta_l": 0.05,
        "mu": 0.0,
        "objective.kind": "logistic",
        "objective.classes": 10,
        "objective.features": 20,
        "objective.samples_per_class": 200,
        "objective.test_samples_per_class": 50,
        "objective.separation": 1.0,
        "objective.classes_per_client": 2,
        "objective.batch_size": 50,
        "noise.family": "alpha_stable",
        "noise.alpha": 1.2,
        "noise.scale": 0.5,
    }
    lam = {"fat_pi": 2.0, "fat_pr": 5.0}.get(algorithm)
    if lam is not None:
        out["lambda"] = lam
    return out


PRESETS: dict[str, Callable[[str], dict[str, Any]]] = {
    "cauchy-convex": _cauchy_convex,
    "alpha-sweep": _alpha_sweep,
    "noniid-logistic": _noniid_logistic,
}


def preset_values(name: str, algorithm: str | None = None) -> dict[str, Any]:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {tuple(PRESETS)}", key="preset")
    values = PRESETS[name](algorithm or "fat_pi")
    if algorithm is not None:
        values["algorithm"] = algorithm
    return values


# -- building the manifest ----------------------------------------------------


def build_manifest(values: dict[str, Any], lines: dict[str, int] | None = None) -> RunManifest:
    """Validate raw key/value pairs (already merged with any preset) into a manifest."""
    lines = lines or {}
    checked: dict[str, Any] = {}
    for key, raw in values.items():
        if key not in KEYS:
            raise ConfigError("unknown key", key=key, line=lines.get(key))
        try:
            checked[key] = KEYS[key](raw)
        except ValueError as exc:
            raise ConfigError(str(exc), key=key, line=lines.get(key)) from None

    def err(msg: str, key: str) -> ConfigError:
        return ConfigError(msg, key=key, line=lines.get(key))

    g = checked.get
    schedule = g("schedule")
    sched_alpha = g("schedule.alpha")
    sched_c = g("schedule.c")
    algorithm = g("algorithm")
    eta, eta_l, lam = g("eta"), g("eta_l"), g("lambda")
    m = g("clients", 1)
    K = g("local_steps", 1)
    T = g("rounds", 1)
    mu = g("mu", 0.0)

    noise_family = g("noise.family", "none")
    noise_alpha = g("noise.alpha")
    if noise_alpha is None:
        noise_alpha = {"gaussian": 2.0, "cauchy": 1.0}.get(noise_family, 2.0)
    try:
        noise = NoiseSpec(noise_family, noise_alpha, g("noise.scale", 1.0), g("noise.location", 0.0))
    except ValueError as exc:
        raise err(str(exc), "noise.alpha" if "alpha" in str(exc) else "noise.family") from None

    if schedule is None:
        for key in ("schedule.alpha", "schedule.c"):
            if key in checked:
                raise err("only valid together with 'schedule'", key)
    else:
        for key in SCHEDULED_KEYS:
            if key in checked:
                raise err(f"set by schedule '{schedule}'; remove it or drop the schedule", key)
        if algorithm is not None and algorithm != ALGORITHM_OF[schedule]:
            raise err(f"schedule '{schedule}' drives {ALGORITHM_OF[schedule]}", "algorithm")
        algorithm = ALGORITHM_OF[schedule]
        if schedule.startswith("gaussian"):
            sched_alpha = None
        elif sched_alpha is None:
            sched_alpha = noise_alpha
        if schedule in STRONGLY_CONVEX and not mu > 0:
            raise err("strongly convex schedules need mu > 0", "mu")
        if sched_c is not None and schedule not in STRONGLY_CONVEX:
            raise err("c only applies to strongly convex schedules", "schedule.c")
        try:
            p = plan(schedule, m, K, T, 2.0 if sched_alpha is None else sched_alpha, mu if mu > 0 else 1.0, sched_c)
        except ValueError as exc:
            raise err(str(exc), "schedule.alpha" if "alpha" in str(exc) else "schedule") from None
        eta, eta_l, lam = p.eta, p.eta_l, p.lambda_seq

    algorithm = algorithm or "gfedavg"
    if algorithm != "gfedavg" and lam is None:
        raise err(f"{algorithm} needs a clipping threshold", "lambda")

    try:
        objective = ObjectiveSpec(
            kind=g("objective.kind", "quadratic"),
            classes=g("objective.classes", 10),
            features=g("objective.features", 20),
            samples_per_class=g("objective.samples_per_class", 200),
            test_samples_per_class=g("objective.test_samples_per_class", 50),
            separation=g("objective.separation", 1.0),
            data_seed=g("objective.data_seed", 0),
            classes_per_client=g("objective.classes_per_client", 10),
            batch_size=g("objective.batch_size", 50),
            l2_reg=g("objective.l2_reg", 0.0),
            csv_path=g("objective.csv_path"),
        )
    except ValueError as exc:
        raise err(str(exc), "objective.kind") from None

    n = g("participants")
    if n is not None and n > m:
        raise err(f"must not exceed clients={m}", "participants")
    try:
        config = FLConfig(
            algorithm=algorithm,
            m=m,
            n=n,
            K=K,
            T=T,
            eta=1.0 if eta is None else eta,
            eta_l=0.1 if eta_l is None else eta_l,
            lambda_seq=() if lam is None else lam,
            objective=objective,
            noise=noise,
            dim=g("dim", 1),
            seed=g("seed", 0),
            mu=mu,
            divergence_cap=g("divergence_cap", 1e12),
            x0=g("x0"),
            aggregate_divisor=g("aggregate_divisor", "participants"),
        )
    except ValueError as exc:
        msg = str(exc)
        key = "x0" if "x0" in msg else "lambda" if "lambda" in msg or "threshold" in msg else "dim"
        raise err(msg, key) from None

    defaults = FailurePolicy()
    failure = FailurePolicy(
        nonfinite_fails=g("failure.nonfinite_fails", defaults.nonfinite_fails),
        loss_blowup_factor=g("failure.loss_blowup_factor", defaults.loss_blowup_factor),
        accuracy_drop=g("failure.accuracy_drop", defaults.accuracy_drop),
        min_rounds_observed=g("failure.min_rounds_observed", defaults.min_rounds_observed),
    )
    if not failure.accuracy_drop < 1:
        raise err("must lie in (0, 1)", "failure.accuracy_drop")

    return RunManifest(
        config=config,
        preset=g("preset"),
        trials=g("trials", 1),
        threads=g("threads", 1),
        out_dir=g("output.dir", "runs"),
        emit_trajectory=g("output.trajectory", True),
        emit_client_norms=g("output.client_norms", False),
        emit_summary=g("output.summary", True),
        schedule=schedule,
        schedule_alpha=sched_alpha,
        schedule_c=sched_c,
        failure=failure,
    )


def merged_values(pairs: dict[str, Any]) -> dict[str, Any]:
    """Preset values (if any) overlaid with the explicit pairs."""
    pairs = dict(pairs)
    name = pairs.get("preset")
    if name is None:
        return pairs
    if not isinstance(name, str):
        raise ConfigError("expected a preset name", key="preset")
    algorithm = pairs.get("algorithm")
    base = preset_values(name, algorithm if isinstance(algorithm, str) and algorithm in ALGORITHMS else None)
    if "schedule" in pairs:
        for key in SCHEDULED_KEYS:
            base.pop(key, None)
        base.pop("algorithm", None)
    # preset values tied to a key the user overrides give way to it
    for key, dependent in (("noise.family", "noise.alpha"), ("dim", "x0")):
        if key in pairs and dependent not in pairs:
            base.pop(dependent, None)
    base.update(pairs)
    return base


def parse_config(text: str, overrides: dict[str, Any] | None = None) -> RunManifest:
    raw = parse_pairs(text)
    pairs = {k: v for k, (v, _) in raw.items()}
    lines = {k: n for k, (_, n) in raw.items()}
    if overrides:
        pairs.update(overrides)
    return build_manifest(merged_values(pairs), lines)


def _fmt(v: Any) -> str:
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if isinstance(v, str):
        return f'"{v}"'
    return str(v)


def manifest_values(manifest: RunManifest) -> dict[str, Any]:
    """Complete key/value mapping that rebuilds ``manifest``."""
    c = manifest.config
    o = c.objective
    out: dict[str, Any] = {}
    if manifest.preset is not None:
        out["preset"] = manifest.preset
    out["algorithm"] = c.algorithm
    out["clients"] = c.m
    out["participants"] = c.n
    out["local_steps"] = c.K
    out["rounds"] = c.T
    if manifest.schedule is not None:
        out["schedule"] = manifest.schedule
        if manifest.schedule_alpha is not None:
            out["schedule.alpha"] = manifest.schedule_alpha
        if manifest.schedule_c is not None:
            out["schedule.c"] = manifest.schedule_c
    else:
        out["eta"] = c.eta
        out["eta_l"] = c.eta_l
        lam = c.lambda_seq
        if lam:
            out["lambda"] = lam[0] if all(v == lam[0] for v in lam) else list(lam)
    out.update({
        "seed": c.seed,
        "mu": c.mu,
        "divergence_cap": c.divergence_cap,
        "aggregate_divisor": c.aggregate_divisor,
        "dim": c.dim,
        "x0": None if c.x0 is None else list(c.x0),
        "trials": manifest.trials,
        "threads": manifest.threads,
        "noise.family": c.noise.family,
        "noise.alpha": c.noise.alpha,
        "noise.scale": c.noise.scale,
        "noise.location": c.noise.location,
        "objective.kind": o.kind,
        "objective.classes": o.classes,
        "objective.features": o.features,
        "objective.samples_per_class": o.samples_per_class,
        "objective.test_samples_per_class": o.test_samples_per_class,
        "objective.separation": o.separation,
        "objective.data_seed": o.data_seed,
        "objective.classes_per_client": o.classes_per_client,
        "objective.batch_size": o.batch_size,
        "objective.l2_reg": o.l2_reg,
        "objective.csv_path": o.csv_path,
        "output.dir": manifest.out_dir,
        "output.trajectory": manifest.emit_trajectory,
        "output.client_norms": manifest.emit_client_norms,
        "output.summary": manifest.emit_summary,
        "failure.nonfinite_fails": manifest.failure.nonfinite_fails,
        "failure.loss_blowup_factor": manifest.failure.loss_blowup_factor,
        "failure.accuracy_drop": manifest.failure.accuracy_drop,
        "failure.min_rounds_observed": manifest.failure.min_rounds_observed,
    })
    return out


def serialize(manifest: RunManifest) -> str:
    # None is written as null so it also overrides a preset value
    lines = [f"{k} = {_fmt(v)}" for k, v in manifest_values(manifest).items()]
    return "\n".join(lines) + "\n"


def with_values(manifest: RunManifest, changes: dict[str, Any]) -> RunManifest:
    """Rebuild ``manifest`` with some config keys replaced; schedules are re-planned."""
    values = manifest_values(manifest)
    values.pop("preset", None)
    values.update(changes)
    if "schedule" in values:
        for key in SCHEDULED_KEYS:
            values.pop(key, None)
    rebuilt = build_manifest({k: v for k, v in values.items() if v is not None})
    return dataclasses.replace(rebuilt, preset=manifest.preset)
