"""Federated round loop for GFedAvg, FAT-Clipping-PR and FAT-Clipping-PI.

Random stream layout under ``(config.seed, ...)``:

* ``[trial, t, i, k]``   noise / minibatch of client ``i``, round ``t``, local step ``k``
* ``[trial, t, m + 1]``  client sampling in round ``t``
* ``[trial, 0, 0]``      selection of the weighted output iterate
* ``[trial, 0, 1]``      label partition (logistic problems)

Rounds are numbered from 1, so the setup streams never collide with round
streams.  Client passes in a round are independent and may run on a thread
pool; their deltas are always reduced in ascending client order.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np

from .clipping import clip
from .core import ParamVector, RngLike, RngStream, as_generator, as_vector, vec_norm
from .noise import NoiseSpec
from .objectives import (
    FederatedLogistic,
    LogisticObjective,
    PartitionSpec,
    QuadraticObjective,
    load_dataset_csv,
    make_blobs,
    partition_labels,
)

ALGORITHMS = ("gfedavg", "fat_pr", "fat_pi")
DIVISORS = ("participants", "total")


class DivergenceError(ArithmeticError):
    """A local pass produced a non-finite value."""


class Problem(Protocol):
    dim: int

    def client_grad(self, client: int, x: ParamVector, gen: np.random.Generator) -> ParamVector: ...

    def loss(self, x: ParamVector) -> float: ...

    def full_grad(self, x: ParamVector) -> ParamVector: ...

    def accuracy(self, x: ParamVector) -> float: ...


@dataclass(frozen=True)
class ObjectiveSpec:
    """Which objective to build.  Logistic fields are ignored for ``quadratic``."""

    kind: str = "quadratic"
    classes: int = 10
    features: int = 20
    samples_per_class: int = 200
    test_samples_per_class: int = 50
    separation: float = 1.0
    data_seed: int = 0
    classes_per_client: int = 10
    batch_size: int = 50
    l2_reg: float = 0.0
    csv_path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("quadratic", "logistic"):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        for name in ("classes", "features", "samples_per_class", "classes_per_client", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"objective.{name} must be >= 1")
        if self.test_samples_per_class < 0:
            raise ValueError("objective.test_samples_per_class must be >= 0")
        if self.l2_reg < 0:
            raise ValueError("objective.l2_reg must be >= 0")


@dataclass(frozen=True)
class FLConfig:
    algorithm: str = "gfedavg"
    m: int = 1
    n: int | None = None
    K: int = 1
    T: int = 1
    eta: float = 1.0
    eta_l: float = 0.1
    lambda_seq: tuple[float, ...] | float = ()
    objective: ObjectiveSpec = field(default_factory=ObjectiveSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    dim: int = 1
    seed: int = 0
    mu: float = 0.0
    divergence_cap: float = 1e12
    x0: tuple[float, ...] | None = None
    aggregate_divisor: str = "participants"
    trial: int = 0

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        n = self.m if self.n is None else int(self.n)
        if not 1 <= n <= self.m:
            raise ValueError(f"n must satisfy 1 <= n <= m, got n={n}, m={self.m}")
        object.__setattr__(self, "n", n)
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        # zero rates are allowed: they give the degenerate frozen-iterate checks
        if not (self.eta >= 0 and self.eta_l >= 0 and math.isfinite(self.eta) and math.isfinite(self.eta_l)):
            raise ValueError("learning rates must be finite and non-negative")
        lam = self.lambda_seq
        if isinstance(lam, (int, float)):
            lam = (float(lam),) * self.T
        lam = tuple(float(v) for v in lam)
        if len(lam) == 1:
            lam = lam * self.T
        if self.algorithm != "gfedavg":
            if len(lam) != self.T:
                raise ValueError(f"lambda_seq must have T={self.T} entries, got {len(lam)}")
            if any(not v > 0 for v in lam):
                raise ValueError("clipping thresholds must be positive")
        object.__setattr__(self, "lambda_seq", lam)
        if self.objective.kind == "logistic":
            object.__setattr__(self, "dim", self.objective.classes * self.objective.features)
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.x0 is not None:
            x0 = tuple(float(v) for v in self.x0)
            if len(x0) != self.dim:
                raise ValueError(f"x0 has {len(x0)} entries, expected dim={self.dim}")
            object.__setattr__(self, "x0", x0)
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if not self.divergence_cap > 0:
            raise ValueError("divergence_cap must be positive")
        if self.aggregate_divisor not in DIVISORS:
            raise ValueError(f"aggregate_divisor must be one of {DIVISORS}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.trial < 0:
            raise ValueError("trial must be >= 0")

    def initial_point(self) -> ParamVector:
        return np.zeros(self.dim) if self.x0 is None else as_vector(self.x0)

    def lam(self, t: int) -> float:
        return self.lambda_seq[t - 1] if self.lambda_seq else math.inf


@dataclass(frozen=True)
class RoundRecord:
    t: int
    global_loss: float
    global_grad_norm: float
    client_delta_norms: tuple[float, ...]
    transmitted_norms: tuple[float, ...]
    clipped_count: int
    clip_applications: int
    diverged: bool
    accuracy: float = math.nan
    clients: tuple[int, ...] = ()
    noise_norms: tuple[float, ...] = ()

    @property
    def clipped_fraction(self) -> float:
        return self.clipped_count / self.clip_applications if self.clip_applications else 0.0


@dataclass
class Trajectory:
    config: FLConfig
    records: list[RoundRecord]
    final_x: ParamVector
    initial_loss: float
    initial_accuracy: float = math.nan
    weighted_output: ParamVector | None = None
    weighted_average: ParamVector | None = None
    terminated_early: bool = False

    @property
    def losses(self) -> list[float]:
        return [r.global_loss for r in self.records]


# -- problem construction -----------------------------------------------------


@lru_cache(maxsize=16)
def _dataset(spec: ObjectiveSpec) -> tuple[LogisticObjective, LogisticObjective | None]:
    if spec.csv_path:
        feats, labels = load_dataset_csv(spec.csv_path)
        classes = int(labels.max()) + 1
        return LogisticObjective(feats, labels, classes, spec.l2_reg), None
    train = make_blobs(spec.classes, spec.features, spec.samples_per_class + spec.test_samples_per_class,
                       spec.separation, RngStream(spec.data_seed, (0,)))
    feats, labels = train
    per = spec.samples_per_class + spec.test_samples_per_class
    in_train = (np.arange(labels.size) % per) < spec.samples_per_class
    tr = LogisticObjective(feats[in_train], labels[in_train], spec.classes, spec.l2_reg)
    te = None
    if spec.test_samples_per_class:
        te = LogisticObjective(feats[~in_train], labels[~in_train], spec.classes, spec.l2_reg)
    return tr, te


def build_problem(config: FLConfig) -> Problem:
    spec = config.objective
    if spec.kind == "quadratic":
        return QuadraticObjective(config.dim, config.noise)
    train, test = _dataset(spec)
    if train.dim != config.dim:
        raise ValueError(f"dataset implies dim {train.dim}, config has {config.dim}")
    stream = RngStream(config.seed, (config.trial, 0, 1))
    parts = partition_labels(train.labels, PartitionSpec(config.m, spec.classes_per_client), stream)
    return FederatedLogistic(train, tuple(parts), spec.batch_size, config.noise, test)


# -- local passes -------------------------------------------------------------


@dataclass(frozen=True)
class LocalResult:
    transmitted: ParamVector
    raw: ParamVector
    raw_norm: float
    clipped_count: int
    diverged: bool


def _step_generator(stream: RngStream, k: int) -> np.random.Generator:
    seq = np.random.SeedSequence(stream.root_seed, spawn_key=stream.path + (k,))
    return np.random.Generator(np.random.Philox(seq))


def _diverged(x: ParamVector, clipped: int) -> LocalResult:
    bad = np.full_like(x, np.nan)
    return LocalResult(bad, bad, math.nan, clipped, True)


def _local_pass(
    algorithm: str,
    x_t: ParamVector,
    problem: Problem,
    client: int,
    K: int,
    eta_l: float,
    lam: float,
    stream: RngStream,
) -> LocalResult:
    """Run K local steps.  ``raw`` is the unclipped gradient sum along the path taken."""
    x = np.array(x_t, dtype=np.float64)
    delta = None
    raw = None
    clipped = 0
    per_iter = algorithm == "fat_pi"
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(K):
            g = problem.client_grad(client, x, _step_generator(stream, k))
            if not math.isfinite(vec_norm(g)):
                return _diverged(x, clipped)
            if per_iter:
                raw = g if raw is None else raw + g
                rep = clip(g, lam)
                clipped += rep.was_clipped
                g = rep.output
            delta = g if delta is None else delta + g
            x = x - eta_l * g
            if not math.isfinite(float(np.dot(x, x))):
                return _diverged(x, clipped)
        if not per_iter:
            raw = delta
        raw_norm = vec_norm(raw)
        if not (math.isfinite(raw_norm) and np.all(np.isfinite(delta))):
            return _diverged(x, clipped)
        if algorithm == "fat_pr":
            rep = clip(delta, lam)
            return LocalResult(rep.output, raw, raw_norm, int(rep.was_clipped), False)
    return LocalResult(delta, raw, raw_norm, clipped, False)


def _as_stream(rng: RngLike | None) -> RngStream:
    if rng is None:
        return RngStream(0)
    if isinstance(rng, RngStream):
        return rng
    # a running generator: fix a stream address from its next draw
    return RngStream(int(rng.integers(0, 2**63)))


def local_pass_unclipped(x_t, objective, K: int, eta_l: float, rng: RngLike | None = None, client: int = 0) -> ParamVector:
    """Sum of the K stochastic gradients along the local SGD path (GFedAvg)."""
    res = _local_pass("gfedavg", as_vector(x_t), objective, client, K, eta_l, math.inf, _as_stream(rng))
    if res.diverged:
        raise DivergenceError("non-finite value in local pass")
    return res.transmitted


def local_pass_pr(x_t, objective, K: int, eta_l: float, lam: float, rng: RngLike | None = None,
                  client: int = 0) -> tuple[ParamVector, bool, float]:
    """Unclipped local path; the summed delta is clipped once before sending."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    res = _local_pass("fat_pr", as_vector(x_t), objective, client, K, eta_l, lam, _as_stream(rng))
    if res.diverged:
        raise DivergenceError("non-finite value in local pass")
    return res.transmitted, bool(res.clipped_count), res.raw_norm


def local_pass_pi(x_t, objective, K: int, eta_l: float, lam: float, rng: RngLike | None = None,
                  client: int = 0) -> tuple[ParamVector, int]:
    """Every local gradient is clipped before the step and before summation."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    res = _local_pass("fat_pi", as_vector(x_t), objective, client, K, eta_l, lam, _as_stream(rng))
    if res.diverged:
        raise DivergenceError("non-finite value in local pass")
    return res.transmitted, res.clipped_count


# -- server side --------------------------------------------------------------


def sample_clients(m: int, n: int, rng: RngLike) -> list[int]:
    """``n`` distinct clients uniformly at random, returned in ascending order."""
    if not 1 <= n <= m:
        raise ValueError(f"need 1 <= n <= m, got n={n}, m={m}")
    if n == m:
        return list(range(m))
    gen = as_generator(rng)
    return sorted(int(i) for i in gen.choice(m, size=n, replace=False))


def server_aggregate(x_t: ParamVector, deltas: Sequence[ParamVector], eta: float, eta_l: float,
                     divisor: int) -> ParamVector:
    """``x_t - (eta * eta_l / divisor) * sum(deltas)``, summed left to right."""
    if len(deltas) == 0:
        raise ValueError("no deltas to aggregate")
    if divisor < 1:
        raise ValueError("divisor must be a positive integer")
    x_t = np.asarray(x_t, dtype=np.float64)
    total = None
    for d in deltas:
        d = np.asarray(d, dtype=np.float64)
        if d.shape != x_t.shape:
            raise ValueError(f"dimension mismatch: delta {d.shape} vs x {x_t.shape}")
        total = d.copy() if total is None else total + d
    return x_t - (eta * eta_l / divisor) * total


def pseudo_noise_norms(deltas: Sequence[ParamVector]) -> tuple[float, ...]:
    if len(deltas) < 2:
        return ()
    stack = np.vstack(deltas)
    return tuple(float(v) for v in np.linalg.norm(stack - stack.mean(axis=0), axis=1))


def run_round(x: ParamVector, config: FLConfig, t: int, problem: Problem | None = None,
              executor: ThreadPoolExecutor | None = None) -> tuple[ParamVector, RoundRecord]:
    """One communication round.  On divergence the returned iterate is ``x`` itself."""
    if not 1 <= t <= config.T:
        raise ValueError(f"round {t} outside [1, {config.T}]")
    if problem is None:
        problem = build_problem(config)
    x = np.asarray(x, dtype=np.float64)
    base = RngStream(config.seed, (config.trial, t))
    clients = sample_clients(config.m, config.n, base.derive(config.m + 1))
    lam = config.lam(t)

    def work(i: int) -> LocalResult:
        return _local_pass(config.algorithm, x, problem, i, config.K, config.eta_l, lam, base.derive(i))

    if executor is None or len(clients) == 1:
        results = [work(i) for i in clients]
    else:
        results = list(executor.map(work, clients))

    cap = config.divergence_cap
    transmitted = [r.transmitted for r in results]
    sent_norms = tuple(vec_norm(d) for d in transmitted)
    raw_norms = tuple(r.raw_norm for r in results)
    diverged = any(r.diverged for r in results) or any(not (v <= cap) for v in sent_norms)
    divisor = len(clients) if config.aggregate_divisor == "participants" else config.m
    with np.errstate(over="ignore", invalid="ignore"):
        candidate = server_aggregate(x, transmitted, config.eta, config.eta_l, divisor)
        cand_norm = vec_norm(candidate)
        diverged = diverged or not (cand_norm <= cap)
        loss = problem.loss(candidate)
        grad_norm = vec_norm(problem.full_grad(candidate))
        acc = problem.accuracy(candidate)

    if config.algorithm == "fat_pr":
        applications = len(clients)
    elif config.algorithm == "fat_pi":
        applications = len(clients) * config.K
    else:
        applications = 0
    record = RoundRecord(
        t=t,
        global_loss=float(loss),
        global_grad_norm=grad_norm,
        client_delta_norms=raw_norms,
        transmitted_norms=sent_norms,
        clipped_count=sum(r.clipped_count for r in results),
        clip_applications=applications,
        diverged=diverged,
        accuracy=float(acc),
        clients=tuple(clients),
        noise_norms=() if diverged else pseudo_noise_norms([r.raw for r in results]),
    )
    return (x if diverged else candidate), record


# -- weighted output ----------------------------------------------------------


def output_weight_ratio(mu: float, eta: float, eta_l: float, K: int) -> float:
    """Ratio r = 1 - mu*eta*eta_l*K/2, so that w_t = r**(1 - t)."""
    return 1.0 - 0.5 * mu * eta * eta_l * K


class WeightedReservoir:
    """Single-pass draw of one item with probability proportional to ``r**(1 - t)``.

    Item ``t`` replaces the current pick with probability
    ``w_t / sum_{j<=t} w_j = (1 - r) / (1 - r**t)``, which never forms the
    (overflowing) geometric weights themselves.  ``r <= 0`` is treated as the
    limit that puts all mass on the latest item.
    """

    def __init__(self, ratio: float, rng: RngLike):
        self.ratio = ratio
        self._gen = as_generator(rng)
        self.count = 0
        self.choice = None
        self.index = 0
        self._num = None
        self._den = 0.0

    def replace_probability(self, t: int) -> float:
        r = self.ratio
        if t == 1 or r <= 0.0:
            return 1.0
        if r == 1.0:
            return 1.0 / t
        return (1.0 - r) / (1.0 - r**t)

    def offer(self, item) -> None:
        self.count += 1
        t = self.count
        u = self._gen.random()
        if u < self.replace_probability(t):
            self.choice = item
            self.index = t
        r = max(self.ratio, 0.0)
        arr = np.asarray(item, dtype=np.float64)
        self._num = arr.copy() if self._num is None else r * self._num + arr
        self._den = r * self._den + 1.0

    def average(self):
        """Deterministic weighted mean of everything offered."""
        return None if self._num is None else self._num / self._den


# -- full run -----------------------------------------------------------------


def run_experiment(config: FLConfig, threads: int = 1, problem: Problem | None = None) -> Trajectory:
    if threads < 1:
        raise ValueError("threads must be >= 1")
    if problem is None:
        problem = build_problem(config)
    x = config.initial_point()
    initial_loss = problem.loss(x)
    initial_acc = problem.accuracy(x)
    reservoir = None
    if config.mu > 0:
        ratio = output_weight_ratio(config.mu, config.eta, config.eta_l, config.K)
        reservoir = WeightedReservoir(ratio, RngStream(config.seed, (config.trial, 0, 0)))
    records: list[RoundRecord] = []
    terminated = False
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for t in range(1, config.T + 1):
            if reservoir is not None:
                reservoir.offer(x)
            x, rec = run_round(x, config, t, problem, executor)
            records.append(rec)
            if rec.diverged:
                terminated = True
                break
    finally:
        if executor is not None:
            executor.shutdown()
    traj = Trajectory(
        config=config,
        records=records,
        final_x=x,
        initial_loss=float(initial_loss),
        initial_accuracy=float(initial_acc),
        terminated_early=terminated,
    )
    if reservoir is not None:
        traj.weighted_output = np.array(reservoir.choice)
        traj.weighted_average = reservoir.average()
    return traj


def with_trial(config: FLConfig, trial: int) -> FLConfig:
    return dataclasses.replace(config, trial=trial)
