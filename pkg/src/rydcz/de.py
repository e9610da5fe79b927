"""Bounded differential evolution (DE/rand/1) with deterministic parallel evaluation.

Every trial vector is built from a snapshot of the current generation with
its own random stream derived from ``(seed, generation, index)``, so results
do not depend on evaluation order, worker count or interruptions.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

log = logging.getLogger(__name__)

CROSSOVER_MODES = ("binomial", "whole")
CHECKPOINT_FORMAT = "rydcz-de-checkpoint"
CHECKPOINT_VERSION = 1

_TAG_INIT = 1
_TAG_TRIAL = 2


class CheckpointError(ValueError):
    """A checkpoint file is corrupt or belongs to a different run."""


@dataclass(frozen=True)
class DEConfig:
    """Optimizer settings.

    Parameters
    ----------
    bounds : sequence of (lo, hi)
        One interval per dimension; ``lo == hi`` pins that component.
    population_size : int
        N_P, at least 4 so that three distinct partners exist.
    mu : float
        Mutation factor in [0, 2].
    xi : float
        Crossover rate in (0, 1).
    crossover : {"binomial", "whole"}
        Per-dimension crossover with one forced dimension, or a single draw
        deciding for the whole vector.
    """

    bounds: tuple[tuple[float, float], ...]
    population_size: int = 32
    mu: float = 0.8
    xi: float = 0.9
    max_generations: int = 300
    target_cost: float = 1e-4
    seed: int = 0
    crossover: str = "binomial"

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in np.asarray(self.bounds, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "bounds", bounds)
        if not bounds:
            raise ValueError("at least one dimension is required")
        for lo, hi in bounds:
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ValueError(f"invalid bound interval {(lo, hi)}")
        if self.population_size < 4:
            raise ValueError("population_size must be at least 4")
        if not 0.0 <= self.mu <= 2.0:
            raise ValueError(f"mu must lie in [0, 2], got {self.mu}")
        if not 0.0 < self.xi < 1.0:
            raise ValueError(f"xi must lie in (0, 1), got {self.xi}")
        if self.max_generations < 0:
            raise ValueError("max_generations must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.crossover not in CROSSOVER_MODES:
            raise ValueError(f"unknown crossover mode {self.crossover!r}")

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.bounds])

    def clamp(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def fingerprint(self, context: str = "") -> str:
        """Hash of everything that shapes the search path.

        The stopping criteria are left out so a run can be resumed with a
        larger generation budget; ``context`` should identify the cost.
        """
        fields = asdict(self)
        fields.pop("max_generations")
        fields.pop("target_cost")
        blob = json.dumps({"de": fields, "context": context}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class Individual:
    x: np.ndarray
    cost: Optional[float] = None


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    best_cost: float
    mean_cost: float
    best_vector: tuple[float, ...]

    def as_dict(self) -> dict:
        return {
            "generation": self.generation,
            "best_cost": self.best_cost,
            "mean_cost": self.mean_cost,
            "best_vector": list(self.best_vector),
        }


@dataclass
class OptimizationHistory:
    records: list[GenerationRecord] = field(default_factory=list)

    @property
    def best_costs(self) -> list[float]:
        return [r.best_cost for r in self.records]


@dataclass
class DEState:
    """Population snapshot at the end of ``generation``."""

    generation: int
    population: np.ndarray
    costs: np.ndarray
    history: OptimizationHistory

    @property
    def best(self) -> Individual:
        k = int(np.argmin(self.costs))
        return Individual(self.population[k].copy(), float(self.costs[k]))


@dataclass
class OptimizeResult:
    best: Individual
    history: OptimizationHistory
    state: DEState
    reason: str


def _rng(cfg: DEConfig, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(cfg.seed), spawn_key=key))


def init_population(cfg: DEConfig) -> np.ndarray:
    """``(N_P, D)`` vectors drawn uniformly inside the bounds."""
    rng = _rng(cfg, _TAG_INIT)
    u = rng.random((cfg.population_size, cfg.dim))
    return cfg.lower + u * (cfg.upper - cfg.lower)


def mutate(population: np.ndarray, i: int, mu: float, rng: np.random.Generator, cfg: DEConfig) -> np.ndarray:
    """``V_i = X_s1 + mu (X_s2 - X_s3)`` with distinct partners != i, clamped to bounds."""
    n = population.shape[0]
    if n < 4:
        raise ValueError("mutation needs at least four individuals")
    others = np.delete(np.arange(n), i)
    s1, s2, s3 = rng.choice(others, size=3, replace=False)
    return cfg.clamp(population[s1] + mu * (population[s2] - population[s3]))


def crossover(v: np.ndarray, x: np.ndarray, xi: float, rng: np.random.Generator, mode: str = "binomial") -> np.ndarray:
    """Mix mutant ``v`` into target ``x``.

    ``binomial``: each dimension comes from ``v`` with probability xi and one
    randomly chosen dimension always does.  ``whole``: a single draw decides
    for the complete vector.
    """
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    if v.shape != x.shape:
        raise ValueError("mutant and target differ in dimension")
    if mode == "whole":
        return v.copy() if rng.random() < xi else x.copy()
    if mode != "binomial":
        raise ValueError(f"unknown crossover mode {mode!r}")
    take = rng.random(v.shape) < xi
    take[rng.integers(v.size)] = True
    return np.where(take, v, x)


def _as_cost(c: Optional[float]) -> float:
    if c is None:
        raise ValueError("individual has not been evaluated")
    return math.inf if math.isnan(c) else float(c)


def select(u: Individual, x: Individual) -> Individual:
    """Trial replaces target only if strictly better; NaN counts as +inf."""
    return u if _as_cost(u.cost) < _as_cost(x.cost) else x


class SafeCost:
    """Wraps a cost so exceptions and NaN become +inf; picklable when ``fn`` is."""

    def __init__(self, fn: Callable[[np.ndarray], float]):
        self.fn = fn

    def __call__(self, x: np.ndarray) -> float:
        try:
            value = float(self.fn(x))
        except Exception as exc:  # a failed evaluation must not stop the search
            log.warning("cost evaluation failed at %s: %s", np.array2string(np.asarray(x)), exc)
            return math.inf
        return math.inf if math.isnan(value) else value


def trial_vectors(cfg: DEConfig, population: np.ndarray, generation: int) -> np.ndarray:
    """All N_P trial vectors of ``generation`` from the previous population."""
    trials = np.empty_like(population)
    for i in range(population.shape[0]):
        rng = _rng(cfg, _TAG_TRIAL, generation, i)
        v = mutate(population, i, cfg.mu, rng, cfg)
        trials[i] = crossover(v, population[i], cfg.xi, rng, cfg.crossover)
    return trials


def _record(generation: int, population: np.ndarray, costs: np.ndarray) -> GenerationRecord:
    k = int(np.argmin(costs))
    finite = costs[np.isfinite(costs)]
    mean = float(finite.mean()) if finite.size else math.inf
    return GenerationRecord(generation, float(costs[k]), mean, tuple(float(v) for v in population[k]))


def _evaluate(cost: Callable, xs: np.ndarray, mapper: Callable) -> np.ndarray:
    return np.array(list(mapper(cost, list(xs))), dtype=float)


def optimize(
    cfg: DEConfig,
    cost: Callable[[np.ndarray], float],
    *,
    workers: int = 1,
    executor: Optional[Executor] = None,
    resume: Optional[DEState] = None,
    on_generation: Optional[Callable[[GenerationRecord, DEState], None]] = None,
) -> OptimizeResult:
    """Minimize ``cost`` inside ``cfg.bounds``.

    Trial costs of one generation are evaluated through ``executor.map`` (a
    process pool of ``workers`` processes when ``workers > 1`` and no
    executor is given), otherwise serially.  ``on_generation`` is called
    after every completed generation, including the initial population
    (generation 0); it is the hook for history streaming and checkpoints.
    """
    safe = SafeCost(cost)
    own_pool = None
    if executor is not None:
        mapper = executor.map
    elif workers > 1:
        own_pool = ProcessPoolExecutor(max_workers=workers)
        mapper = own_pool.map
    else:
        mapper = map
    try:
        if resume is None:
            population = init_population(cfg)
            costs = _evaluate(safe, population, mapper)
            history = OptimizationHistory([_record(0, population, costs)])
            state = DEState(0, population, costs, history)
            if on_generation is not None:
                on_generation(history.records[-1], state)
        else:
            state = resume
            if state.population.shape != (cfg.population_size, cfg.dim):
                raise CheckpointError("checkpoint population does not match the configuration")
        while True:
            best = float(np.min(state.costs))
            if best <= cfg.target_cost:
                reason = "target cost reached"
                break
            if state.generation >= cfg.max_generations:
                reason = "generation budget exhausted"
                break
            g = state.generation + 1
            trials = trial_vectors(cfg, state.population, g)
            trial_costs = _evaluate(safe, trials, mapper)
            better = trial_costs < state.costs
            population = np.where(better[:, None], trials, state.population)
            costs = np.where(better, trial_costs, state.costs)
            state.history.records.append(_record(g, population, costs))
            state = DEState(g, population, costs, state.history)
            if on_generation is not None:
                on_generation(state.history.records[-1], state)
    finally:
        if own_pool is not None:
            own_pool.shutdown()
    return OptimizeResult(state.best, state.history, state, reason)


def checkpoint_save(path: str | os.PathLike, state: DEState, cfg: DEConfig, context: str = "") -> None:
    """Write a versioned JSON checkpoint atomically (write then rename).

    The random state is fully determined by the seed and the generation
    counter, which are both stored.
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config_hash": cfg.fingerprint(context),
        "seed": int(cfg.seed),
        "generation": state.generation,
        "population": state.population.tolist(),
        "costs": state.costs.tolist(),
        "history": [r.as_dict() for r in state.history.records],
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=1))
    tmp.replace(path)


def checkpoint_load(path: str | os.PathLike, cfg: DEConfig, context: str = "") -> DEState:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a DE checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')!r}")
    if payload.get("config_hash") != cfg.fingerprint(context) or payload.get("seed") != int(cfg.seed):
        raise CheckpointError("checkpoint was written by a different configuration")
    try:
        population = np.array(payload["population"], dtype=float)
        costs = np.array(payload["costs"], dtype=float)
        records = [
            GenerationRecord(int(r["generation"]), float(r["best_cost"]), float(r["mean_cost"]),
                             tuple(float(v) for v in r["best_vector"]))
            for r in payload["history"]
        ]
        generation = int(payload["generation"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if population.shape != (cfg.population_size, cfg.dim) or costs.shape != (cfg.population_size,):
        raise CheckpointError("checkpoint population does not match the configuration")
    if not records or records[-1].generation != generation:
        raise CheckpointError("checkpoint history is inconsistent with its generation counter")
    return DEState(generation, population, costs, OptimizationHistory(records))
