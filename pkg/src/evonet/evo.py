"""Two-objective evolutionary search over hidden-layer width sequences.

Objectives: validation accuracy (maximize) and parameter count (minimize).
Each candidate is warm-started from the current teacher through a Net2Net
transform, adapted on the target training split, then scored.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core_nn import (
    Architecture,
    DnnModel,
    OptimizationError,
    classification_accuracy,
    param_count,
)
from .domain_adapt import AdaptConfig, finetune
from .net2net import transform_to_architecture

logger = logging.getLogger(__name__)

Chromosome = tuple[int, ...]


@dataclass(frozen=True)
class FitnessRecord:
    ca: float
    params: int


@dataclass
class EvoConfig:
    population_size: int = 100
    crossover_prob: float = 0.8
    mutation_prob: float = 0.2
    max_generations: int = 20
    depth_range: tuple[int, int] = (1, 8)
    width_range: tuple[int, int] = (4, 400)
    sbx_eta: float = 15.0
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    seed: int = 0
    fitness_cache: bool = False
    worker_count: int = 1
    final_finetune_iters: int = 200
    # forwarded to widen_layer; see net2net.DEFAULT_SPLIT_NOISE
    split_noise: float = 1e-5

    def __post_init__(self):
        self.depth_range = tuple(int(v) for v in self.depth_range)
        self.width_range = tuple(int(v) for v in self.width_range)
        if not 0.0 <= self.crossover_prob <= 1.0:
            raise ValueError(f"crossover_prob must lie in [0, 1], got {self.crossover_prob}")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError(f"mutation_prob must lie in [0, 1], got {self.mutation_prob}")
        if self.population_size < 2 or self.population_size % 2:
            raise ValueError(f"population_size must be even and >= 2, got {self.population_size}")
        n_min, n_max = self.depth_range
        h_min, h_max = self.width_range
        if not 1 <= n_min <= n_max:
            raise ValueError(f"depth_range must satisfy 1 <= min <= max, got {self.depth_range}")
        if not 1 <= h_min <= h_max:
            raise ValueError(f"width_range must satisfy 1 <= min <= max, got {self.width_range}")
        if self.sbx_eta <= 0:
            raise ValueError("sbx_eta must be positive")
        if self.max_generations < 0:
            raise ValueError("max_generations must be >= 0")
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")


@dataclass
class GenerationReport:
    generation: int
    population: list[Chromosome]
    records: list[FitnessRecord]
    ranks: list[int]
    best_index: int
    best_so_far_ca: float

    @property
    def best_chromosome(self) -> Chromosome:
        return self.population[self.best_index]

    @property
    def best_ca(self) -> float:
        return self.records[self.best_index].ca

    @property
    def pareto_front(self) -> list[int]:
        return [i for i, r in enumerate(self.ranks) if r == 1]

    def to_dict(self) -> dict:
        return {
            "generation": self.generation,
            "individuals": [
                {"widths": list(c), "ca": r.ca, "params": r.params, "rank": k}
                for c, r, k in zip(self.population, self.records, self.ranks)
            ],
            "best_widths": list(self.best_chromosome),
            "best_ca": self.best_ca,
            "best_so_far_ca": self.best_so_far_ca,
            "pareto_front": self.pareto_front,
        }


# -- encoding ---------------------------------------------------------------


def random_chromosome(cfg: EvoConfig, rng: np.random.Generator) -> Chromosome:
    n_min, n_max = cfg.depth_range
    h_min, h_max = cfg.width_range
    depth = int(rng.integers(n_min, n_max + 1))
    return tuple(int(h) for h in rng.integers(h_min, h_max + 1, size=depth))


def init_population(cfg: EvoConfig, rng: np.random.Generator, size: int | None = None) -> list[Chromosome]:
    size = cfg.population_size if size is None else size
    if size < 1:
        raise ValueError("population size must be >= 1")
    n_min, n_max = cfg.depth_range
    h_min, h_max = cfg.width_range
    depths = rng.integers(n_min, n_max + 1, size=size)
    return [tuple(int(h) for h in rng.integers(h_min, h_max + 1, size=d)) for d in depths]


def decode(c: Sequence[int], input_dim: int, num_classes: int) -> Architecture:
    return Architecture(input_dim, tuple(c), num_classes)


def encode(arch: Architecture) -> Chromosome:
    return tuple(arch.hidden_widths)


def in_bounds(c: Chromosome, cfg: EvoConfig) -> bool:
    n_min, n_max = cfg.depth_range
    h_min, h_max = cfg.width_range
    return n_min <= len(c) <= n_max and all(h_min <= h <= h_max for h in c)


# -- Pareto machinery -------------------------------------------------------


def dominates(a: FitnessRecord, b: FitnessRecord) -> bool:
    return (a.ca >= b.ca and a.params <= b.params) and (a.ca > b.ca or a.params < b.params)


def nondominated_sort(records: Sequence[FitnessRecord]) -> list[int]:
    """Fast non-dominated sorting; returns a 1-based front rank per record."""
    n = len(records)
    if n == 0:
        raise ValueError("cannot rank an empty population")
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    counts = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(records[i], records[j]):
                dominated_by[i].append(j)
                counts[j] += 1
            elif dominates(records[j], records[i]):
                dominated_by[j].append(i)
                counts[i] += 1
    ranks = [0] * n
    front = [i for i in range(n) if counts[i] == 0]
    rank = 1
    while front:
        nxt = []
        for i in front:
            ranks[i] = rank
            for j in dominated_by[i]:
                counts[j] -= 1
                if counts[j] == 0:
                    nxt.append(j)
        front = nxt
        rank += 1
    return ranks


def crowding_distance(records: Sequence[FitnessRecord], ranks: Sequence[int]) -> list[float]:
    n = len(records)
    dist = np.zeros(n)
    objectives = np.array([[r.ca, r.params] for r in records], dtype=float).reshape(n, 2)
    ranks = np.asarray(ranks)
    for rank in np.unique(ranks):
        members = np.flatnonzero(ranks == rank)
        if members.size <= 2:
            dist[members] = np.inf
            continue
        for k in range(objectives.shape[1]):
            vals = objectives[members, k]
            order = members[np.argsort(vals, kind="stable")]
            dist[order[0]] = np.inf
            dist[order[-1]] = np.inf
            span = vals.max() - vals.min()
            if span == 0:
                continue
            sorted_vals = objectives[order, k]
            dist[order[1:-1]] += (sorted_vals[2:] - sorted_vals[:-2]) / span
    return dist.tolist()


def select_indices(ranks: Sequence[int], distances: Sequence[float], n: int) -> list[int]:
    """Indices of the ``n`` survivors: whole fronts first, then the least crowded.

    Ties in crowding distance at the cut go to the lower index.
    """
    ranks = np.asarray(ranks)
    distances = np.asarray(distances, dtype=float)
    if ranks.size < n:
        raise ValueError(f"cannot select {n} parents from {ranks.size} individuals")
    chosen: list[int] = []
    for rank in np.unique(ranks):
        members = np.flatnonzero(ranks == rank)
        room = n - len(chosen)
        if members.size <= room:
            chosen.extend(members.tolist())
        else:
            order = sorted(members.tolist(), key=lambda i: (-distances[i], i))
            chosen.extend(order[:room])
        if len(chosen) == n:
            break
    return chosen


def select_parents(R: Sequence, ranks, distances, n: int) -> list:
    return [R[i] for i in select_indices(ranks, distances, n)]


def tournament_indices(ranks: Sequence[int], n: int, rng: np.random.Generator) -> list[int]:
    """Binary tournaments on rank alone; equal ranks are settled by a coin flip."""
    ranks = np.asarray(ranks)
    chosen = []
    for _ in range(n):
        i, j = rng.integers(0, ranks.size, size=2)
        if ranks[i] < ranks[j]:
            chosen.append(int(i))
        elif ranks[j] < ranks[i]:
            chosen.append(int(j))
        else:
            chosen.append(int(i if rng.random() < 0.5 else j))
    return chosen


# -- variation operators ----------------------------------------------------


def clamp_depth(c: Sequence[int], cfg: EvoConfig, rng: np.random.Generator) -> Chromosome:
    n_min, n_max = cfg.depth_range
    h_min, h_max = cfg.width_range
    c = list(c)[:n_max]
    while len(c) < n_min:
        c.append(int(rng.integers(h_min, h_max + 1)))
    return tuple(c)


def depth_crossover(
    p1: Chromosome,
    p2: Chromosome,
    rng: np.random.Generator,
    cfg: EvoConfig | None = None,
    cuts: tuple[int, int] | None = None,
) -> tuple[Chromosome, Chromosome]:
    """Single-point crossover with an independent cut in each parent.

    A cut ``k`` keeps the first ``k`` genes as prefix. Children are
    ``p1[:k1] + p2[k2:]`` and ``p2[:k2] + p1[k1:]``, clamped to the depth
    range when ``cfg`` is given.
    """
    if not p1 or not p2:
        raise ValueError("parents must have at least one gene")
    if cuts is None:
        k1 = int(rng.integers(1, len(p1) + 1))
        k2 = int(rng.integers(1, len(p2) + 1))
    else:
        k1, k2 = cuts
    c1 = tuple(p1[:k1]) + tuple(p2[k2:])
    c2 = tuple(p2[:k2]) + tuple(p1[k1:])
    if cfg is not None:
        c1, c2 = clamp_depth(c1, cfg, rng), clamp_depth(c2, cfg, rng)
    return c1, c2


def sbx_beta(u: float, eta: float) -> float:
    if u <= 0.5:
        return (2.0 * u) ** (1.0 / (eta + 1.0))
    return (1.0 / (2.0 * (1.0 - u))) ** (1.0 / (eta + 1.0))


def sbx_pair(g1: float, g2: float, beta: float) -> tuple[float, float]:
    return (
        0.5 * ((1.0 + beta) * g1 + (1.0 - beta) * g2),
        0.5 * ((1.0 - beta) * g1 + (1.0 + beta) * g2),
    )


def _round_clamp(x: float, lo: int, hi: int) -> int:
    return int(min(max(np.floor(x + 0.5), lo), hi))


def sbx_common(
    p1: Chromosome,
    p2: Chromosome,
    rng: np.random.Generator,
    eta: float,
    width_range: tuple[int, int] = (1, np.iinfo(np.int64).max),
) -> tuple[Chromosome, Chromosome]:
    """Gene-wise SBX over the shared prefix; the longer tail is copied through."""
    h_min, h_max = width_range
    n = min(len(p1), len(p2))
    c1, c2 = list(p1), list(p2)
    for k in range(n):
        u = rng.random()
        while u == 0.0:
            u = rng.random()
        a, b = sbx_pair(p1[k], p2[k], sbx_beta(u, eta))
        c1[k] = _round_clamp(a, h_min, h_max)
        c2[k] = _round_clamp(b, h_min, h_max)
    return tuple(c1), tuple(c2)


def _fraction_count(prob: float, n: int) -> int:
    return int(np.floor(prob * n + 0.5))


def crossover_mutation(P: Sequence[Chromosome], cfg: EvoConfig, rng: np.random.Generator) -> list[Chromosome]:
    """Offspring by paired hybrid crossover, then replacement mutation.

    ``round(p_c * N)`` members are drawn for crossover and consumed in random
    pairs (an odd one out is left as is). Mutation overwrites
    ``round(p_m * N)`` random slots with the same slots of a freshly
    initialized population.
    """
    Q = list(P)
    n = len(Q)
    pool = list(rng.permutation(n)[: _fraction_count(cfg.crossover_prob, n)])
    while len(pool) >= 2:
        i1, i2 = int(pool.pop()), int(pool.pop())
        a, b = depth_crossover(Q[i1], Q[i2], rng, cfg)
        Q[i1], Q[i2] = sbx_common(a, b, rng, cfg.sbx_eta, cfg.width_range)
    fresh = init_population(cfg, rng, size=n)
    for i in rng.permutation(n)[: _fraction_count(cfg.mutation_prob, n)]:
        Q[int(i)] = fresh[int(i)]
    return Q


# -- fitness ----------------------------------------------------------------


def individual_rng(seed: int, generation: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, generation, index])


def max_param_count(cfg: EvoConfig, input_dim: int, num_classes: int) -> int:
    n_max = cfg.depth_range[1]
    h_max = cfg.width_range[1]
    return param_count(Architecture(input_dim, (h_max,) * n_max, num_classes))


def evaluate_individual(chromosome, teacher, D_s, D_tr, D_val, cfg: EvoConfig, rng, finetune_fn=None):
    """Transform, fine-tune and score one chromosome.

    Returns ``(record, model)``; a run whose loss turns non-finite yields
    ``ca = 0`` with the largest parameter count in the search space and no
    model.
    """
    finetune_fn = finetune_fn or finetune
    arch = decode(chromosome, teacher.arch.input_dim, teacher.arch.num_classes)
    try:
        student = transform_to_architecture(teacher, arch, rng, split_noise=cfg.split_noise)
        tuned, history = finetune_fn(student, D_s, D_tr, cfg.adapt)
        if not np.all(np.isfinite(history)):
            raise OptimizationError("non-finite loss during fine-tuning")
        ca = classification_accuracy(tuned, D_val.features, D_val.labels)
    except (OptimizationError, FloatingPointError, ValueError) as exc:
        logger.warning("individual %s diverged: %s", chromosome, exc)
        return FitnessRecord(0.0, max_param_count(cfg, arch.input_dim, arch.num_classes)), None
    return FitnessRecord(ca, param_count(arch)), tuned


def _evaluate_job(args):
    chromosome, teacher, D_s, D_tr, D_val, cfg, seed_key = args
    return evaluate_individual(chromosome, teacher, D_s, D_tr, D_val, cfg, np.random.default_rng(seed_key))


def best_index(records: Sequence[FitnessRecord]) -> int:
    """Highest accuracy, then fewest parameters, then lowest index."""
    return min(range(len(records)), key=lambda i: (-records[i].ca, records[i].params, i))


def eval_fitness(
    pop: Sequence[Chromosome],
    teacher: DnnModel,
    D_s,
    D_tr,
    D_val,
    cfg: EvoConfig,
    generation: int = 0,
    cache: dict | None = None,
    finetune_fn: Callable | None = None,
    executor=None,
) -> tuple[list[FitnessRecord], DnnModel | None, int]:
    """Score a population; returns ``(records, best_model, best_index)``.

    Every individual draws from its own generator keyed on (seed,
    generation, index), so results do not depend on the worker count.
    ``cache`` maps chromosomes to earlier ``(record, model)`` results.
    """
    results: list = [None] * len(pop)
    todo = []
    for i, c in enumerate(pop):
        if cache is not None and c in cache:
            results[i] = cache[c]
        else:
            todo.append(i)
    # duplicates inside one population are evaluated once, at the first index
    first: dict[Chromosome, int] = {}
    jobs = []
    for i in todo:
        if pop[i] in first:
            continue
        first[pop[i]] = i
        jobs.append(i)
    if executor is not None and finetune_fn is None and len(jobs) > 1:
        args = [(pop[i], teacher, D_s, D_tr, D_val, cfg, [cfg.seed, generation, i]) for i in jobs]
        outs = list(executor.map(_evaluate_job, args))
    else:
        outs = [
            evaluate_individual(
                pop[i], teacher, D_s, D_tr, D_val, cfg,
                individual_rng(cfg.seed, generation, i), finetune_fn,
            )
            for i in jobs
        ]
    for i, out in zip(jobs, outs):
        results[i] = out
        if cache is not None and out[1] is not None:
            cache[pop[i]] = out
    for i in todo:
        if results[i] is None:
            results[i] = results[first[pop[i]]]
    records = [r for r, _ in results]
    b = best_index(records)
    return records, results[b][1], b


# -- main loop --------------------------------------------------------------


def evolve(
    teacher: DnnModel,
    D_s,
    target_splits,
    cfg: EvoConfig,
    callback: Callable[[GenerationReport], None] | None = None,
) -> tuple[DnnModel, list[GenerationReport]]:
    """Run the search and return the best model of the last generation.

    ``target_splits`` is ``(D_tr, D_val, D_te)``; only the first two are
    used during the search. ``cfg.max_generations`` counts iterations of the
    main loop after the initial population, so 0 returns the best initial
    individual. With ``cfg.final_finetune_iters > 0`` the returned model gets
    that many extra fine-tuning steps.
    """
    D_tr, D_val = target_splits[0], target_splits[1]
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    n = cfg.population_size
    cache: dict | None = {} if cfg.fitness_cache else None
    executor = ProcessPoolExecutor(cfg.worker_count) if cfg.worker_count > 1 else None
    reports: list[GenerationReport] = []
    best_so_far = -np.inf

    def report(gen, pop, records, ranks, b):
        nonlocal best_so_far
        best_so_far = max(best_so_far, records[b].ca)
        rep = GenerationReport(gen, list(pop), list(records), list(ranks), b, float(best_so_far))
        reports.append(rep)
        logger.info(
            "generation %d: best %s CA %.2f (best so far %.2f), front size %d",
            gen, rep.best_chromosome, rep.best_ca, best_so_far, len(rep.pareto_front),
        )
        if callback is not None:
            callback(rep)

    try:
        P0 = init_population(cfg, rng)
        records, best_model, b = eval_fitness(P0, teacher, D_s, D_tr, D_val, cfg, 0, cache, executor=executor)
        ranks = nondominated_sort(records)
        report(0, P0, records, ranks, b)
        P = [P0[i] for i in tournament_indices(ranks, n, rng)]
        Q = crossover_mutation(P, cfg, rng)
        if best_model is not None:
            teacher = best_model

        for gen in range(1, cfg.max_generations + 1):
            R = P + Q
            records, gen_best, b = eval_fitness(R, teacher, D_s, D_tr, D_val, cfg, gen, cache, executor=executor)
            ranks = nondominated_sort(records)
            dist = crowding_distance(records, ranks)
            report(gen, R, records, ranks, b)
            P = [R[i] for i in select_indices(ranks, dist, n)]
            Q = crossover_mutation(P, cfg, rng)
            if gen_best is not None:
                best_model = gen_best
                teacher = gen_best
    finally:
        if executor is not None:
            executor.shutdown()

    if best_model is None:
        raise OptimizationError("every individual diverged; no model to return")
    if cfg.final_finetune_iters > 0:
        best_model, _ = finetune(best_model, D_s, D_tr, cfg.adapt, iterations=cfg.final_finetune_iters)
    return best_model, reports


def config_dict(cfg: EvoConfig) -> dict:
    return asdict(cfg)
