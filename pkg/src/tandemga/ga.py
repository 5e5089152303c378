"""Bit-string genetic algorithm with a replace-then-accumulate fitness lifecycle.

Phase 1 (``generations`` rounds): evaluate every specimen and overwrite its
stored fitness; between rounds the next population is bred (elites, fresh
random genomes, tournament/crossover/mutation offspring). Phase 2
(``selection_generations`` rounds): no breeding; every specimen is
re-evaluated and its fitness summed, and the lowest sum wins.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .neuro import GENOME_BITS

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GaConfig:
    pop_size: int = 100
    generations: int = 500
    selection_generations: int = 20
    elite_frac: float = 0.05
    reinit_frac: float = 0.05
    p_crossover: float = 0.5
    p_mutation: float = 0.1
    tournament_size: int = 2
    mutation_mode: str = "specimen"
    reevaluate_elites: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.pop_size < 4:
            raise ValueError("pop_size must be at least 4")
        if self.generations < 0 or self.selection_generations < 0:
            raise ValueError("generation counts must be non-negative")
        if not (0 <= self.elite_frac and 0 <= self.reinit_frac and self.elite_frac + self.reinit_frac < 1):
            raise ValueError("need elite_frac, reinit_frac >= 0 and elite_frac + reinit_frac < 1")
        for name in ("p_crossover", "p_mutation"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be at least 1")
        if self.mutation_mode not in ("specimen", "bit"):
            raise ValueError("mutation_mode must be 'specimen' or 'bit'")

    @property
    def n_elite(self) -> int:
        return math.floor(self.elite_frac * self.pop_size)

    @property
    def n_reinit(self) -> int:
        return math.floor(self.reinit_frac * self.pop_size)


@dataclass
class Population:
    genomes: np.ndarray                 # (n, GENOME_BITS) uint8
    fitness: np.ndarray                 # (n,) float, nan = not evaluated

    def __len__(self) -> int:
        return len(self.genomes)

    @property
    def evaluated(self) -> bool:
        return not np.isnan(self.fitness).any()


@dataclass(frozen=True)
class Specimen:
    genome: np.ndarray
    fitness: float


@dataclass
class GenerationRecord:
    generation: int
    phase: str
    best_fitness: float
    mean_fitness: float
    switch_count: int
    elapsed_s: float


@dataclass
class OptimizationResult:
    best: Specimen
    history: list[GenerationRecord]
    selection: list[GenerationRecord]
    population: Population
    accumulated: np.ndarray = field(default_factory=lambda: np.zeros(0))


def random_genomes(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=(n, GENOME_BITS), dtype=np.uint8)


def init_population(cfg: GaConfig, rng: np.random.Generator) -> Population:
    return Population(random_genomes(cfg.pop_size, rng), np.full(cfg.pop_size, np.nan))


def tournament_select(fitness: np.ndarray, k: int, rng: np.random.Generator) -> int:
    """Index of the lowest-fitness specimen among k uniform draws (with replacement).

    Ties go to the earliest draw.
    """
    draws = rng.integers(0, len(fitness), size=k)
    f = fitness[draws]
    if np.isnan(f).any():
        raise ValueError("tournament drew an unevaluated specimen")
    return int(draws[np.argmin(f)])


def crossover(a: np.ndarray, b: np.ndarray, p: float, rng: np.random.Generator,
              cut: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Single-point crossover with probability p; the cut lies in [1, n - 1]."""
    if a.shape != b.shape:
        raise ValueError("crossover parents differ in length")
    c1, c2 = a.copy(), b.copy()
    if cut is None:
        if rng.random() >= p:
            return c1, c2
        cut = int(rng.integers(1, len(a)))
    c1[cut:], c2[cut:] = b[cut:], a[cut:]
    return c1, c2


def mutate(g: np.ndarray, p: float, rng: np.random.Generator, mode: str = "specimen") -> np.ndarray:
    """Bit-flip mutation.

    ``specimen`` mode: with probability p, flip each bit at rate 1/n, redrawing
    until at least one bit flips. ``bit`` mode: every bit flips independently
    with probability p.
    """
    n = len(g)
    if mode == "bit":
        return g ^ (rng.random(n) < p).astype(np.uint8)
    if rng.random() >= p:
        return g.copy()
    while True:
        flips = rng.random(n) < 1.0 / n
        if flips.any():
            return g ^ flips.astype(np.uint8)


def evolve_generation(pop: Population, cfg: GaConfig, rng: np.random.Generator) -> Population:
    if not pop.evaluated:
        raise ValueError("cannot breed from an unevaluated population")
    n = len(pop)
    order = np.argsort(pop.fitness, kind="stable")
    elite = order[:cfg.n_elite]
    genomes = [pop.genomes[i].copy() for i in elite]
    fitness = [pop.fitness[i] for i in elite]
    fresh = random_genomes(cfg.n_reinit, rng)
    genomes.extend(fresh)
    fitness.extend([np.nan] * cfg.n_reinit)
    while len(genomes) < n:
        a = pop.genomes[tournament_select(pop.fitness, cfg.tournament_size, rng)]
        b = pop.genomes[tournament_select(pop.fitness, cfg.tournament_size, rng)]
        for child in crossover(a, b, cfg.p_crossover, rng):
            if len(genomes) < n:
                genomes.append(mutate(child, cfg.p_mutation, rng, cfg.mutation_mode))
                fitness.append(np.nan)
    return Population(np.array(genomes, dtype=np.uint8), np.array(fitness, dtype=np.float64))


# evaluate(genomes, episode_ids) -> sequence of objects with .fitness, .switch_time, .plant_time
Evaluator = Callable[[np.ndarray, Sequence[int]], Sequence]


def _record(gen, phase, fit, outcomes, elapsed) -> GenerationRecord:
    switches = sum(1 for o in outcomes if o.switch_time is not None)
    return GenerationRecord(gen, phase, float(np.min(fit)), float(np.mean(fit)), switches, elapsed)


def run_optimization(cfg: GaConfig, evaluate: Evaluator,
                     on_generation: Callable[[GenerationRecord], None] | None = None,
                     initial: Population | None = None) -> OptimizationResult:
    rng = np.random.default_rng(cfg.seed)
    pop = initial if initial is not None else init_population(cfg, rng)
    n = len(pop)
    elapsed = 0.0
    history: list[GenerationRecord] = []

    def run_batch(gen, idx):
        try:
            return list(evaluate(pop.genomes[idx], [gen * n + int(i) for i in idx]))
        except Exception as exc:
            raise type(exc)(f"generation {gen}: {exc}") from exc

    for gen in range(cfg.generations):
        if gen > 0:
            pop = evolve_generation(pop, cfg, rng)
        if cfg.reevaluate_elites:
            todo = np.arange(n)
        else:
            todo = np.flatnonzero(np.isnan(pop.fitness))
        outcomes = run_batch(gen, todo)
        for i, o in zip(todo, outcomes):
            pop.fitness[i] = o.fitness
        elapsed += sum(o.plant_time for o in outcomes)
        rec = _record(gen, "evolve", pop.fitness, outcomes, elapsed)
        history.append(rec)
        if on_generation:
            on_generation(rec)

    if cfg.selection_generations == 0:
        if not pop.evaluated:
            raise ValueError("nothing to select from: no generations were evaluated")
        acc = pop.fitness.copy()
    else:
        acc = np.zeros(n)
    selection: list[GenerationRecord] = []
    everyone = np.arange(n)
    for s in range(cfg.selection_generations):
        gen = cfg.generations + s
        outcomes = run_batch(gen, everyone)
        acc += np.array([o.fitness for o in outcomes])
        elapsed += sum(o.plant_time for o in outcomes)
        rec = _record(gen, "select", acc, outcomes, elapsed)
        selection.append(rec)
        if on_generation:
            on_generation(rec)
    best_i = int(np.argsort(acc, kind="stable")[0])
    best = Specimen(pop.genomes[best_i].copy(), float(acc[best_i]))
    return OptimizationResult(best, history, selection, pop, acc)


HISTORY_COLUMNS = ("generation", "best_fitness", "mean_fitness", "switch_count", "elapsed_s")


def write_history_csv(path, records: Sequence[GenerationRecord], header: str | None = None) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        for line in (header or "").splitlines():
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in records:
            w.writerow([r.generation, f"{r.best_fitness:.9g}", f"{r.mean_fitness:.9g}",
                        r.switch_count, f"{r.elapsed_s:.9g}"])
    return path
