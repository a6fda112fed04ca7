"""The evolutionary engine.

One generation is: evaluate the parents through the global fitness cache,
breed an offspring population with binary-tournament parent selection,
single-point variable-length crossover and the four-operator mutation
list, evaluate the offspring, then fill the next generation with binary
tournaments over parents plus offspring, keeping the best individual alive
(elitism).

Everything is driven by one seeded ``random.Random`` instance, so a run is
fully deterministic given its seed and a deterministic evaluator.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from random import Random
from typing import Callable, Sequence

from ganas.cache import FitnessCache
from ganas.evaluators import Evaluator, TrainingBudget
from ganas.genome import (
    Genome,
    PoolGene,
    SearchSpaceConfig,
    SkipGene,
    parse,
    random_genome,
    repair,
    serialize,
)
from ganas.graph import decode, graph_to_json

MUTATION_OPS = ("add_skip", "add_pool", "remove", "modify")


class EvaluationError(Exception):
    """An evaluator failed; carries the checkpoint path when one was written."""

    def __init__(self, message: str, checkpoint_path: str | None = None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


@dataclass
class Individual:
    genome: Genome
    fitness: float | None = None

    def copy(self) -> "Individual":
        return Individual(self.genome, self.fitness)


@dataclass
class Population:
    members: list[Individual]
    generation: int = 0

    def __len__(self) -> int:
        return len(self.members)

    def best(self) -> Individual:
        return max(self.members, key=_fitness_of)


@dataclass(frozen=True)
class EvolutionParams:
    """Search hyperparameters; defaults follow the reference setup."""

    pop_size: int = 20
    generations: int = 20
    p_crossover: float = 0.9
    p_mutation: float = 0.2
    mutation_ops: tuple[str, ...] = MUTATION_OPS
    mutation_probs: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    elitism_count: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.pop_size < 1:
            raise ValueError("pop_size must be >= 1")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        for name in ("p_crossover", "p_mutation"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if len(self.mutation_ops) != 4 or len(self.mutation_probs) != 4:
            raise ValueError("mutation_ops and mutation_probs must have 4 entries")
        if set(self.mutation_ops) != set(MUTATION_OPS):
            raise ValueError(f"mutation_ops must be a permutation of {MUTATION_OPS}")
        if any(p < 0 for p in self.mutation_probs):
            raise ValueError("mutation_probs must be non-negative")
        if not math.isclose(sum(self.mutation_probs), 1.0, abs_tol=1e-9):
            raise ValueError("mutation_probs must sum to 1")
        if self.elitism_count < 1:
            raise ValueError("elitism_count must be >= 1")
        if self.elitism_count > self.pop_size:
            raise ValueError("elitism_count cannot exceed pop_size")


@dataclass
class OffspringStats:
    """Operator application counters, filled by generate_offspring."""

    pairs: int = 0
    crossover_pairs: int = 0
    offspring: int = 0
    mutated: int = 0


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    best_fitness: float
    mean_fitness: float
    best_id: str
    cache_hits: int
    cache_misses: int


@dataclass
class SearchHistory:
    records: list[GenerationRecord] = field(default_factory=list)

    def best_trajectory(self) -> list[float]:
        return [r.best_fitness for r in self.records]

    def to_doc(self) -> dict:
        return {"records": [vars(r) for r in self.records]}

    def to_json(self) -> str:
        return json.dumps(self.to_doc(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_doc(cls, doc: dict) -> "SearchHistory":
        return cls([GenerationRecord(**r) for r in doc["records"]])


@dataclass
class SearchResult:
    best: Individual
    history: SearchHistory


def _fitness_of(individual: Individual) -> float:
    if individual.fitness is None:
        raise ValueError(f"individual {serialize(individual.genome)!r} has no fitness")
    return individual.fitness


def initialize_population(cfg: SearchSpaceConfig, params: EvolutionParams,
                          rng: Random) -> Population:
    members = [Individual(random_genome(cfg, rng)) for _ in range(params.pop_size)]
    return Population(members, generation=0)


def evaluate_population(population: Population, evaluator: Evaluator,
                        cache: FitnessCache, cfg: SearchSpaceConfig,
                        budget: TrainingBudget | None = None) -> Population:
    """Assign fitness to every member, consulting the global cache first.

    Cache misses invoke the evaluator and insert the result, so duplicate
    genomes within one population cost a single evaluation. Evaluator
    failures surface as :class:`EvaluationError`; previously completed
    evaluations stay in the cache, which is what makes an aborted
    generation resumable.
    """
    budget = budget or TrainingBudget()
    for individual in population.members:
        genome_id = serialize(individual.genome)
        cached = cache.lookup(genome_id)
        if cached is not None:
            individual.fitness = cached
            continue
        architecture = None
        if evaluator.requires_architecture:
            architecture = graph_to_json(decode(individual.genome, cfg))
        try:
            fitness = evaluator.evaluate(individual.genome, architecture, budget)
        except Exception as exc:
            raise EvaluationError(f"evaluation of {genome_id!r} failed: {exc}") from exc
        if not 0.0 <= fitness <= 1.0:
            raise EvaluationError(
                f"evaluator returned fitness {fitness} outside [0, 1] for {genome_id!r}"
            )
        individual.fitness = fitness
        cache.insert(genome_id, fitness)
    return population


def tournament_select(members: Sequence[Individual], rng: Random) -> Individual:
    """Binary tournament: draw two distinct members, keep the better.

    Ties are broken uniformly at random.
    """
    if len(members) < 2:
        raise ValueError("tournament needs at least two members")
    a, b = (members[i] for i in rng.sample(range(len(members)), 2))
    fa, fb = _fitness_of(a), _fitness_of(b)
    if fa == fb:
        return a if rng.random() < 0.5 else b
    return a if fa > fb else b


def splice(parent1: Genome, parent2: Genome, cut1: int, cut2: int) -> tuple[Genome, Genome]:
    """Exchange tails at the given cut points; no repair applied."""
    child1 = parent1.genes[:cut1] + parent2.genes[cut2:]
    child2 = parent2.genes[:cut2] + parent1.genes[cut1:]
    return Genome(child1), Genome(child2)


def crossover(parent1: Genome, parent2: Genome, cfg: SearchSpaceConfig,
              rng: Random) -> tuple[Genome, Genome]:
    """Single-point crossover for variable-length genomes.

    Cut points are drawn independently and uniformly over [0, len], so the
    spliced children conserve the parents' combined gene multiset before
    repair.
    """
    cut1 = rng.randint(0, len(parent1))
    cut2 = rng.randint(0, len(parent2))
    child1, child2 = splice(parent1, parent2, cut1, cut2)
    return repair(child1, cfg, rng), repair(child2, cfg, rng)


def mutate(genome: Genome, params: EvolutionParams, cfg: SearchSpaceConfig,
           rng: Random) -> Genome:
    """Apply one mutation drawn from the operation list.

    add_skip / add_pool insert a random gene (depth +1), remove deletes the
    gene at a random position (depth -1, no-op on a single-gene genome) and
    modify resamples a skip gene's widths or flips a pooling kind in place.
    The result is repaired, which only matters when an insertion overflows
    the length or pooling bounds.
    """
    op = rng.choices(params.mutation_ops, weights=params.mutation_probs)[0]
    genes = list(genome.genes)
    if op == "add_skip":
        index = rng.randint(0, len(genes))
        genes.insert(index, SkipGene(rng.choice(cfg.feature_maps), rng.choice(cfg.feature_maps)))
    elif op == "add_pool":
        index = rng.randint(0, len(genes))
        genes.insert(index, PoolGene(rng.choice(("max", "mean"))))
    elif op == "remove":
        if len(genes) > 1:
            del genes[rng.randint(0, len(genes) - 1)]
    elif op == "modify":
        index = rng.randint(0, len(genes) - 1)
        gene = genes[index]
        if isinstance(gene, SkipGene):
            genes[index] = SkipGene(rng.choice(cfg.feature_maps), rng.choice(cfg.feature_maps))
        else:
            genes[index] = PoolGene("mean" if gene.kind == "max" else "max")
    else:
        raise ValueError(f"unknown mutation op {op!r}")
    return repair(Genome(tuple(genes)), cfg, rng)


def generate_offspring(population: Population, params: EvolutionParams,
                       cfg: SearchSpaceConfig, rng: Random,
                       stats: OffspringStats | None = None) -> Population:
    """Breed an offspring population the same size as the parents.

    Parents are picked by binary tournament, re-drawing the second parent
    until it is a different population slot. Each pair either crosses over
    (probability p_crossover) or is copied; every offspring then mutates
    independently with probability p_mutation. An odd population size drops
    one offspring of the final pair at random.
    """
    members = population.members
    target = len(members)
    offspring: list[Genome] = []
    while len(offspring) < target:
        parent1 = tournament_select(members, rng)
        parent2 = tournament_select(members, rng)
        while parent2 is parent1:
            parent2 = tournament_select(members, rng)
        if stats is not None:
            stats.pairs += 1
        if rng.random() < params.p_crossover:
            child1, child2 = crossover(parent1.genome, parent2.genome, cfg, rng)
            if stats is not None:
                stats.crossover_pairs += 1
        else:
            child1, child2 = parent1.genome, parent2.genome
        offspring.extend((child1, child2))
    if len(offspring) > target:
        del offspring[rng.randint(len(offspring) - 2, len(offspring) - 1)]

    mutated: list[Individual] = []
    for genome in offspring:
        if stats is not None:
            stats.offspring += 1
        if rng.random() < params.p_mutation:
            genome = mutate(genome, params, cfg, rng)
            if stats is not None:
                stats.mutated += 1
        mutated.append(Individual(genome))
    return Population(mutated, generation=population.generation)


def environmental_selection(parents: Population, offspring: Population,
                            params: EvolutionParams, rng: Random) -> Population:
    """Binary tournaments over parents plus offspring, with elitism.

    Slots are filled by tournaments over the union, drawing with
    replacement across slots. The top ``elitism_count`` union members are
    then guaranteed a slot, displacing the worst selected members.
    """
    union = parents.members + offspring.members
    for individual in union:
        _fitness_of(individual)
    chosen = [tournament_select(union, rng).copy() for _ in range(params.pop_size)]

    elites = sorted(union, key=_fitness_of, reverse=True)[: params.elitism_count]
    for elite in elites:
        if any(c.genome == elite.genome and c.fitness == elite.fitness for c in chosen):
            continue
        worst = min(range(len(chosen)), key=lambda i: chosen[i].fitness)
        chosen[worst] = elite.copy()
    return Population(chosen, generation=parents.generation + 1)


# --- search loop with checkpointing --------------------------------------


def _rng_state_to_doc(state) -> list:
    return [state[0], list(state[1]), state[2]]


def _rng_state_from_doc(doc) -> tuple:
    return (doc[0], tuple(doc[1]), doc[2])


def save_checkpoint(path: str, generation: int, rng_state, population: Population,
                    history: SearchHistory, best: Individual | None) -> None:
    doc = {
        "generation": generation,
        "rng_state": _rng_state_to_doc(rng_state),
        "population": [[serialize(ind.genome), ind.fitness] for ind in population.members],
        "history": history.to_doc(),
        "best": None if best is None else [serialize(best.genome), best.fitness],
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    os.replace(tmp, path)


def load_checkpoint(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    population = Population(
        [Individual(parse(text), fitness) for text, fitness in doc["population"]],
        generation=doc["generation"],
    )
    best = None
    if doc["best"] is not None:
        best = Individual(parse(doc["best"][0]), doc["best"][1])
    return {
        "generation": doc["generation"],
        "rng_state": _rng_state_from_doc(doc["rng_state"]),
        "population": population,
        "history": SearchHistory.from_doc(doc["history"]),
        "best": best,
    }


ProgressFn = Callable[[GenerationRecord], None]


def run_search(cfg: SearchSpaceConfig, params: EvolutionParams, evaluator: Evaluator,
               cache: FitnessCache, budget: TrainingBudget | None = None,
               checkpoint_path: str | None = None, cache_path: str | None = None,
               resume_from: str | None = None,
               progress: ProgressFn | None = None) -> SearchResult:
    """Run the full generational loop and return the best-ever individual.

    When ``checkpoint_path`` is set, the engine snapshots population, rng
    state and history after every generation, and also on evaluation
    failure; a failed run resumed via ``resume_from`` replays the
    interrupted generation with identical random draws while the cache
    skips the evaluations that already completed.
    """
    rng = Random(params.seed)
    history = SearchHistory()
    best: Individual | None = None

    def snapshot(generation: int, rng_state, population: Population) -> str | None:
        if checkpoint_path is None:
            return None
        save_checkpoint(checkpoint_path, generation, rng_state, population, history, best)
        if cache_path is not None:
            cache.persist(cache_path)
        return checkpoint_path

    def record(population: Population) -> None:
        nonlocal best
        top = population.best()
        if best is None or top.fitness > best.fitness:
            best = top.copy()
        fitnesses = [_fitness_of(ind) for ind in population.members]
        rec = GenerationRecord(
            generation=population.generation,
            best_fitness=top.fitness,
            mean_fitness=sum(fitnesses) / len(fitnesses),
            best_id=serialize(top.genome),
            cache_hits=cache.stats.hits,
            cache_misses=cache.stats.misses,
        )
        history.records.append(rec)
        if progress is not None:
            progress(rec)

    if resume_from is not None:
        state = load_checkpoint(resume_from)
        population = state["population"]
        history = state["history"]
        best = state["best"]
        rng.setstate(state["rng_state"])
        start_generation = state["generation"]
        if any(ind.fitness is None for ind in population.members) or not history.records:
            # interrupted during the initial evaluation; finish it first
            _evaluate_or_snapshot(population, evaluator, cache, cfg, budget, snapshot, rng)
            record(population)
    else:
        population = initialize_population(cfg, params, rng)
        _evaluate_or_snapshot(population, evaluator, cache, cfg, budget, snapshot, rng)
        record(population)
        start_generation = 0
        snapshot(population.generation, rng.getstate(), population)

    for _ in range(start_generation, params.generations):
        generation_start_state = rng.getstate()
        try:
            offspring = generate_offspring(population, params, cfg, rng)
            evaluate_population(offspring, evaluator, cache, cfg, budget)
            population = environmental_selection(population, offspring, params, rng)
        except EvaluationError as exc:
            path = snapshot(population.generation, generation_start_state, population)
            raise EvaluationError(str(exc), checkpoint_path=path) from exc
        record(population)
        snapshot(population.generation, rng.getstate(), population)

    return SearchResult(best=best, history=history)


def _evaluate_or_snapshot(population, evaluator, cache, cfg, budget, snapshot, rng):
    try:
        evaluate_population(population, evaluator, cache, cfg, budget)
    except EvaluationError as exc:
        path = snapshot(population.generation, rng.getstate(), population)
        raise EvaluationError(str(exc), checkpoint_path=path) from exc
