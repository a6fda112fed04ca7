from collections import Counter
from random import Random

import pytest

from ganas.cache import FitnessCache
from ganas.evaluators import SurrogateEvaluator, surrogate_evaluate
from ganas.evolution import (
    EvaluationError,
    EvolutionParams,
    Individual,
    OffspringStats,
    Population,
    SearchHistory,
    crossover,
    environmental_selection,
    evaluate_population,
    generate_offspring,
    initialize_population,
    load_checkpoint,
    mutate,
    run_search,
    splice,
    tournament_select,
)
from ganas.genome import (
    Genome,
    PoolGene,
    SearchSpaceConfig,
    SkipGene,
    random_genome,
    serialize,
    validate,
)


class CountingEvaluator:
    """Deterministic counting stub backed by the surrogate."""

    deterministic = True
    requires_architecture = False

    def __init__(self, cfg, fail_after=None):
        self.cfg = cfg
        self.calls = 0
        self.fail_after = fail_after

    def evaluate(self, genome, architecture, budget):
        self.calls += 1
        if self.fail_after is not None and self.calls > self.fail_after:
            raise RuntimeError("synthetic evaluator outage")
        return surrogate_evaluate(genome, self.cfg)


def evaluated(genomes, fitnesses):
    return Population([Individual(g, f) for g, f in zip(genomes, fitnesses)])


def one_hot(op):
    ops = ("add_skip", "add_pool", "remove", "modify")
    return EvolutionParams(
        mutation_probs=tuple(1.0 if o == op else 0.0 for o in ops)
    )


# --- params ---------------------------------------------------------------

def test_params_defaults_follow_reference_settings():
    params = EvolutionParams()
    assert params.pop_size == 20
    assert params.generations == 20
    assert params.p_crossover == 0.9
    assert params.p_mutation == 0.2
    assert params.mutation_probs == (0.25, 0.25, 0.25, 0.25)


def test_params_validation():
    with pytest.raises(ValueError):
        EvolutionParams(p_crossover=1.5)
    with pytest.raises(ValueError):
        EvolutionParams(mutation_probs=(0.5, 0.5, 0.0, 0.1))
    with pytest.raises(ValueError):
        EvolutionParams(elitism_count=0)
    with pytest.raises(ValueError):
        EvolutionParams(pop_size=0)
    with pytest.raises(ValueError):
        EvolutionParams(pop_size=4, elitism_count=5)


# --- initialization --------------------------------------------------------

def test_initialize_population_size_and_freshness(cfg):
    params = EvolutionParams(pop_size=20)
    pop = initialize_population(cfg, params, Random(3))
    assert len(pop) == 20
    assert pop.generation == 0
    assert all(ind.fitness is None for ind in pop.members)
    assert all(validate(ind.genome, cfg) == [] for ind in pop.members)


def test_initialize_single_individual(cfg):
    pop = initialize_population(cfg, EvolutionParams(pop_size=1), Random(3))
    assert len(pop) == 1


def test_initialize_deterministic(cfg):
    params = EvolutionParams(pop_size=10)
    a = initialize_population(cfg, params, Random(9))
    b = initialize_population(cfg, params, Random(9))
    assert [ind.genome for ind in a.members] == [ind.genome for ind in b.members]


# --- cache-backed evaluation ------------------------------------------------

def test_distinct_genomes_cost_one_call_each(cfg):
    rng = Random(5)
    genomes = []
    while len(genomes) < 8:
        g = random_genome(cfg, rng)
        if g not in genomes:
            genomes.append(g)
    pop = Population([Individual(g) for g in genomes])
    evaluator = CountingEvaluator(cfg)
    cache = FitnessCache()
    evaluate_population(pop, evaluator, cache, cfg)
    assert evaluator.calls == 8
    assert all(ind.fitness is not None for ind in pop.members)


def test_reevaluation_hits_cache_only(cfg):
    pop = Population([Individual(random_genome(cfg, Random(6))) for _ in range(5)])
    evaluator = CountingEvaluator(cfg)
    cache = FitnessCache()
    evaluate_population(pop, evaluator, cache, cfg)
    first = evaluator.calls
    before = [ind.fitness for ind in pop.members]
    evaluate_population(pop, evaluator, cache, cfg)
    assert evaluator.calls == first
    assert [ind.fitness for ind in pop.members] == before


def test_duplicate_genomes_cost_distinct_calls(cfg):
    g1 = Genome((SkipGene(64, 64),))
    g2 = Genome((SkipGene(64, 128),))
    pop = Population([Individual(g) for g in (g1, g2, g1, g2, g1)])
    evaluator = CountingEvaluator(cfg)
    cache = FitnessCache()
    evaluate_population(pop, evaluator, cache, cfg)
    assert evaluator.calls == 2
    assert cache.stats.misses == 2
    assert cache.stats.hits == 3


def test_evaluator_failure_wrapped(cfg):
    pop = Population([Individual(Genome((SkipGene(64, 64),)))])

    class Broken:
        deterministic = True
        requires_architecture = False

        def evaluate(self, genome, architecture, budget):
            raise RuntimeError("boom")

    with pytest.raises(EvaluationError, match="boom"):
        evaluate_population(pop, Broken(), FitnessCache(), cfg)


def test_out_of_range_fitness_rejected(cfg):
    pop = Population([Individual(Genome((SkipGene(64, 64),)))])

    class TooHigh:
        deterministic = True
        requires_architecture = False

        def evaluate(self, genome, architecture, budget):
            return 1.7

    with pytest.raises(EvaluationError, match="outside"):
        evaluate_population(pop, TooHigh(), FitnessCache(), cfg)


# --- tournament -------------------------------------------------------------

def test_tournament_two_members_forced():
    strong = Individual(Genome((SkipGene(64, 64),)), 0.9)
    weak = Individual(Genome((SkipGene(128, 128),)), 0.1)
    rng = Random(0)
    for _ in range(100):
        assert tournament_select([strong, weak], rng) is strong


def test_tournament_uniform_over_equal_fitness():
    members = [Individual(Genome((SkipGene(64, 64 + i),)), 0.5) for i in range(5)]
    rng = Random(42)
    counts = Counter()
    draws = 10_000
    for _ in range(draws):
        counts[id(tournament_select(members, rng))] += 1
    expected = draws / len(members)
    chi2 = sum((c - expected) ** 2 / expected for c in counts.values())
    # chi-square critical value, df=4, p=0.001
    assert chi2 < 18.467


def test_tournament_prefers_fitter():
    members = [Individual(Genome((SkipGene(64, 64 + i),)), f)
               for i, f in enumerate((0.1, 0.3, 0.5, 0.7, 0.9))]
    rng = Random(7)
    counts = Counter()
    for _ in range(10_000):
        counts[tournament_select(members, rng).fitness] += 1
    assert counts[0.9] > counts[0.1]
    assert counts[0.1] == 0  # the worst never wins a binary tournament


def test_tournament_requires_fitness():
    members = [Individual(Genome((SkipGene(64, 64),))), Individual(Genome((SkipGene(64, 128),)))]
    with pytest.raises(ValueError, match="no fitness"):
        tournament_select(members, Random(0))


# --- crossover ---------------------------------------------------------------

def test_splice_boundary_full_and_empty():
    p1 = Genome((SkipGene(64, 64), PoolGene("max")))
    p2 = Genome((SkipGene(128, 128), PoolGene("mean"), SkipGene(256, 256)))
    o1, o2 = splice(p1, p2, len(p1), 0)
    assert o1.genes == p1.genes + p2.genes
    assert o2.genes == ()


def test_splice_zero_cuts_swap():
    p1 = Genome((SkipGene(64, 64),))
    p2 = Genome((PoolGene("max"), SkipGene(128, 128)))
    o1, o2 = splice(p1, p2, 0, 0)
    assert o1 == p2
    assert o2 == p1


def test_splice_conserves_genes(cfg):
    rng = Random(21)
    for _ in range(1000):
        p1, p2 = random_genome(cfg, rng), random_genome(cfg, rng)
        c1, c2 = rng.randint(0, len(p1)), rng.randint(0, len(p2))
        o1, o2 = splice(p1, p2, c1, c2)
        assert len(o1) + len(o2) == len(p1) + len(p2)
        assert Counter(o1.genes) + Counter(o2.genes) == Counter(p1.genes) + Counter(p2.genes)


def test_crossover_offspring_valid(cfg):
    rng = Random(22)
    for _ in range(200):
        p1, p2 = random_genome(cfg, rng), random_genome(cfg, rng)
        o1, o2 = crossover(p1, p2, cfg, rng)
        assert validate(o1, cfg) == []
        assert validate(o2, cfg) == []


# --- mutation ----------------------------------------------------------------

def test_mutate_remove_on_singleton_is_noop(cfg):
    g = Genome((PoolGene("max"),))
    assert mutate(g, one_hot("remove"), cfg, Random(1)) == g


def test_mutate_add_skip(cfg):
    g = Genome((PoolGene("max"),))
    mutated = mutate(g, one_hot("add_skip"), cfg, Random(2))
    assert len(mutated) == 2
    assert sum(isinstance(x, SkipGene) for x in mutated) == 1
    assert sum(isinstance(x, PoolGene) for x in mutated) == 1


def test_mutate_modify_flips_pool_kind(cfg):
    g = Genome((PoolGene("max"),))
    assert mutate(g, one_hot("modify"), cfg, Random(3)) == Genome((PoolGene("mean"),))


def test_mutate_length_deltas(cfg):
    # base genomes leave headroom so insert/remove deltas are never repaired
    rng = Random(31)
    deltas = {"add_skip": 1, "add_pool": 1, "remove": -1, "modify": 0}
    for op, delta in deltas.items():
        params = one_hot(op)
        for _ in range(200):
            g = random_genome(cfg, rng)
            while not (2 <= len(g) < cfg.max_length):
                g = random_genome(cfg, rng)
            pools = sum(isinstance(x, PoolGene) for x in g)
            if op == "add_pool" and pools >= cfg.max_pools:
                continue
            mutated = mutate(g, params, cfg, rng)
            assert len(mutated) - len(g) == delta, op
            assert validate(mutated, cfg) == []


def test_mutate_insertion_overflow_is_repaired():
    cfg = SearchSpaceConfig(max_length=2)
    g = Genome((SkipGene(64, 64), SkipGene(128, 128)))
    mutated = mutate(g, one_hot("add_skip"), cfg, Random(5))
    assert len(mutated) == 2
    assert validate(mutated, cfg) == []


# --- offspring generation -----------------------------------------------------

def make_evaluated_population(cfg, n, seed):
    rng = Random(seed)
    pop = Population([Individual(random_genome(cfg, rng)) for _ in range(n)])
    evaluate_population(pop, CountingEvaluator(cfg), FitnessCache(), cfg)
    return pop


def test_offspring_all_copies_when_probabilities_zero(cfg):
    pop = make_evaluated_population(cfg, 10, seed=41)
    params = EvolutionParams(pop_size=10, p_crossover=0.0, p_mutation=0.0)
    offspring = generate_offspring(pop, params, cfg, Random(42))
    assert len(offspring) == 10
    parent_genomes = {serialize(ind.genome) for ind in pop.members}
    assert all(serialize(ind.genome) in parent_genomes for ind in offspring.members)
    assert all(ind.fitness is None for ind in offspring.members)


def test_offspring_valid_under_full_crossover(cfg):
    pop = make_evaluated_population(cfg, 10, seed=43)
    params = EvolutionParams(pop_size=10, p_crossover=1.0, p_mutation=0.0)
    offspring = generate_offspring(pop, params, cfg, Random(44))
    assert len(offspring) == 10
    assert all(validate(ind.genome, cfg) == [] for ind in offspring.members)


def test_offspring_odd_population_size(cfg):
    pop = make_evaluated_population(cfg, 7, seed=45)
    params = EvolutionParams(pop_size=7)
    offspring = generate_offspring(pop, params, cfg, Random(46))
    assert len(offspring) == 7


def test_offspring_requires_evaluated_parents(cfg):
    pop = Population([Individual(random_genome(cfg, Random(47))) for _ in range(4)])
    with pytest.raises(ValueError, match="no fitness"):
        generate_offspring(pop, EvolutionParams(pop_size=4), cfg, Random(48))


def test_offspring_operator_rates(cfg):
    pop = make_evaluated_population(cfg, 20, seed=49)
    params = EvolutionParams(pop_size=20, p_crossover=0.9, p_mutation=0.2)
    stats = OffspringStats()
    rng = Random(50)
    for _ in range(200):
        generate_offspring(pop, params, cfg, rng, stats=stats)
    crossover_rate = stats.crossover_pairs / stats.pairs
    mutation_rate = stats.mutated / stats.offspring
    assert abs(crossover_rate - 0.9) < 0.03
    assert abs(mutation_rate - 0.2) < 0.03


# --- environmental selection ----------------------------------------------------

def test_union_best_always_survives(cfg):
    for seed in range(30):
        parents = make_evaluated_population(cfg, 8, seed=seed)
        offspring = make_evaluated_population(cfg, 8, seed=seed + 1000)
        union_best = max(parents.members + offspring.members, key=lambda i: i.fitness)
        selected = environmental_selection(parents, offspring,
                                           EvolutionParams(pop_size=8), Random(seed))
        assert len(selected) == 8
        assert selected.generation == parents.generation + 1
        assert any(ind.genome == union_best.genome and ind.fitness == union_best.fitness
                   for ind in selected.members)


def test_selection_with_equal_fitness_draws_from_union(cfg):
    genomes = [Genome((SkipGene(64, 64 + i),)) for i in range(6)]
    parents = evaluated(genomes[:3], [0.5] * 3)
    offspring = evaluated(genomes[3:], [0.5] * 3)
    selected = environmental_selection(parents, offspring,
                                       EvolutionParams(pop_size=3), Random(1))
    union_ids = {serialize(g) for g in genomes}
    assert len(selected) == 3
    assert all(serialize(ind.genome) in union_ids for ind in selected.members)


def test_selection_requires_fitness(cfg):
    parents = Population([Individual(Genome((SkipGene(64, 64),)), 0.5),
                          Individual(Genome((SkipGene(64, 128),)), 0.6)])
    offspring = Population([Individual(Genome((SkipGene(128, 64),)))])
    with pytest.raises(ValueError, match="no fitness"):
        environmental_selection(parents, offspring, EvolutionParams(pop_size=2), Random(2))


def test_best_fitness_never_decreases(cfg):
    for seed in range(20):
        result = run_search(cfg, EvolutionParams(pop_size=8, generations=6, seed=seed),
                            SurrogateEvaluator(cfg), FitnessCache())
        best = result.history.best_trajectory()
        assert all(b >= a for a, b in zip(best, best[1:]))


# --- full search -----------------------------------------------------------------

def test_search_zero_generations(cfg):
    params = EvolutionParams(pop_size=6, generations=0, seed=3)
    result = run_search(cfg, params, SurrogateEvaluator(cfg), FitnessCache())
    assert len(result.history.records) == 1
    pop = initialize_population(cfg, params, Random(3))
    evaluate_population(pop, SurrogateEvaluator(cfg), FitnessCache(), cfg)
    assert result.best.fitness == pop.best().fitness


def test_search_deterministic(cfg):
    params = EvolutionParams(pop_size=10, generations=5, seed=11)
    a = run_search(cfg, params, SurrogateEvaluator(cfg), FitnessCache())
    b = run_search(cfg, params, SurrogateEvaluator(cfg), FitnessCache())
    assert a.history.to_json() == b.history.to_json()
    assert serialize(a.best.genome) == serialize(b.best.genome)


def test_search_history_contents(cfg):
    params = EvolutionParams(pop_size=6, generations=3, seed=5)
    result = run_search(cfg, params, SurrogateEvaluator(cfg), FitnessCache())
    assert [r.generation for r in result.history.records] == [0, 1, 2, 3]
    for record in result.history.records:
        assert 0.0 <= record.mean_fitness <= record.best_fitness <= 1.0
        assert record.best_id
    doc = result.history.to_doc()
    assert SearchHistory.from_doc(doc).to_json() == result.history.to_json()


def test_checkpoint_resume_matches_uninterrupted(cfg, tmp_path):
    params = EvolutionParams(pop_size=8, generations=5, seed=13)
    reference = run_search(cfg, params, SurrogateEvaluator(cfg), FitnessCache())

    checkpoint = str(tmp_path / "checkpoint.json")
    cache_path = str(tmp_path / "cache.ndjson")
    cache = FitnessCache()
    failing = CountingEvaluator(cfg, fail_after=30)
    with pytest.raises(EvaluationError) as excinfo:
        run_search(cfg, params, failing, cache, checkpoint_path=checkpoint,
                   cache_path=cache_path)
    assert excinfo.value.checkpoint_path == checkpoint

    from ganas.cache import restore

    resumed_cache = restore(cache_path)
    resumed = run_search(cfg, params, SurrogateEvaluator(cfg), resumed_cache,
                         checkpoint_path=checkpoint, resume_from=checkpoint)
    # cache hit/miss counters necessarily differ after a resume (the replayed
    # generation hits entries the aborted attempt missed); the search
    # trajectory itself must be identical
    trajectory = lambda r: [(rec.generation, rec.best_fitness, rec.mean_fitness, rec.best_id)
                            for rec in r.history.records]
    assert trajectory(resumed) == trajectory(reference)
    assert serialize(resumed.best.genome) == serialize(reference.best.genome)
    assert resumed.best.fitness == reference.best.fitness


def test_checkpoint_file_round_trip(cfg, tmp_path):
    checkpoint = str(tmp_path / "checkpoint.json")
    params = EvolutionParams(pop_size=6, generations=2, seed=17)
    run_search(cfg, params, SurrogateEvaluator(cfg), FitnessCache(),
               checkpoint_path=checkpoint)
    state = load_checkpoint(checkpoint)
    assert state["generation"] == 2
    assert len(state["population"]) == 6
    assert all(ind.fitness is not None for ind in state["population"].members)
    assert state["best"].fitness is not None


def test_every_population_member_stays_valid(cfg):
    params = EvolutionParams(pop_size=10, generations=8, seed=19)
    cache = FitnessCache()
    rng = Random(19)
    population = initialize_population(cfg, params, rng)
    evaluator = SurrogateEvaluator(cfg)
    evaluate_population(population, evaluator, cache, cfg)
    for _ in range(params.generations):
        offspring = generate_offspring(population, params, cfg, rng)
        assert all(validate(ind.genome, cfg) == [] for ind in offspring.members)
        evaluate_population(offspring, evaluator, cache, cfg)
        population = environmental_selection(population, offspring, params, rng)
        assert all(validate(ind.genome, cfg) == [] for ind in population.members)
