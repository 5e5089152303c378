from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tandemga.ga import (GaConfig, Population, crossover, evolve_generation, init_population,
                         mutate, run_optimization, tournament_select, write_history_csv)
from tandemga.neuro import GENOME_BITS


def ones_count_evaluator(calls=None):
    """Fitness = number of set bits; deterministic and cheap."""
    def evaluate(genomes, episodes):
        if calls is not None:
            calls.append(list(episodes))
        return [SimpleNamespace(fitness=float(g.sum()), switch_time=None, plant_time=1.0)
                for g in genomes]
    return evaluate


class TestConfig:
    def test_five_percent_split(self):
        cfg = GaConfig(pop_size=100)
        assert (cfg.n_elite, cfg.n_reinit) == (5, 5)

    def test_floor_rounding(self):
        cfg = GaConfig(pop_size=30)
        assert (cfg.n_elite, cfg.n_reinit) == (1, 1)

    @pytest.mark.parametrize("kw", [dict(pop_size=3), dict(elite_frac=0.6, reinit_frac=0.4),
                                    dict(p_mutation=1.5), dict(mutation_mode="gene"),
                                    dict(tournament_size=0), dict(generations=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            GaConfig(**kw)


class TestInit:
    def test_shape(self):
        pop = init_population(GaConfig(pop_size=100), np.random.default_rng(0))
        assert pop.genomes.shape == (100, GENOME_BITS)
        assert np.isnan(pop.fitness).all()

    def test_seeded(self):
        a = init_population(GaConfig(), np.random.default_rng(4))
        b = init_population(GaConfig(), np.random.default_rng(4))
        np.testing.assert_array_equal(a.genomes, b.genomes)

    def test_bits_are_fair(self):
        n = 4000
        pop = init_population(GaConfig(pop_size=n), np.random.default_rng(1))
        freq = pop.genomes.mean(axis=0)
        sigma = np.sqrt(0.25 / n)
        assert np.all(np.abs(freq - 0.5) < 6 * sigma)


class TestTournament:
    def test_single(self):
        assert tournament_select(np.array([3.0]), 2, np.random.default_rng(0)) == 0

    def test_two_specimens_three_quarters(self):
        rng = np.random.default_rng(7)
        n = 40000
        wins = sum(tournament_select(np.array([1.0, 2.0]), 2, rng) == 0 for _ in range(n))
        p = 0.75
        assert abs(wins / n - p) < 5 * np.sqrt(p * (1 - p) / n)

    def test_best_of_k_probability(self):
        # P(best is returned) = 1 - (1 - 1/n)^k for k draws with replacement
        rng = np.random.default_rng(8)
        fit = np.arange(10, dtype=float)
        n, k = 20000, 4
        hits = sum(tournament_select(fit, k, rng) == 0 for _ in range(n))
        p = 1 - (1 - 1 / 10) ** k
        assert abs(hits / n - p) < 5 * np.sqrt(p * (1 - p) / n)

    def test_rejects_unevaluated(self):
        with pytest.raises(ValueError):
            tournament_select(np.array([np.nan, np.nan]), 2, np.random.default_rng(0))


class TestCrossover:
    def test_no_crossover(self):
        rng = np.random.default_rng(0)
        a, b = np.zeros(GENOME_BITS, np.uint8), np.ones(GENOME_BITS, np.uint8)
        c1, c2 = crossover(a, b, 0.0, rng)
        np.testing.assert_array_equal(c1, a)
        np.testing.assert_array_equal(c2, b)

    def test_forced_cut(self):
        a, b = np.zeros(GENOME_BITS, np.uint8), np.ones(GENOME_BITS, np.uint8)
        c1, c2 = crossover(a, b, 1.0, np.random.default_rng(0), cut=528)
        assert c1[:528].sum() == 0 and c1[528:].all()
        np.testing.assert_array_equal(c2, 1 - c1)

    @settings(max_examples=50)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_bits_are_swapped_not_invented(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.integers(0, 2, GENOME_BITS).astype(np.uint8)
        b = rng.integers(0, 2, GENOME_BITS).astype(np.uint8)
        c1, c2 = crossover(a, b, 1.0, rng)
        np.testing.assert_array_equal(np.sort(np.stack([c1, c2]), axis=0), np.sort(np.stack([a, b]), axis=0))


class TestMutation:
    def test_zero_rate(self):
        g = np.ones(GENOME_BITS, np.uint8)
        np.testing.assert_array_equal(mutate(g, 0.0, np.random.default_rng(0)), g)

    def test_certain_mutation_flips_something(self):
        rng = np.random.default_rng(3)
        g = np.zeros(GENOME_BITS, np.uint8)
        for _ in range(200):
            assert mutate(g, 1.0, rng).sum() >= 1

    def test_mean_hamming_distance(self):
        n, p = GENOME_BITS, 0.1
        # E[flips | flips >= 1] for Binomial(n, 1/n)
        expected = p * 1.0 / (1 - (1 - 1 / n) ** n)
        rng = np.random.default_rng(12)
        g = np.zeros(n, np.uint8)
        d = np.array([mutate(g, p, rng).sum() for _ in range(40000)])
        assert abs(d.mean() - expected) < 5 * d.std() / np.sqrt(len(d))

    def test_bit_mode_rate(self):
        rng = np.random.default_rng(2)
        g = np.zeros(GENOME_BITS, np.uint8)
        flips = np.mean([mutate(g, 0.01, rng, mode="bit").sum() for _ in range(500)])
        assert abs(flips - 0.01 * GENOME_BITS) < 1.0


class TestEvolve:
    def test_composition_and_elites(self):
        cfg = GaConfig(pop_size=100)
        rng = np.random.default_rng(0)
        pop = init_population(cfg, rng)
        pop.fitness = rng.permutation(100).astype(float)
        nxt = evolve_generation(pop, cfg, rng)
        assert len(nxt) == 100 and nxt.genomes.shape[1] == GENOME_BITS
        best = np.argsort(pop.fitness)[:5]
        np.testing.assert_array_equal(nxt.genomes[:5], pop.genomes[best])
        np.testing.assert_array_equal(nxt.fitness[:5], pop.fitness[best])
        assert np.isnan(nxt.fitness[5:]).all()

    def test_requires_evaluated_population(self):
        cfg = GaConfig(pop_size=10)
        with pytest.raises(ValueError):
            evolve_generation(init_population(cfg, np.random.default_rng(0)), cfg, np.random.default_rng(0))


class TestRunOptimization:
    def test_selection_only_picks_argmin(self):
        g = np.zeros((4, GENOME_BITS), np.uint8)
        for i, k in enumerate((7, 2, 9, 5)):
            g[i, :k] = 1
        res = run_optimization(GaConfig(pop_size=4, generations=0, selection_generations=1),
                               ones_count_evaluator(), initial=Population(g, np.full(4, np.nan)))
        assert res.best.fitness == 2.0
        np.testing.assert_array_equal(res.best.genome, g[1])

    def test_accumulates_over_selection_passes(self):
        cfg = GaConfig(pop_size=6, generations=2, selection_generations=3, seed=1)
        res = run_optimization(cfg, ones_count_evaluator())
        np.testing.assert_allclose(res.accumulated, 3 * res.population.genomes.sum(axis=1))
        assert len(res.history) == 2 and len(res.selection) == 3

    def test_best_is_monotone_and_elites_survive(self):
        cfg = GaConfig(pop_size=20, generations=30, selection_generations=0, seed=2)
        seen = []

        def evaluate(genomes, episodes):
            seen.append(genomes.copy())
            return ones_count_evaluator()(genomes, episodes)

        res = run_optimization(cfg, evaluate)
        best = [r.best_fitness for r in res.history]
        assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
        assert best[-1] < best[0]
        for prev, cur in zip(seen, seen[1:]):
            winner = prev[np.argmin(prev.sum(axis=1))]
            assert any(np.array_equal(winner, c) for c in cur)
            assert cur.shape == (20, GENOME_BITS)

    def test_episode_ids_are_unique_per_evaluation(self):
        calls = []
        run_optimization(GaConfig(pop_size=5, generations=3, selection_generations=2),
                         ones_count_evaluator(calls))
        flat = [e for c in calls for e in c]
        assert len(flat) == len(set(flat)) == 25

    def test_seeded_runs_repeat(self):
        cfg = GaConfig(pop_size=10, generations=5, selection_generations=2, seed=3)
        a = run_optimization(cfg, ones_count_evaluator())
        b = run_optimization(cfg, ones_count_evaluator())
        np.testing.assert_array_equal(a.population.genomes, b.population.genomes)
        assert a.history == b.history

    def test_skipping_elite_reevaluation(self):
        calls = []
        cfg = GaConfig(pop_size=20, generations=3, selection_generations=0, reevaluate_elites=False)
        run_optimization(cfg, ones_count_evaluator(calls))
        assert [len(c) for c in calls] == [20, 19, 19]

    def test_errors_name_the_generation(self):
        def boom(genomes, episodes):
            raise RuntimeError("plant exploded")

        with pytest.raises(RuntimeError, match="generation 0: plant exploded"):
            run_optimization(GaConfig(pop_size=4, generations=1), boom)


def test_history_csv(tmp_path):
    res = run_optimization(GaConfig(pop_size=4, generations=3, selection_generations=1),
                           ones_count_evaluator())
    path = write_history_csv(tmp_path / "h.csv", res.history, "digest: abc")
    lines = path.read_text().splitlines()
    assert lines[0] == "# digest: abc"
    assert lines[1] == "generation,best_fitness,mean_fitness,switch_count,elapsed_s"
    assert len(lines) == 5
