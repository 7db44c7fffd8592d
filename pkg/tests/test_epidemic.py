import numpy as np
import pytest
from conftest import path_graph, star_graph

from keynodes.epidemic import (
    REPORT_HEADER,
    SirConfig,
    compare_methods,
    default_mu,
    infection_rate,
    robustness,
    sir_run,
)
from keynodes.errors import DataError
from keynodes.graphs import CascadeGraph, synth_cascade


class TestSirRun:
    def test_mu_zero_infects_only_seeds(self):
        g = path_graph(10)
        rng = np.random.default_rng(0)
        assert sir_run(g, [0, 3], 0.0, rng) == 2

    def test_mu_one_floods_connected_graph(self):
        g = synth_cascade(50, 0.0, 0.0, 1)  # a tree is weakly connected
        rng = np.random.default_rng(0)
        assert sir_run(g, [7], 1.0, rng) == 50

    def test_empty_seeds_rejected(self):
        with pytest.raises(DataError):
            sir_run(path_graph(3), [], 0.5, np.random.default_rng(0))

    def test_chain_closed_form(self):
        """Single seed at the head of a chain: each hop survives with
        probability mu, so E[count] = sum_k mu^k."""
        k, mu, runs = 6, 0.5, 50_000
        g = path_graph(k)
        rng = np.random.default_rng(42)
        counts = np.array([sir_run(g, [0], mu, rng) for _ in range(runs)], dtype=float)
        expect = sum(mu**i for i in range(k))
        band = 3.0 * counts.std(ddof=1) / np.sqrt(runs)
        assert abs(counts.mean() - expect) <= band

    def test_multiple_exposures_aggregate(self):
        # both ends seeded on a 3-path: middle node sees two infected
        # neighbors, so P(infected) = 1 - (1-mu)^2
        g = path_graph(3)
        mu, runs = 0.3, 40_000
        rng = np.random.default_rng(7)
        hits = np.array([sir_run(g, [0, 2], mu, rng) - 2 for _ in range(runs)], dtype=float)
        expect = 1.0 - (1.0 - mu) ** 2
        band = 3.0 * hits.std(ddof=1) / np.sqrt(runs)
        assert abs(hits.mean() - expect) <= band


class TestInfectionRate:
    def test_mu_zero_exact(self):
        g = synth_cascade(100, 0.0, 0.0, 2)
        st, se = infection_rate(g, list(range(5)), SirConfig(mu=0.0, runs=50, rng_seed=1))
        assert st == 0.05
        assert se == 0.0

    def test_mu_one_exact(self):
        g = synth_cascade(40, 0.0, 0.0, 3)
        st, se = infection_rate(g, [0], SirConfig(mu=1.0, runs=20, rng_seed=1))
        assert st == 1.0 and se == 0.0

    def test_seeds_always_counted(self):
        g = synth_cascade(60, 0.1, 0.0, 4)
        seeds = [0, 5, 9]
        st, _ = infection_rate(g, seeds, SirConfig(mu=0.2, runs=30, rng_seed=2))
        assert st >= len(seeds) / g.n

    def test_stderr_scales_with_runs(self):
        g = synth_cascade(80, 0.1, 0.0, 5)
        errs = []
        for runs in (100, 400, 1600):
            _, se = infection_rate(g, [0, 1], SirConfig(mu=0.3, runs=runs, rng_seed=3))
            errs.append(se)
        assert abs(errs[0] / errs[1] - 2.0) < 0.4  # within 20% of sqrt(4)
        assert abs(errs[1] / errs[2] - 2.0) < 0.4

    def test_deterministic(self):
        g = synth_cascade(50, 0.1, 0.0, 6)
        cfg = SirConfig(mu=0.4, runs=25, rng_seed=9)
        assert infection_rate(g, [1, 2], cfg) == infection_rate(g, [1, 2], cfg)

    def test_config_validated(self):
        with pytest.raises(DataError):
            SirConfig(mu=1.5)
        with pytest.raises(DataError):
            SirConfig(runs=0)


class TestRobustness:
    def test_no_removal(self):
        assert robustness(path_graph(8), set()) == 1.0

    def test_remove_all(self):
        assert robustness(path_graph(5), set(range(5))) == 0.0

    def test_star_center_removal(self):
        g = star_graph(9)  # 10 nodes
        assert robustness(g, {0}) == 1 / 10

    def test_antitone_under_superset(self):
        g = synth_cascade(60, 0.1, 0.0, 7)
        seeds = []
        prev = 1.0
        for v in (0, 1, 2, 3, 4):
            seeds.append(v)
            cur = robustness(g, set(seeds))
            assert cur <= prev
            prev = cur


class TestDefaultMu:
    def test_capped_and_positive(self):
        for seed in range(4):
            g = synth_cascade(100, 0.2, 0.0, seed)
            mu = default_mu(g)
            assert 0.0 < mu <= 1.0

    def test_degenerate_graph_capped_at_one(self):
        g = CascadeGraph(4, [(0, 1), (2, 3)])  # all undirected degrees 1
        assert default_mu(g) == 1.0


class TestCompareMethods:
    def test_random_at_mu_zero_hits_fraction(self):
        graphs = [synth_cascade(100, 0.0, 0.0, s) for s in range(3)]
        report = compare_methods(graphs, ["random"], SirConfig(mu=0.0, runs=10, rng_seed=0), 0.05)
        for row in report.rows:
            assert row.st_mean == 0.05
            assert row.st_stderr == 0.0

    def test_row_count_is_graphs_times_methods(self):
        graphs = [synth_cascade(40, 0.1, 0.0, s) for s in range(4)]
        methods = ["degree", "kshell", "random"]
        report = compare_methods(graphs, methods, SirConfig(mu=0.2, runs=5, rng_seed=0), 0.1)
        assert len(report.rows) == len(graphs) * len(methods)
        csv = report.to_csv()
        lines = csv.strip().split("\n")
        assert lines[0] == REPORT_HEADER
        assert len(lines) == 1 + len(graphs) * len(methods)

    def test_unknown_method_lists_valid(self):
        graphs = [synth_cascade(30, 0.0, 0.0, 0)]
        with pytest.raises(DataError, match="degree"):
            compare_methods(graphs, ["pagerank"], SirConfig(mu=0.1), 0.1)

    def test_greedy_fragments_more_than_random(self):
        graphs = [synth_cascade(500, 0.1, 0.5, 100 + s) for s in range(20)]
        report = compare_methods(
            graphs, ["greedy", "random"], SirConfig(mu=0.1, runs=5, rng_seed=1), 0.05
        )
        means = report.method_means()
        assert means["greedy"][1] < means["random"][1]

    def test_custom_scorer_and_table(self):
        graphs = [synth_cascade(50, 0.1, 0.0, s) for s in range(2)]
        scorers = {"mmen": lambda g, gi: g.out_degrees().astype(float)}
        report = compare_methods(
            graphs, ["mmen", "random"], SirConfig(mu=0.3, runs=10, rng_seed=2), 0.1, scorers=scorers
        )
        table = report.to_table()
        assert "mmen" in table and "random" in table
        assert set(report.method_means()) == {"mmen", "random"}

    def test_parallel_jobs_identical(self):
        graphs = [synth_cascade(60, 0.1, 0.2, 50 + s) for s in range(4)]
        cfg = SirConfig(mu=0.25, runs=10, rng_seed=3)
        seq = compare_methods(graphs, ["degree", "random"], cfg, 0.1, jobs=1)
        par = compare_methods(graphs, ["degree", "random"], cfg, 0.1, jobs=4)
        assert seq.to_csv() == par.to_csv()

    def test_fraction_validated(self):
        with pytest.raises(DataError):
            compare_methods([path_graph(5)], ["degree"], SirConfig(mu=0.1), 0.0)
