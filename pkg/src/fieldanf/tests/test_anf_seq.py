import time
from unittest.mock import patch

import numpy as np
import pytest

from fieldanf.anf_seq import (
    effective_diameter,
    fixpoint_radius,
    hyperanf_seq,
    hyperanf_seq_async,
    neighbourhood_function,
)
from fieldanf.errors import ParameterError
from fieldanf.graph import Graph, SourceSet, bfs_neighbourhood, gnp_graph, path_graph, ring_graph
from fieldanf.hll import CounterKind

EXACT = CounterKind.exact()


def bfs_table(g: Graph, H: int, sources: SourceSet) -> np.ndarray:
    return np.array([bfs_neighbourhood(g, v, H, sources) for v in range(g.n)], dtype=float)


class TestHyperAnfSeq:

    @pytest.fixture
    def p3(self):
        return path_graph(3)

    def test_p3_exact(self, p3):
        table, counters = hyperanf_seq(p3, 2, SourceSet.all(3), EXACT)
        assert table.rows() == [[1, 2, 3], [1, 3, 3], [1, 2, 3]]
        assert [c.members for c in counters] == [{0, 1, 2}] * 3

    def test_radius_zero(self):
        g = gnp_graph(20, 0.2, seed=4)
        table, _ = hyperanf_seq(g, 0, SourceSet.all(g.n), EXACT)
        assert table.rows() == [[1.0]] * g.n

    def test_source_subset(self, p3):
        table, _ = hyperanf_seq(p3, 2, SourceSet.from_ids(3, [2]), EXACT)
        assert table.row(0) == [0, 0, 1]

    def test_matches_bfs_on_gnp(self):
        g = gnp_graph(64, 0.08, seed=3)
        sources = SourceSet.all(g.n)
        table, _ = hyperanf_seq(g, 6, sources, EXACT)
        assert np.array_equal(table.values, bfs_table(g, 6, sources))

    def test_matches_bfs_on_fifty_graphs(self):
        rng = np.random.default_rng(99)
        for seed in range(50):
            n = int(rng.integers(10, 201))
            g = gnp_graph(n, float(rng.uniform(0.5, 3.0)) / n, seed=seed)
            sources = SourceSet.from_ids(n, np.flatnonzero(rng.random(n) < 0.7).tolist())
            table, _ = hyperanf_seq(g, 8, sources, EXACT)
            assert np.array_equal(table.values, bfs_table(g, 8, sources)), f"seed {seed}"

    def test_directed_counts_out_reach(self):
        g = Graph.from_edges(3, [(0, 1), (1, 2)], directed=True)
        table, _ = hyperanf_seq(g, 2, SourceSet.all(3), EXACT)
        assert table.rows() == [[1, 2, 3], [1, 2, 2], [1, 1, 1]]

    def test_non_reflexive_variant(self, p3):
        table, _ = hyperanf_seq(p3, 2, SourceSet.all(3), EXACT, reflexive=False)
        assert table.row(0) == [1, 1, 2]
        assert not table.reflexive

    def test_vertex_order_does_not_matter(self):
        g = gnp_graph(40, 0.08, seed=8)
        perm = np.random.default_rng(1).permutation(g.n)
        permuted = Graph.from_edges(g.n, [(int(perm[u]), int(perm[v])) for u, v in g.edges()])
        table, _ = hyperanf_seq(g, 5, SourceSet.all(g.n), EXACT)
        permuted_table, _ = hyperanf_seq(permuted, 5, SourceSet.all(g.n), EXACT)
        assert np.array_equal(permuted_table.values[perm], table.values)

    def test_hll_is_deterministic(self):
        g = gnp_graph(100, 0.05, seed=2)
        kind = CounterKind.hyperloglog(6, 123)
        first, first_counters = hyperanf_seq(g, 5, SourceSet.all(g.n), kind)
        second, second_counters = hyperanf_seq(g, 5, SourceSet.all(g.n), kind)
        assert first.equals(second)
        assert first_counters == second_counters

    def test_hll_estimates_are_close(self):
        g = gnp_graph(200, 0.03, seed=6)
        sources = SourceSet.all(g.n)
        table, _ = hyperanf_seq(g, 4, sources, CounterKind.hyperloglog(12, 0))
        exact = bfs_table(g, 4, sources)
        errors = np.abs(table.values - exact) / exact
        assert errors.mean() < 0.03
        assert errors[exact >= 50].max() < 0.1

    def test_negative_radius(self, p3):
        with pytest.raises(ParameterError):
            hyperanf_seq(p3, -1, SourceSet.all(3), EXACT)

    def test_source_set_size_mismatch(self, p3):
        with pytest.raises(ParameterError):
            hyperanf_seq(p3, 1, SourceSet.all(4), EXACT)


class TestHyperAnfAsync:

    @pytest.mark.asyncio
    @pytest.mark.parametrize("kind", [EXACT, CounterKind.hyperloglog(8, 31)])
    async def test_matches_single_threaded(self, kind):
        g = gnp_graph(120, 0.03, seed=5)
        sources = SourceSet.all(g.n)
        expected, expected_counters = hyperanf_seq(g, 6, sources, kind)
        table, counters = await hyperanf_seq_async(g, 6, sources, kind, workers=4)

        assert table.equals(expected)
        assert counters == expected_counters

    @pytest.mark.asyncio
    async def test_rejects_zero_workers(self):
        with pytest.raises(ParameterError):
            await hyperanf_seq_async(path_graph(3), 1, SourceSet.all(3), EXACT, workers=0)


class TestFixpointRadius:

    def test_path(self):
        table, radius = fixpoint_radius(path_graph(3), SourceSet.all(3), EXACT)
        assert radius == 2
        assert table.rows() == [[1, 2, 3], [1, 3, 3], [1, 2, 3]]

    def test_ring(self):
        _, radius = fixpoint_radius(ring_graph(8), SourceSet.all(8), EXACT)
        assert radius == 4

    def test_single_vertex(self):
        table, radius = fixpoint_radius(path_graph(1), SourceSet.all(1), EXACT)
        assert radius == 0
        assert table.rows() == [[1.0]]

    def test_logs_the_radius(self):
        with patch("fieldanf.anf_seq.logger") as mock_logger:
            fixpoint_radius(path_graph(4), SourceSet.all(4), EXACT)
        mock_logger.info.assert_called_once()
        assert mock_logger.info.call_args[0][2] == 3

    def test_epsilon_stops_early(self):
        g = path_graph(30)
        _, exact_radius = fixpoint_radius(g, SourceSet.all(g.n), EXACT)
        _, loose_radius = fixpoint_radius(g, SourceSet.all(g.n), EXACT, epsilon=0.5)
        assert exact_radius == 29
        assert loose_radius < exact_radius

    def test_negative_epsilon(self):
        with pytest.raises(ParameterError):
            fixpoint_radius(path_graph(3), SourceSet.all(3), EXACT, epsilon=-0.1)


class TestGraphStatistics:

    def test_neighbourhood_function(self):
        table, _ = hyperanf_seq(path_graph(3), 2, SourceSet.all(3), EXACT)
        assert neighbourhood_function(table) == [3.0, 7.0, 9.0]

    def test_effective_diameter(self):
        table, _ = hyperanf_seq(path_graph(3), 2, SourceSet.all(3), EXACT)
        assert effective_diameter(table) == pytest.approx(1.55)
        assert effective_diameter(table, 1.0) == 2.0

    def test_effective_diameter_bad_fraction(self):
        table, _ = hyperanf_seq(path_graph(3), 2, SourceSet.all(3), EXACT)
        with pytest.raises(ParameterError):
            effective_diameter(table, 0.0)


@pytest.mark.slow
class TestScaling:

    def test_time_grows_linearly_with_radius(self):
        g = gnp_graph(2000, 0.005, seed=0)
        sources = SourceSet.all(g.n)
        kind = CounterKind.hyperloglog(8, 0)

        def best_of_three(H):
            timings = []
            for _ in range(3):
                start = time.perf_counter()
                hyperanf_seq(g, H, sources, kind)
                timings.append(time.perf_counter() - start)
            return min(timings)

        assert 1.6 <= best_of_three(32) / best_of_three(16) <= 2.6
