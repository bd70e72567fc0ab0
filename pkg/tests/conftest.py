import numpy as np
import pytest

from hybridsim.graph import WeightedGraph, dijkstra


def oracle_rows(g, sources):
    """Independent reference: pure-Python heap Dijkstra, one column per source."""
    return np.array([dijkstra(g, int(s)).dist for s in sources]).T


def path_graph(n, w=1):
    return WeightedGraph.from_edges(n, [(i, i + 1, w) for i in range(n - 1)])


@pytest.fixture
def p4():
    return path_graph(4)
