import numpy as np
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from dhm.core import ClusterSet
from dhm.segmentation import build_neighbor_graph, segment_objects


def as_clusters(means):
    means = np.asarray(means, dtype=float)
    m, d = means.shape
    return ClusterSet(means, np.tile(np.eye(d) * 0.01, (m, 1, 1)), np.ones(m), np.ones(m, bool),
                      np.ones(m, int), 0.25)


def test_graph_examples():
    assert build_neighbor_graph(as_clusters([[0, 0], [0.2, 0], [5, 5]]), 0.25) == [[1], [0], []]
    assert build_neighbor_graph(as_clusters([[1, 1]]), 0.25) == [[]]
    g = build_neighbor_graph(as_clusters([[0, 0], [0.2, 0], [0.4, 0]]), 0.25)
    assert sorted(g[1]) == [0, 2]


def test_segment_examples():
    chain = as_clusters([[0, 0], [0.2, 0], [0.4, 0]])
    objs = segment_objects(chain, 0.25, 1)
    assert len(objs) == 1 and sorted(objs[0].clusters) == [0, 1, 2]
    two = as_clusters([[0, 0], [0.2, 0], [2.5, 0], [2.7, 0]])
    assert len(segment_objects(two, 0.25, 1)) == 2
    assert segment_objects(as_clusters([[0, 0]]), 0.25, 3) == []


means_2d = arrays(np.float64, st.tuples(st.integers(1, 60), st.just(2)),
                  elements=st.floats(0, 3, allow_nan=False, width=32))


@given(means_2d, st.floats(0.1, 1.0))
def test_graph_matches_pairwise_distances(means, r):
    g = build_neighbor_graph(as_clusters(means), r)
    D = cdist(means, means)
    for i, nbrs in enumerate(g):
        expected = set(np.flatnonzero(D[i] < r).tolist()) - {i}
        assert set(nbrs) == expected


@given(means_2d, st.floats(0.1, 1.0), st.integers(1, 4))
def test_segments_match_connected_components(means, r, n_c):
    objs = segment_objects(as_clusters(means), r, n_c)
    D = cdist(means, means)
    adj = csr_matrix((D < r) & ~np.eye(len(means), dtype=bool))
    _, lab = connected_components(adj, directed=False)
    expected = sorted(sorted(np.flatnonzero(lab == c).tolist()) for c in np.unique(lab)
                      if (lab == c).sum() >= n_c)
    assert sorted(sorted(o.clusters) for o in objs) == expected
    assert [o.object_id for o in objs] == list(range(len(objs)))


def test_long_wall_has_no_recursion_limit():
    wall = np.column_stack([np.arange(20000) * 0.1, np.zeros(20000)])
    assert len(segment_objects(as_clusters(wall), 0.25, 3)) == 1
