"""Shared test utilities: reference BFS and random canonical vertices."""

import collections

import numpy as np

from treelab import tree_geometry as tg


def bfs_distances(ball, source):
    """Plain BFS over the ball adjacency; -1 marks unreachable."""
    dist = np.full(ball.n_vertices, -1, dtype=np.int64)
    dist[source] = 0
    queue = collections.deque([source])
    while queue:
        u = queue.popleft()
        for v in ball.neighbors(u):
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(int(v))
    return dist


def random_tree_vertex(rng, spec, max_depth):
    """A uniform-ish random canonical address with depth <= max_depth."""
    k = spec.degree
    m = int(rng.integers(0, max_depth + 1))
    n = int(rng.integers(0, max_depth - m + 1))
    word = []
    for pos in range(n):
        if pos == 0 and m >= 1:
            word.append(int(rng.integers(0, k - 2)))
        else:
            word.append(int(rng.integers(0, k - 1)))
    return tg.canonical_vertex(spec, m, tuple(word))


def random_product_vertex(rng, trees, max_depths):
    coords = tuple(random_tree_vertex(rng, t, d)
                   for t, d in zip(trees, max_depths))
    return tg.ProductVertex(coords)
