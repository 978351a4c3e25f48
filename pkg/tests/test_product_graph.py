import io
import json
import math

import numpy as np
import pytest

from treelab import tree_geometry as tg
from treelab.errors import CapacityExceeded, ConstraintViolation, IndexOutOfRange
from treelab.product_graph import (BallSpec, build_product_ball, dump_graph,
                                   tree_ball_size)

from helpers import bfs_distances

T3 = tg.TreeSpec(3)
T4 = tg.TreeSpec(4)


def ball_t3(radius):
    return build_product_ball(BallSpec(trees=(T3,), radii=(radius,)))


def ball_t3t3(r1, r2):
    return build_product_ball(BallSpec(trees=(T3, T3), radii=(r1, r2)))


def test_single_tree_sizes():
    b2 = ball_t3(2)
    assert b2.n_vertices == 10 and b2.n_edges == 9
    b3 = ball_t3(3)
    assert b3.n_vertices == 22 and b3.n_edges == 21
    assert tree_ball_size(T4, 2) == 1 + 4 * (3 ** 2 - 1) // 2 == 17


def test_mini_product_ball():
    ball = ball_t3t3(1, 1)
    assert ball.n_vertices == 16
    assert ball.degree(ball.origin) == 6
    # Cartesian product edge count: E1*V2 + V1*E2 = 3*4 + 4*3
    assert ball.n_edges == 24


def test_edge_count_formula():
    for spec in (BallSpec((T3, T4), (2, 1)), BallSpec((T3, T3), (2, 2))):
        ball = build_product_ball(spec)
        sizes = [tree_ball_size(t, r) for t, r in zip(spec.trees, spec.radii)]
        expect = sum((sizes[i] - 1) * math.prod(sizes) // sizes[i]
                     for i in range(len(sizes)))
        assert ball.n_edges == expect


def test_origin_is_id_zero():
    ball = ball_t3t3(2, 1)
    assert ball.vertex_id(tg.product_root(2)) == 0 == ball.origin


def test_id_round_trip():
    ball = build_product_ball(BallSpec((T3, T4), (2, 2)))
    rng = np.random.default_rng(5)
    for vid in rng.integers(0, ball.n_vertices, size=60):
        assert ball.vertex_id(ball.vertex(int(vid))) == int(vid)


def test_adjacency_is_symmetric_and_unit_distance():
    ball = ball_t3t3(2, 2)
    trees = ball.spec.trees
    rng = np.random.default_rng(9)
    for uid in rng.integers(0, ball.n_vertices, size=40):
        uid = int(uid)
        for vid in ball.neighbors(uid):
            vid = int(vid)
            assert uid in ball.neighbors(vid)
            dvec = ball.distance_vector_ids(uid, vid)
            assert sum(dvec) == 1


def test_interior_degree_and_boundary_flags():
    ball = build_product_ball(BallSpec((T3, T4), (2, 2)))
    full_degree = 3 + 4
    for vid in range(ball.n_vertices):
        depths = ball.depth_vector(vid)
        on_boundary = any(d == r for d, r in zip(depths, ball.spec.radii))
        assert ball.is_boundary(vid) == on_boundary
        if not on_boundary:
            assert ball.degree(vid) == full_degree
        else:
            assert ball.degree(vid) < full_degree
    assert ball.boundary_mask().sum() == sum(ball.is_boundary(v)
                                             for v in range(ball.n_vertices))


def test_product_distance_is_sum_of_factor_distances():
    ball = ball_t3t3(2, 2)
    dist = bfs_distances(ball, ball.origin)
    for vid in range(ball.n_vertices):
        assert dist[vid] == sum(ball.distance_vector_ids(ball.origin, vid))
    rng = np.random.default_rng(13)
    for src in rng.integers(0, ball.n_vertices, size=4):
        ds = bfs_distances(ball, int(src))
        for vid in rng.integers(0, ball.n_vertices, size=30):
            assert ds[vid] == sum(ball.distance_vector_ids(int(src), int(vid)))


def test_log_modular_array_matches_pointwise():
    ball = ball_t3t3(2, 2)
    arr = ball.log_modular_from_origin(0.5)
    trees = ball.spec.trees
    origin = ball.vertex(ball.origin)
    for vid in range(0, ball.n_vertices, 7):
        expect = 0.5 * tg.log_modular(trees, origin, ball.vertex(vid))
        assert abs(arr[vid] - expect) < 1e-12


def test_capacity_and_validation_errors():
    with pytest.raises(CapacityExceeded):
        build_product_ball(BallSpec((T3, T3), (6, 6), max_vertices=1000))
    with pytest.raises(ConstraintViolation):
        BallSpec((T3,), (0,))
    with pytest.raises(ConstraintViolation):
        BallSpec((T3, T3), (2,))
    ball = ball_t3(2)
    with pytest.raises(IndexOutOfRange):
        ball.neighbors(ball.n_vertices)
    with pytest.raises(IndexOutOfRange):
        ball.vertex_id(tg.ProductVertex((tg.canonical_vertex(T3, 0, (0, 0, 0)),)))


def test_estimated_vertices_matches_build():
    spec = BallSpec((T3, T4), (2, 1))
    assert spec.estimated_vertices() == build_product_ball(spec).n_vertices


def test_build_is_deterministic():
    a = ball_t3t3(2, 2)
    b = ball_t3t3(2, 2)
    assert np.array_equal(a.edge_u, b.edge_u)
    assert np.array_equal(a.edge_v, b.edge_v)
    assert np.array_equal(a.indices, b.indices)


def test_dump_format():
    ball = ball_t3(2)
    buf = io.StringIO()
    dump_graph(ball, buf)
    lines = buf.getvalue().splitlines()
    header = json.loads(lines[0])
    assert header["n_vertices"] == 10 and header["n_edges"] == 9
    assert header["degrees"] == [3]
    assert len(lines) == 1 + ball.n_edges
    u, v = map(int, lines[1].split())
    assert 0 <= u < 10 and 0 <= v < 10
