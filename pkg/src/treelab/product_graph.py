"""Finite free-boundary balls in a product of regular trees.

The ball of radii (R_1, ..., R_N) is the induced subgraph on vertices whose
i-th coordinate lies within depth R_i of the root of T_i.  Nothing outside
is wired in (free boundary), so every connection probability measured here
is a lower bound for its infinite-graph counterpart.

Vertices get dense 0-based ids in lexicographic order of their canonical
coordinates; the origin is always id 0.  The id layout is mixed-radix over
the per-factor enumerations, so coordinate extraction is pure arithmetic.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import tree_geometry as tg
from .errors import CapacityExceeded, ConstraintViolation, IndexOutOfRange


def tree_ball_size(spec, radius):
    """|B(R)| = 1 + k ((k-1)^R - 1) / (k-2) vertices within depth R."""
    k = spec.degree
    return 1 + k * ((k - 1) ** radius - 1) // (k - 2)


@dataclass(frozen=True)
class BallSpec:
    """Geometry request: one radius per tree factor plus a memory cap."""

    trees: tuple
    radii: tuple
    max_vertices: int = 4_000_000

    def __post_init__(self):
        if len(self.trees) == 0 or len(self.trees) != len(self.radii):
            raise ConstraintViolation("need one radius per tree factor")
        for r in self.radii:
            if r < 1:
                raise ConstraintViolation(f"radius must be >= 1, got {r}")

    def estimated_vertices(self):
        return math.prod(tree_ball_size(t, r)
                         for t, r in zip(self.trees, self.radii))


def _enumerate_tree_ball(spec, radius):
    """All canonical addresses within depth `radius`, lexicographically sorted."""
    out = [tg.ROOT]
    frontier = [tg.ROOT]
    for _ in range(radius):
        nxt = []
        for v in frontier:
            for u in tg.children(spec, v):
                if u.depth == v.depth + 1:
                    nxt.append(u)
            p = tg.parent(v)
            if p.depth == v.depth + 1:
                nxt.append(p)
        out.extend(nxt)
        frontier = nxt
    out.sort(key=lambda v: (v.m, v.word))
    return out


@dataclass
class ProductBall:
    """Materialised ball with CSR adjacency and an explicit edge list."""

    spec: BallSpec
    factor_vertices: list          # per factor: sorted list of TreeVertex
    factor_index: list             # per factor: dict TreeVertex -> local index
    sizes: tuple                   # per-factor vertex counts
    strides: tuple                 # mixed-radix strides, factor 0 most significant
    n_vertices: int
    edge_u: np.ndarray             # undirected edge endpoints, build order
    edge_v: np.ndarray
    indptr: np.ndarray             # CSR over directed adjacency
    indices: np.ndarray
    adj_edge_ids: np.ndarray       # edge id aligned with `indices`
    factor_depth: list             # per factor: depth array over local indices
    factor_level: list             # per factor: level array over local indices
    _log_modular_cache: dict = field(default_factory=dict)

    # -- id handling ----------------------------------------------------

    @property
    def origin(self):
        return 0

    @property
    def n_edges(self):
        return len(self.edge_u)

    def _check_id(self, vid):
        if not 0 <= vid < self.n_vertices:
            raise IndexOutOfRange(f"vertex id {vid} outside 0..{self.n_vertices - 1}")

    def factor_indices(self, vid):
        self._check_id(vid)
        return tuple((vid // s) % n for s, n in zip(self.strides, self.sizes))

    def vertex(self, vid):
        """Decode a dense id into a ProductVertex."""
        idx = self.factor_indices(vid)
        return tg.ProductVertex(tuple(self.factor_vertices[i][j]
                                      for i, j in enumerate(idx)))

    def vertex_id(self, pvertex):
        """Encode a ProductVertex; IndexOutOfRange if any coordinate is outside."""
        vid = 0
        for i, (coord, stride) in enumerate(zip(pvertex.coords, self.strides)):
            j = self.factor_index[i].get(coord)
            if j is None:
                raise IndexOutOfRange(f"coordinate {coord} outside factor-{i} ball")
            vid += j * stride
        return vid

    # -- structure queries ----------------------------------------------

    def neighbors(self, vid):
        self._check_id(vid)
        return self.indices[self.indptr[vid]:self.indptr[vid + 1]]

    def degree(self, vid):
        self._check_id(vid)
        return int(self.indptr[vid + 1] - self.indptr[vid])

    def depth_vector(self, vid):
        return tuple(self.factor_depth[i][j]
                     for i, j in enumerate(self.factor_indices(vid)))

    def boundary_margin(self, vid):
        """min_i (R_i - depth_i): 0 on the boundary, >= 1 inside."""
        return min(r - d for r, d in zip(self.spec.radii, self.depth_vector(vid)))

    def is_boundary(self, vid):
        return self.boundary_margin(vid) == 0

    def boundary_mask(self):
        mask = np.zeros(self.n_vertices, dtype=bool)
        for i, (stride, size) in enumerate(zip(self.strides, self.sizes)):
            local = (np.arange(self.n_vertices) // stride) % size
            mask |= self.factor_depth[i][local] == self.spec.radii[i]
        return mask

    def log_modular_from_origin(self, scale=1.0):
        """Array over all ids of scale * log Delta(origin, x).

        log Delta(0, x) = sum_i delta_i * level_i(x); levels are integers so
        the array is exact up to one rounding per factor.
        """
        key = float(scale)
        if key not in self._log_modular_cache:
            total = np.zeros(self.n_vertices)
            ids = np.arange(self.n_vertices)
            for i, (stride, size) in enumerate(zip(self.strides, self.sizes)):
                local = (ids // stride) % size
                delta = self.spec.trees[i].log_branching
                total += delta * self.factor_level[i][local]
            self._log_modular_cache[key] = key * total
        return self._log_modular_cache[key]

    def distance_vector_ids(self, uid, vid):
        return tg.distance_vector(self.spec.trees, self.vertex(uid), self.vertex(vid))


def build_product_ball(spec):
    """Materialise the ball described by `spec`.

    Raises CapacityExceeded before allocating anything if the closed-form
    vertex count is above spec.max_vertices.
    """
    est = spec.estimated_vertices()
    if est > spec.max_vertices:
        raise CapacityExceeded(
            f"ball would hold {est} vertices, cap is {spec.max_vertices}")

    factor_vertices, factor_index = [], []
    factor_depth, factor_level = [], []
    factor_edges = []
    for tree, radius in zip(spec.trees, spec.radii):
        verts = _enumerate_tree_ball(tree, radius)
        index = {v: j for j, v in enumerate(verts)}
        assert len(verts) == tree_ball_size(tree, radius)
        factor_vertices.append(verts)
        factor_index.append(index)
        factor_depth.append(np.array([v.depth for v in verts], dtype=np.int32))
        factor_level.append(np.array([v.level for v in verts], dtype=np.int32))
        # tree-ball edges as (child-side, parent-side) local index pairs
        ea, eb = [], []
        for j, v in enumerate(verts):
            p = tg.parent(v)
            pj = index.get(p)
            if pj is not None:
                ea.append(j)
                eb.append(pj)
        factor_edges.append((np.array(ea, dtype=np.int64),
                             np.array(eb, dtype=np.int64)))

    sizes = tuple(len(vs) for vs in factor_vertices)
    n_vertices = math.prod(sizes)
    strides = []
    acc = n_vertices
    for s in sizes:
        acc //= s
        strides.append(acc)
    strides = tuple(strides)

    # product edges: a factor-i tree edge, all other coordinates fixed
    eu_parts, ev_parts = [], []
    for i, (ea, eb) in enumerate(factor_edges):
        stride = strides[i]
        block = sizes[i] * stride
        outer = np.arange(n_vertices // block, dtype=np.int64) * block
        inner = np.arange(stride, dtype=np.int64)
        rest = (outer[:, None] + inner[None, :]).ravel()
        eu_parts.append((ea[:, None] * stride + rest[None, :]).ravel())
        ev_parts.append((eb[:, None] * stride + rest[None, :]).ravel())
    edge_u = np.concatenate(eu_parts) if eu_parts else np.zeros(0, dtype=np.int64)
    edge_v = np.concatenate(ev_parts) if ev_parts else np.zeros(0, dtype=np.int64)

    # CSR over both directions, edge ids carried along
    n_edges = len(edge_u)
    du = np.concatenate([edge_u, edge_v])
    dv = np.concatenate([edge_v, edge_u])
    eid = np.concatenate([np.arange(n_edges), np.arange(n_edges)])
    order = np.argsort(du, kind="stable")
    du, dv, eid = du[order], dv[order], eid[order]
    indptr = np.zeros(n_vertices + 1, dtype=np.int64)
    np.add.at(indptr, du + 1, 1)
    np.cumsum(indptr, out=indptr)
    dtype = np.int32 if n_vertices < 2**31 else np.int64
    return ProductBall(
        spec=spec,
        factor_vertices=factor_vertices,
        factor_index=factor_index,
        sizes=sizes,
        strides=strides,
        n_vertices=n_vertices,
        edge_u=edge_u.astype(dtype),
        edge_v=edge_v.astype(dtype),
        indptr=indptr,
        indices=dv.astype(dtype),
        adj_edge_ids=eid.astype(dtype),
        factor_depth=factor_depth,
        factor_level=factor_level,
    )


def dump_graph(ball, stream):
    """Write a JSON header line then one 'u v' line per undirected edge."""
    header = {
        "degrees": [t.degree for t in ball.spec.trees],
        "radii": list(ball.spec.radii),
        "n_vertices": int(ball.n_vertices),
        "n_edges": int(ball.n_edges),
        "ids": "dense 0-based, lexicographic in canonical (m, word) "
               "coordinates, factor 0 most significant; origin = 0",
    }
    stream.write(json.dumps(header, sort_keys=True) + "\n")
    for u, v in zip(ball.edge_u, ball.edge_v):
        stream.write(f"{u} {v}\n")
