"""Monte Carlo estimators for Bernoulli bond percolation on product balls.

Estimators come in two sampling styles, both unbiased for the finite-ball
quantity (which is always a lower bound for its infinite-graph value, since
the ball has a free boundary):

* full-configuration: draw every edge, label components with a compiled
  routine, read off indicators (used when several pairs share one sample);
* lazy cluster growth: draw an edge the first time the search touches it,
  so subcritical replicas cost O(|C|) instead of O(|E|).

Every estimator takes (master seed, replica index) streams and reduces in
replica order; results do not depend on the thread count.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import tree_geometry as tg
from .errors import (DenominatorNonpositive, GeometryError, NoConvergence)
from .estimates import EstimateWithCI, exact_value, normal_estimate, wilson_estimate
from .runner import PerThread, map_replicas


def _check_p(p):
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")


# ----------------------------------------------------------------------
# Configurations and cluster forests
# ----------------------------------------------------------------------

@dataclass
class PercConfig:
    """One sampled bond configuration: a boolean per ball edge."""

    p: float
    open_edges: np.ndarray

    @property
    def n_open(self):
        return int(self.open_edges.sum())


def sample_config(graph, p, rng):
    """Draw a full i.i.d. Bernoulli(p) bond configuration."""
    _check_p(p)
    return PercConfig(p=p, open_edges=rng.random(graph.n_edges) < p)


class ClusterForest:
    """Union-find over vertex ids, path halving plus union by size."""

    def __init__(self, n_vertices):
        self.parent = list(range(n_vertices))
        self.size = [1] * n_vertices

    def find(self, v):
        parent = self.parent
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    def union(self, u, v):
        ru, rv = self.find(u), self.find(v)
        if ru == rv:
            return ru
        if self.size[ru] < self.size[rv]:
            ru, rv = rv, ru
        self.parent[rv] = ru
        self.size[ru] += self.size[rv]
        return ru

    def connected(self, u, v):
        return self.find(u) == self.find(v)

    def labels(self):
        return np.array([self.find(v) for v in range(len(self.parent))])


def build_clusters(graph, config):
    """Union-find forest of the open subgraph."""
    forest = ClusterForest(graph.n_vertices)
    for e in np.flatnonzero(config.open_edges):
        forest.union(int(graph.edge_u[e]), int(graph.edge_v[e]))
    return forest


def config_labels(graph, open_edges):
    """Component labels of the open subgraph via the compiled path.

    Agrees with build_clusters up to relabelling; property-tested against it.
    """
    u = graph.edge_u[open_edges]
    v = graph.edge_v[open_edges]
    n = graph.n_vertices
    mat = csr_matrix((np.ones(len(u), dtype=np.int8), (u, v)), shape=(n, n))
    _, labels = connected_components(mat, directed=False)
    return labels


def _chunk_sizes(n_replicas, graph, cap=1_500_000):
    """Replica block sizes keeping each labelling call near `cap` edges.

    Small graphs would otherwise spend the budget on per-call overhead; big
    balls fall back to one configuration per call.
    """
    block = max(1, min(8192, cap // max(1, graph.n_edges)))
    return [min(block, n_replicas - s) for s in range(0, n_replicas, block)]


def batch_config_labels(graph, open_matrix):
    """config_labels for a block of configurations in one labelling call.

    The block is one graph of disjoint copies, so labels are unique across
    copies; the diagram estimators rely on that for global bincounts.
    """
    b, _ = open_matrix.shape
    n = graph.n_vertices
    rows, cols = np.nonzero(open_matrix)
    u = graph.edge_u[cols] + rows * n
    v = graph.edge_v[cols] + rows * n
    mat = csr_matrix((np.ones(len(u), dtype=np.int8), (u, v)),
                     shape=(b * n, b * n))
    _, labels = connected_components(mat, directed=False)
    return labels.reshape(b, n)


# ----------------------------------------------------------------------
# Lazy cluster growth
# ----------------------------------------------------------------------

class _GrowWorkspace:
    """Scratch arrays for lazy growth; stamps avoid per-replica clearing."""

    def __init__(self, graph):
        self.indptr = graph.indptr.tolist()
        self.indices = graph.indices.tolist()
        self.edge_ids = graph.adj_edge_ids.tolist()
        self.vstamp = np.zeros(graph.n_vertices, dtype=np.int64)
        self.estamp = np.zeros(graph.n_edges, dtype=np.int64)
        self.eopen = np.zeros(graph.n_edges, dtype=bool)
        self.stamp = 0


def _grow_cluster(ws, p, rng, source):
    """Vertices of the open cluster of `source`, sampling edges on first touch.

    Exploration is depth-first in a fixed order, so the stream consumption
    is deterministic for a given (graph, source, stream).
    """
    ws.stamp += 1
    stamp = ws.stamp
    indptr, indices, edge_ids = ws.indptr, ws.indices, ws.edge_ids
    vstamp, estamp, eopen = ws.vstamp, ws.estamp, ws.eopen
    random = rng.random
    stack = [source]
    vstamp[source] = stamp
    out = [source]
    while stack:
        u = stack.pop()
        for slot in range(indptr[u], indptr[u + 1]):
            e = edge_ids[slot]
            if estamp[e] != stamp:
                estamp[e] = stamp
                eopen[e] = random() < p
            if eopen[e]:
                v = indices[slot]
                if vstamp[v] != stamp:
                    vstamp[v] = stamp
                    stack.append(v)
                    out.append(v)
    return out


def _grow_workspaces(graph):
    return PerThread(lambda: _GrowWorkspace(graph))


# ----------------------------------------------------------------------
# Two-point function and susceptibilities
# ----------------------------------------------------------------------

def estimate_tau_many(graph, p, pairs, n_replicas, master_seed, threads=1):
    """tau_p(x, y) for several pairs from shared configurations.

    One full configuration and one labelling per replica serve every pair;
    each pair still gets its own unbiased Wilson estimate.
    """
    _check_p(p)
    pairs = [(int(x), int(y)) for x, y in pairs]
    if p in (0.0, 1.0):
        return [exact_value(1.0 if (x == y or p == 1.0) else 0.0)
                for x, y in pairs]
    xs = np.array([x for x, _ in pairs])
    ys = np.array([y for _, y in pairs])
    sizes = _chunk_sizes(n_replicas, graph)

    def replica(rng, i):
        opens = rng.random((sizes[i], graph.n_edges)) < p
        labels = batch_config_labels(graph, opens)
        return labels[:, xs] == labels[:, ys]

    hits = np.vstack(map_replicas(len(sizes), master_seed, replica, threads))
    totals = np.sum(hits, axis=0)
    return [wilson_estimate(int(t), n_replicas) for t in totals]


def estimate_tau(graph, p, x, y, n_replicas, master_seed, threads=1):
    """tau_p(x, y): P[x connected to y] on the ball (Wilson CI)."""
    return estimate_tau_many(graph, p, [(x, y)], n_replicas, master_seed,
                             threads)[0]


def _adaptive_mean(graph, p, master_seed, statistic, target_rel=0.02,
                   n_min=2000, n_max=200_000, threads=1):
    """Grow replica batches until stderr/mean < target_rel or budget is spent.

    statistic(ws, rng) maps one replica to one number via lazy growth.
    Batches are seeded by absolute replica index, so the adaptive schedule
    does not change any replica's stream.
    """
    workspaces = _grow_workspaces(graph)
    values = []
    n_done = 0
    while True:
        batch = n_min if n_done == 0 else n_done  # double each round
        batch = min(batch, n_max - n_done)

        def replica(rng, i):
            return statistic(workspaces.get(), rng)

        values.extend(map_replicas(batch, master_seed, replica, threads,
                                   spawn_prefix=(n_done,)))
        n_done += batch
        est = normal_estimate(values)
        if est.mean != 0.0 and est.stderr / abs(est.mean) < target_rel:
            return est
        if n_done >= n_max:
            return est


def estimate_chi(graph, p, master_seed, target_rel=0.02, n_min=2000,
                 n_max=200_000, threads=1, x=None):
    """chi_p = E|C(x)| by lazy growth of the cluster of x (origin default)."""
    _check_p(p)
    x = graph.origin if x is None else x
    if p == 0.0:
        return exact_value(1.0)
    if p == 1.0:
        return exact_value(graph.n_vertices)
    return _adaptive_mean(
        graph, p, master_seed,
        lambda ws, rng: len(_grow_cluster(ws, p, rng, x)),
        target_rel, n_min, n_max, threads)


def estimate_tilted_chi(ball, p, lam, master_seed, target_rel=0.02,
                        n_min=2000, n_max=200_000, threads=1, x=None):
    """Tilted susceptibility E[sum_{y in C(x)} Delta(x, y)^lam].

    Delta^lam is evaluated as exp(lam * log Delta) from the exact integer
    height vectors, never as a product of large powers.
    """
    _check_p(p)
    x = ball.origin if x is None else x
    logw = ball.log_modular_from_origin(1.0)
    weights = np.exp(lam * (logw - logw[x]))
    if p == 0.0:
        return exact_value(weights[x])
    if p == 1.0:
        return exact_value(float(weights.sum()))

    def statistic(ws, rng):
        members = _grow_cluster(ws, p, rng, x)
        return float(weights[members].sum())

    return _adaptive_mean(ball, p, master_seed, statistic,
                          target_rel, n_min, n_max, threads)


# ----------------------------------------------------------------------
# Triangle diagram
# ----------------------------------------------------------------------

def estimate_triangle(graph, p, n_replicas, master_seed, threads=1, x=None):
    """Open triangle sum via three independent configurations per replica.

    With C_1, C_2, C_3 the clusters in three independent samples,
    sum_{y in C_1(x)} |C_2(y) intersect C_3(x)| is unbiased for
    sum_{y,z} tau(x,y) tau(y,z) tau(z,x).
    """
    _check_p(p)
    x = graph.origin if x is None else int(x)
    if p == 0.0:
        return exact_value(1.0)
    if p == 1.0:
        return exact_value(float(graph.n_vertices) ** 2)

    sizes = _chunk_sizes(n_replicas, graph, cap=500_000)

    def replica(rng, i):
        opens = rng.random((3, sizes[i], graph.n_edges)) < p
        l1 = batch_config_labels(graph, opens[0])
        l2 = batch_config_labels(graph, opens[1])
        l3 = batch_config_labels(graph, opens[2])
        in_c1 = l1 == l1[:, [x]]
        in_c3 = l3 == l3[:, [x]]
        counts = np.bincount(l2[in_c3], minlength=int(l2.max()) + 1)
        return np.where(in_c1, counts[l2], 0).sum(axis=1).astype(float)

    values = np.concatenate(
        map_replicas(len(sizes), master_seed, replica, threads))
    return normal_estimate(values)


# ----------------------------------------------------------------------
# Supermultiplicativity along geodesics (Harris/FKG consequence)
# ----------------------------------------------------------------------

def _geodesic_point(total_climb, total_descent, t):
    """Vertex at distance t from (climb, ()) towards (0, (0,)*descent)."""
    if t <= total_climb:
        return tg.TreeVertex(total_climb - t, ())
    return tg.TreeVertex(0, (0,) * (t - total_climb))


def split_geodesic_triple(ball, n_vec, r, l, margin=2):
    """Pick x, z at per-factor distances (r+l) n_i and the midpoint y at r n_i.

    Each coordinate runs from a climb of ceil(D_i/2) to a descent of
    floor(D_i/2), so both endpoints stay as deep inside the ball as the
    distance allows.  GeometryError if the required depth exceeds R_i - margin.
    """
    xs, ys, zs = [], [], []
    for i, (tree, radius) in enumerate(zip(ball.spec.trees, ball.spec.radii)):
        total = (r + l) * n_vec[i]
        climb = (total + 1) // 2
        descent = total - climb
        if max(climb, descent) > radius - margin:
            raise GeometryError(
                f"distance {total} in factor {i} needs depth {max(climb, descent)}"
                f" > R - {margin} = {radius - margin}")
        xs.append(tg.TreeVertex(climb, ()))
        ys.append(_geodesic_point(climb, descent, r * n_vec[i]))
        zs.append(_geodesic_point(climb, descent, total))
    return (ball.vertex_id(tg.ProductVertex(tuple(xs))),
            ball.vertex_id(tg.ProductVertex(tuple(ys))),
            ball.vertex_id(tg.ProductVertex(tuple(zs))))


@dataclass
class SupermultReport:
    n_vec: tuple
    r: int
    l: int
    p: float
    tau_xz: EstimateWithCI
    tau_xy: EstimateWithCI
    tau_yz: EstimateWithCI
    deficit: float           # tau_xz - tau_xy * tau_yz, >= -3 sigma to pass
    deficit_stderr: float
    passed: bool


def check_supermultiplicativity(ball, p, n_vec, r, l, n_replicas, master_seed,
                                threads=1):
    """Verify tau(x,z) >= tau(x,y) tau(y,z) at a geodesic split point.

    The three indicators are read from shared configurations; the deficit's
    stderr uses the full delta-method covariance, and the verdict allows
    three sigma of slack.
    """
    _check_p(p)
    x, y, z = split_geodesic_triple(ball, n_vec, r, l)

    sizes = _chunk_sizes(n_replicas, ball)

    def replica(rng, i):
        opens = rng.random((sizes[i], ball.n_edges)) < p
        labels = batch_config_labels(ball, opens)
        return np.stack([labels[:, x] == labels[:, z],
                         labels[:, x] == labels[:, y],
                         labels[:, y] == labels[:, z]], axis=1)

    records = np.vstack(map_replicas(len(sizes), master_seed, replica,
                                     threads)).astype(float)
    means = records.mean(axis=0)
    cov = np.cov(records.T) / n_replicas if n_replicas > 1 else np.zeros((3, 3))
    t_xz, t_xy, t_yz = means
    deficit = t_xz - t_xy * t_yz
    grad = np.array([1.0, -t_yz, -t_xy])
    var = float(grad @ cov @ grad)
    stderr = math.sqrt(max(var, 0.0))
    floor = 1.0 / (2.0 * n_replicas)  # keep slack when all indicators degenerate
    stderr = max(stderr, floor)
    ests = [wilson_estimate(int(round(m * n_replicas)), n_replicas) for m in means]
    return SupermultReport(tuple(n_vec), r, l, p, ests[0], ests[1], ests[2],
                           float(deficit), stderr,
                           bool(deficit >= -3.0 * stderr))


# ----------------------------------------------------------------------
# Critical point by boundary-reach flatness
# ----------------------------------------------------------------------

def boundary_reach(ball, p, n_replicas, master_seed, threads=1,
                   spawn_prefix=()):
    """g_R(p) = E[# boundary vertices in the cluster of the origin].

    Samples every edge and labels components in compiled code: the flatness
    search evaluates supercritical p where the origin cluster spans the
    ball, which lazy growth cannot afford.
    """
    _check_p(p)
    mask = ball.boundary_mask()
    origin = ball.origin
    sizes = _chunk_sizes(n_replicas, ball)

    def replica(rng, i):
        opens = rng.random((sizes[i], ball.n_edges)) < p
        labels = batch_config_labels(ball, opens)
        same = labels == labels[:, [origin]]
        return (same & mask).sum(axis=1).astype(float)

    values = np.concatenate(
        map_replicas(len(sizes), master_seed, replica, threads,
                     spawn_prefix=spawn_prefix))
    return normal_estimate(values)


@dataclass
class PcEstimate:
    p_hat: float
    bracket: tuple
    radii_ladder: tuple
    n_used: int
    history: list = field(default_factory=list)


def _log_reach_slope(balls, p, n_replicas, master_seed, threads, step, boost):
    """log g at the largest radius minus log g at the smallest, with stderr.

    None when the far reach was never observed, which at this resolution
    means unambiguous decay.
    """
    lo = boundary_reach(balls[0], p, n_replicas, master_seed, threads,
                        spawn_prefix=(step, boost, 0))
    hi = boundary_reach(balls[-1], p, n_replicas, master_seed, threads,
                        spawn_prefix=(step, boost, 1))
    if lo.mean <= 0.0 or hi.mean <= 0.0:
        return None
    slope = math.log(hi.mean) - math.log(lo.mean)
    stderr = math.hypot(hi.stderr / hi.mean, lo.stderr / lo.mean)
    return slope, stderr


def estimate_pc(balls, master_seed, bracket, n_replicas=4000, tol=0.005,
                n_boost=4, threads=1):
    """Bisect for the p at which boundary reach is flat across the ladder.

    `balls` is the radius ladder (same trees, increasing radii).  Below p_c
    the reach decays with radius, above it grows; the crossing estimates
    p_c.  The comparator at each p is the log-ratio of reaches at the two
    ladder ends, re-estimated with doubled replicas (up to n_boost doublings)
    while it is indistinguishable from zero at two sigma; an indecisive
    comparator after all boosts keeps its last sign, which is the honest
    thing to do exactly at the crossing.

    Raises NoConvergence if an endpoint comparator has the wrong sign.
    """
    lo, hi = bracket
    if not 0.0 < lo < hi < 1.0:
        raise ValueError(f"need 0 < lo < hi < 1, got {bracket}")
    history = []
    n_used = 0

    def comparator(p, step):
        nonlocal n_used
        n = n_replicas
        slope = None
        for boost in range(n_boost + 1):
            out = _log_reach_slope(balls, p, n, master_seed, threads,
                                   step, boost)
            n_used += 2 * n
            if out is None:
                history.append((p, n, float("-inf"), 0.0))
                return float("-inf")
            slope, stderr = out
            history.append((p, n, slope, stderr))
            if abs(slope) > 2.0 * stderr:
                return slope
            n *= 2
        return slope

    # step codes feed the seed spawn key (non-negative): 0 and 1 are the
    # bracket endpoints, 2.. the bisection steps
    s_lo = comparator(lo, 0)
    if s_lo >= 0.0:
        raise NoConvergence(f"reach does not decay at p = {lo}; widen bracket")
    s_hi = comparator(hi, 1)
    if s_hi <= 0.0:
        raise NoConvergence(f"reach does not grow at p = {hi}; widen bracket")

    step = 2
    while hi - lo > 2.0 * tol:
        mid = 0.5 * (lo + hi)
        s = comparator(mid, step)
        if s < 0.0:
            lo = mid
        else:
            hi = mid
        step += 1
    radii = tuple(tuple(b.spec.radii) for b in balls)
    return PcEstimate(p_hat=0.5 * (lo + hi), bracket=(lo, hi),
                      radii_ladder=radii, n_used=n_used, history=history)


# ----------------------------------------------------------------------
# Bound checks and explicit constants
# ----------------------------------------------------------------------

@dataclass
class PairBoundRow:
    pair: tuple
    distance: tuple
    tau: EstimateWithCI
    bound: float
    passed: bool


def check_pc_estimate(ball, p_hat, pairs, n_replicas, master_seed, threads=1,
                      margin=2):
    """tau_hat at p_hat against the product bound prod (k_i - 1)^{-d_i}.

    Pairs must sit inside the ball with the given boundary margin, so the
    free boundary only lowers tau_hat (the check stays one-sided).
    """
    for x, y in pairs:
        if ball.boundary_margin(x) < margin or ball.boundary_margin(y) < margin:
            raise GeometryError(f"pair ({x}, {y}) closer than {margin} to the "
                                "boundary")
    taus = estimate_tau_many(ball, p_hat, pairs, n_replicas, master_seed,
                             threads)
    deltas = [t.log_branching for t in ball.spec.trees]
    rows = []
    for (x, y), est in zip(pairs, taus):
        dvec = ball.distance_vector_ids(x, y)
        bound = math.exp(-sum(dl * d for dl, d in zip(deltas, dvec)))
        rows.append(PairBoundRow(pair=(x, y), distance=dvec, tau=est,
                                 bound=bound,
                                 passed=est.mean <= bound + est.half_width_3sigma))
    return rows


def neighbor_tilt_sum(ball, lam=0.5):
    """S = sum over neighbours z of the origin of Delta(0, z)^lam, exactly.

    Closed form: sum_i [ (k_i-1)^lam + (k_i-1)^(1-lam) ]; evaluated from the
    ball so the geometry, not the formula, is the source.
    """
    logw = ball.log_modular_from_origin(1.0)
    nbrs = ball.neighbors(ball.origin)
    return float(np.exp(lam * logw[nbrs]).sum())


@dataclass
class OpenConditionReport:
    p: float
    eps: float
    lam: float
    chi_p: EstimateWithCI
    chi_p_eps: EstimateWithCI
    neighbor_sum: float
    bound: float
    bound_stderr: float
    passed: bool


def check_open_condition_bound(ball, p, eps, master_seed, lam=0.5,
                               target_rel=0.02, n_max=200_000, threads=1):
    """Finite-volume analogue of the tilted-susceptibility growth bound.

    Estimates chi_{p,lam} and chi_{p+eps,lam} and checks
    chi_{p+eps} <= chi_p / (1 - (eps / (1-p)) chi_p S) within three sigma,
    where S is the exact neighbour tilt sum.  DenominatorNonpositive when
    the denominator is not positive (the bound then says nothing).
    """
    _check_p(p)
    _check_p(p + eps)
    s = neighbor_tilt_sum(ball, lam)
    chi_p = estimate_tilted_chi(ball, p, lam, master_seed, target_rel,
                                n_max=n_max, threads=threads)
    chi_pe = estimate_tilted_chi(ball, p + eps, lam, master_seed + 1,
                                 target_rel, n_max=n_max, threads=threads)
    a = eps / (1.0 - p) * s
    denom = 1.0 - a * chi_p.mean
    if denom <= 0.0:
        raise DenominatorNonpositive(
            f"1 - (eps/(1-p)) chi S = {denom:.4g} is not positive")
    bound = chi_p.mean / denom
    bound_stderr = chi_p.stderr / denom ** 2  # d bound / d chi = 1 / denom^2
    passed = (chi_pe.mean - 3.0 * chi_pe.stderr) <= (bound + 3.0 * bound_stderr)
    return OpenConditionReport(p, eps, lam, chi_p, chi_pe, s, bound,
                               float(bound_stderr), bool(passed))


@dataclass
class BoundConstants:
    trees: tuple
    chi_bound: float          # prod (k-1) / (sqrt(k-1) - 1)^2
    triangle_bound: float     # prod (k-1)^3 / (sqrt(k-1) - 1)^6
    bubble_bound: float       # prod (k-1)^2 / (sqrt(k-1) - 1)^4
    p_hat: float = None
    uniqueness_gap: float = None  # lower bound on p_u - p_c at p_hat


def compute_bound_constants(trees, p_hat=None):
    """Evaluate the explicit bound constants for this degree sequence.

    All four numbers are computed from the degrees on the spot; nothing is
    hardcoded.  The uniqueness gap needs a critical-point estimate.
    """
    chi_b, tri_b, bub_b = 1.0, 1.0, 1.0
    for t in trees:
        br = t.degree - 1
        factor = br / (math.sqrt(br) - 1.0) ** 2
        chi_b *= factor
        tri_b *= factor ** 3
        bub_b *= factor ** 2
    gap = None
    if p_hat is not None:
        _check_p(p_hat)
        root_sum = 2.0 * sum(math.sqrt(t.degree - 1) for t in trees)
        prod = 1.0
        for t in trees:
            br = t.degree - 1
            prod *= (math.sqrt(br) - 1.0) ** 2 / br
        gap = (1.0 - p_hat) / root_sum * prod
    return BoundConstants(tuple(trees), chi_b, tri_b, bub_b, p_hat, gap)
