"""Ground truth by exhaustive enumeration on tiny graphs.

Every Monte Carlo estimator in this package has an exact counterpart here:
percolation quantities by summing over all 2^|E| edge subsets, Ising
quantities by summing over all 2^|V| spin configurations, random-cluster
quantities by weighted subset enumeration.  Closed forms for single trees
(tau = p^d, p_c = 1/(k-1), correlations tanh(beta)^d) give a second,
independent route for the N = 1 cases.

Enumeration caps: 2^24 edge subsets through a compiled kernel with
compensated accumulation, 2^20 spin configurations vectorised, 2^16 subsets
for the random-cluster model in plain Python.
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import TooLarge

MAX_ENUM_EDGES = 24        # percolation subset enumeration
MAX_PYTHON_ENUM_EDGES = 16
MAX_SPIN_VERTICES = 20     # Ising spin enumeration
MAX_FK_EDGES = 16          # random-cluster subset enumeration


def _build_csr(n_vertices, edge_u, edge_v):
    du = np.concatenate([edge_u, edge_v])
    dv = np.concatenate([edge_v, edge_u])
    eid = np.concatenate([np.arange(len(edge_u))] * 2)
    order = np.argsort(du, kind="stable")
    indptr = np.zeros(n_vertices + 1, dtype=np.int64)
    np.add.at(indptr, du + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, dv[order].astype(np.int64), eid[order].astype(np.int64)


@dataclass
class TinyGraph:
    """A small simple graph sharing the ball's array interface.

    Estimators only touch n_vertices / edge_u / edge_v / indptr / indices /
    adj_edge_ids, so they run unchanged on a TinyGraph or a ProductBall.
    """

    n_vertices: int
    edges: tuple

    def __post_init__(self):
        if self.n_vertices < 1 or self.n_vertices > 64:
            raise TooLarge(f"TinyGraph wants 1..64 vertices, got {self.n_vertices}")
        seen = set()
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"self loop at {u}")
            if not (0 <= u < self.n_vertices and 0 <= v < self.n_vertices):
                raise ValueError(f"edge ({u}, {v}) out of range")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
        self.edge_u = np.array([e[0] for e in self.edges], dtype=np.int64)
        self.edge_v = np.array([e[1] for e in self.edges], dtype=np.int64)
        self.indptr, self.indices, self.adj_edge_ids = _build_csr(
            self.n_vertices, self.edge_u, self.edge_v)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def origin(self):
        return 0


def single_edge():
    return TinyGraph(2, ((0, 1),))


def path_graph(n_vertices):
    return TinyGraph(n_vertices, tuple((i, i + 1) for i in range(n_vertices - 1)))


def cycle_graph(n_vertices):
    edges = tuple((i, (i + 1) % n_vertices) for i in range(n_vertices))
    return TinyGraph(n_vertices, edges)


def complete_graph(n_vertices):
    edges = tuple((i, j) for i in range(n_vertices)
                  for j in range(i + 1, n_vertices))
    return TinyGraph(n_vertices, edges)


def star_graph(n_leaves):
    return TinyGraph(n_leaves + 1, tuple((0, i + 1) for i in range(n_leaves)))


# ----------------------------------------------------------------------
# Bernoulli percolation by subset enumeration
# ----------------------------------------------------------------------

def _subset_weights(n_edges, p):
    """w[j] = p^j (1-p)^(n_edges - j), the weight of a subset with j open edges."""
    j = np.arange(n_edges + 1)
    return p ** j * (1.0 - p) ** (n_edges - j)


def _roots_for_subset(n, edge_u, edge_v, mask):
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for e in range(len(edge_u)):
        if mask >> e & 1:
            ra, rb = find(edge_u[e]), find(edge_v[e])
            if ra != rb:
                parent[ra] = rb
    return [find(v) for v in range(n)]


def _tau_matrix_python(graph, p):
    """Reference implementation: fsum of per-subset weights per pair."""
    n, ne = graph.n_vertices, graph.n_edges
    eu, ev = graph.edge_u.tolist(), graph.edge_v.tolist()
    pw = _subset_weights(ne, p)
    cells = [[[] for _ in range(n)] for _ in range(n)]
    for mask in range(1 << ne):
        roots = _roots_for_subset(n, eu, ev, mask)
        w = pw[bin(mask).count("1")]
        for i in range(n):
            for j in range(i, n):
                if roots[i] == roots[j]:
                    cells[i][j].append(w)
    tau = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            tau[i, j] = tau[j, i] = math.fsum(cells[i][j])
    return tau


@njit(cache=True)
def _tau_matrix_kernel(n, eu, ev, pw):  # pragma: no cover - compiled
    ne = eu.shape[0]
    tau = np.zeros((n, n))
    comp = np.zeros((n, n))  # Kahan compensation per cell
    parent = np.empty(n, np.int64)
    for mask in range(1 << ne):
        for v in range(n):
            parent[v] = v
        nopen = 0
        for e in range(ne):
            if mask >> e & 1:
                nopen += 1
                a = eu[e]
                while parent[a] != a:
                    a = parent[a]
                b = ev[e]
                while parent[b] != b:
                    b = parent[b]
                if a != b:
                    parent[a] = b
        for v in range(n):
            r = v
            while parent[r] != r:
                r = parent[r]
            parent[v] = r
        w = pw[nopen]
        for i in range(n):
            ri = parent[i]
            for j in range(i, n):
                if parent[j] == ri:
                    y = w - comp[i, j]
                    t = tau[i, j] + y
                    comp[i, j] = (t - tau[i, j]) - y
                    tau[i, j] = t
    for i in range(n):
        for j in range(i + 1, n):
            tau[j, i] = tau[i, j]
    return tau


def brute_tau_matrix(graph, p):
    """Exact pairwise connection probabilities tau_p(x, y) for all x, y."""
    if graph.n_edges > MAX_ENUM_EDGES:
        raise TooLarge(f"{graph.n_edges} edges exceeds the 2^{MAX_ENUM_EDGES} "
                       "enumeration cap")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    pw = _subset_weights(graph.n_edges, p)
    return _tau_matrix_kernel(graph.n_vertices,
                              graph.edge_u.astype(np.int64),
                              graph.edge_v.astype(np.int64), pw)


def brute_tau(graph, p, x, y):
    """tau_p(x, y) = P[x connected to y] by exhaustive enumeration."""
    return float(brute_tau_matrix(graph, p)[x, y])


def brute_chi(graph, p, x):
    """chi_p(x) = sum_y tau_p(x, y) = E|C(x)|."""
    return float(brute_tau_matrix(graph, p)[x].sum())


def brute_tilted_chi(graph, p, x, log_weights, lam=0.5):
    """sum_y tau_p(x, y) * exp(lam * log_weights[y]).

    `log_weights[y]` is log Delta(x, y); the caller supplies it from the
    ball geometry so the oracle stays graph-agnostic.
    """
    tilt = np.exp(lam * np.asarray(log_weights, dtype=float))
    return float(brute_tau_matrix(graph, p)[x] @ tilt)


def brute_triangle(graph, p, x):
    """Open triangle sum: sum_{y,z} tau(x,y) tau(y,z) tau(z,x).

    Computed from the full tau matrix, so the cost is one 2^|E| sweep
    rather than 2^{3|E|}.
    """
    tau = brute_tau_matrix(graph, p)
    row = tau[x]
    return float(row @ tau @ row)


# ----------------------------------------------------------------------
# Ising model by spin enumeration
# ----------------------------------------------------------------------

def _spin_table(n_vertices):
    if n_vertices > MAX_SPIN_VERTICES:
        raise TooLarge(f"{n_vertices} spins exceeds the 2^{MAX_SPIN_VERTICES} cap")
    configs = np.arange(1 << n_vertices, dtype=np.uint32)
    bits = (configs[:, None] >> np.arange(n_vertices, dtype=np.uint32)[None, :]) & 1
    return (bits.astype(np.int8) * 2 - 1)


def _gibbs_weights(graph, spins, beta, h):
    """exp(beta sum_edges s_u s_v + h sum_v s_v), normalised by the max.

    The field couples as h per spin (not beta * h), matching a ghost vertex
    wired to every spin with edge probability 1 - exp(-2h).
    """
    energy = np.zeros(spins.shape[0])
    for u, v in zip(graph.edge_u, graph.edge_v):
        energy += spins[:, u].astype(np.float64) * spins[:, v]
    logw = beta * energy
    if h != 0.0:
        logw += h * spins.sum(axis=1, dtype=np.int64)
    return np.exp(logw - logw.max())


def brute_ising_two_point(graph, beta, x, y, h=0.0):
    """<sigma_x sigma_y> by full spin enumeration."""
    spins = _spin_table(graph.n_vertices)
    w = _gibbs_weights(graph, spins, beta, h)
    num = float(np.sum(w * spins[:, x] * spins[:, y]))
    return num / float(np.sum(w))


def brute_ising_matrix(graph, beta, h=0.0):
    """All pairwise <sigma_x sigma_y> at once."""
    spins = _spin_table(graph.n_vertices).astype(np.float64)
    w = _gibbs_weights(graph, spins, beta, h)
    corr = (spins * w[:, None]).T @ spins
    return corr / float(np.sum(w))


def brute_magnetization(graph, beta, h, x):
    """<sigma_x> under field h (exactly zero at h = 0 by symmetry)."""
    spins = _spin_table(graph.n_vertices)
    w = _gibbs_weights(graph, spins, beta, h)
    return float(np.sum(w * spins[:, x])) / float(np.sum(w))


def brute_bubble(graph, beta, x):
    """B(x) = sum_y <sigma_x sigma_y>^2."""
    row = brute_ising_matrix(graph, beta)[x]
    return float(np.sum(row ** 2))


# ----------------------------------------------------------------------
# Random-cluster model (FK) by subset enumeration
# ----------------------------------------------------------------------

def brute_fk_connect(graph, p, x, y, q=2.0):
    """P[x connected to y] under the random-cluster measure.

    `p` may be a scalar or a per-edge array (a ghost construction needs a
    different probability on ghost edges).  Isolated vertices count as
    clusters.  Connected to the Ising model by p = 1 - exp(-2 beta).
    """
    ne = graph.n_edges
    if ne > MAX_FK_EDGES:
        raise TooLarge(f"{ne} edges exceeds the 2^{MAX_FK_EDGES} FK cap")
    p = np.broadcast_to(np.asarray(p, dtype=float), (ne,))
    n = graph.n_vertices
    eu, ev = graph.edge_u.tolist(), graph.edge_v.tolist()
    num_terms, z_terms = [], []
    for mask in range(1 << ne):
        roots = _roots_for_subset(n, eu, ev, mask)
        n_clusters = len(set(roots))
        w = q ** n_clusters
        for e in range(ne):
            w *= p[e] if mask >> e & 1 else 1.0 - p[e]
        z_terms.append(w)
        if roots[x] == roots[y]:
            num_terms.append(w)
    return math.fsum(num_terms) / math.fsum(z_terms)


# ----------------------------------------------------------------------
# Closed forms on a single tree
# ----------------------------------------------------------------------

def tree_tau_exact(spec, p, d):
    """tau_p(x, y) = p^d on a tree: the unique path must be fully open."""
    return float(p) ** d


def tree_pc(spec):
    """Percolation threshold 1 / (k - 1)."""
    return 1.0 / (spec.degree - 1)


def tree_ising_exact(spec, beta, d):
    """<sigma_x sigma_y> = tanh(beta)^d on a tree (free boundary)."""
    return math.tanh(beta) ** d


def tree_betac(spec):
    """Ising critical point artanh(1 / (k - 1))."""
    return math.atanh(1.0 / (spec.degree - 1))


def tree_geometric_susceptibility(spec, t, radius=None):
    """1 + sum_{d=1..R} k (k-1)^(d-1) t^d, with R = infinity by default.

    With t = p this is the percolation susceptibility of the tree, with
    t = tanh(beta) the Ising susceptibility; both need (k-1) t < 1 for the
    infinite sum.
    """
    k = spec.degree
    ratio = (k - 1) * t
    if radius is None:
        if ratio >= 1.0:
            raise ValueError(f"(k-1) t = {ratio} >= 1: infinite sum diverges")
        return 1.0 + k * t / (1.0 - ratio)
    tail = radius if ratio == 1.0 else (1.0 - ratio ** radius) / (1.0 - ratio)
    return 1.0 + k * t * tail
