"""Exact product-kernel walk laws and walk/percolation coupling checks.

A transitive product kernel moves one factor per step (or stays put when
lazy), and within a factor tree every vertex at the same distance from the
start is equally likely.  The distance vector is therefore itself a Markov
chain, so return probabilities, sup transition probabilities and entropies
come from an exact joint distance law with no ball materialised at all;
radius-n balls for the same quantities are hopeless already at n = 40.
Ball-based convolution is kept for small n and cross-checked against the
radial route.

The Monte Carlo checks couple a sampled walk endpoint with an independent
percolation configuration, estimating E[tau_p(X_0, X_n)] and
(1/n) E[log tau_p(X_0, X_n)] against finite-m surrogates of the spectral
radius and entropy rate.  Both surrogates sit below their limits, so a pass
is stricter than the asymptotic statement being probed.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix

from .errors import (ConstraintViolation, InsufficientPrecision,
                     RadiusTooSmall)
from .estimates import exact_value, normal_estimate, wilson_estimate
from .percolation_engine import _grow_cluster, _grow_workspaces
from .rng import seed_stream
from .runner import map_replicas
from .tree_geometry import sphere_count

_WALK_TAG = 87
_PERC_TAG = 80


@dataclass(frozen=True)
class KernelSpec:
    """A transitive step law on a product of regular trees.

    Every step stays put with probability `alpha`, otherwise picks factor i
    with probability `weights[i]` and moves to a uniform neighbor in that
    factor.  Default weights k_i / sum(k_j) make the kernel the simple
    random walk on the product graph.
    """
    trees: tuple
    kind: str = None
    weights: tuple = None
    alpha: float = 0.0

    def __post_init__(self):
        if not self.trees:
            raise ConstraintViolation("need at least one factor tree")
        degs = [t.degree for t in self.trees]
        defaults = tuple(k / sum(degs) for k in degs)
        if self.weights is None:
            object.__setattr__(self, "weights", defaults)
        else:
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.weights) != len(self.trees):
            raise ConstraintViolation("one weight per factor required")
        if any(w < 0.0 for w in self.weights):
            raise ConstraintViolation("factor weights must be nonnegative")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ConstraintViolation(f"factor weights must sum to 1, got {sum(self.weights)}")
        if not 0.0 <= self.alpha < 1.0:
            raise ConstraintViolation(f"laziness must lie in [0, 1), got {self.alpha}")
        if self.kind is None:
            if self.alpha > 0.0:
                inferred = "lazy"
            elif self.weights == defaults:
                inferred = "simple-random-walk"
            else:
                inferred = "weighted-product"
            object.__setattr__(self, "kind", inferred)
        elif self.kind not in ("simple-random-walk", "weighted-product", "lazy"):
            raise ConstraintViolation(f"unknown kernel kind {self.kind!r}")
        if self.kind == "simple-random-walk" and (self.alpha != 0.0
                                                  or self.weights != defaults):
            raise ConstraintViolation("simple-random-walk fixes default weights, alpha = 0")
        if self.kind == "weighted-product" and self.alpha != 0.0:
            raise ConstraintViolation("weighted-product kernels are not lazy")
        if self.kind == "lazy" and self.alpha == 0.0:
            raise ConstraintViolation("lazy kernel needs alpha > 0")

    @property
    def n_factors(self):
        return len(self.trees)


@dataclass(frozen=True)
class KernelDistribution:
    """Exact n-step law on a ball: parallel arrays of vertex ids and masses."""
    ids: np.ndarray
    probs: np.ndarray
    n: int

    def __post_init__(self):
        mass = math.fsum(self.probs.tolist())
        if abs(mass - 1.0) > 1e-12:
            raise ConstraintViolation(f"distribution mass {mass} is off by more than 1e-12")

    @property
    def total_mass(self):
        return math.fsum(self.probs.tolist())


# ----------------------------------------------------------------------
# Radial route: the joint distance law
# ----------------------------------------------------------------------

def _factor_distance_matrix(k, n_max):
    """One factor-step transition of the radial distance, truncated at n_max.

    From 0 the walk must move away; from d >= 1 it moves away with (k-1)/k
    and back with 1/k.  The truncation row never receives mass as long as at
    most n_max steps are applied to a walk started at 0.
    """
    m = np.zeros((n_max + 1, n_max + 1))
    m[1, 0] = 1.0
    for d in range(1, n_max + 1):
        if d + 1 <= n_max:
            m[d + 1, d] = (k - 1.0) / k
        m[d - 1, d] = 1.0 / k
    return m


def distance_laws(kernel, n_max):
    """Joint laws of the factor-distance vector after 0..n_max steps.

    Entry [d_1, ..., d_N] of the j-th array is the probability that the walk
    sits at factor distances (d_1, ..., d_N) after j steps.  Exact up to
    float rounding; no ball is involved.
    """
    nf = kernel.n_factors
    shape = (n_max + 1,) * nf
    law = np.zeros(shape)
    law[(0,) * nf] = 1.0
    mats = [_factor_distance_matrix(t.degree, n_max) for t in kernel.trees]
    out = [law.copy()]
    for _ in range(n_max):
        new = kernel.alpha * law
        for i, (m, w) in enumerate(zip(mats, kernel.weights)):
            moved = np.tensordot(m, law, axes=(1, i))
            new += (1.0 - kernel.alpha) * w * np.moveaxis(moved, 0, i)
        law = new
        out.append(law.copy())
    return out


def _orbit_sizes(kernel, n_max):
    """Vertex count of each distance-vector orbit, as floats (they get huge)."""
    sizes = np.ones((n_max + 1,) * kernel.n_factors)
    for i, tree in enumerate(kernel.trees):
        counts = np.array([float(sphere_count(tree, d)) for d in range(n_max + 1)])
        shape = [1] * kernel.n_factors
        shape[i] = n_max + 1
        sizes = sizes * counts.reshape(shape)
    return sizes


def return_probability(law):
    """p_n(0,0) read off a joint distance law."""
    return float(law[(0,) * law.ndim])


def sup_transition(law, orbit_sizes):
    """sup_y P^n(0,y): the best orbit's mass divided by its size."""
    mask = law > 0.0
    if not mask.any():
        return 0.0
    return float(np.max(law[mask] / orbit_sizes[mask]))


def entropy(law, orbit_sizes):
    """H_n = -sum_y P^n(0,y) log P^n(0,y) over the whole product graph."""
    mask = law > 0.0
    q = law[mask]
    c = orbit_sizes[mask]
    return float(math.fsum((q * (np.log(c) - np.log(q))).tolist()))


def closed_form_rho(kernel):
    """Spectral radius alpha + (1-alpha) sum_i w_i 2 sqrt(k_i-1)/k_i.

    Factor kernels commute and act on a tensor product, so the spectrum of
    the mixture is the mixture of factor spectra, maximised at the top of
    every factor band.
    """
    rho = 0.0
    for tree, w in zip(kernel.trees, kernel.weights):
        k = tree.degree
        rho += w * 2.0 * math.sqrt(k - 1.0) / k
    return kernel.alpha + (1.0 - kernel.alpha) * rho


@dataclass(frozen=True)
class SpectralRadiusReport:
    """Root sequences below the spectral radius, plus the closed-form target.

    `return_roots` holds (n, p_n(0,0)^{1/n}) for every n with a positive
    return probability; `sup_roots` holds (n, (sup_y P^n)^{1/n}) for all n.
    Each value is a lower bound on `rho_target` by supermultiplicativity.
    """
    n_max: int
    return_roots: tuple
    sup_roots: tuple
    rho_target: float


def spectral_radius_bounds(ball, kernel, n_max):
    """Both root sequences up to n_max, with the closed-form target.

    `ball` may be None: the radial route needs no graph.  A ball, when
    given, must cover radius n_max like any walk computation on it.
    """
    if ball is not None:
        _check_walk_radius(ball, kernel, n_max)
    laws = distance_laws(kernel, n_max)
    sizes = _orbit_sizes(kernel, n_max)
    return_roots = []
    sup_roots = []
    for n in range(1, n_max + 1):
        p0 = return_probability(laws[n])
        if p0 > 0.0:
            return_roots.append((n, p0 ** (1.0 / n)))
        sup_roots.append((n, sup_transition(laws[n], sizes) ** (1.0 / n)))
    return SpectralRadiusReport(n_max=n_max,
                                return_roots=tuple(return_roots),
                                sup_roots=tuple(sup_roots),
                                rho_target=closed_form_rho(kernel))


def extrapolated_rho(kernel, n_max):
    """rho estimate from the tail of log p_2n(0,0).

    Fits log p_n = a + n log rho - g log n + c/n on the upper half of the
    positive return sequence; the free g soaks up the polynomial prefactor
    that makes the raw roots converge so slowly, c the next correction.
    The leftover error still decays only polynomially in n_max, so this is
    a convergence cross-check, not a high-precision solver.
    """
    laws = distance_laws(kernel, n_max)
    pts = [(n, return_probability(laws[n])) for n in range(2, n_max + 1)
           if return_probability(laws[n]) > 0.0]
    tail = pts[len(pts) // 2:]
    if len(tail) < 4:
        raise ConstraintViolation("need more of the return sequence to extrapolate")
    ns = np.array([float(n) for n, _ in tail])
    ys = np.log(np.array([p for _, p in tail]))
    design = np.column_stack([np.ones_like(ns), ns, np.log(ns), 1.0 / ns])
    coef, *_ = np.linalg.lstsq(design, ys, rcond=None)
    return float(math.exp(coef[1]))


@dataclass(frozen=True)
class EntropyReport:
    """H_n for n = 0..n_max and the rates H_n/n; H is subadditive."""
    values: tuple
    rates: tuple


def entropy_sequence(ball, kernel, n_max):
    """Exact walk entropies H_0..H_{n_max} with the subadditivity check.

    `ball` may be None, as in spectral_radius_bounds.
    """
    if ball is not None:
        _check_walk_radius(ball, kernel, n_max)
    laws = distance_laws(kernel, n_max)
    sizes = _orbit_sizes(kernel, n_max)
    h = [entropy(law, sizes) for law in laws]
    for n in range(1, n_max + 1):
        for m in range(1, n_max + 1 - n):
            if h[n + m] > h[n] + h[m] + 1e-9:
                raise AssertionError(
                    f"entropy subadditivity violated at ({n}, {m}): "
                    f"{h[n + m]} > {h[n]} + {h[m]}")
    rates = tuple(h[n] / n for n in range(1, n_max + 1))
    return EntropyReport(values=tuple(h), rates=rates)


# ----------------------------------------------------------------------
# Ball route: exact convolution and path sampling
# ----------------------------------------------------------------------

def _check_walk_radius(ball, kernel, n):
    if tuple(t.degree for t in kernel.trees) != tuple(t.degree for t in ball.spec.trees):
        raise ConstraintViolation("kernel and ball have different factor trees")
    if n > min(ball.spec.radii):
        raise RadiusTooSmall(
            f"{n}-step walk needs every radius >= {n}, ball has {ball.spec.radii}")


class BallKernelOps:
    """Per-factor adjacency of a ball, for stepping a kernel on actual vertices."""

    def __init__(self, ball, kernel):
        if kernel.n_factors != len(ball.spec.trees):
            raise ConstraintViolation("kernel arity does not match the ball")
        _check_walk_radius(ball, kernel, 0)
        self.ball = ball
        self.kernel = kernel
        n = ball.n_vertices
        u, v = ball.edge_u, ball.edge_v
        self.factor_mats = []
        assigned = np.zeros(u.shape[0], dtype=bool)
        for i, (stride, size) in enumerate(zip(ball.strides, ball.sizes)):
            lu = (u // stride) % size
            lv = (v // stride) % size
            mine = lu != lv
            assigned |= mine
            rows = np.concatenate([u[mine], v[mine]])
            cols = np.concatenate([v[mine], u[mine]])
            mat = csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
            self.factor_mats.append(mat)
        assert assigned.all(), "every edge moves in exactly one factor"

    def distribution(self, n):
        """Dense exact n-step law from the origin; needs radii >= n."""
        _check_walk_radius(self.ball, self.kernel, n)
        vec = np.zeros(self.ball.n_vertices)
        vec[self.ball.origin] = 1.0
        k = self.kernel
        for _ in range(n):
            new = k.alpha * vec
            for tree, w, mat in zip(k.trees, k.weights, self.factor_mats):
                new += (1.0 - k.alpha) * (w / tree.degree) * (mat @ vec)
            vec = new
        return vec

    def sample_path(self, rng, n):
        """Vertex ids X_0..X_n of one sampled trajectory from the origin.

        Two uniforms per step (factor/laziness choice, then the neighbor)
        keep stream consumption fixed regardless of the outcome.
        """
        _check_walk_radius(self.ball, self.kernel, n)
        k = self.kernel
        cuts = np.cumsum([(1.0 - k.alpha) * w for w in k.weights])
        path = np.empty(n + 1, dtype=np.int64)
        here = self.ball.origin
        path[0] = here
        for step in range(1, n + 1):
            u_kind = rng.random()
            u_nbr = rng.random()
            pick = int(np.searchsorted(cuts, u_kind, side="right"))
            if pick < len(k.weights):
                mat = self.factor_mats[pick]
                row = mat.indices[mat.indptr[here]:mat.indptr[here + 1]]
                here = int(row[int(u_nbr * row.size)])
            path[step] = here
        return path


def exact_distribution(ball, kernel, n):
    """Exact n-step law on the ball as a sparse id -> probability map."""
    vec = BallKernelOps(ball, kernel).distribution(n)
    ids = np.flatnonzero(vec > 0.0)
    return KernelDistribution(ids=ids, probs=vec[ids], n=n)


# ----------------------------------------------------------------------
# Schramm-type coupling checks
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class AnnealedReport:
    """E[tau_p(X_0, X_n)] against finite-m and closed-form spectral targets."""
    n: int
    p: float
    m_ref: int
    estimate: object
    strict_reference: float
    rho_reference: float
    passed_strict: bool
    passed_rho: bool


def schramm_annealed_check(ball, kernel, p, n, m_ref, n_replicas, master_seed,
                           threads=1):
    """Estimate E[tau_p(X_0, X_n)] and compare with spectral-radius targets.

    Each replica samples an endpoint X_n and an independent percolation
    cluster of the origin; the estimate is the connection frequency.  The
    strict reference ((sup_y P^{m_ref})^{1/m_ref})^n lies below the
    closed-form rho^n, so the strict verdict implies the rho verdict.
    """
    laws = distance_laws(kernel, m_ref)
    sizes = _orbit_sizes(kernel, m_ref)
    strict_ref = sup_transition(laws[m_ref], sizes) ** (n / m_ref)
    rho_ref = closed_form_rho(kernel) ** n

    if n == 0:
        est = exact_value(1.0)
    else:
        ops = BallKernelOps(ball, kernel)
        _check_walk_radius(ball, kernel, n)
        workspaces = _grow_workspaces(ball)
        origin = ball.origin

        def replica(rng, i):
            endpoint = int(ops.sample_path(rng, n)[-1])
            ws = workspaces.get()
            perc_rng = seed_stream(master_seed, _PERC_TAG, i)
            _grow_cluster(ws, p, perc_rng, origin)
            return 1.0 if ws.vstamp[endpoint] == ws.stamp else 0.0

        hits = map_replicas(n_replicas, master_seed, replica, threads,
                            spawn_prefix=(_WALK_TAG,))
        est = wilson_estimate(int(sum(hits)), n_replicas)

    band = 3.0 * est.stderr
    return AnnealedReport(n=n, p=p, m_ref=m_ref, estimate=est,
                          strict_reference=strict_ref, rho_reference=rho_ref,
                          passed_strict=est.mean <= strict_ref + band,
                          passed_rho=est.mean <= rho_ref + band)


@dataclass(frozen=True)
class QuenchedReport:
    """(1/n) E[log tau_p(X_0, X_n)] against the finite-m entropy rate."""
    n: int
    p: float
    m_ref: int
    estimate: object
    reference: float
    passed: bool
    bias_budget: float
    max_tau_replicas: int


def schramm_quenched_check(ball, kernel, p, n, m_ref, n_walks, master_seed,
                           threads=1, tau_replicas=2000, bias_tol=0.005,
                           max_doublings=4):
    """Plug-in estimate of (1/n) E[log tau_p(X_0, X_n)] vs -H_m/m.

    Each walk endpoint gets its own tau estimate; log of a noisy mean is
    biased upward by about (stderr/mean)^2 / 2, so replicas double until
    that per-pair budget (after the 1/n) is below `bias_tol`.  The check
    direction tolerates the leftover upward bias.  -H_{m_ref}/m_ref sits
    below the entropy-rate limit, so a pass is stricter than the asymptotic
    claim.

    Raises InsufficientPrecision when a pair stays too noisy at the replica
    cap, or when n = 0 (log tau is identically zero there, nothing to check).
    """
    if n < 1:
        raise InsufficientPrecision("quenched check needs n >= 1")
    ops = BallKernelOps(ball, kernel)
    _check_walk_radius(ball, kernel, n)
    workspaces = _grow_workspaces(ball)
    origin = ball.origin
    ent = entropy_sequence(None, kernel, m_ref)
    reference = -ent.values[m_ref] / m_ref

    def replica(rng, j):
        endpoint = int(ops.sample_path(rng, n)[-1])
        ws = workspaces.get()
        reps = tau_replicas
        for attempt in range(max_doublings + 1):
            perc_rng = seed_stream(master_seed, _PERC_TAG, j, attempt)
            hits = 0
            for _ in range(reps):
                _grow_cluster(ws, p, perc_rng, origin)
                if ws.vstamp[endpoint] == ws.stamp:
                    hits += 1
            if hits > 0:
                tau = wilson_estimate(hits, reps)
                bias = (tau.stderr / tau.mean) ** 2 / 2.0 / n
                if bias <= bias_tol:
                    return math.log(tau.mean) / n, bias, reps
            reps *= 2
        raise InsufficientPrecision(
            f"tau at endpoint {endpoint} still too noisy after "
            f"{max_doublings} doublings from {tau_replicas} replicas")

    rows = map_replicas(n_walks, master_seed, replica, threads,
                        spawn_prefix=(_WALK_TAG,))
    values = [r[0] for r in rows]
    est = normal_estimate(values)
    return QuenchedReport(n=n, p=p, m_ref=m_ref, estimate=est,
                          reference=reference,
                          passed=est.mean <= reference + 3.0 * est.stderr,
                          bias_budget=max(r[1] for r in rows),
                          max_tau_replicas=max(r[2] for r in rows))
