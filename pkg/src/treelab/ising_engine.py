"""Swendsen-Wang sampling for the ferromagnetic Ising model on finite balls.

The sampler keeps the coupled spin / random-cluster (q = 2) pair, so every
estimator here is a connectivity functional of the bond half of the state:
two-point functions count cluster co-membership, magnetization with a field
counts connection to a ghost vertex wired to every site, the bubble is the
intersection size of two independent origin clusters, and the susceptibility
is the origin cluster size.

Weight convention: exp(beta * sum_{uv in E} s_u s_v + h * sum_v s_v) with
beta >= 0 and h >= 0.  The coupled bond probabilities are 1 - exp(-2*beta)
on satisfied edges and 1 - exp(-2*h) on satisfied ghost edges; at beta = 0
this makes the per-site magnetization tanh(h), the single-site value.
"""

import math
import threading
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConstraintViolation, FieldRequired, NoConvergence
from .estimates import EstimateWithCI, batch_means_estimate
from .rng import seed_stream
from .runner import map_replicas


@dataclass(frozen=True)
class IsingParams:
    """Chain-length knobs shared by all Swendsen-Wang estimators.

    `sweeps` counts recorded measurements; consecutive measurements are
    separated by `thinning` full sweeps, after `burn_in` discarded sweeps.
    """
    sweeps: int = 2000
    burn_in: int = 1000
    thinning: int = 10

    def __post_init__(self):
        if self.sweeps < 60:
            raise ConstraintViolation("need at least 60 recorded sweeps for batch means")
        if self.burn_in < 0:
            raise ConstraintViolation("burn_in must be nonnegative")
        if self.thinning < 1:
            raise ConstraintViolation("thinning must be at least 1")


@dataclass
class FKState:
    """Coupled spin / bond state of one chain.

    `labels` holds the union-find root of each vertex in the bond
    configuration that produced the current spins, so cluster membership
    tests are plain integer comparisons.  `ghost_label` is the root of the
    ghost cluster, or -1 when the field is off.
    """
    spins: np.ndarray
    open_edges: np.ndarray
    labels: np.ndarray
    ghost_label: int = -1
    sweeps: int = 0


def _check_couplings(beta, h):
    if not (beta >= 0.0 and math.isfinite(beta)):
        raise ConstraintViolation(f"need beta >= 0, got {beta}")
    if not (h >= 0.0 and math.isfinite(h)):
        raise ConstraintViolation(f"need h >= 0, got {h}")


def init_state(graph):
    """Cold start: all spins up, no open bonds.  Burn-in pays for the bias."""
    n = graph.n_vertices
    return FKState(spins=np.ones(n, dtype=np.int8),
                   open_edges=np.zeros(graph.n_edges, dtype=np.bool_),
                   labels=np.arange(n, dtype=np.int64))


@njit(cache=True)
def _sw_kernel(edge_u, edge_v, spins, u_edge, u_ghost, u_color,
               p, p_ghost, open_out, labels, parent, size):
    """One coupled update: bonds given spins, then fresh spins given bonds.

    Returns the union-find root of the ghost cluster (-1 without a field).
    The ghost is vertex index n in the union-find arrays only; cluster
    colors come from the root vertex's uniform so each cluster consumes
    exactly one color draw.
    """
    n = spins.shape[0]
    has_ghost = p_ghost > 0.0
    total = n + 1 if has_ghost else n
    for i in range(total):
        parent[i] = i
        size[i] = 1

    for e in range(edge_u.shape[0]):
        a = edge_u[e]
        b = edge_v[e]
        if spins[a] == spins[b] and u_edge[e] < p:
            open_out[e] = True
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            while parent[b] != b:
                parent[b] = parent[parent[b]]
                b = parent[b]
            if a != b:
                if size[a] < size[b]:
                    a, b = b, a
                parent[b] = a
                size[a] += size[b]
        else:
            open_out[e] = False

    if has_ghost:
        for x in range(n):
            if spins[x] == 1 and u_ghost[x] < p_ghost:
                a = x
                b = n
                while parent[a] != a:
                    parent[a] = parent[parent[a]]
                    a = parent[a]
                while parent[b] != b:
                    parent[b] = parent[parent[b]]
                    b = parent[b]
                if a != b:
                    if size[a] < size[b]:
                        a, b = b, a
                    parent[b] = a
                    size[a] += size[b]

    ghost_root = -1
    if has_ghost:
        g = n
        while parent[g] != g:
            parent[g] = parent[parent[g]]
            g = parent[g]
        ghost_root = g

    for x in range(n):
        r = x
        while parent[r] != r:
            parent[r] = parent[parent[r]]
            r = parent[r]
        labels[x] = r
        if r == ghost_root:
            spins[x] = 1
        elif u_color[r] < 0.5:
            spins[x] = 1
        else:
            spins[x] = -1
    return ghost_root


def sw_sweep(state, graph, beta, h, rng):
    """One Swendsen-Wang sweep in place; returns the state.

    Resamples bonds conditionally on the current spins (satisfied edges open
    with 1 - e^{-2*beta}, ghost edges of up spins with 1 - e^{-2*h}), then
    recolors every bond cluster with a fresh uniform sign, the ghost cluster
    forced up.  After the call `state.labels` describes exactly the bond
    configuration the new spins were drawn from.  Draw order per sweep is
    fixed (edges, ghost edges if h > 0, colors), so replay is exact.
    """
    _check_couplings(beta, h)
    n = graph.n_vertices
    p = -math.expm1(-2.0 * beta)
    p_ghost = -math.expm1(-2.0 * h)
    u_edge = rng.random(graph.n_edges)
    u_ghost = rng.random(n) if h > 0.0 else _NO_UNIFORMS
    u_color = rng.random(n)
    scratch = _sweep_scratch(graph)
    state.ghost_label = int(_sw_kernel(
        graph.edge_u, graph.edge_v, state.spins, u_edge, u_ghost, u_color,
        p, p_ghost, state.open_edges, state.labels,
        scratch[0], scratch[1]))
    state.sweeps += 1
    return state


_NO_UNIFORMS = np.empty(0, dtype=np.float64)

# union-find scratch per (graph id, thread); graphs are immutable once built
_scratch_local = threading.local()


def _sweep_scratch(graph):
    store = getattr(_scratch_local, "store", None)
    if store is None:
        store = _scratch_local.store = {}
    key = id(graph)
    buf = store.get(key)
    if buf is None or buf[0].shape[0] != graph.n_vertices + 1:
        buf = (np.empty(graph.n_vertices + 1, dtype=np.int64),
               np.empty(graph.n_vertices + 1, dtype=np.int64))
        store[key] = buf
    return buf


def chain_measurements(graph, beta, h, params, measure, rng):
    """Run one chain and return `measure(state)` per kept sweep."""
    state = init_state(graph)
    for _ in range(params.burn_in):
        sw_sweep(state, graph, beta, h, rng)
    out = np.empty(params.sweeps, dtype=np.float64)
    for i in range(params.sweeps):
        for _ in range(params.thinning):
            sw_sweep(state, graph, beta, h, rng)
        out[i] = measure(state)
    return out


def _pooled_batch_estimate(series_list, n_batches=30):
    """Batch means within each chain, pooled across chains.

    Batch means from distinct chains are independent; within a chain they
    decorrelate once batches outlast the autocorrelation time, so the pooled
    spread is an honest stderr for the pooled mean.
    """
    all_means = []
    total = 0
    for series in series_list:
        series = np.asarray(series, dtype=float)
        width = series.size // n_batches
        if width < 2:
            raise ValueError("chains too short for pooled batch means")
        trimmed = series[: width * n_batches].reshape(n_batches, width)
        all_means.append(trimmed.mean(axis=1))
        total += series.size
    means = np.concatenate(all_means)
    stderr = means.std(ddof=1) / math.sqrt(means.size)
    return EstimateWithCI(mean=float(means.mean()), stderr=float(stderr),
                          n_replicas=total, method="batch-means")


def _chain_estimate(graph, beta, h, params, measure, master_seed,
                    n_chains=1, threads=1, spawn_prefix=()):
    def replica(rng, i):
        return chain_measurements(graph, beta, h, params, measure, rng)

    series_list = map_replicas(n_chains, master_seed, replica, threads,
                               spawn_prefix=spawn_prefix)
    if n_chains == 1:
        return batch_means_estimate(series_list[0])
    return _pooled_batch_estimate(series_list)


def estimate_two_point(graph, beta, x, y, params, master_seed,
                       n_chains=1, threads=1):
    """<s_x s_y> at h = 0 as the frequency of x and y sharing a bond cluster."""
    if x == y:
        return EstimateWithCI(1.0, 0.0, 1, "exact")

    def measure(state):
        return 1.0 if state.labels[x] == state.labels[y] else 0.0

    return _chain_estimate(graph, beta, 0.0, params, measure, master_seed,
                           n_chains, threads)


def estimate_susceptibility(graph, beta, params, master_seed, x=None,
                            n_chains=1, threads=1):
    """chi(beta) = sum_y <s_x s_y> at h = 0 as the mean origin cluster size."""
    x = graph.origin if x is None else x

    def measure(state):
        return float(np.count_nonzero(state.labels == state.labels[x]))

    return _chain_estimate(graph, beta, 0.0, params, measure, master_seed,
                           n_chains, threads)


def estimate_magnetization(graph, beta, h, params, master_seed, x=None,
                           n_chains=1, threads=1):
    """<s_x> at h > 0 as the frequency of x joining the ghost cluster."""
    if h <= 0.0:
        raise FieldRequired("magnetization estimator needs h > 0; "
                            "at h = 0 it is identically zero by symmetry")
    x = graph.origin if x is None else x

    def measure(state):
        return 1.0 if state.labels[x] == state.ghost_label else 0.0

    return _chain_estimate(graph, beta, h, params, measure, master_seed,
                           n_chains, threads)


def estimate_bubble(graph, beta, params, master_seed, x=None,
                    n_pairs=1, threads=1):
    """sum_y <s_x s_y>^2 at h = 0 from two independent chains per pair.

    Per kept sweep the statistic is the number of vertices lying in the
    origin cluster of both chains; independence turns the product of
    connection indicators into the squared two-point function.
    """
    x = graph.origin if x is None else x

    def replica(rng, i):
        s1 = init_state(graph)
        s2 = init_state(graph)
        for _ in range(params.burn_in):
            sw_sweep(s1, graph, beta, 0.0, rng)
            sw_sweep(s2, graph, beta, 0.0, rng)
        out = np.empty(params.sweeps, dtype=np.float64)
        for j in range(params.sweeps):
            for _ in range(params.thinning):
                sw_sweep(s1, graph, beta, 0.0, rng)
                sw_sweep(s2, graph, beta, 0.0, rng)
            both = (s1.labels == s1.labels[x]) & (s2.labels == s2.labels[x])
            out[j] = float(np.count_nonzero(both))
        return out

    series_list = map_replicas(n_pairs, master_seed, replica, threads)
    if n_pairs == 1:
        return batch_means_estimate(series_list[0])
    return _pooled_batch_estimate(series_list)


# ----------------------------------------------------------------------
# Critical temperature by FK boundary-reach flatness
# ----------------------------------------------------------------------

def fk_boundary_reach(ball, beta, params, master_seed, spawn_prefix=()):
    """E[# boundary vertices in the origin's bond cluster] at h = 0."""
    mask = ball.boundary_mask()
    origin = ball.origin

    def measure(state):
        return float(np.count_nonzero(mask & (state.labels == state.labels[origin])))

    rng = seed_stream(master_seed, *spawn_prefix)
    series = chain_measurements(ball, beta, 0.0, params, measure, rng)
    return batch_means_estimate(series)


@dataclass
class BetacEstimate:
    beta_hat: float
    bracket: tuple
    radii_ladder: tuple
    n_used: int
    history: list = field(default_factory=list)

    @property
    def mean(self):
        return self.beta_hat

    @property
    def stderr(self):
        lo, hi = self.bracket
        return 0.5 * (hi - lo)


def estimate_betac(balls, master_seed, bracket, params=None, tol=0.005,
                   n_boost=4, threads=1):
    """Bisect for the beta at which FK boundary reach is flat on the ladder.

    Same protocol as the percolation threshold search: the comparator is the
    log-ratio of mean reach at the two ladder ends, its chain length doubled
    (up to n_boost times) while indistinguishable from zero at two sigma; an
    indecisive comparator after all boosts keeps its last sign.  The two
    ladder ends run as independent chains, in parallel when threads > 1.

    Raises NoConvergence if an endpoint comparator has the wrong sign.
    """
    if params is None:
        params = IsingParams(sweeps=2000, burn_in=200, thinning=1)
    lo, hi = bracket
    if not 0.0 < lo < hi:
        raise ConstraintViolation(f"need 0 < lo < hi, got {bracket}")
    history = []
    n_used = 0

    def reach_pair(beta, n_sweeps, step, boost):
        local = IsingParams(sweeps=n_sweeps, burn_in=params.burn_in,
                            thinning=params.thinning)

        def side(rng, i):
            ball = balls[0] if i == 0 else balls[-1]
            mask = ball.boundary_mask()
            origin = ball.origin

            def measure(state):
                return float(np.count_nonzero(
                    mask & (state.labels == state.labels[origin])))

            return chain_measurements(ball, beta, 0.0, local, measure, rng)

        series = map_replicas(2, master_seed, side, threads,
                              spawn_prefix=(step, boost))
        return (batch_means_estimate(series[0]),
                batch_means_estimate(series[1]))

    def comparator(beta, step):
        nonlocal n_used
        n = params.sweeps
        slope = None
        for boost in range(n_boost + 1):
            near, far = reach_pair(beta, n, step, boost)
            n_used += 2 * n
            if near.mean <= 0.0 or far.mean <= 0.0:
                history.append((beta, n, float("-inf"), 0.0))
                return float("-inf")
            slope = math.log(far.mean) - math.log(near.mean)
            stderr = math.hypot(far.stderr / far.mean, near.stderr / near.mean)
            history.append((beta, n, slope, stderr))
            if abs(slope) > 2.0 * stderr:
                return slope
            n *= 2
        return slope

    s_lo = comparator(lo, 0)
    if s_lo >= 0.0:
        raise NoConvergence(f"reach does not decay at beta = {lo}; widen bracket")
    s_hi = comparator(hi, 1)
    if s_hi <= 0.0:
        raise NoConvergence(f"reach does not grow at beta = {hi}; widen bracket")

    step = 2
    while hi - lo > 2.0 * tol:
        mid = 0.5 * (lo + hi)
        if comparator(mid, step) < 0.0:
            lo = mid
        else:
            hi = mid
        step += 1
    radii = tuple(tuple(b.spec.radii) for b in balls)
    return BetacEstimate(beta_hat=0.5 * (lo + hi), bracket=(lo, hi),
                         radii_ladder=radii, n_used=n_used, history=history)


# ----------------------------------------------------------------------
# Exponent window fits
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ExponentFit:
    slope: float
    slope_stderr: float
    intercept: float
    n_points: int


def fit_exponents(distances, values):
    """Least-squares slope of log(values) against log(distances).

    `distances` is the distance to criticality (all positive), `values` the
    measured quantity.  The stderr is the usual OLS slope error from the
    residual spread; with two points it is zero by construction.
    """
    distances = np.asarray(distances, dtype=float)
    values = np.asarray(values, dtype=float)
    if distances.size < 2:
        raise ConstraintViolation("need at least two points to fit a slope")
    ok = (distances > 0) & (values > 0) & np.isfinite(distances) & np.isfinite(values)
    if not np.all(ok):
        raise ConstraintViolation("fit window must have positive finite values")
    x = np.log(distances)
    y = np.log(values)
    n = x.size
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ y) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - intercept - slope * x
    if n > 2:
        s2 = float(resid @ resid) / (n - 2)
        slope_stderr = math.sqrt(s2 / sxx)
    else:
        slope_stderr = 0.0
    return ExponentFit(slope=slope, slope_stderr=slope_stderr,
                       intercept=intercept, n_points=n)
