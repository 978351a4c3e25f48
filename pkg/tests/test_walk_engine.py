"""Walk kernel laws, spectral/entropy sequences, and the coupling checks."""

import math

import numpy as np
import pytest

from treelab.errors import (ConstraintViolation, InsufficientPrecision,
                            RadiusTooSmall)
from treelab.product_graph import BallSpec, build_product_ball
from treelab.rng import seed_stream
from treelab.tree_geometry import TreeSpec
from treelab.walk_engine import (AnnealedReport, BallKernelOps,
                                 KernelDistribution, KernelSpec,
                                 closed_form_rho, distance_laws, entropy,
                                 entropy_sequence, exact_distribution,
                                 extrapolated_rho, return_probability,
                                 schramm_annealed_check,
                                 schramm_quenched_check,
                                 spectral_radius_bounds, sup_transition,
                                 _orbit_sizes)

T3 = TreeSpec(3)


def ball(radii, degrees=None):
    degrees = degrees or [3] * len(radii)
    return build_product_ball(BallSpec(
        trees=tuple(TreeSpec(k) for k in degrees), radii=tuple(radii)))


def srw(n_factors=1, degrees=None):
    degrees = degrees or [3] * n_factors
    return KernelSpec(trees=tuple(TreeSpec(k) for k in degrees))


def test_kernel_kinds_and_validation():
    k = srw(2)
    assert k.kind == "simple-random-walk"
    assert k.weights == (0.5, 0.5)
    w = KernelSpec(trees=(T3, TreeSpec(4)))
    assert w.weights == (3 / 7, 4 / 7)
    assert KernelSpec(trees=(T3,), weights=(1.0,)).kind == "simple-random-walk"
    assert KernelSpec(trees=(T3, T3), weights=(0.3, 0.7)).kind == "weighted-product"
    assert KernelSpec(trees=(T3,), alpha=0.5).kind == "lazy"
    with pytest.raises(ConstraintViolation):
        KernelSpec(trees=(T3, T3), weights=(0.3, 0.6))
    with pytest.raises(ConstraintViolation):
        KernelSpec(trees=(T3,), alpha=1.0)
    with pytest.raises(ConstraintViolation):
        KernelSpec(trees=(T3,), alpha=-0.1)
    with pytest.raises(ConstraintViolation):
        KernelSpec(trees=(T3, T3), kind="simple-random-walk", weights=(0.3, 0.7))
    with pytest.raises(ConstraintViolation):
        KernelSpec(trees=(T3,), kind="lazy")


def test_distance_law_tree_two_steps():
    laws = distance_laws(srw(), 2)
    assert laws[0][0] == 1.0
    assert laws[1][1] == 1.0
    np.testing.assert_allclose(laws[2], [1 / 3, 0.0, 2 / 3], atol=1e-15)
    sizes = _orbit_sizes(srw(), 2)
    np.testing.assert_allclose(sizes, [1.0, 3.0, 6.0])
    assert abs(return_probability(laws[2]) - 1 / 3) < 1e-15
    assert abs(sup_transition(laws[2], sizes) - 1 / 3) < 1e-15


def test_distance_law_mass_conservation():
    for kernel in (srw(2), KernelSpec(trees=(T3, T3), weights=(0.2, 0.8)),
                   KernelSpec(trees=(T3,), alpha=0.5)):
        for law in distance_laws(kernel, 12):
            assert abs(law.sum() - 1.0) < 1e-12


def test_ball_convolution_matches_distance_law():
    b = ball((4, 4))
    kernel = srw(2)
    n = 4
    vec = BallKernelOps(b, kernel).distribution(n)
    law = distance_laws(kernel, n)[n]
    grouped = np.zeros((n + 1, n + 1))
    by_orbit = {}
    for vid in range(b.n_vertices):
        p = vec[vid]
        d = b.depth_vector(vid)
        if max(d) <= n:
            grouped[d] += p
        if p > 0:
            by_orbit.setdefault(d, []).append(p)
    np.testing.assert_allclose(grouped, law, atol=1e-12)
    # transitivity: within an orbit every vertex carries the same mass
    for d, probs in by_orbit.items():
        assert max(probs) - min(probs) < 1e-15, d


def test_exact_distribution_one_step_uniform():
    b = ball((3, 3))
    dist = exact_distribution(b, srw(2), 1)
    assert dist.ids.size == 6
    np.testing.assert_allclose(dist.probs, 1 / 6)
    assert abs(dist.total_mass - 1.0) < 1e-12


def test_exact_distribution_mass_and_parity_n12():
    b = ball((12,))
    dist = exact_distribution(b, srw(), 12)
    assert abs(dist.total_mass - 1.0) < 1e-12
    depths = np.array([sum(b.depth_vector(int(v))) for v in dist.ids])
    assert np.all(depths % 2 == 0)
    assert depths.max() == 12


def test_exact_distribution_radius_guard():
    with pytest.raises(RadiusTooSmall):
        exact_distribution(ball((4,)), srw(), 5)
    with pytest.raises(ConstraintViolation):
        exact_distribution(ball((4,), degrees=[4]), srw(), 3)


def test_kernel_distribution_mass_invariant():
    with pytest.raises(ConstraintViolation):
        KernelDistribution(ids=np.array([0, 1]), probs=np.array([0.5, 0.4]), n=1)


def test_spectral_sequences_tree():
    kernel = srw()
    n_max = 40
    report = spectral_radius_bounds(None, kernel, n_max)
    rho = 2.0 * math.sqrt(2.0) / 3.0
    assert abs(report.rho_target - rho) < 1e-15
    assert abs(closed_form_rho(srw(2)) - rho) < 1e-15

    ns = [n for n, _ in report.return_roots]
    assert ns == list(range(2, n_max + 1, 2)), "returns only at even n"
    roots = [r for _, r in report.return_roots]
    for a, b in zip(roots, roots[1:]):
        assert b >= a - 1e-12
    assert all(r <= rho + 1e-12 for r in roots)

    sup_roots = dict(report.sup_roots)
    evens = [sup_roots[n] for n in range(2, n_max + 1, 2)]
    for a, b in zip(evens, evens[1:]):
        assert b >= a - 1e-12
    assert all(r <= rho + 1e-12 for _, r in report.sup_roots)

    # raw supermultiplicativity, the actual Fekete hypothesis
    laws = distance_laws(kernel, n_max)
    sizes = _orbit_sizes(kernel, n_max)
    s = [sup_transition(law, sizes) for law in laws]
    p0 = [return_probability(law) for law in laws]
    for n in range(1, 20):
        for m in range(1, 20):
            assert s[n + m] >= s[n] * s[m] * (1.0 - 1e-12)
    for n in range(1, 10):
        for m in range(1, 10):
            assert p0[2 * n + 2 * m] >= p0[2 * n] * p0[2 * m] * (1.0 - 1e-12)

    # even sup equals the return probability (Cauchy-Schwarz + transitivity)
    for n in range(2, n_max + 1, 2):
        assert abs(s[n] - p0[n]) < 1e-15


def test_spectral_sequences_product_and_ball_guard():
    kernel = srw(2)
    report = spectral_radius_bounds(None, kernel, 40)
    rho = report.rho_target
    assert abs(rho - 2.0 * math.sqrt(2.0) / 3.0) < 1e-15
    roots = [r for _, r in report.return_roots]
    for a, b in zip(roots, roots[1:]):
        assert b >= a - 1e-12
    assert roots[-1] <= rho + 1e-12
    # the gap to the target shrinks along the sequence
    assert rho - roots[-1] < (rho - roots[0]) / 2
    with pytest.raises(RadiusTooSmall):
        spectral_radius_bounds(ball((4, 4)), kernel, 6)


def test_extrapolated_rho():
    # the fit cross-checks convergence: it must land an order of magnitude
    # closer to the closed form than the raw root at the same length
    rho = 2 * math.sqrt(2) / 3
    for kernel in (srw(), srw(2)):
        report = spectral_radius_bounds(None, kernel, 40)
        raw_gap = rho - report.return_roots[-1][1]
        fitted = extrapolated_rho(kernel, 40)
        assert abs(fitted - rho) < 8e-3
        assert abs(fitted - rho) < raw_gap / 10


def test_entropy_values():
    rep = entropy_sequence(None, srw(2), 10)
    assert rep.values[0] == 0.0
    assert abs(rep.values[1] - math.log(6)) < 1e-12

    lazy = KernelSpec(trees=(T3,), alpha=0.5)
    rep_lazy = entropy_sequence(None, lazy, 6)
    h1 = -(0.5 * math.log(0.5) + 3 * (1 / 6) * math.log(1 / 6))
    assert abs(rep_lazy.values[1] - h1) < 1e-12
    assert abs(h1 - 1.242453) < 1e-6

    with pytest.raises(RadiusTooSmall):
        entropy_sequence(ball((3,)), srw(), 8)


def test_sample_path_moves_one_factor_step():
    b = ball((6, 6))
    ops = BallKernelOps(b, srw(2))
    rng = seed_stream(17)
    path = ops.sample_path(rng, 6)
    assert path[0] == b.origin
    for u, v in zip(path, path[1:]):
        du = b.depth_vector(int(u))
        dv = b.depth_vector(int(v))
        assert sum(abs(a - c) for a, c in zip(du, dv)) == 1

    lazy_ops = BallKernelOps(b, KernelSpec(trees=(T3, T3), alpha=0.4))
    lazy_path = lazy_ops.sample_path(seed_stream(18), 6)
    stays = sum(1 for u, v in zip(lazy_path, lazy_path[1:]) if u == v)
    assert stays >= 1  # alpha = 0.4 over 6 steps misses with prob ~0.05

    again = ops.sample_path(seed_stream(17), 6)
    np.testing.assert_array_equal(path, again)


def test_sample_path_one_step_marginal():
    b = ball((2, 2))
    ops = BallKernelOps(b, srw(2))
    rng = seed_stream(19)
    counts = {}
    n = 6000
    for _ in range(n):
        v = int(ops.sample_path(rng, 1)[1])
        counts[v] = counts.get(v, 0) + 1
    assert len(counts) == 6
    expect = n / 6
    band = 5 * math.sqrt(expect * (1 - 1 / 6))
    assert all(abs(c - expect) < band for c in counts.values())


def test_annealed_check_n0_and_tree_identity():
    b = ball((6,))
    kernel = srw()
    trivial = schramm_annealed_check(b, kernel, 0.5, 0, 8, 10, master_seed=1)
    assert trivial.estimate.mean == 1.0
    assert trivial.strict_reference == 1.0 and trivial.rho_reference == 1.0
    assert trivial.passed_strict and trivial.passed_rho

    # E[tau_{1/2}(X_0, X_4)] on the 3-regular tree is exactly 1/3
    rep = schramm_annealed_check(b, kernel, 0.5, 4, 40, 6000, master_seed=2)
    law = distance_laws(kernel, 4)[4]
    exact = sum(law[d] * 0.5 ** d for d in range(5))
    assert abs(exact - 1 / 3) < 1e-14
    assert abs(rep.estimate.mean - exact) < 3.0 * rep.estimate.stderr
    assert rep.passed_rho
    assert rep.strict_reference <= rep.rho_reference + 1e-15


def test_annealed_check_thread_determinism():
    b = ball((5, 5))
    kernel = srw(2)
    a = schramm_annealed_check(b, kernel, 0.3, 4, 20, 800, master_seed=5, threads=1)
    c = schramm_annealed_check(b, kernel, 0.3, 4, 20, 800, master_seed=5, threads=4)
    assert a.estimate.mean == c.estimate.mean
    assert a.estimate.stderr == c.estimate.stderr


def test_quenched_check_tree_identity():
    # at p = 1/2 on the tree, log tau(0, y) = -d(0, y) log 2 exactly,
    # so the plug-in estimate must sit near -log2 E|X_n| / n
    b = ball((6,))
    kernel = srw()
    n = 4
    rep = schramm_quenched_check(b, kernel, 0.5, n, 40, 150, master_seed=7,
                                 tau_replicas=1500)
    law = distance_laws(kernel, n)[n]
    exact = -math.log(2.0) * sum(d * law[d] for d in range(n + 1)) / n
    slack = 3.0 * rep.estimate.stderr + rep.bias_budget
    assert abs(rep.estimate.mean - exact) < slack, (rep.estimate, exact)
    assert rep.bias_budget <= 0.005
    assert rep.reference == -entropy_sequence(None, kernel, 40).values[40] / 40


def test_quenched_check_insufficient_precision():
    b = ball((5,))
    with pytest.raises(InsufficientPrecision):
        schramm_quenched_check(b, srw(), 0.15, 5, 10, 20, master_seed=9,
                               tau_replicas=40, max_doublings=0)
    with pytest.raises(InsufficientPrecision):
        schramm_quenched_check(b, srw(), 0.5, 0, 10, 20, master_seed=9)


def test_fkg_chain_along_walk():
    # tau(X_0, X_{n+m}) >= tau(X_0, X_n) tau(X_n, X_{n+m}) on average,
    # with independent configurations for the three indicators
    from treelab.percolation_engine import _grow_cluster, _grow_workspaces
    b = ball((6,))
    ops = BallKernelOps(b, srw())
    workspaces = _grow_workspaces(b)
    p = 0.4
    rng = seed_stream(21)
    n = m = 2
    deficits = np.empty(4000)
    for i in range(deficits.size):
        path = ops.sample_path(rng, n + m)
        mid, end = int(path[n]), int(path[n + m])
        ws = workspaces.get()
        _grow_cluster(ws, p, rng, b.origin)
        i1 = 1.0 if ws.vstamp[end] == ws.stamp else 0.0
        _grow_cluster(ws, p, rng, b.origin)
        i2 = 1.0 if ws.vstamp[mid] == ws.stamp else 0.0
        _grow_cluster(ws, p, rng, mid)
        i3 = 1.0 if ws.vstamp[end] == ws.stamp else 0.0
        deficits[i] = i1 - i2 * i3
    stderr = deficits.std(ddof=1) / math.sqrt(deficits.size)
    assert deficits.mean() >= -3.0 * stderr
