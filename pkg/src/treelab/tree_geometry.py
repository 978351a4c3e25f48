"""Exact coordinates on a regular tree with a distinguished end.

A k-regular tree (k >= 3) is oriented by fixing one end xi.  Every vertex
then has one neighbour "up" (towards xi) and k-1 neighbours "down".  Levels
(Busemann heights) increase towards xi; the root sits at level 0.

Vertices are addressed relative to the root by a pair (m, w): climb m steps
up from the root, then descend following the word w over the alphabet
{0, ..., k-2}.  The address is canonical when the first descent after a
genuine climb does not retrace the climb; the retracing child is labelled
k-2, so for m >= 1 the first letter must lie in {0, ..., k-3}.

All height and modular-function arithmetic is exact: heights are integers,
and the modular function Delta(x, y) = prod_i (k_i - 1)^{h_i} is handled in
log space so radius-100 products cannot overflow.
"""

import math
from dataclasses import dataclass

from .errors import ConstraintViolation


@dataclass(frozen=True)
class TreeSpec:
    """A single k-regular tree factor."""

    degree: int

    def __post_init__(self):
        if self.degree < 3:
            raise ConstraintViolation(f"tree degree must be >= 3, got {self.degree}")

    @property
    def branching(self):
        """Number of children below every vertex: k - 1."""
        return self.degree - 1

    @property
    def log_branching(self):
        """delta = log(k - 1), the Busemann weight of one level."""
        return math.log(self.degree - 1)


@dataclass(frozen=True)
class TreeVertex:
    """Canonical address (m, word) relative to the root of one tree factor."""

    m: int
    word: tuple

    @property
    def n(self):
        return len(self.word)

    @property
    def depth(self):
        """Graph distance from the root: m + n."""
        return self.m + self.n

    @property
    def level(self):
        """Busemann height relative to the root: m - n."""
        return self.m - self.n


ROOT = TreeVertex(0, ())


def canonical_vertex(spec, m, word):
    """Validate and build the canonical address (m, word).

    Raises ConstraintViolation unless 0 <= letters <= k-2, m >= 0, and the
    first letter avoids k-2 whenever m >= 1 (that letter would retrace the
    climb, giving a second address for a vertex nearer the root).
    """
    k = spec.degree
    word = tuple(word)
    if m < 0:
        raise ConstraintViolation(f"climb count must be >= 0, got {m}")
    for c in word:
        if not 0 <= c <= k - 2:
            raise ConstraintViolation(f"letter {c} outside 0..{k - 2}")
    if m >= 1 and word and word[0] == k - 2:
        raise ConstraintViolation(
            f"first letter {k - 2} after a climb retraces the climb")
    return TreeVertex(m, word)


def parent(vertex):
    """The neighbour one level up (towards the end xi)."""
    if vertex.n > 0:
        return TreeVertex(vertex.m, vertex.word[:-1])
    return TreeVertex(vertex.m + 1, ())


def children(spec, vertex):
    """The k-1 neighbours one level down, in canonical letter order."""
    k = spec.degree
    if vertex.n == 0 and vertex.m >= 1:
        # One downward neighbour continues the climb path back towards the
        # root; it is the vertex (m-1, ()) and uses the reserved letter k-2.
        out = [TreeVertex(vertex.m, (c,)) for c in range(k - 2)]
        out.append(TreeVertex(vertex.m - 1, ()))
        return out
    return [TreeVertex(vertex.m, vertex.word + (c,)) for c in range(k - 1)]


def neighbors(spec, vertex):
    """All k tree neighbours: parent first, then children."""
    return [parent(vertex)] + children(spec, vertex)


def _descent_word(spec, vertex, apex_height):
    """Word of the descending path from the apex (apex_height, ()) to vertex.

    Climbing from the root is descending from the apex along the reserved
    letter k-2, so the path is (k-2)^(apex_height - m) followed by word.
    """
    k = spec.degree
    return (k - 2,) * (apex_height - vertex.m) + vertex.word


def tree_distance(spec, x, y):
    """Graph distance between two canonical addresses in one tree."""
    apex = max(x.m, y.m)
    wx = _descent_word(spec, x, apex)
    wy = _descent_word(spec, y, apex)
    lcp = 0
    for a, b in zip(wx, wy):
        if a != b:
            break
        lcp += 1
    return len(wx) + len(wy) - 2 * lcp


def height_diff(x, y):
    """Level difference level(y) - level(x); exact integer cocycle."""
    return y.level - x.level


def level_sphere_count(spec, m, n):
    """Number of vertices with address shape (m, |w| = n).

    (k-1)^n below the root, a single vertex on the climb path, and
    (k-1)^(n-1) (k-2) when a climb of m >= 1 is followed by n >= 1 descents.
    """
    k = spec.degree
    if m < 0 or n < 0:
        raise ConstraintViolation("m and n must be >= 0")
    if m == 0:
        return (k - 1) ** n
    if n == 0:
        return 1
    return (k - 1) ** (n - 1) * (k - 2)


def sphere_count(spec, d):
    """Number of vertices at graph distance d from the root."""
    if d < 0:
        raise ConstraintViolation("distance must be >= 0")
    if d == 0:
        return 1
    k = spec.degree
    return k * (k - 1) ** (d - 1)


# ----------------------------------------------------------------------
# Products of trees
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ProductVertex:
    """A vertex of T_1 x ... x T_N: one TreeVertex per factor."""

    coords: tuple

    def __len__(self):
        return len(self.coords)

    def __getitem__(self, i):
        return self.coords[i]


def product_root(n_factors):
    return ProductVertex((ROOT,) * n_factors)


@dataclass(frozen=True)
class DeltaVector:
    """Per-factor level weights delta_i = log(k_i - 1)."""

    trees: tuple

    @property
    def values(self):
        return tuple(t.log_branching for t in self.trees)

    def dot(self, heights):
        return math.fsum(d * h for d, h in zip(self.values, heights))


def _check_arity(trees, x, y):
    if not (len(trees) == len(x) == len(y)):
        raise ConstraintViolation(
            f"factor count mismatch: {len(trees)} trees, "
            f"{len(x)} and {len(y)} coordinates")


def distance_vector(trees, x, y):
    """Per-factor graph distances (d_1, ..., d_N)."""
    _check_arity(trees, x, y)
    return tuple(tree_distance(t, a, b) for t, a, b in zip(trees, x.coords, y.coords))


def height_vector(trees, x, y):
    """Per-factor level differences (h_1, ..., h_N)."""
    _check_arity(trees, x, y)
    return tuple(height_diff(a, b) for a, b in zip(x.coords, y.coords))


def log_modular(trees, x, y):
    """log Delta(x, y) = sum_i log(k_i - 1) * h_i(x_i, y_i).

    Heights are exact integers, so the cocycle identity
    log Delta(x, y) + log Delta(y, z) = log Delta(x, z) holds to the last bit
    up to one float rounding per factor.
    """
    heights = height_vector(trees, x, y)
    return DeltaVector(tuple(trees)).dot(heights)
