"""Deterministic generators for trees, weights, and cotrees.

Everything is seeded through the package Rng, so corpora used in tests and
experiments are reproducible.
"""

from __future__ import annotations

from fractions import Fraction

from .core import TreeSemilattice
from .errors import InputError
from .rng import Rng


def _uniform(n: int) -> list[Fraction]:
    return [Fraction(1, n)] * n


def chain_tree(n: int, k: int = 0) -> TreeSemilattice:
    """Path v0 < v1 < ... < v_{n-1}, uniform weights, no colors."""
    parent = [-1] + list(range(n - 1))
    return TreeSemilattice(parent, [frozenset()] * n, _uniform(n), k)


def star_tree(leaves: int, k: int = 0, root_weight: Fraction | None = None) -> TreeSemilattice:
    """Root with `leaves` children. Uniform unless root_weight is given."""
    n = leaves + 1
    parent = [-1] + [0] * leaves
    if root_weight is None:
        weights = _uniform(n)
    else:
        rest = (1 - Fraction(root_weight)) / leaves
        weights = [Fraction(root_weight)] + [rest] * leaves
    return TreeSemilattice(parent, [frozenset()] * n, weights, k)


def caterpillar_tree(spine: int, leaves_per: int, k: int = 0) -> TreeSemilattice:
    """Path of `spine` nodes with `leaves_per` pendant leaves on each."""
    parent = []
    for i in range(spine):
        parent.append(i - 1 if i > 0 else -1)
    spine_ids = list(range(spine))
    for s in spine_ids:
        for _ in range(leaves_per):
            parent.append(s)
    n = len(parent)
    return TreeSemilattice(parent, [frozenset()] * n, _uniform(n), k)


def binary_tree(depth: int, k: int = 0) -> TreeSemilattice:
    """Complete binary tree of the given depth, uniform weights."""
    n = 2 ** (depth + 1) - 1
    parent = [-1] + [(v - 1) // 2 for v in range(1, n)]
    return TreeSemilattice(parent, [frozenset()] * n, _uniform(n), k)


def random_tree(n: int, k: int, seed: int, *, shape: str = "mixed",
                zero_weight_frac: float = 0.0, max_mass: int = 20) -> TreeSemilattice:
    """Random weighted colored tree on n nodes.

    shape picks the attachment rule: "random" (uniform recursive tree),
    "chainy" (mostly path), "starry" (mostly shallow), "caterpillar", or
    "mixed" (seed-dependent choice among the others). Weights are integer
    masses in 1..max_mass normalized exactly; a zero_weight_frac share of
    nodes gets mass 0.
    """
    if n < 1:
        raise InputError("need n >= 1")
    rng = Rng(seed)
    if shape == "mixed":
        shape = ("random", "chainy", "starry", "caterpillar")[rng.randrange(4)]
    parent = [-1]
    for v in range(1, n):
        if shape == "random":
            p = rng.randrange(v)
        elif shape == "chainy":
            p = v - 1 if rng.randrange(4) != 0 else rng.randrange(v)
        elif shape == "starry":
            p = 0 if rng.randrange(2) == 0 else rng.randrange(v)
        elif shape == "caterpillar":
            p = v - 1 if v % 2 == 1 else max(v - 2, 0)
        else:
            raise InputError(f"unknown shape {shape!r}")
        parent.append(p)
    colors = []
    for _ in range(n):
        cs = frozenset(c for c in range(1, k + 1) if rng.randrange(2) == 0)
        colors.append(cs)
    zero_cut = int(zero_weight_frac * 1000)
    masses = []
    for _ in range(n):
        if rng.randrange(1000) < zero_cut:
            masses.append(0)
        else:
            masses.append(1 + rng.randrange(max_mass))
    if sum(masses) == 0:
        masses[0] = 1
    total = sum(masses)
    weights = [Fraction(m, total) for m in masses]
    return TreeSemilattice(parent, colors, weights, k)


def random_cotree(n_leaves: int, m: int, seed: int):
    """Random cotree on n_leaves leaves with colors in 1..m.

    Clusters of current roots are repeatedly merged under fresh internal
    nodes carrying random symmetric 0/1 matrices.
    """
    from .cograph import Cotree

    if n_leaves < 1:
        raise InputError("need at least one leaf")
    rng = Rng(seed)
    parent: list[int] = [-1] * n_leaves
    colors: list[int | None] = [1 + rng.randrange(m) for _ in range(n_leaves)]
    matrices: list[tuple | None] = [None] * n_leaves
    roots = list(range(n_leaves))
    while len(roots) > 1:
        take = min(len(roots), 2 + rng.randrange(3))
        group = []
        for _ in range(take):
            group.append(roots.pop(rng.randrange(len(roots))))
        node = len(parent)
        parent.append(-1)
        colors.append(None)
        rows = [[0] * m for _ in range(m)]
        for i in range(m):
            for j in range(i, m):
                rows[i][j] = rows[j][i] = rng.randrange(2)
        matrices.append(tuple(tuple(r) for r in rows))
        for g in group:
            parent[g] = node
        roots.append(node)
    if len(parent) == 1:
        # single leaf: add a root above so internal structure exists
        rows = tuple(tuple(0 for _ in range(m)) for _ in range(m))
        parent = [1, -1]
        colors = [colors[0], None]
        matrices = [None, rows]
    return Cotree(parent, colors, matrices, m)
