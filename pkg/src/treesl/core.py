"""Finite weighted colored tree-semilattices.

A tree-semilattice here is a finite rooted tree whose meet operation is
the lowest common ancestor. Every node carries a color (a subset of
{1..k}) and a nonnegative rational weight; the weights sum to exactly 1.
Instances are immutable after construction and safe for concurrent reads.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from fractions import Fraction
from math import lcm

import numpy as np

from .errors import InputError

DEFAULT_EXHAUSTIVE_LIMIT = 60


def color_compare(c1, c2) -> int:
    """Total order on color sets: compare min(c1-c2) against min(c2-c1), with min({}) = 0."""
    s1, s2 = frozenset(c1), frozenset(c2)
    if s1 == s2:
        return 0
    m1 = min(s1 - s2, default=0)
    m2 = min(s2 - s1, default=0)
    return -1 if m1 < m2 else 1


color_sort_key = functools.cmp_to_key(color_compare)


class TreeSemilattice:
    """Rooted tree with LCA meet, colors, and exact rational weights.

    parent[v] is the node id of v's father, or -1 for the single root.
    colors[v] is a frozenset drawn from {1..k}; weights[v] is a Fraction.
    """

    __slots__ = (
        "n", "k", "parent", "colors", "weights", "root", "children",
        "depth", "_tin", "_tout", "_preorder", "_up", "_meet_table",
        "_subtree_measure", "_int_weights", "_support",
    )

    def __init__(self, parent, colors, weights, k):
        self.parent = tuple(int(p) for p in parent)
        n = len(self.parent)
        if n == 0:
            raise InputError("a tree-semilattice needs at least one node")
        self.n = n
        self.k = int(k)
        if self.k < 0:
            raise InputError("k must be nonnegative")
        self.colors = tuple(frozenset(int(c) for c in cs) for cs in colors)
        if len(self.colors) != n:
            raise InputError("colors length does not match node count")
        for v, cs in enumerate(self.colors):
            if any(c < 1 or c > self.k for c in cs):
                raise InputError(f"node {v} uses a color outside 1..{self.k}")
        self.weights = tuple(Fraction(w) for w in weights)
        if len(self.weights) != n:
            raise InputError("weights length does not match node count")
        if any(w < 0 for w in self.weights):
            raise InputError("weights must be nonnegative")
        if sum(self.weights) != 1:
            raise InputError("weights must sum to exactly 1")

        roots = [v for v, p in enumerate(self.parent) if p < 0]
        if len(roots) != 1:
            raise InputError(f"expected exactly one root, found {len(roots)}")
        self.root = roots[0]
        kids: list[list[int]] = [[] for _ in range(n)]
        for v, p in enumerate(self.parent):
            if p >= 0:
                if p >= n:
                    raise InputError(f"node {v} has out-of-range parent {p}")
                kids[p].append(v)
        self.children = tuple(tuple(c) for c in kids)

        # iterative DFS: depth, preorder, and entry/exit times for ancestor tests
        depth = [0] * n
        tin = [0] * n
        tout = [0] * n
        preorder = []
        clock = 0
        stack = [(self.root, False)]
        seen = 0
        while stack:
            v, done = stack.pop()
            if done:
                tout[v] = clock
                continue
            tin[v] = clock
            clock += 1
            preorder.append(v)
            seen += 1
            stack.append((v, True))
            for c in reversed(self.children[v]):
                depth[c] = depth[v] + 1
                stack.append((c, False))
        if seen != n:
            raise InputError("parent relation is not a single connected tree")
        self.depth = tuple(depth)
        self._tin = tuple(tin)
        self._tout = tuple(tout)
        self._preorder = tuple(preorder)
        self._up = None
        self._meet_table = None
        self._subtree_measure = None
        self._int_weights = None
        self._support = None

    # -- basic queries ---------------------------------------------------

    def _check_node(self, v: int) -> int:
        if not isinstance(v, (int, np.integer)) or v < 0 or v >= self.n:
            raise InputError(f"invalid node id {v!r}")
        return int(v)

    def father(self, v: int) -> int:
        v = self._check_node(v)
        if v == self.root:
            raise InputError("the root has no father")
        return self.parent[v]

    def minimal_above(self, v: int) -> tuple[int, ...]:
        """The children of v, i.e. the minimal elements strictly above v."""
        return self.children[self._check_node(v)]

    def is_ancestor(self, u: int, v: int) -> bool:
        """True iff u <= v in the semilattice order (u on the root-to-v path)."""
        return self._tin[u] <= self._tin[v] and self._tout[v] <= self._tout[u]

    def subtree_nodes(self, v: int) -> frozenset[int]:
        v = self._check_node(v)
        i = self._preorder.index(v)
        size = self._tout[v] - self._tin[v]
        return frozenset(self._preorder[i:i + size])

    def subtree_measure(self, v: int) -> Fraction:
        if self._subtree_measure is None:
            acc = list(self.weights)
            for u in reversed(self._preorder):
                p = self.parent[u]
                if p >= 0:
                    acc[p] += acc[u]
            self._subtree_measure = tuple(acc)
        return self._subtree_measure[self._check_node(v)]

    @property
    def support(self) -> tuple[int, ...]:
        """Nodes of positive weight."""
        if self._support is None:
            self._support = tuple(v for v in range(self.n) if self.weights[v] > 0)
        return self._support

    # -- meet ------------------------------------------------------------

    def meet(self, u: int, v: int) -> int:
        """Lowest common ancestor of u and v."""
        u, v = self._check_node(u), self._check_node(v)
        if self._meet_table is not None:
            return int(self._meet_table[u, v])
        du, dv = self.depth[u], self.depth[v]
        while du > dv:
            u = self.parent[u]
            du -= 1
        while dv > du:
            v = self.parent[v]
            dv -= 1
        while u != v:
            u = self.parent[u]
            v = self.parent[v]
        return u

    def meet_all(self, nodes) -> int:
        it = iter(nodes)
        try:
            m = next(it)
        except StopIteration:
            raise InputError("meet of an empty node collection") from None
        for v in it:
            m = self.meet(m, v)
        return m

    def _lifting(self) -> np.ndarray:
        if self._up is None:
            n = self.n
            levels = max(1, max(self.depth).bit_length()) if n > 1 else 1
            up = np.empty((levels, n), dtype=np.int64)
            up[0] = [p if p >= 0 else v for v, p in enumerate(self.parent)]
            for j in range(1, levels):
                up[j] = up[j - 1][up[j - 1]]
            self._up = up
        return self._up

    def meet_table(self) -> np.ndarray:
        """Full n-by-n LCA table (cached)."""
        if self._meet_table is None:
            n = self.n
            if n * n > 40_000_000:
                raise InputError("meet table would be too large")
            up = self._lifting()
            depth = np.array(self.depth, dtype=np.int64)
            u = np.repeat(np.arange(n, dtype=np.int64), n)
            v = np.tile(np.arange(n, dtype=np.int64), n)
            swap = depth[u] < depth[v]
            u[swap], v[swap] = v[swap], u[swap]
            diff = depth[u] - depth[v]
            for j in range(up.shape[0]):
                m = (diff & (1 << j)) != 0
                u[m] = up[j, u[m]]
            neq = u != v
            for j in range(up.shape[0] - 1, -1, -1):
                uj, vj = up[j, u], up[j, v]
                m = neq & (uj != vj)
                u[m] = uj[m]
                v[m] = vj[m]
            res = np.where(neq, up[0, u], u)
            self._meet_table = res.reshape(n, n)
        return self._meet_table

    # -- derived structures ----------------------------------------------

    def with_weights(self, weights) -> "TreeSemilattice":
        return TreeSemilattice(self.parent, self.colors, weights, self.k)

    def relabeled(self, perm) -> "TreeSemilattice":
        """Image under node relabeling perm (perm[old] = new)."""
        perm = list(perm)
        n = self.n
        parent = [0] * n
        colors = [frozenset()] * n
        weights = [Fraction(0)] * n
        for old in range(n):
            new = perm[old]
            p = self.parent[old]
            parent[new] = perm[p] if p >= 0 else -1
            colors[new] = self.colors[old]
            weights[new] = self.weights[old]
        return TreeSemilattice(parent, colors, weights, self.k)

    def int_weights(self) -> tuple[tuple[int, ...], int]:
        """Weights as integer masses over a common denominator."""
        if self._int_weights is None:
            den = lcm(*(w.denominator for w in self.weights))
            self._int_weights = (tuple(int(w * den) for w in self.weights), den)
        return self._int_weights

    def color_ids(self) -> tuple[dict[frozenset, int], np.ndarray]:
        """Intern color sets (sorted by the color order) to small integers."""
        distinct = sorted(set(self.colors), key=color_sort_key)
        ids = {c: i for i, c in enumerate(distinct)}
        return ids, np.array([ids[c] for c in self.colors], dtype=np.int64)


# -- generated substructures ----------------------------------------------


@dataclass(frozen=True)
class MarkedSubstructure:
    """Sub-tree-semilattice generated by an ordered tuple of nodes.

    The carrier is the set of generators together with all pairwise meets,
    which is automatically meet-closed. Marks record the generators in
    order (repetitions allowed).
    """

    host: TreeSemilattice
    carrier: tuple[int, ...]
    marks: tuple[int, ...]

    def as_marked_tree(self) -> tuple[TreeSemilattice, tuple[int, ...]]:
        """Materialize as a standalone structure plus local mark ids."""
        host = self.host
        local = {v: i for i, v in enumerate(self.carrier)}
        size = len(self.carrier)
        parent = [-1] * size
        for v in self.carrier:
            best = -1
            for a in self.carrier:
                if a != v and host.is_ancestor(a, v):
                    if best < 0 or host.depth[a] > host.depth[best]:
                        best = a
            parent[local[v]] = local[best] if best >= 0 else -1
        colors = [host.colors[v] for v in self.carrier]
        weights = [Fraction(1, size)] * size
        tree = TreeSemilattice(parent, colors, weights, host.k)
        return tree, tuple(local[v] for v in self.marks)

    def canonical_encoding(self) -> str:
        tree, marks = self.as_marked_tree()
        return canonical_encoding(tree, marks)


def generated_subsemilattice(T: TreeSemilattice, gens) -> MarkedSubstructure:
    """Substructure generated by gens: the generators plus their pairwise meets."""
    gens = tuple(T._check_node(g) for g in gens)
    if not gens:
        raise InputError("generator list must be nonempty")
    carrier = set(gens)
    for i in range(len(gens)):
        for j in range(i + 1, len(gens)):
            carrier.add(T.meet(gens[i], gens[j]))
    carrier = tuple(sorted(carrier))
    for a in carrier:
        for b in carrier:
            if T.meet(a, b) not in carrier:
                raise InputError("carrier not meet-closed")  # unreachable for LCA meets
    return MarkedSubstructure(T, carrier, gens)


# -- canonical encodings ----------------------------------------------------


def canonical_encoding(T: TreeSemilattice, marks=None) -> str:
    """Isomorphism-invariant string for a (marked, colored, unweighted) structure.

    Children are ordered by their recursive encodings, so two structures get
    equal strings exactly when some isomorphism matches colors and sends the
    i-th mark to the i-th mark.
    """
    positions: dict[int, list[int]] = {}
    if marks is not None:
        for i, v in enumerate(marks):
            positions.setdefault(T._check_node(v), []).append(i)
    enc: dict[int, str] = {}
    for v in reversed(T._preorder):
        label = "c" + ",".join(str(c) for c in sorted(T.colors[v]))
        if v in positions:
            label += ";m" + ",".join(str(i) for i in positions[v])
        kids = sorted(enc[c] for c in T.children[v])
        enc[v] = "(" + label + "|" + "".join(kids) + ")"
    return enc[T.root]


# -- axiom validation --------------------------------------------------------


@dataclass
class AxiomReport:
    ok: bool
    violations: list[str] = field(default_factory=list)
    triples_checked: int = 0
    exhaustive: bool = False


def validate_meet_table(table, *, exhaustive_limit: int = DEFAULT_EXHAUSTIVE_LIMIT,
                        sample_triples: int = 20_000, seed: int = 0) -> AxiomReport:
    """Check a raw meet table for the semilattice axioms.

    Verifies idempotence, commutativity, associativity, and that any three
    elements have at most two distinct pairwise meets. Triples are checked
    exhaustively up to `exhaustive_limit` elements and on a seeded random
    sample above that.
    """
    t = np.asarray(table, dtype=np.int64)
    report = AxiomReport(ok=True)
    n = t.shape[0]
    if t.ndim != 2 or t.shape[1] != n:
        return AxiomReport(False, ["meet table is not square"])
    if n and (t.min() < 0 or t.max() >= n):
        report.ok = False
        report.violations.append("meet table contains out-of-range values")
        return report

    diag = t[np.arange(n), np.arange(n)]
    bad = np.nonzero(diag != np.arange(n))[0]
    if bad.size:
        report.ok = False
        report.violations.append(f"idempotence fails at x={bad[0]}")
    asym = np.argwhere(t != t.T)
    if asym.size:
        x, y = asym[0]
        report.ok = False
        report.violations.append(f"commutativity fails at ({x},{y})")

    exhaustive = n <= exhaustive_limit
    if exhaustive:
        idx = np.arange(n, dtype=np.int64)
        x = idx[:, None, None]
        y = idx[None, :, None]
        z = idx[None, None, :]
        report.triples_checked = n ** 3
    else:
        rng = np.random.default_rng(seed)
        x = rng.integers(0, n, size=sample_triples)
        y = rng.integers(0, n, size=sample_triples)
        z = rng.integers(0, n, size=sample_triples)
        report.triples_checked = sample_triples
    report.exhaustive = exhaustive

    lhs = t[t[x, y], z]
    rhs = t[x, t[y, z]]
    bad_assoc = np.argwhere(lhs != rhs)
    if bad_assoc.size:
        report.ok = False
        if exhaustive:
            report.violations.append(
                f"associativity fails at {tuple(int(j) for j in bad_assoc[0])}")
        else:
            j = bad_assoc[0][0]
            report.violations.append(
                f"associativity fails at ({int(x[j])},{int(y[j])},{int(z[j])})")

    mxy = t[x, y]
    mxz = t[x, z]
    myz = t[y, z]
    distinct = 1 + (mxz != mxy).astype(np.int8) + ((myz != mxy) & (myz != mxz)).astype(np.int8)
    bad3 = np.argwhere(distinct > 2)
    if bad3.size:
        report.ok = False
        if exhaustive:
            report.violations.append(
                f"three-element meet condition fails at {tuple(int(j) for j in bad3[0])}")
        else:
            j = bad3[0][0]
            report.violations.append(
                f"three-element meet condition fails at ({int(x[j])},{int(y[j])},{int(z[j])})")
    return report


def validate_axioms(T: TreeSemilattice, *, exhaustive_limit: int = DEFAULT_EXHAUSTIVE_LIMIT,
                    sample_triples: int = 20_000, seed: int = 0) -> AxiomReport:
    """Check the semilattice axioms of T's meet over node triples."""
    return validate_meet_table(T.meet_table(), exhaustive_limit=exhaustive_limit,
                               sample_triples=sample_triples, seed=seed)


# -- file format -------------------------------------------------------------


def dumps_tsl(T: TreeSemilattice) -> str:
    """Serialize to the .tsl text format."""
    lines = [f"tsl {T.n} {T.k}"]
    for v in range(T.n):
        mask = 0
        for c in T.colors[v]:
            mask |= 1 << (c - 1)
        w = T.weights[v]
        lines.append(f"{v} {T.parent[v]} {mask} {w.numerator}/{w.denominator}")
    return "\n".join(lines) + "\n"


def _parse_fraction(text: str) -> Fraction:
    if "/" in text:
        num, den = text.split("/", 1)
        return Fraction(int(num), int(den))
    return Fraction(int(text))


def loads_tsl(text: str) -> TreeSemilattice:
    """Parse the .tsl text format; rejects malformed trees and weight sums != 1."""
    lines = [ln for ln in (raw.strip() for raw in text.splitlines()) if ln]
    if not lines:
        raise InputError("empty tsl input")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "tsl":
        raise InputError("tsl header must be 'tsl <node_count> <k>'")
    try:
        n, k = int(head[1]), int(head[2])
    except ValueError as exc:
        raise InputError(f"bad tsl header: {exc}") from exc
    if len(lines) - 1 != n:
        raise InputError(f"expected {n} node lines, found {len(lines) - 1}")
    parent = [None] * n
    colors = [frozenset()] * n
    weights = [Fraction(0)] * n
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 4:
            raise InputError(f"bad node line: {ln!r}")
        try:
            v, p, mask = int(parts[0]), int(parts[1]), int(parts[2])
            w = _parse_fraction(parts[3])
        except ValueError as exc:
            raise InputError(f"bad node line {ln!r}: {exc}") from exc
        if not 0 <= v < n:
            raise InputError(f"node id {v} out of range")
        if parent[v] is not None:
            raise InputError(f"duplicate node id {v}")
        if mask < 0 or mask >> k:
            raise InputError(f"node {v} color mask {mask} does not fit {k} colors")
        parent[v] = p
        colors[v] = frozenset(i + 1 for i in range(k) if mask & (1 << i))
        weights[v] = w
    if any(p is None for p in parent):
        raise InputError("missing node lines")
    return TreeSemilattice(parent, colors, weights, k)
