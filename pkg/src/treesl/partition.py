"""Epsilon-partitions of weighted tree-semilattices.

A partition is valid when every part has one of four shapes relative to an
attachment vertex v: a singleton {v} (type 1), {v} plus the subtrees of a
nonempty set of v's children (type 2), a union of at least two child
subtrees with v outside the part (type 3, and v must then head some type
1/2 part), or a subtree minus a strictly smaller subtree, T_v without T_w
(type 4, with cut vertex w and the v..father(w) path as spine). Every
non-singleton part must have measure at most epsilon.

The constructor classifies vertices by the measure of their subtree and of
the subtree stripped of heavy children, then groups light subtrees under
their lowest non-light ancestor and greedily merges chains of chaining
vertices from the root downward.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from math import ceil

from .core import TreeSemilattice
from .errors import InputError

log = logging.getLogger("treesl.partition")


class VertexClass(Enum):
    LIGHT = "light"
    SINGULAR = "singular"
    CHAINING = "chaining"
    BRANCHING = "branching"


@dataclass(frozen=True)
class Part:
    kind: int  # 1..4
    attachment: int
    members: frozenset[int]
    cut: int | None = None
    spine: tuple[int, ...] | None = None


@dataclass
class EpsPartition:
    epsilon: Fraction
    parts: tuple[Part, ...]
    part_of: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.parts)


@dataclass
class PartitionReport:
    ok: bool
    violations: list[str] = field(default_factory=list)


# -- vertex classification -----------------------------------------------------


def classify_all(T: TreeSemilattice, eps: Fraction) -> list[VertexClass]:
    """Class of every vertex: light, singular, chaining, or branching."""
    eps = Fraction(eps)
    if not 0 < eps <= 1:
        raise InputError("epsilon must lie in (0, 1]")
    out: list[VertexClass] = [VertexClass.LIGHT] * T.n
    for v in range(T.n):
        mv = T.subtree_measure(v)
        if mv < eps:
            continue
        heavy_kids = [c for c in T.children[v] if T.subtree_measure(c) >= eps]
        stripped = mv - sum((T.subtree_measure(c) for c in heavy_kids), Fraction(0))
        if stripped >= eps:
            out[v] = VertexClass.SINGULAR
        elif len(heavy_kids) == 1:
            out[v] = VertexClass.CHAINING
        else:
            out[v] = VertexClass.BRANCHING
    return out


def classify_vertex(T: TreeSemilattice, eps: Fraction, v: int) -> VertexClass:
    return classify_all(T, eps)[T._check_node(v)]


# -- region machinery ------------------------------------------------------------

# A region is a sub-tree-semilattice described against the host tree: a root,
# an optional restriction of the root's children, and an optional hole (a cut
# vertex whose subtree is excluded). Partition construction runs uniformly on
# regions so that refinement can reuse it inside every part shape.


class _Region:
    def __init__(self, T: TreeSemilattice, root: int, root_children=None, hole: int | None = None):
        self.T = T
        self.root = root
        self.hole = hole
        self.root_children = tuple(root_children) if root_children is not None \
            else T.children[root]
        if hole is not None:
            path = []
            v = T.parent[hole]
            while v != -1:
                path.append(v)
                if v == root:
                    break
                v = T.parent[v]
            if not path or path[-1] != root:
                raise InputError("hole is not below the region root")
            path.reverse()
            self.spine_path = tuple(path)  # root .. father(hole)
            self.on_spine = set(path)
        else:
            self.spine_path = ()
            self.on_spine = set()
        self._measure_cache: dict[int, Fraction] = {}

    def children(self, u: int):
        base = self.root_children if u == self.root else self.T.children[u]
        if self.hole is None:
            return base
        return tuple(c for c in base if c != self.hole)

    def measure(self, u: int) -> Fraction:
        got = self._measure_cache.get(u)
        if got is not None:
            return got
        T = self.T
        if u == self.root:
            m = T.weights[u] + sum((T.subtree_measure(c) for c in self.root_children),
                                   Fraction(0))
            if self.hole is not None:
                m -= T.subtree_measure(self.hole)
        else:
            m = T.subtree_measure(u)
            if self.hole is not None and u in self.on_spine:
                m -= T.subtree_measure(self.hole)
        self._measure_cache[u] = m
        return m

    def subtree_nodes(self, u: int) -> frozenset[int]:
        if u == self.root:
            nodes = {u}
            for c in self.root_children:
                nodes |= self.T.subtree_nodes(c)
        else:
            nodes = set(self.T.subtree_nodes(u))
        if self.hole is not None and (u == self.root or u in self.on_spine):
            nodes -= self.T.subtree_nodes(self.hole)
        return frozenset(nodes)

    def preorder(self):
        stack = [self.root]
        while stack:
            v = stack.pop()
            yield v
            for c in reversed(self.children(v)):
                stack.append(c)

    def t_path(self, top: int, bottom_father: int) -> tuple[int, ...]:
        """Host-tree path top..bottom_father, top-first."""
        path = []
        v = bottom_father
        while True:
            path.append(v)
            if v == top:
                break
            v = self.T.parent[v]
        path.reverse()
        return tuple(path)


def _greedy_groups(items: list[int], measure, eps: Fraction) -> list[list[int]]:
    """Group items (decreasing measure, ties by id) with group sums <= eps."""
    ordered = sorted(items, key=lambda c: (-measure(c), c))
    groups: list[list[int]] = []
    cur: list[int] = []
    cur_sum = Fraction(0)
    for c in ordered:
        m = measure(c)
        if cur and cur_sum + m > eps:
            groups.append(cur)
            cur = []
            cur_sum = Fraction(0)
        cur.append(c)
        cur_sum += m
    if cur:
        groups.append(cur)
    return groups


def _subtree_part(region: _Region, x: int) -> Part:
    """A full region subtree as a part: type 2 at x, degenerating to a singleton."""
    members = region.subtree_nodes(x)
    if len(members) == 1:
        return Part(1, x, members)
    if region.hole is not None and x in region.on_spine:
        return Part(4, x, members, cut=region.hole, spine=region.t_path(x, region.T.parent[region.hole]))
    return Part(2, x, members)


def _partition_region(T: TreeSemilattice, eps: Fraction, region: _Region,
                      protect_root: bool) -> list[Part]:
    root = region.root
    total = region.measure(root)
    if total <= eps:
        return [_subtree_part(region, root)]

    # classification restricted to the region
    cls: dict[int, VertexClass] = {}
    light_kids: dict[int, list[int]] = {}
    heavy_kid: dict[int, list[int]] = {}
    order: list[int] = []
    stack = [root]
    while stack:
        v = stack.pop()
        if region.measure(v) < eps:
            continue  # light vertices are absorbed by their lowest non-light ancestor
        order.append(v)
        lights, heavies = [], []
        for c in region.children(v):
            (heavies if region.measure(c) >= eps else lights).append(c)
        light_kids[v] = lights
        heavy_kid[v] = heavies
        stripped = region.measure(v) - sum((region.measure(c) for c in heavies), Fraction(0))
        if stripped >= eps:
            cls[v] = VertexClass.SINGULAR
        elif len(heavies) == 1:
            cls[v] = VertexClass.CHAINING
        else:
            cls[v] = VertexClass.BRANCHING
        for c in reversed(heavies):
            stack.append(c)

    # in a holed region, the lowest non-light spine vertex needs special care:
    # a light spine child owns a truncated subtree that can only stand alone,
    # and merging the vertex down a chain would punch a second hole
    merge_excluded: set[int] = set()
    forced_parts: list[Part] = []
    forced_child: int | None = None
    if region.hole is not None:
        u_star = None
        for v in region.spine_path:
            if v in cls:
                u_star = v
            else:
                break
        assert u_star is not None
        merge_excluded.add(u_star)
        hole_father = region.T.parent[region.hole]
        if u_star != hole_father:
            idx = region.spine_path.index(u_star)
            s = region.spine_path[idx + 1]
            forced_child = s
            forced_parts.append(Part(4, s, region.subtree_nodes(s), cut=region.hole,
                                     spine=region.t_path(s, hole_father)))
    if protect_root:
        merge_excluded.add(root)

    parts: list[Part] = list(forced_parts)
    own_part: dict[int, int] = {}  # non-light vertex -> index of the part containing it

    for v in order:
        lights = [c for c in light_kids[v] if c != forced_child]
        if cls[v] is VertexClass.SINGULAR:
            own_part[v] = len(parts)
            parts.append(Part(1, v, frozenset([v])))
            for group in _greedy_groups(lights, region.measure, eps):
                if len(group) == 1:
                    parts.append(_subtree_part(region, group[0]))
                else:
                    members = frozenset().union(*(region.subtree_nodes(c) for c in group))
                    parts.append(Part(3, v, members))
        else:
            members = {v}
            for c in lights:
                members |= region.subtree_nodes(c)
            own_part[v] = len(parts)
            if len(members) == 1:
                parts.append(Part(1, v, frozenset(members)))
            else:
                parts.append(Part(2, v, frozenset(members)))

    # chain merging: walk maximal chains of chaining vertices from the top,
    # absorbing parts while the total stays within eps
    is_chain = {v for v in order if cls[v] is VertexClass.CHAINING and v not in merge_excluded}
    starts = []
    for v in order:
        if v not in is_chain:
            continue
        p = region.T.parent[v] if v != root else -1
        if p == -1 or p not in is_chain:
            starts.append(v)
    def part_measure(u: int) -> Fraction:
        return sum((region.T.weights[x] for x in parts[own_part[u]].members), Fraction(0))

    replaced: dict[int, Part | None] = {}
    for start in starts:
        run: list[int] = []
        v = start
        while True:
            run.append(v)
            nxt = heavy_kid[v][0]
            if nxt in is_chain:
                v = nxt
            else:
                break
        i = 0
        while i < len(run):
            group = [run[i]]
            acc = part_measure(run[i])
            j = i + 1
            while j < len(run):
                nxt_m = part_measure(run[j])
                if acc + nxt_m > eps:
                    break
                group.append(run[j])
                acc += nxt_m
                j += 1
            if len(group) > 1:
                members = frozenset().union(*(parts[own_part[u]].members for u in group))
                cut = heavy_kid[group[-1]][0]
                merged = Part(4, group[0], members, cut=cut,
                              spine=region.t_path(group[0], region.T.parent[cut]))
                replaced[own_part[group[0]]] = merged
                for u in group[1:]:
                    replaced[own_part[u]] = None
            i = j

    out: list[Part] = []
    for idx, part in enumerate(parts):
        if idx in replaced:
            if replaced[idx] is not None:
                out.append(replaced[idx])
        else:
            out.append(part)
    return out


def _finish(T: TreeSemilattice, eps: Fraction, parts: list[Part]) -> EpsPartition:
    parts = sorted(parts, key=lambda p: min(p.members))
    part_of = [-1] * T.n
    for i, p in enumerate(parts):
        for v in p.members:
            if part_of[v] != -1:
                raise InputError("parts overlap")
            part_of[v] = i
    if any(i < 0 for i in part_of):
        raise InputError("parts do not cover the tree")
    return EpsPartition(Fraction(eps), tuple(parts), tuple(part_of))


# -- public constructors -----------------------------------------------------------


def eps_partition(T: TreeSemilattice, eps: Fraction) -> EpsPartition:
    """Greedy partition with at most ceil(4/eps) parts."""
    eps = Fraction(eps)
    if not 0 < eps <= 1:
        raise InputError("epsilon must lie in (0, 1]")
    parts = _partition_region(T, eps, _Region(T, T.root), protect_root=False)
    result = _finish(T, eps, parts)
    bound = ceil(4 / eps)
    if result.size > bound:
        raise RuntimeError(
            f"internal error: {result.size} parts exceed the 4/eps bound {bound}")
    return result


def refine_partition(T: TreeSemilattice, eps_new: Fraction, partition: EpsPartition) -> EpsPartition:
    """Refine every part into an eps_new-partition of the whole structure.

    Each part is re-partitioned as a region of its own; parts of type 3
    temporarily adopt their attachment vertex. The attachment of a type 2
    or type 3 part always keeps its own part at the top of the region, so
    that successive refinements stay compatible with the reductions built
    from them. The part count is asserted against ceil(81/eps_new); the
    measured count is logged for comparison with the tighter 16/eps_new.
    """
    eps_new = Fraction(eps_new)
    if eps_new >= partition.epsilon:
        raise InputError("refinement needs eps_new < the partition's epsilon")
    if not 0 < eps_new <= 1:
        raise InputError("epsilon must lie in (0, 1]")
    new_parts: list[Part] = []
    for part in partition.parts:
        if part.kind == 1 or len(part.members) == 1:
            new_parts.append(Part(1, part.attachment, part.members))
            continue
        if part.kind == 2:
            children = [c for c in T.children[part.attachment] if c in part.members]
            region = _Region(T, part.attachment, root_children=children)
            new_parts.extend(_partition_region(T, eps_new, region, protect_root=True))
        elif part.kind == 3:
            v = part.attachment
            children = [c for c in T.children[v] if c in part.members]
            region = _Region(T, v, root_children=children)
            sub = _partition_region(T, eps_new, region, protect_root=True)
            for sp in sub:
                if v not in sp.members:
                    new_parts.append(sp)
                    continue
                rest = sp.members - {v}
                if not rest:
                    continue
                roots = [c for c in children if c in rest]
                if len(roots) == 1:
                    new_parts.append(_subtree_part(region, roots[0]))
                else:
                    new_parts.append(Part(3, v, frozenset(rest)))
        elif part.kind == 4:
            region = _Region(T, part.attachment, hole=part.cut)
            new_parts.extend(_partition_region(T, eps_new, region, protect_root=False))
        else:
            raise InputError(f"part of unknown kind {part.kind}")
    result = _finish(T, eps_new, new_parts)
    for i, p in enumerate(result.parts):
        container = partition.part_of[next(iter(p.members))]
        if not p.members <= partition.parts[container].members:
            raise RuntimeError("internal error: refinement broke containment")
    bound = ceil(81 / eps_new)
    if result.size > bound:
        raise RuntimeError(
            f"internal error: {result.size} parts exceed the 81/eps bound {bound}")
    log.info("refined to %d parts (asserted bound %d, proof-rate bound %d)",
             result.size, bound, ceil(16 / eps_new))
    return result


# -- validation ---------------------------------------------------------------------


def _check_part(T: TreeSemilattice, part: Part) -> list[str]:
    errs: list[str] = []
    v = part.attachment
    members = part.members
    if len(members) == 1:
        if part.kind in (1, 2) and v not in members:
            errs.append(f"singleton part does not contain its attachment {v}")
        return errs
    if part.kind == 1:
        return [f"type-1 part must be a singleton, has {len(members)} members"]
    if part.kind == 2:
        if v not in members:
            return [f"type-2 part misses its attachment {v}"]
        F = [c for c in T.children[v] if c in members]
        if not F:
            return [f"type-2 part at {v} has no child subtrees"]
        covered = {v}
        for c in F:
            covered |= T.subtree_nodes(c)
        if covered != members:
            errs.append(f"type-2 part at {v} is not attachment plus full child subtrees")
    elif part.kind == 3:
        if v in members:
            return [f"type-3 part contains its attachment {v}"]
        F = [c for c in T.children[v] if c in members]
        if len(F) < 2:
            errs.append(f"type-3 part at {v} unites {len(F)} subtrees, needs at least 2")
        covered = set()
        for c in F:
            covered |= T.subtree_nodes(c)
        if covered != members:
            errs.append(f"type-3 part at {v} is not a union of full child subtrees")
    elif part.kind == 4:
        w = part.cut
        if w is None:
            return ["type-4 part lacks a cut vertex"]
        if v not in members:
            return [f"type-4 part misses its attachment {v}"]
        if w == v or not T.is_ancestor(v, w):
            return [f"type-4 cut {w} is not a proper descendant of {v}"]
        expect = T.subtree_nodes(v) - T.subtree_nodes(w)
        if expect != members:
            errs.append(f"type-4 part at {v} with cut {w} is not subtree minus subtree")
        if part.spine is not None:
            path = []
            x = T.parent[w]
            while x != -1:
                path.append(x)
                if x == v:
                    break
                x = T.parent[x]
            path.reverse()
            if tuple(path) != part.spine:
                errs.append(f"type-4 part at {v}: stored spine does not match the path")
    else:
        errs.append(f"unknown part kind {part.kind}")
    return errs


def validate_partition(T: TreeSemilattice, eps: Fraction, partition: EpsPartition,
                       max_violations: int = 20) -> PartitionReport:
    """Check shapes, coverage, the type-3 attachment rule, and measure bounds."""
    eps = Fraction(eps)
    report = PartitionReport(ok=True)

    def note(msg: str):
        report.ok = False
        if len(report.violations) < max_violations:
            report.violations.append(msg)

    seen = [0] * T.n
    for part in partition.parts:
        for x in part.members:
            seen[x] += 1
    for v, cnt in enumerate(seen):
        if cnt != 1:
            note(f"node {v} covered {cnt} times")
    if len(partition.part_of) == T.n:
        for v in range(T.n):
            pid = partition.part_of[v]
            if not (0 <= pid < len(partition.parts)) or v not in partition.parts[pid].members:
                note(f"part_of[{v}] inconsistent")
    else:
        note("part_of has the wrong length")

    heads = {(p.kind, p.attachment) for p in partition.parts}
    for i, part in enumerate(partition.parts):
        for msg in _check_part(T, part):
            note(f"part {i}: {msg}")
        if len(part.members) > 1:
            measure = sum((T.weights[x] for x in part.members), Fraction(0))
            if measure > eps:
                note(f"part {i}: measure {measure} exceeds epsilon {eps}")
        if part.kind == 3 and len(part.members) > 1:
            if (1, part.attachment) not in heads and (2, part.attachment) not in heads:
                note(f"part {i}: type-3 attachment {part.attachment} heads no type-1/2 part")
    return report


def derive_part_shape(T: TreeSemilattice, members: frozenset[int],
                      declared_kind: int | None = None) -> Part:
    """Recover attachment, cut, and spine data for a member set.

    The declared kind is kept for singletons and type-3 parts (whose shape
    is a union of sibling subtrees); otherwise the shape decides between
    types 1, 2, and 4. Raises InputError if the set matches no shape.
    """
    members = frozenset(members)
    if not members:
        raise InputError("empty part")
    inf = T.meet_all(members)
    if inf not in members:
        roots = sorted(x for x in members if T.parent[x] not in members)
        parents = {T.parent[x] for x in roots}
        if parents != {inf}:
            raise InputError("member subtrees do not share an attachment")
        covered = set()
        for r in roots:
            covered |= T.subtree_nodes(r)
        if covered != members:
            raise InputError("members are not full subtrees")
        return Part(3, inf, members)
    if len(members) == 1:
        kind = declared_kind if declared_kind in (1, 3) else 1
        return Part(kind, inf, members)
    F = [c for c in T.children[inf] if c in members]
    covered = {inf}
    for c in F:
        covered |= T.subtree_nodes(c)
    if covered == members:
        return Part(2, inf, members)
    missing = T.subtree_nodes(inf) - members
    if missing:
        w = min(missing, key=lambda x: T.depth[x])
        if T.subtree_nodes(w) == missing and w != inf:
            path = []
            x = T.parent[w]
            while x != -1:
                path.append(x)
                if x == inf:
                    break
                x = T.parent[x]
            path.reverse()
            return Part(4, inf, members, cut=w, spine=tuple(path))
    raise InputError("member set matches no part shape")


# -- quotients -------------------------------------------------------------------


@dataclass
class QuotientTree:
    """Rooted tree on the parts, as a tree-semilattice with summed weights."""

    tree: TreeSemilattice
    part_map: tuple[int, ...]


def quotient_tree(T: TreeSemilattice, partition: EpsPartition) -> QuotientTree:
    """Quotient: the father of a part follows its attachment vertex.

    When the attachment belongs to the part (types 1, 2, 4) the father is
    the part containing the attachment's own father; for type-3 parts it is
    the part containing the attachment itself.
    """
    parts = partition.parts
    parent = [-1] * len(parts)
    weights = [Fraction(0)] * len(parts)
    for i, part in enumerate(parts):
        weights[i] = sum((T.weights[x] for x in part.members), Fraction(0))
        a = part.attachment
        if a in part.members:
            if a == T.root:
                parent[i] = -1
            else:
                parent[i] = partition.part_of[T.parent[a]]
        else:
            parent[i] = partition.part_of[a]
    colors = [frozenset()] * len(parts)
    tree = TreeSemilattice(parent, colors, weights, T.k)
    if tree.root != partition.part_of[T.root]:
        raise InputError("quotient root does not contain the tree root")
    return QuotientTree(tree, partition.part_of)


def is_weak_homomorphism(f, T: TreeSemilattice, Q: QuotientTree | TreeSemilattice) -> bool:
    """True iff f(x^y) = f(x)^f(y) whenever f(x) != f(y); checks all pairs."""
    tree = Q.tree if isinstance(Q, QuotientTree) else Q
    f = list(f)
    for x in range(T.n):
        for y in range(x + 1, T.n):
            if f[x] != f[y] and f[T.meet(x, y)] != tree.meet(f[x], f[y]):
                return False
    return True


# -- dump format ----------------------------------------------------------------


def dumps_partition(partition: EpsPartition) -> str:
    lines = []
    for i, p in enumerate(partition.parts):
        mid = f"part {i} type {p.kind} attach {p.attachment}"
        if p.cut is not None:
            mid += f" cut {p.cut}"
        mid += " members " + " ".join(str(x) for x in sorted(p.members))
        lines.append(mid)
    return "\n".join(lines) + "\n"


def loads_partition(text: str, T: TreeSemilattice, eps: Fraction) -> EpsPartition:
    parts: list[Part] = []
    for raw in text.splitlines():
        ln = raw.strip()
        if not ln:
            continue
        toks = ln.split()
        try:
            if toks[0] != "part" or toks[2] != "type" or toks[4] != "attach":
                raise InputError(f"bad partition line: {ln!r}")
            kind = int(toks[3])
            attach = int(toks[5])
            rest = toks[6:]
            cut = None
            if rest and rest[0] == "cut":
                cut = int(rest[1])
                rest = rest[2:]
            if not rest or rest[0] != "members":
                raise InputError(f"bad partition line: {ln!r}")
            members = frozenset(int(x) for x in rest[1:])
        except (IndexError, ValueError) as exc:
            raise InputError(f"bad partition line {ln!r}: {exc}") from exc
        spine = None
        if kind == 4 and cut is not None:
            path = []
            x = T.parent[cut]
            while x != -1:
                path.append(x)
                if x == attach:
                    break
                x = T.parent[x]
            path.reverse()
            spine = tuple(path)
        parts.append(Part(kind, attach, members, cut=cut, spine=spine))
    return _finish(T, Fraction(eps), parts)
