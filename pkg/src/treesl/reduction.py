"""Standard reductions and reduction towers.

A reduction collapses each part of an epsilon-partition to a small gadget:
a singleton part keeps its node; a type-2 part becomes a root plus one
child per color present below it; a type-3 part becomes one root per
color; a type-4 part becomes a caterpillar whose spine has one node per
color (ordered by first occurrence along the part's spine) and whose legs
collect the off-spine members by the color of their meet with the cut.
Gadgets are wired together following the quotient tree. The projection
preserves colors, factors the partition map, and preserves meets and order
across distinct parts, which keeps every p-variable statistic within
p^2 * epsilon of the original.

Towers stack reductions for a decreasing epsilon schedule; the connecting
map between consecutive levels is itself a standard reduction of the finer
level, and the construction verifies node-exactly that it commutes with
the projections from the source.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .core import TreeSemilattice, color_sort_key, generated_subsemilattice
from .errors import BoundViolation, CommutationError, InputError
from .partition import (EpsPartition, Part, PartitionReport, derive_part_shape,
                        quotient_tree, validate_partition)
from .qf import DEFAULT_BUDGET, QFFormula, formula_arity, stone_pairing_exact


@dataclass
class ReductionMap:
    source: TreeSemilattice
    target: TreeSemilattice
    pi: tuple[int, ...]
    epsilon: Fraction
    source_partition: EpsPartition
    target_partition: EpsPartition
    target_labels: tuple[tuple, ...]

    @property
    def pushed_measure(self) -> tuple[Fraction, ...]:
        return self.target.weights


@dataclass
class ReductionReport:
    ok: bool
    violations: list[str] = field(default_factory=list)


def _color_key(colors: frozenset) -> tuple[int, ...]:
    return tuple(sorted(colors))


def standard_reduction(T: TreeSemilattice, partition: EpsPartition) -> ReductionMap:
    """Collapse each part to its gadget and wire gadgets along the quotient."""
    quotient = quotient_tree(T, partition)
    parts = partition.parts
    weights_src = T.weights

    labels: list[tuple] = []
    colors: list[frozenset] = []
    weights: list[Fraction] = []
    node_of_label: dict[tuple, int] = {}

    def new_node(label: tuple, color: frozenset, weight: Fraction) -> int:
        node_of_label[label] = len(labels)
        labels.append(label)
        colors.append(color)
        weights.append(weight)
        return len(labels) - 1

    pi = [-1] * T.n
    part_roots: list[list[int]] = []
    child_anchor: list[int | None] = []  # node below which child gadgets hang
    internal_parent: dict[int, int] = {}  # target node -> target parent (within gadget)

    for pid, part in enumerate(parts):
        kind = part.kind if len(part.members) > 1 else 1
        if kind == 1:
            v = next(iter(part.members))
            node = new_node(("n", pid), T.colors[v], weights_src[v])
            pi[v] = node
            part_roots.append([node])
            child_anchor.append(node)
        elif kind == 2:
            v = part.attachment
            rest = [u for u in part.members if u != v]
            a = new_node(("a", pid), T.colors[v], weights_src[v])
            pi[v] = a
            for color in sorted({T.colors[u] for u in rest}, key=color_sort_key):
                mass = sum((weights_src[u] for u in rest if T.colors[u] == color), Fraction(0))
                b = new_node(("b", pid, _color_key(color)), color, mass)
                internal_parent[b] = a
                for u in rest:
                    if T.colors[u] == color:
                        pi[u] = b
            part_roots.append([a])
            child_anchor.append(a)
        elif kind == 3:
            roots = []
            members = sorted(part.members)
            for color in sorted({T.colors[u] for u in members}, key=color_sort_key):
                mass = sum((weights_src[u] for u in members if T.colors[u] == color), Fraction(0))
                b = new_node(("b", pid, _color_key(color)), color, mass)
                roots.append(b)
                for u in members:
                    if T.colors[u] == color:
                        pi[u] = b
            part_roots.append(roots)
            child_anchor.append(None)
        elif kind == 4:
            spine = part.spine
            if spine is None or part.cut is None:
                raise InputError(f"type-4 part {pid} lacks spine/cut data")
            seen: list[frozenset] = []
            for u in spine:
                if T.colors[u] not in seen:
                    seen.append(T.colors[u])
            a_of_color: dict[frozenset, int] = {}
            prev = None
            for color in seen:
                mass = sum((weights_src[u] for u in spine if T.colors[u] == color), Fraction(0))
                a = new_node(("a", pid, _color_key(color)), color, mass)
                a_of_color[color] = a
                if prev is not None:
                    internal_parent[a] = prev
                prev = a
            for u in spine:
                pi[u] = a_of_color[T.colors[u]]
            off = sorted(set(part.members) - set(spine))
            legs: dict[tuple[frozenset, frozenset], list[int]] = {}
            for u in off:
                anchor_color = T.colors[T.meet(u, part.cut)]
                legs.setdefault((anchor_color, T.colors[u]), []).append(u)
            for (anchor_color, color) in sorted(legs, key=lambda pair: (
                    color_sort_key(pair[0]), color_sort_key(pair[1]))):
                group = legs[(anchor_color, color)]
                mass = sum((weights_src[u] for u in group), Fraction(0))
                b = new_node(("b", pid, _color_key(anchor_color), _color_key(color)),
                             color, mass)
                internal_parent[b] = a_of_color[anchor_color]
                for u in group:
                    pi[u] = b
            part_roots.append([a_of_color[seen[0]]])
            child_anchor.append(prev)  # deepest spine node
        else:
            raise InputError(f"part {pid} has unknown kind {part.kind}")

    parent = [-1] * len(labels)
    for node, p in internal_parent.items():
        parent[node] = p
    qparent = quotient.tree.parent
    for pid in range(len(parts)):
        fpid = qparent[pid]
        if fpid < 0:
            continue
        anchor = child_anchor[fpid]
        if anchor is None:
            raise InputError("a type-3 part cannot be a father in the quotient")
        for r in part_roots[pid]:
            parent[r] = anchor

    target = TreeSemilattice(parent, colors, weights, T.k)
    f_hat = [-1] * target.n
    for node, label in enumerate(labels):
        f_hat[node] = label[1]

    target_parts: list[Part] = []
    for pid, part in enumerate(parts):
        members = frozenset(node for node in range(target.n) if f_hat[node] == pid)
        kind = part.kind if len(members) > 1 else (1 if part.kind in (1, 2, 4) else 3)
        target_parts.append(derive_part_shape(target, members, declared_kind=kind))
    target_partition = EpsPartition(partition.epsilon, tuple(target_parts), tuple(f_hat))
    return ReductionMap(T, target, tuple(pi), partition.epsilon, partition,
                        target_partition, tuple(labels))


# -- verification ---------------------------------------------------------------


def _ancestor_matrix(T: TreeSemilattice) -> np.ndarray:
    tin = np.array(T._tin)
    tout = np.array(T._tout)
    return (tin[:, None] <= tin[None, :]) & (tout[None, :] <= tout[:, None])


def verify_reduction(R: ReductionMap, max_violations: int = 10) -> ReductionReport:
    """Exhaustively re-check every reduction invariant.

    Colors, factorization of the partition map, exact pushforward of the
    measure, meet and order preservation across all pairs in distinct
    parts, validity of the induced partition on the target, and the size
    bound |target| <= C(C+1) * parts for C distinct source colors.
    """
    report = ReductionReport(ok=True)

    def note(msg: str):
        report.ok = False
        if len(report.violations) < max_violations:
            report.violations.append(msg)

    T, H = R.source, R.target
    pi = np.array(R.pi)
    for v in range(T.n):
        if T.colors[v] != H.colors[R.pi[v]]:
            note(f"color not preserved at node {v}")
            break
    src_of = np.array(R.source_partition.part_of)
    tgt_of = np.array(R.target_partition.part_of)
    if not np.array_equal(src_of, tgt_of[pi]):
        note("partition map does not factor through the reduction")

    pushed = [Fraction(0)] * H.n
    for v in range(T.n):
        pushed[R.pi[v]] += T.weights[v]
    if tuple(pushed) != H.weights:
        note("pushed measure does not match target weights")

    mt = T.meet_table()
    mh = H.meet_table()
    diff = src_of[:, None] != src_of[None, :]
    ok_meet = pi[mt] == mh[pi[:, None], pi[None, :]]
    bad = np.argwhere(diff & ~ok_meet)
    if bad.size:
        x, y = bad[0]
        note(f"meet not preserved across parts at ({x},{y})")
    anc_t = _ancestor_matrix(T)
    anc_h = _ancestor_matrix(H)
    bad = np.argwhere(diff & (anc_t != anc_h[pi[:, None], pi[None, :]]))
    if bad.size:
        x, y = bad[0]
        note(f"order not preserved across parts at ({x},{y})")

    sub = validate_partition(H, R.epsilon, R.target_partition)
    if not sub.ok:
        note("induced target partition invalid: " + "; ".join(sub.violations[:3]))

    c = len(set(T.colors))
    bound = c * (c + 1) * len(R.source_partition.parts)
    if H.n > bound:
        note(f"size bound violated: {H.n} > {bound}")
    return report


def projected_substructure_isomorphism(R: ReductionMap, nodes) -> bool:
    """Marked substructures before and after projection are isomorphic.

    Requires the nodes to lie in pairwise distinct parts whenever they are
    distinct; repeated nodes are allowed.
    """
    nodes = tuple(nodes)
    part_of = R.source_partition.part_of
    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            if nodes[i] != nodes[j] and part_of[nodes[i]] == part_of[nodes[j]]:
                raise InputError("nodes must lie in pairwise distinct parts")
    before = generated_subsemilattice(R.source, nodes).canonical_encoding()
    after = generated_subsemilattice(
        R.target, tuple(R.pi[v] for v in nodes)).canonical_encoding()
    return before == after


@dataclass
class ErrorCheck:
    lhs: Fraction
    rhs: Fraction
    bound: Fraction


def reduction_error_check(R: ReductionMap, phi: QFFormula, p: int | None = None,
                          budget: int = DEFAULT_BUDGET,
                          pairing=stone_pairing_exact) -> ErrorCheck:
    """Check |pairing on source - pairing on target| < p^2 * epsilon."""
    if p is None:
        p = formula_arity(phi)
    lhs = pairing(R.source, phi, p, budget)
    rhs = pairing(R.target, phi, p, budget)
    bound = p * p * R.epsilon
    if abs(lhs - rhs) >= bound:
        raise BoundViolation(
            f"reduction error {abs(lhs - rhs)} not below {bound} for {phi!r}")
    return ErrorCheck(lhs, rhs, bound)


# -- towers ----------------------------------------------------------------------


@dataclass
class TowerLevel:
    epsilon: Fraction
    partition: EpsPartition
    reduction: ReductionMap


@dataclass
class ReductionTower:
    source: TreeSemilattice
    levels: tuple[TowerLevel, ...]
    maps: tuple[tuple[int, ...], ...]  # maps[i]: level i+1 target -> level i target

    def verify(self) -> bool:
        for i, connecting in enumerate(self.maps):
            pi_coarse = self.levels[i].reduction.pi
            pi_fine = self.levels[i + 1].reduction.pi
            for v in range(self.source.n):
                if connecting[pi_fine[v]] != pi_coarse[v]:
                    return False
        return True


def _connecting_map(coarse: ReductionMap, fine: ReductionMap) -> tuple[int, ...]:
    """Standard reduction of the fine target under the coarse part classes.

    The fine target's nodes are grouped by the coarse part containing their
    source part; the standard reduction of that grouping must rebuild the
    coarse target label for label, which pins down the connecting map.
    """
    T2 = fine.target
    coarse_parts = coarse.source_partition.parts
    fine_parts = fine.source_partition.parts
    container: list[int] = []
    for part in fine_parts:
        owners = {coarse.source_partition.part_of[v] for v in part.members}
        if len(owners) != 1:
            raise CommutationError("finer partition does not refine the coarser one")
        container.append(owners.pop())

    members: list[set[int]] = [set() for _ in coarse_parts]
    for node in range(T2.n):
        members[container[fine.target_partition.part_of[node]]].add(node)
    class_parts: list[Part] = []
    for pid, part in enumerate(coarse_parts):
        if not members[pid]:
            raise CommutationError(f"coarse part {pid} has an empty class")
        try:
            class_parts.append(derive_part_shape(T2, frozenset(members[pid]),
                                                 declared_kind=part.kind))
        except InputError as exc:
            raise CommutationError(f"class of coarse part {pid} has no valid shape: {exc}")
    part_of = [-1] * T2.n
    for pid, mem in enumerate(members):
        for node in mem:
            part_of[node] = pid
    class_partition = EpsPartition(coarse.epsilon, tuple(class_parts), tuple(part_of))
    check = validate_partition(T2, coarse.epsilon, class_partition)
    if not check.ok:
        raise CommutationError("class partition invalid: " + "; ".join(check.violations[:3]))

    rebuilt = standard_reduction(T2, class_partition)
    want = {label: node for node, label in enumerate(coarse.target_labels)}
    got = {label: node for node, label in enumerate(rebuilt.target_labels)}
    if set(want) != set(got):
        raise CommutationError("rebuilt coarse target has different gadget labels")
    for label, node in got.items():
        twin = want[label]
        rp = rebuilt.target.parent[node]
        wp = coarse.target.parent[twin]
        if (rp < 0) != (wp < 0) or (rp >= 0 and want[rebuilt.target_labels[rp]] != wp):
            raise CommutationError(f"gadget wiring differs at label {label}")
        if rebuilt.target.colors[node] != coarse.target.colors[twin]:
            raise CommutationError(f"gadget color differs at label {label}")
        if rebuilt.target.weights[node] != coarse.target.weights[twin]:
            raise CommutationError(f"gadget weight differs at label {label}")
    return tuple(want[rebuilt.target_labels[rebuilt.pi[node]]] for node in range(T2.n))


def build_tower(T: TreeSemilattice, epsilons) -> ReductionTower:
    """Partitions, reductions, and verified connecting maps for the schedule."""
    from .partition import eps_partition, refine_partition

    eps_list = [Fraction(e) for e in epsilons]
    if not eps_list:
        raise InputError("need at least one epsilon")
    if any(not 0 < e <= 1 for e in eps_list):
        raise InputError("epsilons must lie in (0, 1]")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise InputError("epsilons must be strictly decreasing")

    levels: list[TowerLevel] = []
    partition = None
    for eps in eps_list:
        partition = eps_partition(T, eps) if partition is None else \
            refine_partition(T, eps, partition)
        reduction = standard_reduction(T, partition)
        levels.append(TowerLevel(eps, partition, reduction))

    maps: list[tuple[int, ...]] = []
    for i in range(len(levels) - 1):
        connecting = _connecting_map(levels[i].reduction, levels[i + 1].reduction)
        pi_coarse = levels[i].reduction.pi
        pi_fine = levels[i + 1].reduction.pi
        for v in range(T.n):
            if connecting[pi_fine[v]] != pi_coarse[v]:
                raise CommutationError(
                    f"tower maps do not commute at source node {v} between levels {i} and {i + 1}")
        maps.append(connecting)
    return ReductionTower(T, tuple(levels), tuple(maps))


# -- dump format -------------------------------------------------------------------


def dumps_reduction(R: ReductionMap) -> str:
    from .core import dumps_tsl

    lines = [f"map {v} -> {R.pi[v]}" for v in range(R.source.n)]
    return "\n".join(lines) + "\n" + dumps_tsl(R.target)


def dumps_tower(tower: ReductionTower) -> str:
    chunks = []
    for i, level in enumerate(tower.levels):
        chunks.append(f"level {i} epsilon {level.epsilon}")
        chunks.append(dumps_reduction(level.reduction).rstrip("\n"))
        if i > 0:
            connecting = tower.maps[i - 1]
            chunks.append("\n".join(
                f"connect {v} -> {connecting[v]}" for v in range(len(connecting))))
    return "\n".join(chunks) + "\n"
