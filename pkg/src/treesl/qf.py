"""Quantifier-free formulas over the tree-semilattice signature.

Terms are variables x1..xp combined with the meet operator ^; atoms are
term equalities and color tests M_i(term); formulas close the atoms under
!, &, |. Stone pairings are the probability that a random assignment
(product of the node weights) satisfies a formula; on finite structures
they are computed exactly in rational arithmetic.

The per-arity supremum of pairing gaps over all formulas is computed as
the total variation distance between marked-substructure type
distributions: satisfaction of any formula with p free variables only
depends on the isomorphism type of the marked substructure generated by
the assignment, and every finite union of types is definable by a single
formula (see `type_formula`). The acceptance suite cross-checks this
reduction against exhaustive formula enumeration.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import MarkedSubstructure, TreeSemilattice, generated_subsemilattice
from .errors import BudgetError, FormulaSyntaxError, InputError
from .rng import CategoricalSampler, Rng

DEFAULT_BUDGET = 10_000_000


# -- AST --------------------------------------------------------------------


@dataclass(frozen=True)
class Var:
    index: int  # 1-based


@dataclass(frozen=True)
class MeetTerm:
    left: "Term"
    right: "Term"


Term = Var | MeetTerm


@dataclass(frozen=True)
class Eq:
    left: Term
    right: Term


@dataclass(frozen=True)
class HasColor:
    color: int
    term: Term


@dataclass(frozen=True)
class Not:
    sub: "QFFormula"


@dataclass(frozen=True)
class And:
    left: "QFFormula"
    right: "QFFormula"


@dataclass(frozen=True)
class Or:
    left: "QFFormula"
    right: "QFFormula"


QFFormula = Eq | HasColor | Not | And | Or

TAUTOLOGY: QFFormula = Eq(Var(1), Var(1))
CONTRADICTION: QFFormula = Not(Eq(Var(1), Var(1)))

# both meets differ from both arguments: the marks are incomparable
INCOMPARABLE_PAIR: QFFormula = And(
    Not(Eq(MeetTerm(Var(1), Var(2)), Var(1))),
    Not(Eq(MeetTerm(Var(1), Var(2)), Var(2))),
)


def _term_vars(t: Term) -> set[int]:
    if isinstance(t, Var):
        return {t.index}
    return _term_vars(t.left) | _term_vars(t.right)


def formula_arity(phi: QFFormula) -> int:
    """Smallest p such that phi lives in the p-variable fragment."""
    if isinstance(phi, Eq):
        vs = _term_vars(phi.left) | _term_vars(phi.right)
    elif isinstance(phi, HasColor):
        vs = _term_vars(phi.term)
    elif isinstance(phi, Not):
        return formula_arity(phi.sub)
    else:
        return max(formula_arity(phi.left), formula_arity(phi.right))
    return max(vs)


def formula_colors(phi: QFFormula) -> set[int]:
    if isinstance(phi, Eq):
        return set()
    if isinstance(phi, HasColor):
        return {phi.color}
    if isinstance(phi, Not):
        return formula_colors(phi.sub)
    return formula_colors(phi.left) | formula_colors(phi.right)


def formula_depth(phi: QFFormula) -> int:
    if isinstance(phi, (Eq, HasColor)):
        return 1
    if isinstance(phi, Not):
        return 1 + formula_depth(phi.sub)
    return 1 + max(formula_depth(phi.left), formula_depth(phi.right))


# -- printing ----------------------------------------------------------------


def term_text(t: Term) -> str:
    if isinstance(t, Var):
        return f"x{t.index}"
    left = term_text(t.left)
    right = term_text(t.right)
    if isinstance(t.right, MeetTerm):
        right = f"({right})"
    return f"{left} ^ {right}"


def formula_text(phi: QFFormula) -> str:
    """Render with minimal parentheses; parse(formula_text(phi)) == phi."""

    def go(f: QFFormula, level: int) -> str:
        if isinstance(f, Eq):
            s = f"{term_text(f.left)} = {term_text(f.right)}"
            return f"({s})" if level > 2 else s
        if isinstance(f, HasColor):
            return f"M{f.color}({term_text(f.term)})"
        if isinstance(f, Not):
            return "!" + go(f.sub, 3)
        if isinstance(f, And):
            s = f"{go(f.left, 2)} & {go(f.right, 2)}"
            return f"({s})" if level > 2 else s
        s = f"{go(f.left, 1)} | {go(f.right, 1)}"
        return f"({s})" if level > 1 else s

    return go(phi, 0)


# -- parsing -----------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message: str):
        raise FormulaSyntaxError(message, self.pos)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self, ch: str) -> bool:
        if self.peek() == ch:
            self.pos += 1
            return True
        return False

    def expect(self, ch: str):
        if not self.take(ch):
            self.error(f"expected {ch!r}")

    def integer(self) -> int:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        if self.pos == start:
            self.error("expected an integer")
        return int(self.text[start:self.pos])

    def formula(self) -> QFFormula:
        f = self.conj()
        while self.take("|"):
            f = Or(f, self.conj())
        return f

    def conj(self) -> QFFormula:
        f = self.lit()
        while self.take("&"):
            f = And(f, self.lit())
        return f

    def lit(self) -> QFFormula:
        if self.take("!"):
            return Not(self.lit())
        if self.peek() == "(":
            # try an atom first: '(' may open a parenthesized term
            save = self.pos
            try:
                return self.atom()
            except FormulaSyntaxError:
                self.pos = save
            self.expect("(")
            f = self.formula()
            self.expect(")")
            return f
        return self.atom()

    def atom(self) -> QFFormula:
        c = self.peek()
        if c == "M":
            self.pos += 1
            color = self.integer()
            self.expect("(")
            t = self.term()
            self.expect(")")
            return HasColor(color, t)
        left = self.term()
        self.expect("=")
        right = self.term()
        return Eq(left, right)

    def term(self) -> Term:
        t = self.factor()
        while self.take("^"):
            t = MeetTerm(t, self.factor())
        return t

    def factor(self) -> Term:
        if self.take("("):
            t = self.term()
            self.expect(")")
            return t
        if self.peek() == "x":
            self.pos += 1
            return Var(self.integer())
        self.error("expected a variable or parenthesized term")


def parse_formula(text: str, arity: int | None = None, k: int | None = None) -> QFFormula:
    """Parse formula text; optionally enforce variable and color bounds."""
    parser = _Parser(text)
    phi = parser.formula()
    parser.skip_ws()
    if parser.pos != len(text):
        parser.error("trailing input")
    if arity is not None and formula_arity(phi) > arity:
        raise InputError(f"formula uses x{formula_arity(phi)} but arity is {arity}")
    if k is not None:
        high = [c for c in formula_colors(phi) if c > k or c < 1]
        if high:
            raise InputError(f"formula uses color {high[0]} but k is {k}")
    return phi


# -- evaluation ---------------------------------------------------------------


def term_value(T: TreeSemilattice, t: Term, assignment) -> int:
    if isinstance(t, Var):
        if t.index < 1 or t.index > len(assignment):
            raise InputError(f"variable x{t.index} outside assignment of length {len(assignment)}")
        return assignment[t.index - 1]
    return T.meet(term_value(T, t.left, assignment), term_value(T, t.right, assignment))


def eval_formula(T: TreeSemilattice, phi: QFFormula, assignment) -> bool:
    """Standard quantifier-free semantics on T at the given assignment."""
    if isinstance(phi, Eq):
        return term_value(T, phi.left, assignment) == term_value(T, phi.right, assignment)
    if isinstance(phi, HasColor):
        return phi.color in T.colors[term_value(T, phi.term, assignment)]
    if isinstance(phi, Not):
        return not eval_formula(T, phi.sub, assignment)
    if isinstance(phi, And):
        return eval_formula(T, phi.left, assignment) and eval_formula(T, phi.right, assignment)
    if isinstance(phi, Or):
        return eval_formula(T, phi.left, assignment) or eval_formula(T, phi.right, assignment)
    raise InputError(f"not a formula: {phi!r}")


def formula_grid(phi: QFFormula, meet_table: np.ndarray, membership: list[np.ndarray],
                 axes: list[np.ndarray]) -> np.ndarray:
    """Vectorized satisfaction over the grid axes[0] x ... x axes[p-1].

    membership[c-1][v] says whether node v has color c; colors beyond the
    list are uniformly false.
    """
    p = len(axes)
    shape = [1] * p

    def axis_grid(i: int) -> np.ndarray:
        s = shape.copy()
        s[i] = len(axes[i])
        return axes[i].reshape(s)

    def term_grid(t: Term) -> np.ndarray:
        if isinstance(t, Var):
            return axis_grid(t.index - 1)
        return meet_table[term_grid(t.left), term_grid(t.right)]

    def go(f: QFFormula) -> np.ndarray:
        if isinstance(f, Eq):
            return term_grid(f.left) == term_grid(f.right)
        if isinstance(f, HasColor):
            if f.color < 1 or f.color > len(membership):
                g = term_grid(f.term)
                return np.zeros(g.shape, dtype=bool)
            return membership[f.color - 1][term_grid(f.term)]
        if isinstance(f, Not):
            return ~go(f.sub)
        if isinstance(f, And):
            return go(f.left) & go(f.right)
        return go(f.left) | go(f.right)

    out = go(phi)
    full = tuple(len(a) for a in axes)
    return np.broadcast_to(out, full)


def color_membership(T: TreeSemilattice) -> list[np.ndarray]:
    return [np.array([c in T.colors[v] for v in range(T.n)], dtype=bool)
            for c in range(1, T.k + 1)]


# -- Stone pairings ------------------------------------------------------------


def stone_pairing_exact(T: TreeSemilattice, phi: QFFormula, p: int | None = None,
                        budget: int = DEFAULT_BUDGET) -> Fraction:
    """Exact weighted Stone pairing: the measure of phi's satisfying tuples."""
    if p is None:
        p = formula_arity(phi)
    support = T.support
    if len(support) ** p > budget:
        raise BudgetError(
            f"{len(support)}^{p} tuples exceed the budget {budget}; "
            "use stone_pairing_mc for an estimate")
    if T.n * T.n <= budget:
        T.meet_table()  # speeds up meets for the enumeration
    total = Fraction(0)
    weights = T.weights
    for tup in itertools.product(support, repeat=p):
        if eval_formula(T, phi, tup):
            w = Fraction(1)
            for v in tup:
                w *= weights[v]
            total += w
    return total


@dataclass
class McPairing:
    estimate: Fraction
    stderr: float
    samples: int


def stone_pairing_mc(T: TreeSemilattice, phi: QFFormula, samples: int, seed: int,
                     p: int | None = None) -> McPairing:
    """Monte Carlo pairing estimate with binomial standard error.

    Deterministic given the seed; tuples are drawn i.i.d. from the weight
    distribution using the package Rng.
    """
    if samples < 1:
        raise InputError("need samples >= 1")
    if p is None:
        p = formula_arity(phi)
    rng = Rng(seed)
    sampler = CategoricalSampler(list(T.weights))
    hits = 0
    assignment = [0] * p
    for _ in range(samples):
        for i in range(p):
            assignment[i] = sampler.draw(rng)
        if eval_formula(T, phi, assignment):
            hits += 1
    est = Fraction(hits, samples)
    stderr = float((est * (1 - est) / samples)) ** 0.5
    return McPairing(est, stderr, samples)


# -- type distributions ---------------------------------------------------------


@dataclass
class TypeDistribution:
    """Distribution of marked-substructure isomorphism types of random tuples.

    Keys are canonical encodings of the p-marked generated substructures
    (colors included, weights ignored); representatives allow formulas to be
    evaluated per type.
    """

    arity: int
    probs: dict[str, Fraction]
    representatives: dict[str, tuple[TreeSemilattice, tuple[int, ...]]]

    def pairing(self, phi: QFFormula) -> Fraction:
        """Recompute a Stone pairing from the type table."""
        total = Fraction(0)
        for key, prob in self.probs.items():
            tree, marks = self.representatives[key]
            if eval_formula(tree, phi, marks):
                total += prob
        return total

    def tv_distance(self, other: "TypeDistribution") -> Fraction:
        if self.arity != other.arity:
            raise InputError("type distributions have different arities")
        keys = set(self.probs) | set(other.probs)
        gap = Fraction(0)
        for key in keys:
            gap += abs(self.probs.get(key, Fraction(0)) - other.probs.get(key, Fraction(0)))
        return gap / 2


def _diagram_key(T: TreeSemilattice, tup: tuple[int, ...]) -> tuple:
    """Complete isomorphism invariant of the marked generated substructure.

    Slots are the generators followed by their pairwise meets; the key
    records which slots coincide, the order relation between slot values,
    and each slot's color. Two tuples share a key iff the slot-aligned map
    is a marked isomorphism.
    """
    p = len(tup)
    slots = list(tup)
    for i in range(p):
        for j in range(i + 1, p):
            slots.append(T.meet(tup[i], tup[j]))
    first = {}
    eq_pattern = []
    for v in slots:
        if v not in first:
            first[v] = len(first)
        eq_pattern.append(first[v])
    order_bits = tuple(
        T.is_ancestor(a, b) for a in first for b in first if a != b)
    colors = tuple(T.colors[v] for v in first)
    return (tuple(eq_pattern), order_bits, colors)


def type_distribution(T: TreeSemilattice, p: int, budget: int = DEFAULT_BUDGET) -> TypeDistribution:
    """Exact distribution of p-tuple types under the product weight measure."""
    if p < 1:
        raise InputError("need p >= 1")
    support = T.support
    if len(support) ** p > budget:
        raise BudgetError(f"{len(support)}^{p} tuples exceed the budget {budget}")
    if p == 2:
        fast = _type_distribution_p2(T)
        if fast is not None:
            return fast
    probs: dict[str, Fraction] = {}
    reps: dict[str, tuple[TreeSemilattice, tuple[int, ...]]] = {}
    key_cache: dict[tuple, str] = {}
    weights = T.weights
    for tup in itertools.product(support, repeat=p):
        diag = _diagram_key(T, tup)
        canon = key_cache.get(diag)
        if canon is None:
            sub = generated_subsemilattice(T, tup)
            canon = sub.canonical_encoding()
            key_cache[diag] = canon
            reps[canon] = sub.as_marked_tree()
        w = Fraction(1)
        for v in tup:
            w *= weights[v]
        probs[canon] = probs.get(canon, Fraction(0)) + w
    return TypeDistribution(p, probs, reps)


def _type_distribution_p2(T: TreeSemilattice) -> TypeDistribution | None:
    """Vectorized arity-2 type distribution; None if the weights do not fit."""
    nums, den = T.int_weights()
    if den > 1 << 31:
        return None
    support = np.array(T.support, dtype=np.int64)
    s = len(support)
    if s == 0:
        return None
    table = T.meet_table()
    _, cid = T.color_ids()
    u = np.repeat(support, s)
    v = np.tile(support, s)
    m = table[u, v]
    rows = np.stack([
        (u == v).astype(np.int64), (m == u).astype(np.int64), (m == v).astype(np.int64),
        cid[u], cid[v], cid[m],
    ], axis=1)
    uniq, first_idx, inverse = np.unique(rows, axis=0, return_index=True, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    wn = np.array([nums[x] for x in support], dtype=np.int64)
    # exact accumulation in python ints to avoid overflow
    group_acc = [0] * len(uniq)
    wu = wn[np.searchsorted(support, u)]
    wv = wn[np.searchsorted(support, v)]
    prod = wu.astype(object) * wv.astype(object)
    for g, val in zip(inverse.tolist(), prod.tolist()):
        group_acc[g] += val
    probs: dict[str, Fraction] = {}
    reps: dict[str, tuple[TreeSemilattice, tuple[int, ...]]] = {}
    den2 = den * den
    for gi in range(len(uniq)):
        i = int(first_idx[gi])
        tup = (int(u[i]), int(v[i]))
        sub = generated_subsemilattice(T, tup)
        canon = sub.canonical_encoding()
        if canon not in reps:
            reps[canon] = sub.as_marked_tree()
        probs[canon] = probs.get(canon, Fraction(0)) + Fraction(group_acc[gi], den2)
    return TypeDistribution(2, probs, reps)


def stone_pairing_via_types(T: TreeSemilattice, phi: QFFormula, p: int | None = None,
                            budget: int = DEFAULT_BUDGET) -> Fraction:
    """Pairing computed through the type distribution (equal to the exact pairing)."""
    if p is None:
        p = formula_arity(phi)
    return type_distribution(T, p, budget).pairing(phi)


# -- distances -------------------------------------------------------------------


def qf_sup_distance_p(T1: TreeSemilattice, T2: TreeSemilattice, p: int,
                      budget: int = DEFAULT_BUDGET) -> Fraction:
    """sup over p-variable formulas of the pairing gap, as a TV distance of types."""
    td1 = type_distribution(T1, p, budget)
    td2 = type_distribution(T2, p, budget)
    return td1.tv_distance(td2)


@dataclass
class DistanceBound:
    lower: Fraction
    upper: Fraction
    levels: int


def dist_truncated(T1: TreeSemilattice, T2: TreeSemilattice, P: int,
                   budget: int = DEFAULT_BUDGET) -> DistanceBound:
    """Two-sided bound on the formula-gap distance from levels 1..P.

    The lower end sums 2^-p times the per-arity suprema; each omitted level
    contributes at most 2^-p, giving upper = lower + 2^-levels. If a level
    exceeds the enumeration budget the interval for the completed levels is
    returned.
    """
    if P < 1:
        raise InputError("need P >= 1")
    lower = Fraction(0)
    levels = 0
    for p in range(1, P + 1):
        try:
            d = qf_sup_distance_p(T1, T2, p, budget)
        except BudgetError:
            break
        lower += Fraction(1, 2 ** p) * d
        levels = p
    upper = lower + (Fraction(1, 2 ** levels) if levels else Fraction(1))
    return DistanceBound(lower, upper, levels)


# -- formula enumeration and type-defining formulas --------------------------------


def standard_terms(arity: int) -> list[Term]:
    """Variables followed by pairwise meets, the carrier terms of any tuple."""
    terms: list[Term] = [Var(i) for i in range(1, arity + 1)]
    for i in range(1, arity + 1):
        for j in range(i + 1, arity + 1):
            terms.append(MeetTerm(Var(i), Var(j)))
    return terms


def enumerate_formulas(arity: int, k: int, max_depth: int = 3) -> list[QFFormula]:
    """All formulas over the standard terms up to the given connective depth.

    Syntactic dedup only: operands of & and | are ordered by their text and
    unequal, and double negation is skipped. Atoms have depth 1.
    """
    terms = standard_terms(arity)
    atoms: list[QFFormula] = []
    for i in range(len(terms)):
        for j in range(i + 1, len(terms)):
            atoms.append(Eq(terms[i], terms[j]))
    for c in range(1, k + 1):
        for t in terms:
            atoms.append(HasColor(c, t))
    by_depth: list[list[QFFormula]] = [atoms]
    for depth in range(2, max_depth + 1):
        fresh: list[QFFormula] = []
        for f in by_depth[-1]:
            if not isinstance(f, Not):
                fresh.append(Not(f))
        pool = [f for level in by_depth for f in level]
        pool_sorted = sorted(pool, key=formula_text)
        prev_max = by_depth[-1]
        prev_set = set(prev_max)
        for i, a in enumerate(pool_sorted):
            for b in pool_sorted[i + 1:]:
                if a in prev_set or b in prev_set:
                    fresh.append(And(a, b))
                    fresh.append(Or(a, b))
        by_depth.append(fresh)
    return [f for level in by_depth for f in level]


def type_formula(rep: tuple[TreeSemilattice, tuple[int, ...]], arity: int, k: int) -> QFFormula:
    """Formula satisfied exactly by the tuples of the representative's type.

    Conjunction of the full atomic diagram over the standard terms: slot
    equalities, order relations (s <= t iff s^t = s), and all color
    memberships, each asserted positively or negatively as in the
    representative.
    """
    tree, marks = rep
    terms = standard_terms(arity)
    values = [term_value(tree, t, marks) for t in terms]
    literals: list[QFFormula] = []
    for i in range(len(terms)):
        for j in range(i + 1, len(terms)):
            atom = Eq(terms[i], terms[j])
            literals.append(atom if values[i] == values[j] else Not(atom))
    for i in range(len(terms)):
        for j in range(len(terms)):
            if i == j:
                continue
            atom = Eq(MeetTerm(terms[i], terms[j]), terms[i])
            holds = tree.is_ancestor(values[i], values[j])
            literals.append(atom if holds else Not(atom))
    for c in range(1, k + 1):
        for i, t in enumerate(terms):
            atom = HasColor(c, t)
            literals.append(atom if c in tree.colors[values[i]] else Not(atom))
    phi = literals[0]
    for lit in literals[1:]:
        phi = And(phi, lit)
    return phi


def maximizing_formula(td1: TypeDistribution, td2: TypeDistribution, k: int) -> QFFormula:
    """A formula whose pairing gap between the two structures equals the TV distance."""
    if td1.arity != td2.arity:
        raise InputError("arity mismatch")
    keys = [key for key in set(td1.probs) | set(td2.probs)
            if td1.probs.get(key, Fraction(0)) > td2.probs.get(key, Fraction(0))]
    if not keys:
        return CONTRADICTION
    parts = []
    for key in sorted(keys):
        rep = td1.representatives.get(key) or td2.representatives.get(key)
        parts.append(type_formula(rep, td1.arity, k))
    phi = parts[0]
    for part in parts[1:]:
        phi = Or(phi, part)
    return phi
