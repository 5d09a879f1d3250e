"""Rooted triple sets: species-triple extraction, Aho graphs, BUILD, closure,
pairwise inference and the maximum-weight consistent subset."""

from __future__ import annotations

import itertools
import logging
from collections.abc import Iterable
from dataclasses import dataclass, field

from paratree import ilp
from paratree.model import (
    Event,
    EventLabeledTree,
    Node,
    Tree,
    Triple,
    TripleSet,
    displayed_triples,
    orientations,
)

log = logging.getLogger(__name__)

NO_SIGNAL = "no-signal"
CONSISTENT = "consistent-input"


# --------------------------------------------------------------------------
# Extraction
# --------------------------------------------------------------------------


def species_triples_of(t: EventLabeledTree) -> set[Triple]:
    """Species triples (σa σb|σc) for gene trios whose displayed triple
    (ab|c) is rooted at a speciation vertex."""
    tree, sigma = t.tree, t.species
    out: set[Triple] = set()
    for v in tree.inner_vertices:
        if tree.events[v] is not Event.SPECIATION:
            continue
        kids = tree.children[v]
        clusters = [sorted(tree.clusters[c]) for c in kids]
        for i, inner in enumerate(clusters):
            if len(inner) < 2:
                continue
            outer = {sigma[g] for j, cl in enumerate(clusters) if j != i for g in cl}
            # a and b share a child of v, c sits in another child
            for a, b in itertools.combinations(inner, 2):
                sa, sb = sigma[a], sigma[b]
                if sa == sb:
                    continue
                for sc in outer:
                    if sc != sa and sc != sb:
                        out.add(Triple.of(sa, sb, sc))
    return out


def extract_species_triples(t: EventLabeledTree) -> TripleSet:
    """Species triples of one gene tree, each with weight 1."""
    return TripleSet(species_triples_of(t), set(t.species[g] for g in t.genes))


def accumulate(trees: Iterable[EventLabeledTree], universe: Iterable[str] = ()) -> TripleSet:
    """Species triples over several gene trees; a triple's weight is the
    number of trees that yield it."""
    counts: dict[Triple, float] = {}
    leaves = set(universe)
    for t in trees:
        leaves.update(t.species[g] for g in t.genes)
        for r in species_triples_of(t):
            counts[r] = counts.get(r, 0.0) + 1.0
    return TripleSet(counts, leaves)


# --------------------------------------------------------------------------
# Aho graph and BUILD
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AhoGraph:
    vertices: frozenset[str]
    edges: frozenset[tuple[str, str]]

    def components(self) -> list[frozenset[str]]:
        return _components(self.vertices, self.edges)


def _components(vertices: Iterable[str], edges: Iterable[tuple[str, str]]) -> list[frozenset[str]]:
    parent = {v: v for v in vertices}

    def find(v: str) -> str:
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[str, set[str]] = {}
    for v in parent:
        groups.setdefault(find(v), set()).add(v)
    return sorted((frozenset(g) for g in groups.values()), key=min)


def aho_graph(r: TripleSet | Iterable[Triple], s: Iterable[str]) -> AhoGraph:
    s = frozenset(s)
    edges = {(t.x, t.y) for t in r if t.x in s and t.y in s and t.z in s}
    return AhoGraph(s, frozenset(edges))


@dataclass(frozen=True)
class ConsistencyReport:
    consistent: bool
    tree: Tree | None = None
    witness: frozenset[str] | None = None

    def __bool__(self) -> bool:
        return self.consistent


def build(r: TripleSet | Iterable[Triple], leaves: Iterable[str] | None = None) -> ConsistencyReport:
    """BUILD: split the leaf set along the components of its Aho graph,
    recursively.  Fails with the first connected stage of size > 1."""
    triples = list(r)
    universe = set(leaves) if leaves is not None else set()
    for t in triples:
        universe.update(t)
    if isinstance(r, TripleSet):
        universe |= r.universe
    if not universe:
        return ConsistencyReport(False, None, frozenset())
    root = Node()
    # work items: (leaf set, triples inside it, node to fill)
    work = [(frozenset(universe), triples, root)]
    while work:
        s, rs, node = work.pop()
        if len(s) == 1:
            node.label = next(iter(s))
            continue
        comps = _components(s, ((t.x, t.y) for t in rs))
        if len(comps) == 1:
            return ConsistencyReport(False, None, s)
        where = {v: i for i, c in enumerate(comps) for v in c}
        parts: list[list[Triple]] = [[] for _ in comps]
        for t in rs:
            i = where[t.x]
            if where[t.z] == i:
                parts[i].append(t)
        for c, part in zip(comps, parts):
            child = Node()
            node.children.append(child)
            work.append((c, part, child))
    return ConsistencyReport(True, Tree(root), None)


def aho_tree(r: TripleSet | Iterable[Triple], leaves: Iterable[str] | None = None) -> Tree:
    rep = build(r, leaves)
    if not rep.consistent:
        raise InconsistentTriples(rep.witness)
    return rep.tree


def is_consistent(r: TripleSet | Iterable[Triple], leaves: Iterable[str] | None = None) -> bool:
    return build(r, leaves).consistent


class InconsistentTriples(ValueError):
    def __init__(self, witness: frozenset[str] | None):
        self.witness = witness
        super().__init__(f"triple set is inconsistent (connected Aho graph on {sorted(witness or ())})")


# --------------------------------------------------------------------------
# Closure and inference
# --------------------------------------------------------------------------


def closure(r: TripleSet | Iterable[Triple]) -> TripleSet:
    """All triples displayed by every tree that displays ``r``.

    (xy|z) is forced exactly when adding either other orientation of the
    trio makes the set inconsistent."""
    base = list(r)
    rs = TripleSet(base, r.universe if isinstance(r, TripleSet) else ())
    leaves = sorted(rs.universe)
    if not build(base, leaves).consistent:
        raise InconsistentTriples(build(base, leaves).witness)
    have = set(rs.weights)
    out = set(have)
    for trio in itertools.combinations(leaves, 3):
        opts = orientations(*trio)
        known = [t for t in opts if t in have]
        if known:
            continue
        for t in opts:
            a, b = t.alternatives()
            if not build(base + [a], leaves).consistent and not build(base + [b], leaves).consistent:
                out.add(t)
                break
    return TripleSet(out, rs.universe)


# rules as (premise, premise, conclusions) over the labels a, b, c, d
_RULES = (
    (("a", "b", "c"), ("a", "d", "c"), (("b", "d", "c"),)),
    (("a", "b", "c"), ("a", "d", "b"), (("b", "d", "c"), ("a", "d", "c"))),
    (("a", "b", "c"), ("c", "d", "b"), (("a", "b", "d"), ("c", "d", "a"))),
)


def infer_2order(r1: Triple, r2: Triple) -> TripleSet:
    """Triples implied by a pair of triples sharing exactly two leaves."""
    r1, r2 = Triple.of(*r1), Triple.of(*r2)
    if len(r1.leaves & r2.leaves) != 2:
        return TripleSet()
    pair = {r1, r2}
    leaves = sorted(r1.leaves | r2.leaves)
    out: set[Triple] = set()
    for perm in itertools.permutations(leaves):
        m = dict(zip("abcd", perm))
        for p1, p2, concl in _RULES:
            if {Triple.of(*(m[k] for k in p1)), Triple.of(*(m[k] for k in p2))} == pair:
                out.update(Triple.of(*(m[k] for k in c)) for c in concl)
    return TripleSet(out - pair)


class NotStrictlyDense(ValueError):
    def __init__(self, trio: tuple[str, str, str], count: int):
        self.trio = trio
        self.count = count
        what = "missing" if count == 0 else f"{count} orientations of"
        super().__init__(f"not strictly dense: {what} trio {trio}")


def check_strictly_dense(r: TripleSet) -> None:
    seen: dict[tuple[str, str, str], int] = {}
    for t in r.weights:
        seen[t.trio] = seen.get(t.trio, 0) + 1
    for trio in itertools.combinations(sorted(r.universe), 3):
        c = seen.get(trio, 0)
        if c != 1:
            raise NotStrictlyDense(trio, c)


def strictly_dense_consistent(r: TripleSet) -> bool:
    """Consistency of a strictly dense set, decided from pairs alone."""
    check_strictly_dense(r)
    have = set(r.weights)
    ts = sorted(have)
    by_pair: dict[frozenset[str], list[Triple]] = {}
    for t in ts:
        for p in itertools.combinations(sorted(t.leaves), 2):
            by_pair.setdefault(frozenset(p), []).append(t)
    checked: set[tuple[Triple, Triple]] = set()
    for group in by_pair.values():
        for t1, t2 in itertools.combinations(group, 2):
            if (t1, t2) in checked:
                continue
            checked.add((t1, t2))
            if not set(infer_2order(t1, t2).weights) <= have:
                return False
    return True


def binary_refinement(tree: Tree) -> Tree:
    """Resolve every multifurcation as a caterpillar over its children."""
    node = tree.strip_events().to_node()
    stack = [node]
    while stack:
        v = stack.pop()
        while len(v.children) > 2:
            a, b = v.children[0], v.children[1]
            v.children[:2] = [Node(None, [a, b])]
        stack.extend(v.children)
    return Tree(node)


def dense_extension(r: TripleSet | Iterable[Triple], leaves: Iterable[str] | None = None) -> TripleSet:
    """A strictly dense consistent superset of a consistent ``r``."""
    return displayed_triples(binary_refinement(aho_tree(r, leaves)))


# --------------------------------------------------------------------------
# Maximum consistent subset
# --------------------------------------------------------------------------


def tvar(t: Triple) -> str:
    return f"T_{t.x}_{t.y}_{t.z}"


def svar(t: Triple) -> str:
    return f"S_{t.x}_{t.y}_{t.z}"


def subset_model(s: TripleSet) -> ilp.Model:
    """Binary program over T' (a strictly dense consistent set) and T* =
    T' restricted to the observed triples, maximizing observed weight."""
    species = sorted(s.universe)
    model = ilp.Model("max_consistent_subset")
    for trio in itertools.combinations(species, 3):
        for t in orientations(*trio):
            model.add_var(tvar(t))
    observed = sorted(s.weights)
    for t in observed:
        model.add_var(svar(t))
    idx = model.index

    # exactly one orientation per trio
    rows = []
    for trio in itertools.combinations(species, 3):
        rows.append([idx[tvar(t)] for t in orientations(*trio)])
    if rows:
        model.add_block(rows, 1.0, "=", 1.0, "dense")

    # 2T(ab|c) + 2T(ad|b) - T(bd|c) - T(ad|c) <= 2 for ordered 4-tuples
    rows = []
    for a, b, c, d in itertools.permutations(species, 4):
        rows.append(
            [
                idx[tvar(Triple.of(a, b, c))],
                idx[tvar(Triple.of(a, d, b))],
                idx[tvar(Triple.of(b, d, c))],
                idx[tvar(Triple.of(a, d, c))],
            ]
        )
    if rows:
        model.add_block(rows, [2, 2, -1, -1], "<=", 2.0, "rule")

    # 0 <= T' + 1 - 2 T* <= 1 for observed triples
    rows = [[idx[tvar(t)], idx[svar(t)]] for t in observed]
    if rows:
        model.add_block(rows, [1, -2], "<=", 0.0, "link_hi")
        model.add_block(rows, [1, -2], ">=", -1.0, "link_lo")
    # T* = T' on observed triples, so the weights sit on T'; this lets the
    # solver see orientation conflicts in its bound
    model.set_objective({idx[tvar(t)]: s.weight(t) for t in observed}, "max")
    return model


@dataclass
class SubsetResult:
    sstar: TripleSet
    sprime: TripleSet
    status: str
    objective: float
    nodes: int = 0
    wall_time: float = 0.0
    model: ilp.Model | None = field(default=None, repr=False)

    @property
    def exact(self) -> bool:
        return self.status in (ilp.OPTIMAL, CONSISTENT)


def max_consistent_subset(
    s: TripleSet,
    time_limit: float | None = None,
    node_limit: int | None = None,
    force_ilp: bool = False,
    keep_model: bool = False,
) -> SubsetResult:
    """Maximum-weight consistent subset S* of ``s`` together with the
    strictly dense consistent set S' it was read from."""
    if len(s.universe) < 3:
        return SubsetResult(TripleSet((), s.universe), TripleSet((), s.universe), NO_SIGNAL, 0.0)
    if not force_ilp:
        rep = build(s.weights, s.universe)
        if rep.consistent:
            sprime = displayed_triples(binary_refinement(rep.tree))
            return SubsetResult(s, sprime, CONSISTENT, s.total_weight())
    model = subset_model(s)
    out = ilp.solve(model, time_limit=time_limit, node_limit=node_limit)
    if out.values is None:
        raise RuntimeError(f"maximum consistent subset: solver returned {out.status}")
    by_name = {tvar(t): t for trio in itertools.combinations(sorted(s.universe), 3) for t in orientations(*trio)}
    chosen = [by_name[name] for name, v in zip(model.names, out.values) if v and name in by_name]
    sprime = TripleSet(chosen, s.universe)
    sstar = s.subset(sprime.weights)
    return SubsetResult(
        sstar,
        sprime,
        out.status,
        sstar.total_weight(),
        out.nodes,
        out.wall_time,
        model if keep_model else None,
    )


def brute_force_subset(s: TripleSet) -> float:
    """Largest total weight of a consistent subset, by exhaustive search."""
    ts = sorted(s.weights)
    leaves = sorted(s.universe)
    best = 0.0
    for mask in range(1 << len(ts)):
        pick = [t for i, t in enumerate(ts) if mask >> i & 1]
        w = sum(s.weight(t) for t in pick)
        if w > best and build(pick, leaves).consistent:
            best = w
    return best
