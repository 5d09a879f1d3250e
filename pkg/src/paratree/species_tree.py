"""Least-resolved species trees from a consistent triple set, cluster-matrix
decoding and triple-based support values."""

from __future__ import annotations

import itertools
import json
import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from paratree import ilp
from paratree.model import (
    Hierarchy,
    Node,
    Tree,
    Triple,
    TripleSet,
    displayed_triples,
    newick_write,
    tree_from_hierarchy,
)
from paratree.triples import CONSISTENT, InconsistentTriples, build

log = logging.getLogger(__name__)

MODES = ("min-vertices", "min-triples", "build")
BUILD_SHORTCUT = "aho-binary"
# min-triples: the contracted BUILD tree displays nothing beyond S*
TRIPLES_BOUND = "triples-lower-bound"
# deterministic search budget used by the pipeline when none is given
TREE_NODE_LIMIT = 5000


def tree_budget(node_limit: int | None) -> int:
    return TREE_NODE_LIMIT if node_limit is None else node_limit


class IncompatibleColumns(ValueError):
    """Two matrix columns violate the three-gamete condition."""

    def __init__(self, p: int, q: int, gametes: Mapping[tuple[int, int], str]):
        self.p, self.q = p, q
        self.gametes = dict(gametes)
        shown = ", ".join(f"{k}:{v}" for k, v in sorted(self.gametes.items()))
        super().__init__(f"columns {p} and {q} are incompatible (gametes {shown})")


def _column_sets(m, species: Sequence[str]) -> list[frozenset[str]]:
    m = np.asarray(m, dtype=int).reshape(len(species), -1)
    return [frozenset(species[i] for i in np.flatnonzero(m[:, p])) for p in range(m.shape[1])]


def decode_matrix(m, species: Sequence[str]) -> Tree:
    """Tree whose clusters are the matrix columns, the singletons and the
    full species set.  Rows follow ``species``."""
    species = list(species)
    cols = _column_sets(m, species)
    n = len(species)
    for p, q in itertools.combinations(range(len(cols)), 2):
        a, b = cols[p], cols[q]
        if len(a) in (0, 1, n) or len(b) in (0, 1, n):
            continue
        if a & b and a - b and b - a:
            gametes = {(1, 1): min(a & b), (1, 0): min(a - b), (0, 1): min(b - a)}
            raise IncompatibleColumns(p, q, gametes)
    clusters = [c for c in cols if 1 < len(c) < n]
    return tree_from_hierarchy(Hierarchy(species, clusters))


def tree_matrix(tree: Tree, species: Sequence[str]) -> np.ndarray:
    """Cluster matrix (|species| x (|species|-2)) of a tree's non-trivial
    clusters, columns in lexicographically non-increasing order."""
    species = list(species)
    n = len(species)
    pos = {s: i for i, s in enumerate(species)}
    cols = []
    for c in set(tree.hierarchy().nontrivial()):
        col = np.zeros(n, dtype=int)
        col[[pos[s] for s in c]] = 1
        cols.append(col)
    cols.sort(key=lambda c: tuple(c), reverse=True)
    m = np.zeros((n, max(n - 2, 0)), dtype=int)
    for p, c in enumerate(cols):
        m[:, p] = c
    return m


# --------------------------------------------------------------------------
# Matrix ILP
# --------------------------------------------------------------------------


def _mname(i: int, p: int) -> str:
    return f"M_{i}_{p}"


def tree_model(sstar: TripleSet, mode: str = "min-vertices") -> tuple[ilp.Model, list[str]]:
    """Binary program over a cluster matrix M whose columns form a tree
    displaying ``sstar``.  ``mode`` picks the objective: fewest
    non-trivial clusters, or fewest displayed triples."""
    if mode not in ("min-vertices", "min-triples"):
        raise ValueError(f"no matrix program for mode {mode!r}")
    species = sorted(sstar.universe)
    n = len(species)
    k = max(n - 2, 0)
    pos = {s: i for i, s in enumerate(species)}
    model = ilp.Model(f"least_resolved_{mode}")
    pairs = list(itertools.combinations(range(n), 2))

    if mode == "min-vertices":
        for p in range(k):
            model.add_var(f"Y_{p}")
    for p in range(k):
        for i in range(n):
            model.add_var(_mname(i, p))
    for p in range(k):
        for i, j in pairs:
            model.add_var(f"N_{i}_{j}_{p}")
    ordered = [(p, q) for p in range(k) for q in range(k) if p != q]
    for p, q in ordered:
        for g in ("01", "10", "11"):
            model.add_var(f"C_{p}_{q}_{g}")
    idx = model.index
    M = np.array([[idx[_mname(i, p)] for p in range(k)] for i in range(n)], dtype=np.int64).reshape(n, k)

    def N(i: int, j: int, p: int) -> int:
        i, j = min(i, j), max(i, j)
        return idx[f"N_{i}_{j}_{p}"]

    if mode == "min-vertices":
        # Y_p = 1 iff column p is non-empty
        rows = [[idx[f"Y_{p}"]] + M[:, p].tolist() for p in range(k)]
        coefs = [n] + [-1] * n
        if rows:
            model.add_block(rows, coefs, ">=", 0.0, "y_lo")
            model.add_block(rows, coefs, "<=", n - 1.0, "y_hi")
        model.set_objective({idx[f"Y_{p}"]: 1.0 for p in range(k)}, "min")

    # N_ijp = M_ip * M_jp
    rows = [[M[i, p], M[j, p], N(i, j, p)] for p in range(k) for i, j in pairs]
    if rows:
        model.add_block(rows, [1, 1, -2], ">=", 0.0, "n_lo")
        model.add_block(rows, [1, 1, -2], "<=", 1.0, "n_hi")

    # every triple of S* needs a column holding its ingroup but not its outgroup
    for t in sorted(sstar.weights):
        a, b, c = pos[t.x], pos[t.y], pos[t.z]
        terms: dict[int, float] = {}
        for p in range(k):
            terms[N(a, b, p)] = 1.0
            terms[N(a, c, p)] = -0.5
            terms[N(b, c, p)] = -0.5
        model.add_constraint(terms, ">=", 1.0, f"display_{t.x}_{t.y}_{t.z}")

    # three-gamete condition on every ordered column pair
    r01, r10, r11, rsum = [], [], [], []
    for p, q in ordered:
        c01, c10, c11 = (idx[f"C_{p}_{q}_{g}"] for g in ("01", "10", "11"))
        for i in range(n):
            r01.append([c01, M[i, p], M[i, q]])
            r10.append([c10, M[i, p], M[i, q]])
            r11.append([c11, M[i, p], M[i, q]])
        rsum.append([c01, c10, c11])
    if rsum:
        model.add_block(r01, [1, 1, -1], ">=", 0.0, "g01_")
        model.add_block(r10, [1, -1, 1], ">=", 0.0, "g10_")
        model.add_block(r11, [1, -1, -1], ">=", -1.0, "g11_")
        model.add_block(rsum, 1.0, "<=", 2.0, "compat")

    # columns in lexicographically non-increasing order
    if k > 1:
        pw = [float(2 ** (n - 1 - i)) for i in range(n)]
        rows = [M[:, p].tolist() + M[:, p + 1].tolist() for p in range(k - 1)]
        model.add_block(rows, pw + [-w for w in pw], ">=", 0.0, "lex")

    if mode == "min-triples":
        hat = {}
        for a, b in pairs:
            for c in range(n):
                if c in (a, b):
                    continue
                name = f"H_{a}_{b}_{c}"
                hat[name] = model.add_var(name)
        rows = []
        for a, b in pairs:
            for c in range(n):
                if c in (a, b):
                    continue
                h = hat[f"H_{a}_{b}_{c}"]
                rows.extend([M[a, p], M[b, p], M[c, p], h] for p in range(k))
        if rows:
            model.add_block(rows, [1, 1, -1, -1], "<=", 1.0, "hat")
        model.set_objective({h: 1.0 for h in hat.values()}, "min")
    return model, species


# --------------------------------------------------------------------------
# Supports
# --------------------------------------------------------------------------


@dataclass
class Support:
    s: float
    nodes: dict[frozenset[str], float]
    unsupported: set[frozenset[str]] = field(default_factory=set)


def _ratio(ts: Iterable[Triple], weights: TripleSet) -> float | None:
    num = den = 0.0
    for t in ts:
        w = weights.weight(t)
        a1, a2 = t.alternatives()
        num += w
        den += w + weights.weight(a1) + weights.weight(a2)
    return num / den if den > 0 else None


def support_values(tree: Tree, extracted: TripleSet, sstar: TripleSet | None = None) -> Support:
    """Global support over S* (default: extracted triples displayed by the
    tree) and per-cluster support over the displayed triples whose ingroup
    lies inside the cluster and whose outgroup lies outside."""
    shown = displayed_triples(tree)
    if sstar is None:
        sstar = extracted.subset(shown.weights)
    s = _ratio(sstar.weights, extracted)
    nodes: dict[frozenset[str], float] = {}
    unsupported: set[frozenset[str]] = set()
    for v in tree.inner_vertices:
        cl = tree.clusters[v]
        sv = [t for t in shown.weights if t.x in cl and t.y in cl and t.z not in cl]
        val = _ratio(sv, extracted)
        if val is None:
            unsupported.add(cl)
            val = 1.0
        nodes[cl] = val
    return Support(1.0 if s is None else s, nodes, unsupported)


# --------------------------------------------------------------------------
# Driver
# --------------------------------------------------------------------------


@dataclass
class SpeciesTreeResult:
    tree: Tree
    mode: str
    objective: float
    exact: bool
    status: str
    support: Support | None = None
    nodes: int = 0
    wall_time: float = 0.0
    model: ilp.Model | None = field(default=None, repr=False)

    @property
    def inner_vertices(self) -> int:
        return len(self.tree.inner_vertices)

    def newick(self) -> str:
        if self.support is None:
            return newick_write(self.tree)
        root = self.tree.clusters[0]
        labels = {c: v for c, v in self.support.nodes.items() if c != root}
        return newick_write(self.tree, "support", labels)

    def report(self) -> dict:
        out = {
            "mode": self.mode,
            "objective": self.objective,
            "exact": self.exact,
            "status": self.status,
            "inner_vertices": self.inner_vertices,
            "clusters": [sorted(c) for c in sorted(self.tree.hierarchy().nontrivial(), key=lambda c: (len(c), sorted(c)))],
            "newick": self.newick(),
        }
        if self.support is not None:
            out["s"] = round(self.support.s, 6)
            out["node_support"] = [
                {
                    "cluster": sorted(c),
                    "support": round(v, 6),
                    "unsupported": c in self.support.unsupported,
                }
                for c, v in sorted(self.support.nodes.items(), key=lambda kv: (len(kv[0]), sorted(kv[0])))
            ]
        return out

    def to_json(self) -> str:
        return json.dumps(self.report(), indent=2, sort_keys=True)


def _objective(tree: Tree, mode: str) -> float:
    if mode == "min-triples":
        return float(len(displayed_triples(tree)))
    return float(len(tree.inner_vertices))


def least_resolved_tree(
    sstar: TripleSet,
    mode: str = "min-vertices",
    extracted: TripleSet | None = None,
    time_limit: float | None = None,
    node_limit: int | None = None,
    force_ilp: bool = False,
    keep_model: bool = False,
) -> SpeciesTreeResult:
    """Tree displaying ``sstar`` with as few inner vertices (or displayed
    triples) as possible.  A binary BUILD tree is returned directly since
    it is the only tree displaying ``sstar``.  When the search stops early
    the better of its incumbent and the contracted BUILD tree is returned
    with ``exact`` false."""
    if mode not in MODES:
        raise ValueError(f"unknown tree mode {mode!r}; expected one of {', '.join(MODES)}")
    species = sorted(sstar.universe)
    if not species:
        raise ValueError("empty species set")
    rep = build(sstar.weights, species)
    if not rep.consistent:
        raise InconsistentTriples(rep.witness)
    aho = rep.tree

    def finish(tree, status, exact, nodes=0, wall=0.0, model=None):
        sup = support_values(tree, extracted if extracted is not None else sstar, sstar)
        return SpeciesTreeResult(tree, mode, _objective(tree, mode), exact, status, sup, nodes, wall, model)

    if mode == "build":
        return finish(aho, CONSISTENT, aho.is_binary())
    if len(species) <= 3 and not force_ilp:
        return finish(aho, BUILD_SHORTCUT, True)
    if aho.is_binary() and not force_ilp:
        return finish(aho, BUILD_SHORTCUT, True)
    fallback = contract_tree(aho, sstar)
    # every displaying tree displays S*, so reaching |S*| is optimal
    if mode == "min-triples" and not force_ilp and _objective(fallback, mode) == len(sstar):
        return finish(fallback, TRIPLES_BOUND, True)
    model, order = tree_model(sstar, mode)
    out = ilp.solve(model, time_limit=time_limit, node_limit=node_limit)
    kept = model if keep_model else None
    if out.values is None:
        log.warning("tree program ended with %s; using the contracted BUILD tree", out.status)
        return finish(fallback, out.status, False, out.nodes, out.wall_time, kept)
    n, k = len(order), max(len(order) - 2, 0)
    vals = out.assignment
    m = np.array([[vals[_mname(i, p)] for p in range(k)] for i in range(n)], dtype=int).reshape(n, k)
    tree = decode_matrix(m, order)
    if out.status != ilp.OPTIMAL and _objective(fallback, mode) < _objective(tree, mode):
        tree = fallback
    return finish(tree, out.status, out.status == ilp.OPTIMAL, out.nodes, out.wall_time, kept)


def contract_tree(tree: Tree, sstar: TripleSet) -> Tree:
    """Drop clusters of ``tree`` (largest first) while every triple of
    ``sstar`` stays displayed; the result is a locally least-resolved tree."""
    leaves = tree.leaves
    keep = set(tree.hierarchy().nontrivial())
    for c in sorted(keep, key=lambda c: (-len(c), sorted(c))):
        keep.discard(c)
        if not all(any(t.x in d and t.y in d and t.z not in d for d in keep) for t in sstar.weights):
            keep.add(c)
    return tree_from_hierarchy(Hierarchy(leaves, keep))


# --------------------------------------------------------------------------
# Enumeration (small leaf sets)
# --------------------------------------------------------------------------


def all_trees(leaves: Iterable[str]) -> list[Tree]:
    """Every rooted phylogenetic tree on ``leaves`` (each exactly once),
    grown by inserting leaves one at a time."""
    leaves = sorted(leaves)
    if not leaves:
        return []
    # a tree is a tuple of cluster frozensets (its hierarchy minus singletons)
    forests = [frozenset([frozenset(leaves[:1])])]
    for i in range(1, len(leaves)):
        new = leaves[i]
        single = frozenset([new])
        done = set()
        for h in forests:
            for c in h:
                # hang ``new`` below c as an extra child (c must be inner)
                if len(c) > 1:
                    done.add(frozenset((d | {new}) if c <= d else d for d in h) | {single})
                # or subdivide the edge above c
                grown = frozenset((d | {new}) if c < d else d for d in h) | {c | {new}, single}
                done.add(grown)
        forests = list(done)
    out = []
    for h in forests:
        out.append(tree_from_hierarchy(Hierarchy(leaves, h)))
    return sorted(out, key=newick_write)
