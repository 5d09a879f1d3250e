"""Orthology graphs: connected components, P4 detection, exact weighted
cograph editing under the no-same-species-edge rule, and cotrees."""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from paratree import ilp
from paratree.model import Event, EventLabeledTree, InputError, Node, Tree, _data_lines, check_label, format_weight

log = logging.getLogger(__name__)

THRESHOLD = 0.5
SIZE_LIMIT = 50
TIME_LIMIT = 1800.0

OPTIMAL = "optimal"
INCUMBENT = "time-limited-incumbent"
SKIPPED = "skipped-too-large"

Pair = tuple[str, str]


def pair(a: str, b: str) -> Pair:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class OrthologyEstimate:
    """Symmetric, irreflexive weighted relation on genes plus the gene to
    species map.  Absent pairs have weight 0."""

    genes: frozenset[str]
    weights: Mapping[Pair, float]
    species: Mapping[str, str]

    def __post_init__(self):
        missing = sorted(g for g in self.genes if g not in self.species)
        if missing:
            raise ValueError(f"genes missing from the species map: {missing}")
        for (a, b), w in self.weights.items():
            if a == b:
                raise ValueError(f"self-pair {a}")
            if a > b:
                raise ValueError(f"pair ({a},{b}) not stored sorted")
            if a not in self.genes or b not in self.genes:
                raise ValueError(f"pair ({a},{b}) outside the gene set")
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"weight {w} of ({a},{b}) outside [0,1]")

    @classmethod
    def from_pairs(cls, pairs: Iterable, species: Mapping[str, str], genes: Iterable[str] | None = None):
        """``pairs`` holds (a, b) or (a, b, weight); duplicates keep the maximum."""
        weights: dict[Pair, float] = {}
        for item in pairs:
            a, b = item[0], item[1]
            w = float(item[2]) if len(item) > 2 else 1.0
            if a == b:
                raise ValueError(f"self-pair {a}")
            p = pair(a, b)
            weights[p] = max(weights.get(p, 0.0), w)
        weights = {p: w for p, w in weights.items() if w > 0.0}
        gene_set = frozenset(species if genes is None else genes)
        return cls(gene_set, dict(sorted(weights.items())), dict(species))

    def weight(self, a: str, b: str) -> float:
        return self.weights.get(pair(a, b), 0.0)

    def edges(self, threshold: float = THRESHOLD) -> list[Pair]:
        return [p for p, w in self.weights.items() if w >= threshold]

    def graph(self, threshold: float = THRESHOLD) -> dict[str, set[str]]:
        adj: dict[str, set[str]] = {g: set() for g in sorted(self.genes)}
        for a, b in self.edges(threshold):
            adj[a].add(b)
            adj[b].add(a)
        return adj

    def restrict(self, genes: Iterable[str]) -> OrthologyEstimate:
        keep = frozenset(genes)
        return OrthologyEstimate(
            keep,
            {p: w for p, w in self.weights.items() if p[0] in keep and p[1] in keep},
            {g: self.species[g] for g in keep},
        )

    def with_species(self, species: Mapping[str, str]) -> OrthologyEstimate:
        return OrthologyEstimate(self.genes, self.weights, dict(species))

    @property
    def species_set(self) -> frozenset[str]:
        return frozenset(self.species[g] for g in self.genes)


def read_orthology(path: str | Path, species: Mapping[str, str]) -> OrthologyEstimate:
    """Read ``geneA<TAB>geneB[<TAB>weight]`` lines."""
    rows = []
    for lineno, cols in _data_lines(path):
        if len(cols) not in (2, 3):
            raise InputError(f"expected 2 or 3 columns, got {len(cols)}", str(path), lineno)
        a, b = cols[0].strip(), cols[1].strip()
        try:
            check_label(a)
            check_label(b)
            w = float(cols[2]) if len(cols) == 3 else 1.0
        except ValueError as exc:
            raise InputError(str(exc), str(path), lineno) from None
        if a == b:
            raise InputError(f"self-pair {a}", str(path), lineno)
        if not 0.0 <= w <= 1.0:
            raise InputError(f"weight {w} outside [0,1]", str(path), lineno)
        rows.append((a, b, w))
    missing = sorted({g for a, b, _ in rows for g in (a, b)} - set(species))
    if missing:
        raise InputError("genes missing from the species map: " + ", ".join(missing), str(path))
    return OrthologyEstimate.from_pairs(rows, species)


def write_relation(path: str | Path, edges: Iterable[Pair] | Mapping[Pair, float]) -> None:
    items = edges.items() if isinstance(edges, Mapping) else ((p, 1.0) for p in edges)
    with open(path, "w", encoding="utf-8") as fh:
        for (a, b), w in sorted(items):
            fh.write(f"{a}\t{b}\t{format_weight(w)}\n")


# --------------------------------------------------------------------------
# Graph structure
# --------------------------------------------------------------------------


def _components(adj: Mapping[str, set[str]], vertices: Iterable[str]) -> list[list[str]]:
    verts = set(vertices)
    seen: set[str] = set()
    out = []
    for v in sorted(verts):
        if v in seen:
            continue
        comp = [v]
        seen.add(v)
        stack = [v]
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if w in verts and w not in seen:
                    seen.add(w)
                    comp.append(w)
                    stack.append(w)
        out.append(sorted(comp))
    return out


def _complement_components(adj: Mapping[str, set[str]], vertices: Iterable[str]) -> list[list[str]]:
    remaining = set(vertices)
    out = []
    for v in sorted(remaining):
        if v not in remaining:
            continue
        remaining.discard(v)
        comp = [v]
        stack = [v]
        while stack:
            u = stack.pop()
            nxt = remaining - adj[u]
            remaining -= nxt
            comp.extend(nxt)
            stack.extend(nxt)
        out.append(sorted(comp))
    return out


def connected_components(est: OrthologyEstimate, threshold: float = THRESHOLD) -> list[OrthologyEstimate]:
    """Split by connectivity of the pairs with weight >= ``threshold``;
    components are ordered by their smallest gene."""
    adj = est.graph(threshold)
    return [est.restrict(c) for c in _components(adj, est.genes)]


def find_p4(adj: Mapping[str, set[str]]) -> tuple[str, str, str, str] | None:
    """Some induced path w-x-y-z, or None if the graph is a cograph."""
    for x in sorted(adj):
        for y in sorted(adj[x]):
            if y <= x:
                continue
            left = adj[x] - adj[y] - {y}
            if not left:
                continue
            right = adj[y] - adj[x] - {x}
            if not right:
                continue
            for w in sorted(left):
                far = right - adj[w]
                if far:
                    return (w, x, y, min(far))
    return None


def _decomposes(adj: Mapping[str, set[str]]) -> bool:
    """True if alternating component / co-component splitting reaches
    single vertices."""
    work = [sorted(adj)]
    while work:
        vs = work.pop()
        if len(vs) < 2:
            continue
        parts = _components(adj, vs)
        if len(parts) == 1:
            parts = _complement_components(adj, vs)
            if len(parts) == 1:
                return False
        work.extend(parts)
    return True


def is_cograph(adj: Mapping[str, set[str]]) -> bool:
    return _decomposes(adj)


class NotACograph(ValueError):
    def __init__(self, witness: tuple[str, str, str, str]):
        self.witness = witness
        super().__init__("graph contains the induced path " + "-".join(witness))


def cotree(adj: Mapping[str, set[str]], species: Mapping[str, str]) -> EventLabeledTree:
    """Discriminating cotree of a cograph, joins labeled as speciations and
    disjoint unions as duplications."""
    if not adj:
        raise ValueError("empty graph has no cotree")

    def build(vertices: list[str]) -> Node:
        if len(vertices) == 1:
            return Node.leaf(vertices[0])
        comps = _components(adj, vertices)
        if len(comps) > 1:
            return Node.inner((build(c) for c in comps), Event.DUPLICATION)
        co = _complement_components(adj, vertices)
        if len(co) > 1:
            return Node.inner((build(c) for c in co), Event.SPECIATION)
        sub = {v: adj[v] & set(vertices) for v in vertices}
        raise NotACograph(find_p4(sub))

    tree = Tree(build(sorted(adj)))
    return EventLabeledTree(tree, {g: species[g] for g in tree.leaves})


def relation_from_cotree(t: EventLabeledTree) -> dict[str, set[str]]:
    adj: dict[str, set[str]] = {g: set() for g in sorted(t.genes)}
    for a, b in t.orthologs():
        adj[a].add(b)
        adj[b].add(a)
    return adj


# --------------------------------------------------------------------------
# Editing
# --------------------------------------------------------------------------


@dataclass
class EditedCograph:
    genes: tuple[str, ...]
    edges: frozenset[Pair]
    cost: float
    inserted: list[Pair]
    deleted: list[Pair]
    status: str
    nodes: int = 0
    wall_time: float = 0.0
    model: ilp.Model | None = field(default=None, repr=False)

    def graph(self) -> dict[str, set[str]]:
        adj: dict[str, set[str]] = {g: set() for g in self.genes}
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        return adj

    @property
    def exact(self) -> bool:
        return self.status == OPTIMAL


def edit_cost(comp: OrthologyEstimate, edges: Iterable[Pair]) -> float:
    """Weighted symmetric difference: sum (1-w) over kept/added pairs plus
    sum w over absent pairs."""
    es = set(edges)
    genes = sorted(comp.genes)
    total = 0.0
    for a, b in itertools.combinations(genes, 2):
        w = comp.weight(a, b)
        total += (1.0 - w) if (a, b) in es else w
    return total


def editing_model(comp: OrthologyEstimate) -> tuple[ilp.Model, list[Pair]]:
    """ILP whose binary E variables are the edited edges of ``comp``."""
    genes = sorted(comp.genes)
    n = len(genes)
    model = ilp.Model(f"cograph_edit_{genes[0]}" if genes else "cograph_edit")
    pairs = list(itertools.combinations(genes, 2))
    index = np.full((n, n), -1, dtype=np.int64)
    for k, (a, b) in enumerate(pairs):
        model.add_var(f"E_{a}_{b}")
    pos = {g: i for i, g in enumerate(genes)}
    for k, (a, b) in enumerate(pairs):
        index[pos[a], pos[b]] = index[pos[b], pos[a]] = k
    # (1 - w) E + w (1 - E) = w + (1 - 2w) E
    objective = {}
    constant = 0.0
    for k, (a, b) in enumerate(pairs):
        w = comp.weight(a, b)
        constant += w
        objective[k] = 1.0 - 2.0 * w
    model.set_objective(objective, "min", constant)

    same = [k for k, (a, b) in enumerate(pairs) if comp.species[a] == comp.species[b]]
    if same:
        model.add_block(np.array(same)[:, None], 1.0, "=", 0.0, "forbid")

    if n >= 4:
        quads = np.array(list(itertools.combinations(range(n), 4)), dtype=np.int64)
        # the 12 orderings (w,x,y,z) with w < z, one per reversal class
        perms = [p for p in itertools.permutations(range(4)) if p[0] < p[3]]
        blocks = []
        for p in perms:
            w, x, y, z = (quads[:, i] for i in p)
            blocks.append(
                np.stack(
                    [index[w, x], index[x, y], index[y, z], index[x, z], index[w, y], index[w, z]], axis=1
                )
            )
        cols = np.stack(blocks, axis=1).reshape(-1, 6)
        model.add_block(cols, [1, 1, 1, -1, -1, -1], "<=", 2.0, "p4_")
    return model, pairs


def _greedy_cograph(comp: OrthologyEstimate, threshold: float) -> set[Pair]:
    """Keep estimated cross-species edges, then delete the lightest edge of
    each remaining induced P4 until none is left."""
    edges = {p for p in comp.edges(threshold) if comp.species[p[0]] != comp.species[p[1]]}
    adj: dict[str, set[str]] = {g: set() for g in comp.genes}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    while True:
        p4 = None if is_cograph(adj) else find_p4(adj)
        if p4 is None:
            return edges
        w, x, y, z = p4
        path = [pair(w, x), pair(x, y), pair(y, z)]
        a, b = min(path, key=lambda e: (comp.weight(*e), e))
        edges.discard((a, b))
        adj[a].discard(b)
        adj[b].discard(a)


def _result(comp, edges, status, nodes=0, wall=0.0, model=None) -> EditedCograph:
    input_edges = set(comp.edges(THRESHOLD))
    edges = frozenset(edges)
    return EditedCograph(
        genes=tuple(sorted(comp.genes)),
        edges=edges,
        cost=edit_cost(comp, edges),
        inserted=sorted(edges - input_edges),
        deleted=sorted(input_edges - edges),
        status=status,
        nodes=nodes,
        wall_time=wall,
        model=model,
    )


def cograph_edit(
    comp: OrthologyEstimate,
    time_limit: float | None = TIME_LIMIT,
    size_limit: int = SIZE_LIMIT,
    node_limit: int | None = None,
    threshold: float = THRESHOLD,
    keep_model: bool = False,
) -> EditedCograph:
    """Closest cograph to one connected component with no edge inside a species."""
    n = len(comp.genes)
    if n > size_limit:
        log.info("component of %d genes exceeds limit %d; using greedy fallback", n, size_limit)
        return _result(comp, _greedy_cograph(comp, threshold), SKIPPED)

    binary = all(w == 1.0 for w in comp.weights.values())
    est_edges = set(comp.edges(threshold))
    if binary and all(comp.species[a] != comp.species[b] for a, b in est_edges):
        adj = comp.graph(threshold)
        if is_cograph(adj):
            return _result(comp, est_edges, OPTIMAL)

    model, pairs = editing_model(comp)
    if n <= 2 and not keep_model:
        edges = set()
        for k, (a, b) in enumerate(pairs):
            if comp.species[a] != comp.species[b] and model.objective.get(k, 0.0) < 0:
                edges.add((a, b))
        return _result(comp, edges, OPTIMAL)

    out = ilp.solve(model, time_limit=time_limit, node_limit=node_limit)
    kept = model if keep_model else None
    if out.values is None:
        log.warning("no incumbent for component %s within limits; greedy fallback", pairs[0][0])
        return _result(comp, _greedy_cograph(comp, threshold), INCUMBENT, out.nodes, out.wall_time, kept)
    edges = {pairs[k] for k, v in enumerate(out.values) if v}
    status = OPTIMAL if out.status == ilp.OPTIMAL else INCUMBENT
    return _result(comp, edges, status, out.nodes, out.wall_time, kept)


def brute_force_edit(comp: OrthologyEstimate) -> tuple[float, int]:
    """Minimum edit cost by trying edit sets of increasing cardinality.

    Returns (cost, number of edits).  Intended for small graphs only."""
    genes = sorted(comp.genes)
    pairs = list(itertools.combinations(genes, 2))
    base = set(comp.edges(THRESHOLD))
    allowed = [p for p in pairs if comp.species[p[0]] != comp.species[p[1]]]
    forced = [p for p in base if comp.species[p[0]] == comp.species[p[1]]]
    best = math.inf
    best_k = -1
    # with non-binary weights a longer edit list can be cheaper, so the
    # search only stops early for binary inputs
    binary = all(w == 1.0 for w in comp.weights.values())
    start = set(base) - set(forced)
    for k in range(len(allowed) + 1):
        for flips in itertools.combinations(allowed, k):
            edges = start.symmetric_difference(flips)
            adj: dict[str, set[str]] = {g: set() for g in genes}
            for a, b in edges:
                adj[a].add(b)
                adj[b].add(a)
            if find_p4(adj) is not None:
                continue
            c = edit_cost(comp, edges)
            if c < best - 1e-12:
                best, best_k = c, k + len(forced)
        if binary and best < math.inf:
            break
    return best, best_k
