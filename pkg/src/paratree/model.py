"""Core phylogenetic types: rooted trees, event labels, rooted triples,
cluster hierarchies, plus Newick and TSV serialization."""

from __future__ import annotations

import enum
import itertools
import re
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

_FORBIDDEN = re.compile(r"[\s(),;:]")


class InputError(ValueError):
    """Ill-formed input file; carries the file name and 1-based line number."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class NewickError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte {offset})")


def check_label(label: str) -> str:
    if not label or _FORBIDDEN.search(label):
        raise ValueError(f"invalid label {label!r}: must be non-empty without whitespace or '(),;:'")
    return label


class Event(enum.Enum):
    SPECIATION = "S"
    DUPLICATION = "D"

    @property
    def symbol(self) -> str:
        return "•" if self is Event.SPECIATION else "□"


# --------------------------------------------------------------------------
# Rooted trees
# --------------------------------------------------------------------------


@dataclass
class Node:
    """Mutable builder node; converted into an immutable :class:`Tree`."""

    label: str | None = None
    children: list[Node] = field(default_factory=list)
    event: Event | None = None

    @classmethod
    def leaf(cls, label: str) -> Node:
        return cls(label=label)

    @classmethod
    def inner(cls, children: Iterable[Node], event: Event | None = None) -> Node:
        return cls(children=list(children), event=event)


class Tree:
    """Immutable rooted phylogenetic tree with canonically ordered children.

    Vertices are integers in preorder; vertex 0 is the root.  Children are
    sorted by the smallest leaf label below them, so two isomorphic trees
    compare equal and serialize identically.
    """

    __slots__ = ("children", "parent", "labels", "events", "clusters", "depth", "_leaf_index", "_hash")

    def __init__(self, root: Node):
        children: list[tuple[int, ...]] = []
        parent: list[int] = []
        labels: list[str | None] = []
        events: list[Event | None] = []
        clusters: list[frozenset[str]] = []
        depth: list[int] = []

        # smallest leaf label below each builder node, computed bottom-up
        memo: dict[int, str] = {}
        order: list[Node] = []
        todo = [root]
        while todo:
            node = todo.pop()
            order.append(node)
            todo.extend(node.children)
        for node in reversed(order):
            if not node.children:
                if node.label is None:
                    raise ValueError("leaf without label")
                memo[id(node)] = node.label
            else:
                memo[id(node)] = min(memo[id(c)] for c in node.children)
        # iterative preorder to avoid recursion limits on caterpillars
        stack: list[tuple[Node, int, int]] = [(root, -1, 0)]
        while stack:
            node, par, d = stack.pop()
            vid = len(labels)
            parent.append(par)
            depth.append(d)
            children.append(())
            if par >= 0:
                children[par] = children[par] + (vid,)
            if node.children:
                if len(node.children) == 1:
                    raise ValueError("inner vertex with a single child")
                labels.append(None)
                events.append(node.event)
                ordered = sorted(node.children, key=lambda c: memo[id(c)])
                for child in reversed(ordered):
                    stack.append((child, vid, d + 1))
            else:
                labels.append(check_label(node.label))
                events.append(None)
            clusters.append(frozenset())

        n = len(labels)
        cl: list[set[str]] = [set() for _ in range(n)]
        for v in range(n - 1, -1, -1):
            if labels[v] is not None:
                cl[v].add(labels[v])
            if parent[v] >= 0:
                cl[parent[v]].update(cl[v])
        self.children = tuple(children)
        self.parent = tuple(parent)
        self.labels = tuple(labels)
        self.events = tuple(events)
        self.clusters = tuple(frozenset(c) for c in cl)
        self.depth = tuple(depth)
        self._leaf_index = {}
        for v, lab in enumerate(labels):
            if lab is None:
                continue
            if lab in self._leaf_index:
                raise ValueError(f"duplicate leaf label {lab!r}")
            self._leaf_index[lab] = v
        self._hash = None

    # -- construction helpers ------------------------------------------------

    @classmethod
    def from_nested(cls, spec) -> Tree:
        """Build from nested tuples/lists of leaf names, e.g. ``(("a","b"),"c")``."""

        def conv(x) -> Node:
            if isinstance(x, str):
                return Node.leaf(x)
            return Node.inner([conv(c) for c in x])

        return cls(conv(spec))

    @classmethod
    def star(cls, leaves: Iterable[str]) -> Tree:
        leaves = sorted(leaves)
        if len(leaves) == 1:
            return cls(Node.leaf(leaves[0]))
        return cls(Node.inner(Node.leaf(x) for x in leaves))

    def to_node(self, v: int = 0) -> Node:
        built: dict[int, Node] = {}
        for u in reversed(self.subtree_vertices(v)):
            if self.labels[u] is not None:
                built[u] = Node.leaf(self.labels[u])
            else:
                built[u] = Node.inner((built[c] for c in self.children[u]), self.events[u])
        return built[v]

    def subtree_vertices(self, v: int = 0) -> list[int]:
        """Vertices below ``v`` (inclusive) in preorder."""
        out, stack = [], [v]
        while stack:
            u = stack.pop()
            out.append(u)
            stack.extend(reversed(self.children[u]))
        return out

    # -- basic queries --------------------------------------------------------

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def leaves(self) -> frozenset[str]:
        return self.clusters[0]

    @property
    def inner_vertices(self) -> list[int]:
        return [v for v, lab in enumerate(self.labels) if lab is None]

    def is_leaf(self, v: int) -> bool:
        return self.labels[v] is not None

    def leaf_vertex(self, label: str) -> int:
        try:
            return self._leaf_index[label]
        except KeyError:
            raise KeyError(f"unknown leaf {label!r}") from None

    def is_binary(self) -> bool:
        return all(len(ch) == 2 for ch in self.children if ch)

    def lca(self, leaves: Iterable[str]) -> int:
        """Vertex id of the least common ancestor of ``leaves``."""
        verts = [self.leaf_vertex(x) for x in leaves]
        if not verts:
            raise ValueError("lca of an empty leaf set")
        v = verts[0]
        for u in verts[1:]:
            v = self._lca2(v, u)
        return v

    def _lca2(self, u: int, v: int) -> int:
        while self.depth[u] > self.depth[v]:
            u = self.parent[u]
        while self.depth[v] > self.depth[u]:
            v = self.parent[v]
        while u != v:
            u, v = self.parent[u], self.parent[v]
        return u

    def lca_depths(self) -> dict[tuple[str, str], int]:
        """Depth of lca(x, y) for every ordered pair of distinct leaves."""
        out: dict[tuple[str, str], int] = {}
        for v in range(len(self.labels)):
            ch = self.children[v]
            for i, j in itertools.combinations(range(len(ch)), 2):
                for x in self.clusters[ch[i]]:
                    for y in self.clusters[ch[j]]:
                        out[x, y] = out[y, x] = self.depth[v]
        return out

    def hierarchy(self) -> Hierarchy:
        return hierarchy_of(self)

    # -- equality -------------------------------------------------------------

    def _key(self):
        return (self.labels, self.children, self.events)

    def __eq__(self, other) -> bool:
        return isinstance(other, Tree) and self._key() == other._key()

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(self._key())
        return self._hash

    def same_topology(self, other: Tree) -> bool:
        return self.labels == other.labels and self.children == other.children

    def strip_events(self) -> Tree:
        node = self.to_node()
        stack = [node]
        while stack:
            n = stack.pop()
            n.event = None
            stack.extend(n.children)
        return Tree(node)

    def __repr__(self) -> str:
        return f"Tree({newick_write(self, 'event' if any(self.events) else 'none')!r})"


def hierarchy_of(tree: Tree) -> Hierarchy:
    return Hierarchy(tree.leaves, tree.clusters)


class Hierarchy:
    """Laminar family of clusters containing the universe and all singletons."""

    def __init__(self, universe: Iterable[str], clusters: Iterable[Iterable[str]], complete: bool = True):
        self.universe = frozenset(universe)
        cs = {frozenset(c) for c in clusters}
        cs.discard(frozenset())
        if complete:
            cs.add(self.universe)
            cs.update(frozenset([x]) for x in self.universe)
        for c in cs:
            if not c <= self.universe:
                raise ValueError(f"cluster {sorted(c)} not inside the universe")
        self.clusters = frozenset(cs)
        pair = incompatible_pair(self.clusters)
        if pair is not None:
            p, q = pair
            raise IncompatibleClusters(p, q)

    def __len__(self) -> int:
        return len(self.clusters)

    def __iter__(self) -> Iterator[frozenset[str]]:
        return iter(sorted(self.clusters, key=lambda c: (-len(c), sorted(c))))

    def __contains__(self, c) -> bool:
        return frozenset(c) in self.clusters

    def __eq__(self, other) -> bool:
        return isinstance(other, Hierarchy) and self.clusters == other.clusters

    def __hash__(self) -> int:
        return hash(self.clusters)

    def nontrivial(self) -> list[frozenset[str]]:
        return [c for c in self if 1 < len(c) < len(self.universe)]


class IncompatibleClusters(ValueError):
    def __init__(self, p: frozenset, q: frozenset):
        self.pair = (p, q)
        super().__init__(f"incompatible clusters {sorted(p)} and {sorted(q)}")


def compatible(p: frozenset, q: frozenset) -> bool:
    inter = p & q
    return not inter or inter == p or inter == q


def incompatible_pair(clusters: Iterable[frozenset]):
    cs = sorted(clusters, key=lambda c: (len(c), sorted(c)))
    for i, p in enumerate(cs):
        for q in cs[i + 1 :]:
            if not compatible(p, q):
                return p, q
    return None


def tree_from_hierarchy(h: Hierarchy) -> Tree:
    """Rebuild the unique phylogenetic tree whose vertex clusters are ``h``."""
    if not isinstance(h, Hierarchy):
        h = Hierarchy(*h)
    # parent of a cluster = smallest strictly larger cluster containing it
    ordered = sorted(h.clusters, key=len)
    kids: dict[frozenset, list[frozenset]] = {c: [] for c in ordered}
    for i, c in enumerate(ordered):
        if c == h.universe:
            continue
        for d in ordered[i + 1 :]:
            if len(d) > len(c) and c <= d:
                kids[d].append(c)
                break

    def conv(c: frozenset) -> Node:
        if len(c) == 1:
            return Node.leaf(next(iter(c)))
        return Node.inner(conv(k) for k in kids[c])

    return Tree(conv(h.universe))


# --------------------------------------------------------------------------
# Rooted triples
# --------------------------------------------------------------------------


class Triple(NamedTuple):
    """Rooted triple (xy|z); the ingroup pair is stored sorted."""

    x: str
    y: str
    z: str

    @classmethod
    def of(cls, x: str, y: str, z: str) -> Triple:
        if x == y or y == z or x == z:
            raise ValueError(f"triple needs three distinct leaves, got {x},{y},{z}")
        return cls(x, y, z) if x < y else cls(y, x, z)

    @property
    def leaves(self) -> frozenset[str]:
        return frozenset((self.x, self.y, self.z))

    @property
    def trio(self) -> tuple[str, str, str]:
        return tuple(sorted((self.x, self.y, self.z)))

    def alternatives(self) -> tuple[Triple, Triple]:
        return Triple.of(self.x, self.z, self.y), Triple.of(self.y, self.z, self.x)

    def __str__(self) -> str:
        return f"({self.x}{self.y}|{self.z})" if max(map(len, self)) == 1 else f"({self.x},{self.y}|{self.z})"


def orientations(a: str, b: str, c: str) -> tuple[Triple, Triple, Triple]:
    """The three rooted triples on a trio, in canonical order (ab|c),(ac|b),(bc|a)."""
    a, b, c = sorted((a, b, c))
    return Triple(a, b, c), Triple(a, c, b), Triple(b, c, a)


class TripleSet:
    """Weighted set of rooted triples over a leaf universe."""

    __slots__ = ("weights", "universe")

    def __init__(self, triples: Iterable[Triple] | Mapping[Triple, float] = (), universe: Iterable[str] = ()):
        weights: dict[Triple, float] = {}
        if isinstance(triples, Mapping):
            for t, w in triples.items():
                w = float(w)
                if not w >= 0:
                    raise ValueError(f"negative weight {w} for {t}")
                t = Triple.of(*t)
                weights[t] = weights.get(t, 0.0) + w
        else:
            for t in triples:
                weights[Triple.of(*t)] = 1.0
        self.weights = weights
        leaves = set(universe)
        for t in weights:
            leaves.update(t)
        self.universe = frozenset(leaves)

    def __len__(self) -> int:
        return len(self.weights)

    def __iter__(self) -> Iterator[Triple]:
        return iter(sorted(self.weights))

    def __contains__(self, t) -> bool:
        return Triple.of(*t) in self.weights

    def __eq__(self, other) -> bool:
        if isinstance(other, TripleSet):
            return set(self.weights) == set(other.weights)
        return NotImplemented

    def __repr__(self) -> str:
        return "TripleSet({" + ", ".join(str(t) for t in self) + "})"

    def weight(self, t: Triple) -> float:
        return self.weights.get(Triple.of(*t), 0.0)

    def total_weight(self) -> float:
        return sum(self.weights.values())

    @property
    def triples(self) -> frozenset[Triple]:
        return frozenset(self.weights)

    def subset(self, keep: Iterable[Triple]) -> TripleSet:
        keep = set(keep)
        return TripleSet({t: w for t, w in self.weights.items() if t in keep}, self.universe)

    def with_universe(self, universe: Iterable[str]) -> TripleSet:
        return TripleSet(dict(self.weights), self.universe | set(universe))

    def trios(self) -> set[tuple[str, str, str]]:
        return {t.trio for t in self.weights}


def displayed_triples(tree: Tree) -> TripleSet:
    """All triples (xy|z) with lca(x,y) strictly below lca(x,y,z)."""
    depth = tree.lca_depths()
    out: list[Triple] = []
    for a, b, c in itertools.combinations(sorted(tree.leaves), 3):
        dab, dac, dbc = depth[a, b], depth[a, c], depth[b, c]
        if dab > dac:
            out.append(Triple(a, b, c))
        elif dac > dab:
            out.append(Triple(a, c, b))
        elif dbc > dab:
            out.append(Triple(b, c, a))
    return TripleSet(out, tree.leaves)


def displays(tree: Tree, t: Triple) -> bool:
    v = tree.lca((t.x, t.y))
    return t.z not in tree.clusters[v]


# --------------------------------------------------------------------------
# Newick
# --------------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(?P<punct>[(),;])|(?P<colon>:)|(?P<word>[^\s(),;:]+))")


def newick_parse(text: str) -> Tree:
    """Parse a rooted Newick string.

    Inner labels "S"/"D" become event labels; other inner labels (e.g.
    support values) and branch lengths are accepted and ignored.
    """
    pos = 0
    tokens: list[tuple[str, str, int]] = []
    n = len(text)
    while pos < n:
        m = _TOKEN.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise NewickError("unexpected character", pos)
        if m.end() == pos:
            break
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()

    i = 0
    seen: set[str] = set()

    def peek():
        return tokens[i] if i < len(tokens) else ("eof", "", len(text.encode()))

    def byte_off(char_off: int) -> int:
        return len(text[:char_off].encode())

    def parse_label_and_length() -> str | None:
        nonlocal i
        label = None
        kind, val, off = peek()
        if kind == "word":
            label = val
            i += 1
        kind, val, off = peek()
        if kind == "colon":
            i += 1
            kind, val, off = peek()
            if kind != "word":
                raise NewickError("missing branch length", byte_off(off))
            try:
                float(val)
            except ValueError:
                raise NewickError(f"bad branch length {val!r}", byte_off(off)) from None
            i += 1
        return label

    def parse_subtree(depth: int) -> Node:
        nonlocal i
        kind, val, off = peek()
        if kind == "punct" and val == "(":
            i += 1
            kids = [parse_subtree(depth + 1)]
            while True:
                kind, val, off = peek()
                if kind == "punct" and val == ",":
                    i += 1
                    kids.append(parse_subtree(depth + 1))
                elif kind == "punct" and val == ")":
                    i += 1
                    break
                else:
                    raise NewickError("unbalanced parentheses", byte_off(off))
            label = parse_label_and_length()
            event = None
            if label in ("S", "D"):
                event = Event(label)
            if len(kids) == 1:
                raise NewickError("inner vertex with a single child", byte_off(off))
            return Node.inner(kids, event)
        label = parse_label_and_length()
        if label is None:
            raise NewickError("empty leaf name", byte_off(off))
        if label in seen:
            raise NewickError(f"duplicate leaf label {label!r}", byte_off(off))
        seen.add(label)
        return Node.leaf(label)

    root = parse_subtree(0)
    kind, val, off = peek()
    if kind == "punct" and val == ")":
        raise NewickError("unbalanced parentheses", byte_off(off))
    if not (kind == "punct" and val == ";"):
        raise NewickError("expected ';'", byte_off(off))
    i += 1
    if i != len(tokens):
        raise NewickError("trailing characters after ';'", byte_off(tokens[i][2]))
    try:
        return Tree(root)
    except ValueError as exc:
        raise NewickError(str(exc), 0) from None


def newick_write(tree: Tree, label_mode: str = "none", supports: Mapping[frozenset, float] | None = None) -> str:
    """Serialize in canonical child order.

    ``label_mode`` is ``none``, ``event`` (S/D inner labels) or ``support``
    (``supports`` maps an inner cluster to a value written with 3 decimals).
    """
    if label_mode not in ("none", "event", "support"):
        raise ValueError(f"unknown label mode {label_mode!r}")
    parts: list[str] = []
    # explicit stack: ("open", v) emits a subtree, ("close", v) its inner label
    stack: list[tuple[str, int]] = [("open", 0)]
    while stack:
        action, v = stack.pop()
        if action == "sep":
            parts.append(",")
        elif action == "close":
            parts.append(")")
            if label_mode == "event" and tree.events[v] is not None:
                parts.append(tree.events[v].value)
            elif label_mode == "support" and supports is not None:
                value = supports.get(tree.clusters[v])
                if value is not None:
                    parts.append(f"{value:.3f}")
        elif tree.labels[v] is not None:
            parts.append(tree.labels[v])
        else:
            parts.append("(")
            stack.append(("close", v))
            kids = tree.children[v]
            for k in range(len(kids) - 1, -1, -1):
                stack.append(("open", kids[k]))
                if k:
                    stack.append(("sep", v))
    return "".join(parts) + ";"


# --------------------------------------------------------------------------
# TSV helpers
# --------------------------------------------------------------------------


def _data_lines(path: str | Path) -> Iterator[tuple[int, list[str]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line.split("\t")


def read_species_map(path: str | Path) -> dict[str, str]:
    """Read ``gene<TAB>species`` lines."""
    sigma: dict[str, str] = {}
    for lineno, cols in _data_lines(path):
        if len(cols) != 2:
            raise InputError(f"expected 2 columns, got {len(cols)}", str(path), lineno)
        gene, species = (c.strip() for c in cols)
        try:
            check_label(gene)
            check_label(species)
        except ValueError as exc:
            raise InputError(str(exc), str(path), lineno) from None
        if gene in sigma and sigma[gene] != species:
            raise InputError(f"gene {gene} mapped to two species", str(path), lineno)
        sigma[gene] = species
    return sigma


def write_species_map(path: str | Path, sigma: Mapping[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for gene in sorted(sigma):
            fh.write(f"{gene}\t{sigma[gene]}\n")


def read_triples(path: str | Path) -> TripleSet:
    """Read ``alpha<TAB>beta<TAB>gamma<TAB>weight`` rows meaning (alpha beta|gamma)."""
    weights: dict[Triple, float] = {}
    for lineno, cols in _data_lines(path):
        if len(cols) not in (3, 4):
            raise InputError(f"expected 3 or 4 columns, got {len(cols)}", str(path), lineno)
        try:
            t = Triple.of(*(check_label(c.strip()) for c in cols[:3]))
            w = float(cols[3]) if len(cols) == 4 else 1.0
        except ValueError as exc:
            raise InputError(str(exc), str(path), lineno) from None
        if w < 0:
            raise InputError(f"negative weight {w}", str(path), lineno)
        weights[t] = weights.get(t, 0.0) + w
    return TripleSet(weights)


def format_weight(w: float) -> str:
    return str(int(w)) if float(w).is_integer() else repr(float(w))


def write_triples(path: str | Path, triples: TripleSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triples:
            fh.write(f"{t.x}\t{t.y}\t{t.z}\t{format_weight(triples.weights[t])}\n")


# --------------------------------------------------------------------------
# Event-labeled gene trees
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EventLabeledTree:
    """Gene tree with speciation/duplication labels on inner vertices and
    the gene-to-species map of its leaves."""

    tree: Tree
    species: Mapping[str, str]

    def __post_init__(self):
        missing = [g for g in self.tree.leaves if g not in self.species]
        if missing:
            raise ValueError(f"genes without species: {sorted(missing)}")
        for v in self.tree.inner_vertices:
            if self.tree.events[v] is None:
                raise ValueError("inner vertex without event label")

    @property
    def genes(self) -> frozenset[str]:
        return self.tree.leaves

    def event_of_lca(self, a: str, b: str) -> Event:
        return self.tree.events[self.tree.lca((a, b))]

    def orthologs(self) -> set[tuple[str, str]]:
        """Gene pairs whose lca is a speciation (sorted pairs)."""
        t = self.tree
        out: set[tuple[str, str]] = set()
        for v in t.inner_vertices:
            if t.events[v] is not Event.SPECIATION:
                continue
            ch = t.children[v]
            for i, j in itertools.combinations(range(len(ch)), 2):
                for x in t.clusters[ch[i]]:
                    for y in t.clusters[ch[j]]:
                        out.add((x, y) if x < y else (y, x))
        return out

    def is_discriminating(self) -> bool:
        t = self.tree
        return all(t.events[c] != t.events[v] for v in t.inner_vertices for c in t.children[v] if not t.is_leaf(c))

    def newick(self) -> str:
        return newick_write(self.tree, "event")
