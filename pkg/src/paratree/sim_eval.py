"""Simulated duplication/loss histories, orthology noise, tree distances,
bootstrapping and majority-rule consensus."""

from __future__ import annotations

import functools
import itertools
import logging
import math
import random
from collections.abc import Callable, Iterable, Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from paratree.cograph import OrthologyEstimate, pair
from paratree.model import (
    Event,
    EventLabeledTree,
    Hierarchy,
    Node,
    Tree,
    Triple,
    TripleSet,
    displayed_triples,
    tree_from_hierarchy,
)

log = logging.getLogger(__name__)

# --------------------------------------------------------------------------
# Species trees
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SpeciesHistory:
    """Ultrametric species tree; ``length[v]`` is the edge above vertex v
    (the root's entry is its stem)."""

    tree: Tree
    length: tuple[float, ...]

    @property
    def edges(self) -> list[int]:
        return [v for v in range(len(self.tree)) if v != 0]


def species_names(n: int) -> list[str]:
    width = len(str(n - 1))
    return [f"sp{i:0{width}d}" for i in range(n)]


def _coalesce(rng: random.Random, labels: Sequence[str]) -> tuple[Node, dict[int, float]]:
    """Random sequential binary coalescence; returns the root and node
    heights keyed by ``id(node)``."""
    live = [Node.leaf(s) for s in labels]
    height = {id(x): 0.0 for x in live}
    t = 0.0
    while len(live) > 1:
        k = len(live)
        t += rng.expovariate(k * (k - 1) / 2)
        i, j = sorted(rng.sample(range(k), 2))
        b = live.pop(j)
        a = live.pop(i)
        v = Node.inner([a, b])
        height[id(v)] = t
        live.append(v)
    return live[0], height


def yule_tree(n: int, rng: random.Random, labels: Sequence[str] | None = None) -> Tree:
    labels = list(labels) if labels is not None else species_names(n)
    return Tree(_coalesce(rng, labels)[0])


def yule_history(n: int, rng: random.Random, height: float = 1.0, stem: float = 0.0, labels=None) -> SpeciesHistory:
    labels = list(labels) if labels is not None else species_names(n)
    root, h = _coalesce(rng, labels)
    top = h[id(root)] or 1.0
    by_cluster: dict[frozenset[str], float] = {}
    stack = [root]
    while stack:
        v = stack.pop()
        by_cluster[_leafset(v)] = h[id(v)] * height / top
        stack.extend(v.children)
    tree = Tree(root)
    lengths = []
    for v in range(len(tree)):
        if v == 0:
            lengths.append(stem)
        else:
            p = tree.parent[v]
            lengths.append(by_cluster[tree.clusters[p]] - by_cluster[tree.clusters[v]])
    return SpeciesHistory(tree, tuple(lengths))


def _leafset(v: Node) -> frozenset[str]:
    out = set()
    stack = [v]
    while stack:
        x = stack.pop()
        if not x.children:
            out.add(x.label)
        stack.extend(x.children)
    return frozenset(out)


# --------------------------------------------------------------------------
# Gene families
# --------------------------------------------------------------------------


@dataclass
class SimConfig:
    species: int | SpeciesHistory = 10
    families: int = 100
    duplication: float = 1.0
    loss: float = 0.5
    loss_increment: float = 0.1
    height: float = 1.0
    stem: float = 0.0
    max_family: int = 400
    seed: int = 0

    def __post_init__(self):
        for name in ("duplication", "loss", "loss_increment", "height", "stem"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if isinstance(self.species, int) and self.species < 3:
            raise ValueError("need at least 3 species")
        if self.families < 1:
            raise ValueError("need at least one family")


@dataclass
class Simulation:
    history: SpeciesHistory
    families: list[EventLabeledTree]
    orthology: OrthologyEstimate
    duplications: list[int] = field(default_factory=list)

    @property
    def species_tree(self) -> Tree:
        return self.history.tree

    @property
    def species(self) -> dict[str, str]:
        return dict(self.orthology.species)


class SimulationError(RuntimeError):
    pass


def _evolve(hist: SpeciesHistory, cfg: SimConfig, rng: random.Random) -> tuple[Node | None, int, int]:
    """One family along the species tree.  Returns (pruned gene tree root,
    number of duplications, number of surviving genes)."""
    st = hist.tree
    root = Node()
    lost: set[int] = set()
    # lineage: (species vertex below the edge, time left on edge, loss rate, node to fill)
    work = [(0, hist.length[0], cfg.loss, root)]
    dups = 0
    genes = 0
    while work:
        v, left, loss, node = work.pop()
        rate = cfg.duplication + loss
        t = rng.expovariate(rate) if rate > 0 else math.inf
        if t < left:
            if rng.random() * rate < cfg.duplication:
                dups += 1
                node.event = Event.DUPLICATION
                a, b = Node(), Node()
                node.children = [a, b]
                work.append((v, left - t, loss + cfg.loss_increment, b))
                work.append((v, left - t, loss + cfg.loss_increment, a))
            else:
                lost.add(id(node))
            continue
        if st.is_leaf(v):
            node.label = st.labels[v]
            genes += 1
            if genes > cfg.max_family:
                return None, dups, genes
            continue
        node.event = Event.SPECIATION
        kids = [Node() for _ in st.children[v]]
        node.children = kids
        for c, k in zip(reversed(st.children[v]), reversed(kids)):
            work.append((c, hist.length[c], loss, k))
    return _prune(root, lost), dups, genes


def _prune(root: Node, lost: set[int]) -> Node | None:
    """Drop lost lineages and suppress the resulting unary vertices."""
    order = []
    stack = [root]
    while stack:
        v = stack.pop()
        order.append(v)
        stack.extend(v.children)
    keep: dict[int, Node | None] = {}
    for v in reversed(order):
        if not v.children:
            keep[id(v)] = None if id(v) in lost else v
            continue
        kids = [keep[id(c)] for c in v.children]
        kids = [c for c in kids if c is not None]
        if not kids:
            keep[id(v)] = None
        elif len(kids) == 1:
            keep[id(v)] = kids[0]
        else:
            keep[id(v)] = Node(None, kids, v.event)
    return keep[id(root)]


def simulate(cfg: SimConfig) -> Simulation:
    """Species tree, gene families with exact event labels, and the exact
    orthology relation.  Families that die out are redrawn, up to ten
    times the requested count."""
    rng = random.Random(cfg.seed)
    if isinstance(cfg.species, SpeciesHistory):
        hist = cfg.species
    else:
        hist = yule_history(cfg.species, rng, cfg.height, cfg.stem)
    families: list[EventLabeledTree] = []
    dup_counts: list[int] = []
    weights: dict[tuple[str, str], float] = {}
    sigma: dict[str, str] = {}
    attempts = 0
    while len(families) < cfg.families:
        attempts += 1
        if attempts > 10 * cfg.families:
            raise SimulationError(
                f"only {len(families)} of {cfg.families} families survived after {attempts - 1} draws"
            )
        root, dups, _ = _evolve(hist, cfg, rng)
        if root is None:
            continue
        f = len(families)
        # rename genes family-wise in preorder
        k = 0
        stack = [root]
        while stack:
            v = stack.pop()
            if not v.children:
                sp = v.label
                v.label = f"f{f:04d}g{k:03d}"
                sigma[v.label] = sp
                k += 1
            stack.extend(reversed(v.children))
        tree = Tree(root)
        fam = EventLabeledTree(tree, {g: sigma[g] for g in tree.leaves})
        families.append(fam)
        dup_counts.append(dups)
        for a, b in fam.orthologs():
            weights[a, b] = 1.0
    est = OrthologyEstimate(frozenset(sigma), weights, sigma)
    return Simulation(hist, families, est, dup_counts)


def expected_duplications(hist: SpeciesHistory, rate: float, families: int) -> list[float]:
    """Expected duplications per species-tree edge summed over families,
    counting a single lineage per edge."""
    return [rate * hist.length[v] * families for v in hist.edges]


def tuned_history(
    n: int, families: int, rng: random.Random, base_rate: float = 1.0, max_rate: float = 2.0, tries: int = 1000
) -> tuple[SpeciesHistory, float]:
    """A Yule history and the smallest rate >= ``base_rate`` giving every
    edge at least one expected duplication over all families.  Trees
    whose shortest edge would need more than ``max_rate`` are redrawn."""
    for _ in range(tries):
        hist = yule_history(n, rng)
        shortest = min(hist.length[v] for v in hist.edges)
        rate = max(base_rate, 1.0 / (families * shortest)) if shortest > 0 else math.inf
        if rate <= max_rate:
            return hist, rate
    raise SimulationError(f"no species tree within {tries} draws supports rate <= {max_rate}")


# --------------------------------------------------------------------------
# Noise
# --------------------------------------------------------------------------

NOISE_MODELS = ("homologous", "orthologous", "paralogous", "xenologous")
_NOISE_ALIASES = {"i": "homologous", "ii": "orthologous", "iii": "paralogous", "iv": "xenologous"}


@dataclass(frozen=True)
class NoiseSpec:
    model: str
    p: float
    seed: int = 0

    def __post_init__(self):
        model = _NOISE_ALIASES.get(self.model, self.model)
        if model not in NOISE_MODELS:
            raise ValueError(f"unknown noise model {self.model!r}")
        object.__setattr__(self, "model", model)
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"noise probability {self.p} outside [0, 1]")


def add_noise(
    g: OrthologyEstimate,
    spec: NoiseSpec,
    groups: Iterable[Iterable[str]] | None = None,
) -> OrthologyEstimate:
    """Perturb an orthology relation.  Pair-level models only touch pairs
    inside one of ``groups`` (default: all genes form one group)."""
    rng = random.Random(spec.seed)
    p = spec.p
    sigma = dict(g.species)
    edges = {e for e, w in g.weights.items() if w >= 0.5}

    if spec.model == "xenologous":
        all_species = sorted(set(sigma.values()))
        for gene in sorted(g.genes):
            if rng.random() < p and len(all_species) > 1:
                others = [s for s in all_species if s != sigma[gene]]
                sigma[gene] = rng.choice(others)
        return OrthologyEstimate(g.genes, dict(g.weights), sigma)

    if groups is None:
        groups = [g.genes]
    out = set(edges)
    for grp in groups:
        for a, b in itertools.combinations(sorted(grp), 2):
            e = (a, b)
            cross = sigma[a] != sigma[b]
            present = e in edges
            if spec.model == "homologous":
                if rng.random() < p:
                    if present:
                        out.discard(e)
                    elif cross:
                        out.add(e)
            elif spec.model == "orthologous":
                if not present and cross and rng.random() < p:
                    out.add(e)
            elif spec.model == "paralogous":
                if present and rng.random() < p:
                    out.discard(e)
    return OrthologyEstimate(g.genes, {e: 1.0 for e in out}, sigma)


# --------------------------------------------------------------------------
# Distances
# --------------------------------------------------------------------------

METRICS = ("MC", "RF", "NS", "TT")


@dataclass(frozen=True)
class DistanceReport:
    raw: dict[str, float]
    normalized: dict[str, float] | None = None

    def rows(self) -> list[tuple[str, float, float | None]]:
        norm = self.normalized or {}
        return [(m, self.raw[m], norm.get(m)) for m in METRICS]


class LeafMismatch(ValueError):
    pass


def _check_leaves(t1: Tree, t2: Tree) -> None:
    if t1.leaves != t2.leaves:
        only1 = sorted(t1.leaves - t2.leaves)
        only2 = sorted(t2.leaves - t1.leaves)
        raise LeafMismatch(f"leaf sets differ: only in first {only1}, only in second {only2}")


def _nontrivial(t: Tree) -> list[frozenset[str]]:
    n = len(t.leaves)
    return sorted({c for c in t.clusters if 1 < len(c) < n}, key=lambda c: (len(c), sorted(c)))


def matching_cluster(t1: Tree, t2: Tree) -> float:
    c1, c2 = _nontrivial(t1), _nontrivial(t2)
    k = max(len(c1), len(c2))
    if k == 0:
        return 0.0
    cost = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            if i < len(c1) and j < len(c2):
                cost[i, j] = len(c1[i] ^ c2[j])
            elif i < len(c1):
                cost[i, j] = len(c1[i])
            elif j < len(c2):
                cost[i, j] = len(c2[j])
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].sum())


def robinson_foulds(t1: Tree, t2: Tree) -> float:
    return len(set(t1.clusters) ^ set(t2.clusters)) / 2


def _path_matrix(t: Tree, leaves: Sequence[str]) -> np.ndarray:
    depth = t.lca_depths()
    leafdepth = {x: t.depth[t.leaf_vertex(x)] for x in leaves}
    n = len(leaves)
    m = np.zeros((n, n))
    for i, x in enumerate(leaves):
        for j, y in enumerate(leaves):
            if i != j:
                d = depth[x, y] if (x, y) in depth else depth[y, x]
                m[i, j] = leafdepth[x] - d
    return m


def nodal_splitted(t1: Tree, t2: Tree) -> float:
    leaves = sorted(t1.leaves)
    return float(np.linalg.norm(_path_matrix(t1, leaves) - _path_matrix(t2, leaves)))


def triple_distance(t1: Tree, t2: Tree) -> float:
    r1, r2 = set(displayed_triples(t1).weights), set(displayed_triples(t2).weights)
    return float(len({t.trio for t in r1 ^ r2}))


def raw_distances(t1: Tree, t2: Tree) -> dict[str, float]:
    _check_leaves(t1, t2)
    return {
        "MC": matching_cluster(t1, t2),
        "RF": robinson_foulds(t1, t2),
        "NS": nodal_splitted(t1, t2),
        "TT": triple_distance(t1, t2),
    }


@functools.lru_cache(maxsize=None)
def yule_normalizer(n_leaves: int, samples: int = 1000, seed: int = 0) -> dict[str, float]:
    """Mean distance between independent random Yule trees."""
    if n_leaves < 3:
        raise ValueError("normalization needs at least 3 leaves")
    rng = random.Random(seed)
    labels = species_names(n_leaves)
    sums = dict.fromkeys(METRICS, 0.0)
    for _ in range(samples):
        a, b = yule_tree(n_leaves, rng, labels), yule_tree(n_leaves, rng, labels)
        for m, v in raw_distances(a, b).items():
            sums[m] += v
    return {m: sums[m] / samples for m in METRICS}


def tree_distance(t1: Tree, t2: Tree, normalize: bool = False, samples: int = 1000, seed: int = 0) -> DistanceReport:
    raw = raw_distances(t1, t2)
    if not normalize:
        return DistanceReport(raw)
    # the normalizer is keyed by leaf count, so relabel-free constants apply
    const = yule_normalizer(len(t1.leaves), samples, seed)
    norm = {m: (raw[m] / const[m] if const[m] > 0 else 0.0) for m in METRICS}
    return DistanceReport(raw, norm)


# --------------------------------------------------------------------------
# Consensus and bootstrap
# --------------------------------------------------------------------------


def majority_consensus(trees: Sequence[Tree]) -> Tree:
    """Clusters present in more than half of ``trees``."""
    if not trees:
        raise ValueError("no trees to summarize")
    leaves = trees[0].leaves
    for t in trees[1:]:
        _check_leaves(trees[0], t)
    counts: dict[frozenset[str], int] = {}
    for t in trees:
        for c in set(t.clusters):
            counts[c] = counts.get(c, 0) + 1
    keep = [c for c, k in counts.items() if 2 * k > len(trees)]
    return tree_from_hierarchy(Hierarchy(leaves, keep))


def cluster_frequencies(trees: Sequence[Tree]) -> dict[frozenset[str], float]:
    counts: dict[frozenset[str], int] = {}
    for t in trees:
        for c in set(t.clusters):
            counts[c] = counts.get(c, 0) + 1
    return {c: k / len(trees) for c, k in counts.items()}


SCHEMES = ("components", "triples")


@dataclass(frozen=True)
class BootstrapJob:
    components: tuple[frozenset[Triple], ...]
    universe: frozenset[str]
    scheme: str
    seed: int
    mode: str
    node_limit: int | None = None
    time_limit: float | None = None


def _replicate_triples(job: BootstrapJob) -> TripleSet:
    rng = random.Random(job.seed)
    comps = job.components
    if job.scheme == "components":
        counts: dict[Triple, float] = {}
        for _ in range(len(comps)):
            for t in comps[rng.randrange(len(comps))]:
                counts[t] = counts.get(t, 0.0) + 1.0
        return TripleSet(counts, job.universe)
    base: dict[Triple, float] = {}
    for c in comps:
        for t in c:
            base[t] = base.get(t, 0.0) + 1.0
    ts = sorted(base)
    n = int(round(sum(base.values())))
    counts = {}
    if ts:
        for t in rng.choices(ts, weights=[base[t] for t in ts], k=n):
            counts[t] = counts.get(t, 0.0) + 1.0
    return TripleSet(counts, job.universe)


def run_replicate(job: BootstrapJob) -> Tree:
    from paratree.species_tree import least_resolved_tree, tree_budget
    from paratree.triples import max_consistent_subset

    s = _replicate_triples(job)
    if len(s) == 0 or len(job.universe) < 3:
        return Tree.star(sorted(job.universe))
    sub = max_consistent_subset(s, time_limit=job.time_limit, node_limit=job.node_limit)
    sstar = sub.sstar.with_universe(job.universe)
    res = least_resolved_tree(sstar, job.mode, s, job.time_limit, tree_budget(job.node_limit))
    return res.tree


def bootstrap(
    components: Sequence[Iterable[Triple]],
    universe: Iterable[str],
    scheme: str = "components",
    replicates: int = 100,
    seed: int = 0,
    mode: str = "min-vertices",
    threads: int = 1,
    node_limit: int | None = None,
    time_limit: float | None = None,
) -> list[Tree]:
    """Species trees from resampled input: whole components drawn with
    replacement, or single triples drawn by relative weight.  Replicate i
    uses seed ``seed + i``."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown bootstrap scheme {scheme!r}")
    comps = tuple(frozenset(c) for c in components)
    uni = frozenset(universe)
    jobs = [BootstrapJob(comps, uni, scheme, seed + i, mode, node_limit, time_limit) for i in range(replicates)]
    return parallel_map(run_replicate, jobs, threads)


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """``map`` over a process pool; results keep input order."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * threads))))
