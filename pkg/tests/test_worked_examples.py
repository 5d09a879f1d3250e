"""Small hand-checked cases for every stage, plus a few end-to-end traces."""

from __future__ import annotations

import itertools
import random
import statistics

import pytest

from paratree import ilp
from paratree.cograph import (
    OrthologyEstimate,
    cograph_edit,
    connected_components,
    cotree,
    editing_model,
    find_p4,
)
from paratree.model import Event, Triple, TripleSet, newick_parse
from paratree.pipeline import EXIT_NO_SIGNAL, PipelineConfig, reconstruct, run_dataset, run_experiment
from paratree.sim_eval import (
    NoiseSpec,
    SimConfig,
    add_noise,
    majority_consensus,
    raw_distances,
    simulate,
    tree_distance,
    yule_normalizer,
    yule_tree,
    species_names,
)
from paratree.species_tree import decode_matrix, least_resolved_tree
from paratree.triples import aho_graph, extract_species_triples, max_consistent_subset
from paratree.model import EventLabeledTree, displayed_triples


def T(s: str) -> Triple:
    xy, z = s.split("|")
    return Triple.of(xy[0], xy[1], z)


def est(edges, genes, species=None):
    species = species or {g: g.upper() for g in genes}
    return OrthologyEstimate.from_pairs(edges, species, genes)


def adj_of(edges, vertices):
    adj = {v: set() for v in vertices}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    return adj


# --------------------------------------------------------------------------
# graphs
# --------------------------------------------------------------------------


def test_component_examples():
    assert len(connected_components(est([("a", "b"), ("c", "d")], "abcd"))) == 2
    assert len(connected_components(est([], "abc"))) == 3
    assert len(connected_components(est([("a", "b"), ("b", "c")], "abc"))) == 1


def test_p4_examples():
    assert find_p4(adj_of([("a", "b"), ("b", "c"), ("c", "d")], "abcd")) in (("a", "b", "c", "d"), ("d", "c", "b", "a"))
    assert find_p4(adj_of(itertools.combinations("abcd", 2), "abcd")) is None
    assert find_p4(adj_of([("a", "b"), ("b", "c"), ("c", "d"), ("d", "a")], "abcd")) is None


def test_editing_examples():
    assert cograph_edit(est([("a", "b"), ("b", "c"), ("c", "d")], "abcd")).cost == 1
    clique = est(list(itertools.combinations("abc", 2)), "abc")
    res = cograph_edit(clique)
    assert res.cost == 0 and not res.inserted and not res.deleted
    same = est([("x", "y", 0.8)], "xy", {"x": "S", "y": "S"})
    res = cograph_edit(same)
    assert res.deleted == [("x", "y")]
    assert res.cost == pytest.approx(0.8)


def test_cotree_examples():
    sp = {g: g.upper() for g in "abc"}
    t = cotree(adj_of(itertools.combinations("abc", 2), "abc"), sp).tree
    assert len(t.inner_vertices) == 1 and t.events[0] is Event.SPECIATION
    t = cotree(adj_of([], "ab"), sp).tree
    assert t.events[0] is Event.DUPLICATION
    t = cotree(adj_of([("a", "b")], "abc"), sp).tree
    assert t.events[0] is Event.DUPLICATION
    kids = {frozenset(t.clusters[c]): c for c in t.children[0]}
    assert set(kids) == {frozenset("c"), frozenset("ab")}
    assert t.events[kids[frozenset("ab")]] is Event.SPECIATION


# --------------------------------------------------------------------------
# triples
# --------------------------------------------------------------------------


def test_extraction_examples():
    sp = {"a": "A", "b": "B", "c": "C"}
    t = EventLabeledTree(newick_parse("((a,b)D,c)S;"), sp)
    assert set(extract_species_triples(t).weights) == {T("AB|C")}
    t = EventLabeledTree(newick_parse("(a,b,c)S;"), sp)
    assert len(extract_species_triples(t)) == 0
    t = EventLabeledTree(newick_parse("((a,b)S,c)S;"), {"a": "A", "b": "A", "c": "C"})
    assert len(extract_species_triples(t)) == 0


def test_aho_graph_examples():
    assert aho_graph([T("ab|c")], "abc").edges == {("a", "b")}
    assert aho_graph([T("ab|c")], "ab").edges == frozenset()
    assert aho_graph([T("ab|c"), T("cd|b")], "abcd").edges == {("a", "b"), ("c", "d")}


def test_subset_examples():
    s = TripleSet({T("ab|c"): 2, T("bc|a"): 1}, "abc")
    assert set(max_consistent_subset(s).sstar.weights) == {T("ab|c")}
    trio = TripleSet([T("ab|c"), T("ac|b"), T("bc|a")], "abc")
    picks = {frozenset(max_consistent_subset(trio).sstar.weights) for _ in range(3)}
    assert len(picks) == 1
    assert len(next(iter(picks))) == 1


def test_tree_examples():
    res = least_resolved_tree(TripleSet([T("ab|c")], "abc"), "min-triples", force_ilp=True)
    assert res.tree == newick_parse("((a,b),c);")
    for mode in ("min-vertices", "min-triples", "build"):
        assert least_resolved_tree(TripleSet([T("ab|c")], "abc"), mode).inner_vertices == 2
    s = TripleSet([T("ab|c"), T("ab|d")], "abcd")
    for mode in ("min-vertices", "min-triples"):
        res = least_resolved_tree(s, mode, force_ilp=True)
        assert res.tree == newick_parse("((a,b),c,d);")
    assert decode_matrix([[0, 0]] * 4, "abcd") == newick_parse("(a,b,c,d);")
    assert decode_matrix([[1, 0], [1, 0], [0, 0], [0, 0]], "abcd") == newick_parse("((a,b),c,d);")


# --------------------------------------------------------------------------
# solver and LP export
# --------------------------------------------------------------------------


def test_solver_examples():
    m = ilp.Model()
    x = m.add_var("x")
    m.add_constraint({x: 1}, "<=", 1)
    m.set_objective({x: 1}, "max")
    out = ilp.solve(m)
    assert out.assignment == {"x": 1} and out.objective == 1
    m.add_constraint({x: 1}, "<=", 0)
    m.add_constraint({x: 1}, ">=", 1)
    assert ilp.solve(m).status == ilp.INFEASIBLE
    p4, _ = editing_model(est([("a", "b"), ("b", "c"), ("c", "d")], "abcd"))
    assert ilp.solve(p4).objective == 1


def test_k3_editing_model_size():
    m, pairs = editing_model(est(list(itertools.combinations("abc", 2)), "abc"))
    assert m.num_vars == 3 and len(pairs) == 3
    assert m.num_constraints == 0
    assert "Binary" in ilp.export_lp(m)


# --------------------------------------------------------------------------
# simulation and noise
# --------------------------------------------------------------------------


def test_no_duplication_gives_cliques_and_no_triples():
    sim = simulate(SimConfig(species=6, families=10, duplication=0.0, seed=5))
    for fam in sim.families:
        genes = sorted(fam.genes)
        assert all(sim.orthology.weight(a, b) == 1.0 for a, b in itertools.combinations(genes, 2))
    rec = reconstruct(sim.orthology, PipelineConfig(time_limit=None))
    assert len(rec.triples) == 0
    assert rec.no_signal


def test_orthology_matches_lca_events():
    sim = simulate(SimConfig(species=5, families=15, duplication=1.5, loss=0.0, seed=8))
    assert sum(sim.duplications) > 0
    for fam in sim.families:
        for a, b in itertools.combinations(sorted(fam.genes), 2):
            want = fam.event_of_lca(a, b) is Event.SPECIATION
            assert (sim.orthology.weight(a, b) == 1.0) == want


def test_noise_extremes():
    sim = simulate(SimConfig(species=5, families=8, seed=6))
    groups = [f.genes for f in sim.families]
    g = sim.orthology
    assert len(add_noise(g, NoiseSpec("iii", 1.0), groups).weights) == 0
    full = add_noise(g, NoiseSpec("ii", 1.0), groups)
    for grp in groups:
        for a, b in itertools.combinations(sorted(grp), 2):
            assert (full.weight(a, b) == 1.0) == (g.species[a] != g.species[b])


# --------------------------------------------------------------------------
# distances
# --------------------------------------------------------------------------


def test_distance_examples():
    t = newick_parse("(((a,b),c),(d,e));")
    assert raw_distances(t, t) == {"MC": 0, "RF": 0, "NS": 0, "TT": 0}
    assert raw_distances(newick_parse("(a,b,c);"), newick_parse("((a,b),c);"))["TT"] == 1
    assert raw_distances(newick_parse("((a,b),c,d);"), newick_parse("((a,b),(c,d));"))["RF"] == 0.5


def test_yule_pairs_normalize_to_about_one():
    n = 8
    norm = yule_normalizer(n)
    assert yule_normalizer(n) == norm
    rng = random.Random(99)
    labels = species_names(n)
    sums = dict.fromkeys(norm, 0.0)
    for _ in range(200):
        rep = tree_distance(yule_tree(n, rng, labels), yule_tree(n, rng, labels), normalize=True)
        for m, v in rep.normalized.items():
            sums[m] += v
    for m, s in sums.items():
        assert abs(s / 200 - 1.0) <= 0.1, m


def test_consensus_examples():
    t = newick_parse("((a,b),c);")
    assert majority_consensus([t, t]) == t
    three = [newick_parse(s) for s in ("((a,b),c);", "((a,c),b);", "((b,c),a);")]
    assert majority_consensus(three) == newick_parse("(a,b,c);")
    assert majority_consensus([t, t, newick_parse("(a,b,c);")]) == t


def test_bootstrap_replicates_stay_inside_point_tree():
    from paratree.sim_eval import bootstrap

    sim = simulate(SimConfig(species=6, families=30, seed=3))
    rec = reconstruct(sim.orthology, PipelineConfig(time_limit=None))
    point = set(displayed_triples(rec.tree).weights)
    for scheme in ("components", "triples"):
        for tree in bootstrap(rec.component_triples, rec.triples.universe, scheme, replicates=10, seed=4):
            assert set(displayed_triples(tree).weights) <= point


# --------------------------------------------------------------------------
# end to end
# --------------------------------------------------------------------------


def test_three_gene_trace():
    sp = {"a": "A", "b": "B", "c": "C"}
    rec = reconstruct(OrthologyEstimate.from_pairs([("a", "c"), ("b", "c")], sp), PipelineConfig(time_limit=None))
    (g,) = rec.gene_trees
    assert g.tree.events[0] is Event.SPECIATION
    assert set(rec.triples.weights) == {T("AB|C")}
    assert rec.tree == newick_parse("((A,B),C);")


def test_clique_input_gives_star_and_exit_two(tmp_path):
    from paratree.pipeline import run_pipeline

    sp = {g: g.upper() for g in "abcd"}
    e = OrthologyEstimate.from_pairs(itertools.combinations("abcd", 2), sp)
    code, rec = run_pipeline(PipelineConfig(out=str(tmp_path)), e)
    assert code == EXIT_NO_SIGNAL
    assert rec.tree == newick_parse("(A,B,C,D);")


def test_rerun_is_byte_identical(tmp_path):
    from paratree.pipeline import run_pipeline

    sim = simulate(SimConfig(species=5, families=15, seed=2))
    for name in ("a", "b"):
        run_pipeline(PipelineConfig(out=str(tmp_path / name), time_limit=None), sim.orthology)
    for p in sorted((tmp_path / "a").iterdir()):
        if p.name != "timings.json":
            assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_experiment_grid_shape():
    cfg = PipelineConfig(time_limit=None, component_limit=16, node_limit=5000)
    rows = run_experiment([10], [100], [None], 20, 0, cfg)
    tt = [r for r in rows if r["metric"] == "TT"]
    assert len(tt) == 20
    assert all(r["normalized"] >= 0 and r["raw"] >= 0 for r in rows)


def test_zero_noise_reproduces_noise_free_run():
    cfg = PipelineConfig(time_limit=None)
    a = run_dataset(6, 30, None, 4, cfg)["distance"]
    b = run_dataset(6, 30, NoiseSpec("ii", 0.0, 7), 4, cfg)["distance"]
    assert a == b
