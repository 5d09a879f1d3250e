from __future__ import annotations

import itertools
import math
import random

import pytest

from paratree.model import Event, displayed_triples, newick_parse
from paratree.sim_eval import (
    LeafMismatch,
    NoiseSpec,
    SimConfig,
    add_noise,
    bootstrap,
    cluster_frequencies,
    majority_consensus,
    matching_cluster,
    nodal_splitted,
    raw_distances,
    robinson_foulds,
    simulate,
    species_names,
    tree_distance,
    triple_distance,
    tuned_history,
    yule_history,
    yule_normalizer,
    yule_tree,
)
from paratree.triples import accumulate

from oracles import labels, random_tree


def test_species_names_are_padded():
    assert species_names(3) == ["sp0", "sp1", "sp2"]
    assert species_names(12)[0] == "sp00"


def test_yule_history_is_ultrametric():
    rng = random.Random(0)
    for n in (3, 7, 15):
        h = yule_history(n, rng, height=2.0, stem=0.5)
        t = h.tree
        assert t.is_binary()
        assert h.length[0] == 0.5
        for leaf in t.leaves:
            v, total = t.leaf_vertex(leaf), 0.0
            while v != 0:
                total += h.length[v]
                v = t.parent[v]
            assert total == pytest.approx(2.0)
        assert all(h.length[v] >= 0 for v in h.edges)


def test_simulation_without_events_copies_species_tree():
    sim = simulate(SimConfig(species=6, families=5, duplication=0.0, loss=0.0, loss_increment=0.0, seed=3))
    for fam in sim.families:
        mapped = {frozenset(fam.species[g] for g in c) for c in fam.tree.clusters}
        assert mapped == set(sim.species_tree.clusters)
        assert len(fam.genes) == 6
        assert all(e is Event.SPECIATION for e in fam.tree.events if e is not None)
    assert sim.duplications == [0] * 5
    # every cross-species pair within a family is orthologous
    assert len(sim.orthology.weights) == 5 * 15


def test_simulation_is_reproducible():
    a = simulate(SimConfig(species=5, families=20, seed=11))
    b = simulate(SimConfig(species=5, families=20, seed=11))
    assert a.species_tree == b.species_tree
    assert [f.tree for f in a.families] == [f.tree for f in b.families]
    assert a.orthology == b.orthology
    c = simulate(SimConfig(species=5, families=20, seed=12))
    assert [f.tree for f in a.families] != [f.tree for f in c.families]


def test_exact_orthology_gives_only_true_triples():
    for seed in range(5):
        sim = simulate(SimConfig(species=7, families=30, seed=seed))
        truth = set(displayed_triples(sim.species_tree).weights)
        s = accumulate(sim.families)
        assert set(s.weights) <= truth


def test_gene_names_and_species():
    sim = simulate(SimConfig(species=4, families=3, seed=1))
    genes = sorted(sim.orthology.genes)
    assert genes[0].startswith("f0000g")
    assert set(sim.species.values()) <= set(sim.species_tree.leaves)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(species=2)
    with pytest.raises(ValueError):
        SimConfig(loss=-1)
    with pytest.raises(ValueError):
        NoiseSpec("v", 0.1)
    with pytest.raises(ValueError):
        NoiseSpec("ii", 1.5)
    assert NoiseSpec("iii", 0.1).model == "paralogous"


def test_tuned_history_rate_covers_shortest_edge():
    hist, rate = tuned_history(8, 100, random.Random(2))
    shortest = min(hist.length[v] for v in hist.edges)
    assert 1.0 <= rate <= 2.0
    assert rate * shortest * 100 >= 1.0 - 1e-9


# --------------------------------------------------------------------------
# noise
# --------------------------------------------------------------------------


def noisy_input():
    sim = simulate(SimConfig(species=6, families=15, seed=4))
    groups = [f.genes for f in sim.families]
    return sim.orthology, groups


def test_zero_noise_is_identity():
    g, groups = noisy_input()
    for m in ("i", "ii", "iii", "iv"):
        out = add_noise(g, NoiseSpec(m, 0.0, 1), groups)
        assert out.weights == g.weights
        assert out.species == g.species


def test_noise_models_direction():
    g, groups = noisy_input()
    base = set(g.weights)
    ins = set(add_noise(g, NoiseSpec("ii", 0.3, 1), groups).weights)
    dels = set(add_noise(g, NoiseSpec("iii", 0.3, 1), groups).weights)
    both = set(add_noise(g, NoiseSpec("i", 0.3, 1), groups).weights)
    assert ins > base
    assert dels < base
    assert both - base and base - both
    # pair noise stays inside families
    fam = {x: i for i, grp in enumerate(groups) for x in grp}
    assert all(fam[a] == fam[b] for a, b in ins)
    # inserted pairs never join genes of the same species
    assert all(g.species[a] != g.species[b] for a, b in ins)


def test_xenologous_noise_moves_species_only():
    g, _ = noisy_input()
    out = add_noise(g, NoiseSpec("iv", 0.5, 2))
    assert out.weights == g.weights
    moved = [x for x in g.genes if out.species[x] != g.species[x]]
    assert moved
    assert set(out.species.values()) <= set(g.species.values())


def test_noise_is_seeded():
    g, groups = noisy_input()
    a = add_noise(g, NoiseSpec("i", 0.2, 9), groups)
    b = add_noise(g, NoiseSpec("i", 0.2, 9), groups)
    assert a == b


# --------------------------------------------------------------------------
# distances
# --------------------------------------------------------------------------


def test_distance_examples():
    t1 = newick_parse("((a,b),c);")
    t2 = newick_parse("(a,b,c);")
    assert robinson_foulds(t1, t2) == 0.5
    assert matching_cluster(t1, t2) == 2
    assert triple_distance(t1, t2) == 1
    assert nodal_splitted(t1, t2) == pytest.approx(math.sqrt(2))
    t3 = newick_parse("((a,c),b);")
    assert robinson_foulds(t1, t3) == 1
    assert matching_cluster(t1, t3) == 2
    assert triple_distance(t1, t3) == 1


def test_distance_axioms():
    rng = random.Random(10)
    for _ in range(30):
        leaves = labels(rng.randint(3, 8))
        a, b, c = (random_tree(rng, leaves) for _ in range(3))
        dab, dba = raw_distances(a, b), raw_distances(b, a)
        for m in dab:
            assert dab[m] == pytest.approx(dba[m])
            assert raw_distances(a, a)[m] == 0
        dac, dbc = raw_distances(a, c), raw_distances(b, c)
        for m in ("RF", "NS", "TT", "MC"):
            assert dac[m] <= dab[m] + dbc[m] + 1e-9


def test_triple_distance_brute_force():
    rng = random.Random(5)
    for _ in range(30):
        leaves = labels(rng.randint(3, 7))
        a, b = random_tree(rng, leaves), random_tree(rng, leaves)

        def resolution(t, trio):
            x, y, z = trio
            for p, q, r in ((x, y, z), (x, z, y), (y, z, x)):
                if any(p in c and q in c and r not in c for c in t.clusters):
                    return r
            return None

        want = sum(resolution(a, tr) != resolution(b, tr) for tr in itertools.combinations(leaves, 3))
        assert triple_distance(a, b) == want


def test_leaf_mismatch():
    with pytest.raises(LeafMismatch):
        raw_distances(newick_parse("((a,b),c);"), newick_parse("((a,b),d);"))


def test_normalized_distances():
    yule_normalizer.cache_clear()
    norm = yule_normalizer(6, 200, 1)
    assert all(v > 0 for v in norm.values())
    assert yule_normalizer(6, 200, 1) is norm
    rng = random.Random(0)
    a, b = yule_tree(6, rng), yule_tree(6, rng)
    rep = tree_distance(a, b, normalize=True, samples=200, seed=1)
    for m, raw, n in rep.rows():
        assert n == pytest.approx(raw / norm[m])
    assert tree_distance(a, a, normalize=True, samples=200, seed=1).normalized["TT"] == 0


# --------------------------------------------------------------------------
# consensus and bootstrap
# --------------------------------------------------------------------------


def test_majority_consensus():
    trees = [newick_parse(s) for s in ("((a,b),c,d);", "((a,b),(c,d));", "((a,c),b,d);")]
    assert majority_consensus(trees) == newick_parse("((a,b),c,d);")
    freq = cluster_frequencies(trees)
    assert freq[frozenset("ab")] == pytest.approx(2 / 3)
    assert freq[frozenset("cd")] == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        majority_consensus([])


def bootstrap_input():
    sim = simulate(SimConfig(species=6, families=25, seed=2))
    from paratree.triples import species_triples_of

    comps = [species_triples_of(f) for f in sim.families]
    return comps, sim.species_tree.leaves, sim.species_tree


@pytest.mark.parametrize("scheme", ["components", "triples"])
def test_bootstrap_is_deterministic(scheme):
    comps, uni, _ = bootstrap_input()
    a = bootstrap(comps, uni, scheme, replicates=6, seed=5)
    b = bootstrap(comps, uni, scheme, replicates=6, seed=5)
    assert a == b
    assert all(t.leaves == frozenset(uni) for t in a)


def test_bootstrap_does_not_depend_on_threads():
    comps, uni, _ = bootstrap_input()
    assert bootstrap(comps, uni, replicates=4, seed=1, threads=1) == bootstrap(comps, uni, replicates=4, seed=1, threads=2)


def test_bootstrap_rejects_unknown_scheme():
    with pytest.raises(ValueError):
        bootstrap([], "abc", "jackknife")
