"""The twelve acceptance criteria at their stated tolerances.  Each test
prints (and records for the terminal summary) one PASS/FAIL line."""

from __future__ import annotations

import itertools
import random
import statistics
import time
from contextlib import contextmanager


from paratree.cli import main
from paratree.cograph import OrthologyEstimate, brute_force_edit, cograph_edit, cotree, relation_from_cotree
from paratree.model import Triple, TripleSet, displayed_triples
from paratree.pipeline import PipelineConfig, reconstruct, run_dataset
from paratree.sim_eval import NoiseSpec, SimConfig, bootstrap, majority_consensus, simulate, tree_distance, tuned_history
from paratree.species_tree import MODES, least_resolved_tree, support_values
from paratree.triples import (
    brute_force_subset,
    closure,
    is_consistent,
    max_consistent_subset,
    strictly_dense_consistent,
)

from conftest import ACCEPTANCE
from oracles import closure_per_trio, consistent_oracle, labels, least_resolved_oracle, random_cograph, random_tree


@contextmanager
def criterion(number: int, title: str, limit: float | None = None):
    """Time the body, then record one PASS/FAIL line; a runtime above
    ``limit`` seconds fails the criterion."""
    info: dict = {}
    start = time.perf_counter()
    ok = False
    try:
        yield info
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        over = limit is not None and elapsed > limit
        verdict = "PASS" if ok and not over else "FAIL"
        detail = ", ".join(f"{k}={v}" for k, v in info.items())
        budget = f" (limit {limit:.0f}s)" if limit is not None else ""
        line = f"criterion {number}: {verdict} {title} [{detail}] {elapsed:.1f}s{budget}"
        ACCEPTANCE.append(line)
        print(line)
    assert not over, line


def orient(rng, trio):
    a, b, c = trio
    return rng.choice([Triple.of(a, b, c), Triple.of(a, c, b), Triple.of(b, c, a)])


def test_c01_cograph_editing_exactness():
    with criterion(1, "cograph editing equals brute-force minimum", 120) as info:
        rng = random.Random(101)
        mismatches = 0
        for _ in range(300):
            n = rng.randint(2, 7)
            genes = [f"g{i}" for i in range(n)]
            species = {g: f"S{rng.randrange(n)}" for g in genes}
            pairs = [p for p in itertools.combinations(genes, 2) if rng.random() < 0.5]
            est = OrthologyEstimate.from_pairs(pairs, species, genes)
            res = cograph_edit(est)
            want, _ = brute_force_edit(est)
            mismatches += not (res.exact and abs(res.cost - want) < 1e-9)
        info.update(graphs=300, mismatches=mismatches)
        assert mismatches == 0


def test_c02_cotree_round_trip():
    with criterion(2, "relation -> cotree -> relation is the identity", 60) as info:
        rng = random.Random(102)
        bad = 0
        for _ in range(500):
            vs = [f"g{i}" for i in range(rng.randint(1, 40))]
            adj = random_cograph(rng, vs)
            t = cotree(adj, {v: v for v in vs})
            bad += relation_from_cotree(t) != adj
        info.update(cographs=500, failures=bad)
        assert bad == 0


def test_c03_pairwise_closure_equals_build():
    with criterion(3, "pairwise inference agrees with BUILD on strictly dense sets", 60) as info:
        rng = random.Random(103)
        agree = n_consistent = 0
        for k in range(500):
            leaves = labels(rng.randint(4, 6))
            trios = list(itertools.combinations(leaves, 3))
            if k % 2:
                r = [orient(rng, t) for t in trios]
            else:
                # a tree's triples with a few trios flipped
                shown = {t.trio: t for t in displayed_triples(random_tree(rng, leaves, binary=True)).weights}
                flips = set(rng.sample(trios, rng.randint(0, 2)))
                r = [orient(rng, t) if t in flips else shown[t] for t in trios]
            s = TripleSet(r, leaves)
            build_says = is_consistent(s.weights, leaves)
            n_consistent += build_says
            agree += strictly_dense_consistent(s) == build_says
        info.update(sets=500, consistent=n_consistent, agree=agree)
        assert agree == 500


def test_c04_closure_oracle():
    with criterion(4, "closure equals per-trio definition oracle", 120) as info:
        rng = random.Random(104)
        equal = 0
        for _ in range(100):
            leaves = labels(rng.randint(3, 5))
            shown = sorted(displayed_triples(random_tree(rng, leaves)).weights)
            r = rng.sample(shown, rng.randint(0, len(shown))) if shown else []
            got = set(closure(TripleSet(r, leaves)).weights)
            want = closure_per_trio(r, leaves, lambda xs: consistent_oracle(xs, leaves))
            equal += got == want
        info.update(sets=100, equal=equal)
        assert equal == 100


def test_c05_max_consistent_subset():
    with criterion(5, "subset program weight equals exhaustive maximum", 180) as info:
        rng = random.Random(105)
        equal = 0
        for _ in range(200):
            leaves = labels(rng.randint(3, 6))
            trios = list(itertools.combinations(leaves, 3))
            weights = {}
            for _ in range(rng.randint(1, 10)):
                weights[orient(rng, rng.choice(trios))] = float(rng.randint(1, 5))
            s = TripleSet(weights, leaves)
            res = max_consistent_subset(s, force_ilp=True)
            equal += res.exact and abs(res.objective - brute_force_subset(s)) < 1e-9
        info.update(sets=200, equal=equal)
        assert equal == 200


def test_c06_least_resolved_optimality():
    with criterion(6, "least-resolved objectives match enumeration of all trees", 300) as info:
        rng = random.Random(106)
        equal = 0
        for _ in range(100):
            leaves = labels(rng.randint(3, 6))
            shown = sorted(displayed_triples(random_tree(rng, leaves)).weights)
            r = rng.sample(shown, rng.randint(0, len(shown))) if shown else []
            best_v, best_t = least_resolved_oracle(r, leaves)
            s = TripleSet(r, leaves)
            a = least_resolved_tree(s, "min-vertices", force_ilp=True)
            b = least_resolved_tree(s, "min-triples", force_ilp=True)
            equal += a.exact and b.exact and a.objective == best_v and b.objective == best_t
        info.update(sets=100, equal=equal)
        assert equal == 100


def test_c07_binary_tree_recovered_in_all_modes():
    with criterion(7, "S* = r(T) returns T in every tree mode", 120) as info:
        rng = random.Random(107)
        same = forced = 0
        for k in range(200):
            leaves = labels(rng.randint(3, 8))
            t = random_tree(rng, leaves, binary=True)
            s = displayed_triples(t)
            trees = [least_resolved_tree(s, m).tree for m in MODES]
            ok = all(x == t for x in trees)
            # the matrix programs themselves, without the BUILD shortcut
            if len(leaves) <= 6:
                forced += 1
                ok &= all(least_resolved_tree(s, m, force_ilp=True).tree == t for m in MODES[:2])
            same += ok
        info.update(trees=200, identical=same, solved_by_program=forced)
        assert same == 200


def test_c08_noise_free_recovery():
    with criterion(8, "noise-free median normalized TT <= 0.10 and sound triples", 900) as info:
        tts, sound = [], True
        for seed in range(50):
            hist, rate = tuned_history(10, 200, random.Random(seed))
            data = simulate(SimConfig(species=hist, families=200, duplication=rate, seed=seed))
            rec = reconstruct(data.orthology, PipelineConfig(time_limit=None))
            tts.append(tree_distance(data.species_tree, rec.tree, normalize=True).normalized["TT"])
            sound &= set(rec.triples.weights) <= set(displayed_triples(data.species_tree).weights)
        med = statistics.median(tts)
        info.update(datasets=50, median_TT=round(med, 4), max_TT=round(max(tts), 4), sound=sound)
        assert med <= 0.10
        assert sound


def test_c09_noise_asymmetry():
    with criterion(9, "orthologous-noise median TT <= paralogous-noise median TT", 1200) as info:
        cfg = PipelineConfig(time_limit=None, component_limit=16, node_limit=5000)
        med = {}
        for model in ("ii", "iii"):
            tts = [
                run_dataset(10, 200, NoiseSpec(model, 0.15, 1000 + seed), seed, cfg)["distance"].normalized["TT"]
                for seed in range(30)
            ]
            med[model] = statistics.median(tts)
        info.update(datasets=30, median_ii=round(med["ii"], 4), median_iii=round(med["iii"], 4))
        assert med["ii"] <= med["iii"]


def test_c10_support_sanity():
    with criterion(10, "s = 1 without conflict, s = 0.6 for a 3:1:1 trio", None) as info:
        data = simulate(SimConfig(species=6, families=40, seed=10))
        rec = reconstruct(data.orthology, PipelineConfig(time_limit=None))
        clean = rec.species.support.s
        conflict = TripleSet({Triple.of("a", "b", "c"): 3, Triple.of("a", "c", "b"): 1, Triple.of("b", "c", "a"): 1}, "abc")
        sub = max_consistent_subset(conflict)
        res = least_resolved_tree(sub.sstar, extracted=conflict)
        direct = support_values(res.tree, conflict).s
        info.update(conflict_free_s=clean, conflict_s=res.support.s)
        assert clean == 1.0
        assert res.support.s == 0.6 and direct == 0.6


def test_c11_bootstrap_consensus():
    with criterion(11, "majority consensus of 100 replicates equals the point estimate", 600) as info:
        hist, rate = tuned_history(8, 100, random.Random(11))
        data = simulate(SimConfig(species=hist, families=100, duplication=rate, seed=11))
        rec = reconstruct(data.orthology, PipelineConfig(time_limit=None))
        out = {}
        for scheme in ("components", "triples"):
            trees = bootstrap(rec.component_triples, rec.triples.universe, scheme, replicates=100, seed=0)
            out[scheme] = majority_consensus(trees) == rec.tree
        info.update(point_inner=len(rec.tree.inner_vertices), **out)
        assert all(out.values())


def test_c12_thread_determinism(tmp_path):
    with criterion(12, "threads 1 and 8 give byte-identical artifacts", None) as info:
        sim = tmp_path / "sim"
        assert main(["simulate", "--species", "8", "--families", "60", "--seed", "12", "--noise", "i:0.05", "--out", str(sim)]) == 0
        outs = []
        for threads in ("1", "8"):
            out = tmp_path / f"t{threads}"
            code = main([
                "run", "--orthology", str(sim / "orthology.tsv"), "--species-map", str(sim / "species_map.tsv"),
                "--out", str(out), "--threads", threads, "--bootstrap", "triples", "--replicates", "20",
                "--component-limit", "16", "--node-limit", "5000",
            ])
            assert code == 0
            outs.append(out)
        names = sorted(p.name for p in outs[0].iterdir() if p.name != "timings.json")
        differ = [n for n in names if (outs[0] / n).read_bytes() != (outs[1] / n).read_bytes()]
        info.update(artifacts=len(names), differing=len(differ))
        assert not differ
