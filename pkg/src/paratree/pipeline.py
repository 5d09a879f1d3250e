"""End-to-end reconstruction: orthology -> cographs -> gene trees -> species
triples -> consistent subset -> least-resolved species tree."""

from __future__ import annotations

import json
import logging
import time
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

from paratree import ilp
from paratree.cograph import (
    SIZE_LIMIT,
    THRESHOLD,
    TIME_LIMIT,
    EditedCograph,
    OrthologyEstimate,
    connected_components,
    cograph_edit,
    cotree,
    editing_model,
    write_relation,
)
from paratree.model import EventLabeledTree, Tree, Triple, TripleSet, newick_write, write_triples
from paratree.sim_eval import (
    NoiseSpec,
    SimConfig,
    add_noise,
    bootstrap,
    cluster_frequencies,
    majority_consensus,
    parallel_map,
    simulate,
    tree_distance,
)
from paratree.species_tree import SpeciesTreeResult, least_resolved_tree, tree_budget
from paratree.triples import NO_SIGNAL, SubsetResult, max_consistent_subset, species_triples_of

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NO_SIGNAL = 2

SOLVERS = ("builtin", "export-only")
BOOTSTRAP = ("none", "components", "triples")


@dataclass
class PipelineConfig:
    orthology: str | None = None
    species_map: str | None = None
    out: str | None = None
    threshold: float = THRESHOLD
    component_limit: int = SIZE_LIMIT
    time_limit: float | None = TIME_LIMIT
    node_limit: int | None = None
    solver: str = "builtin"
    tree_mode: str = "min-vertices"
    bootstrap: str = "none"
    replicates: int = 100
    seed: int = 0
    threads: int = 1

    def validate(self) -> None:
        for name in ("orthology", "species_map"):
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                raise FileNotFoundError(f"{name.replace('_', '-')} file not found: {p}")
        if self.component_limit < 1:
            raise ValueError("component limit must be positive")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ValueError("time limit must be positive")
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.bootstrap not in BOOTSTRAP:
            raise ValueError(f"unknown bootstrap scheme {self.bootstrap!r}")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")
        if self.threads < 1:
            raise ValueError("threads must be positive")

    def recorded(self) -> dict:
        """Settings that determine the result (no paths, no thread count)."""
        d = asdict(self)
        for k in ("orthology", "species_map", "out", "threads"):
            d.pop(k)
        return d


@dataclass
class Reconstruction:
    components: list[EditedCograph]
    gene_trees: list[EventLabeledTree]
    component_triples: list[frozenset[Triple]]
    triples: TripleSet
    subset: SubsetResult | None
    species: SpeciesTreeResult | None
    timings: dict[str, float] = field(default_factory=dict)
    bootstrap_trees: list[Tree] = field(default_factory=list)
    consensus: Tree | None = None

    @property
    def no_signal(self) -> bool:
        return len(self.triples) == 0

    @property
    def tree(self) -> Tree | None:
        return None if self.species is None else self.species.tree

    @property
    def exact(self) -> bool:
        ok = all(c.exact for c in self.components)
        if self.subset is not None:
            ok &= self.subset.exact
        if self.species is not None:
            ok &= self.species.exact
        return ok

    def report(self, cfg: PipelineConfig) -> dict:
        statuses: dict[str, int] = {}
        for c in self.components:
            statuses[c.status] = statuses.get(c.status, 0) + 1
        out = {
            "config": cfg.recorded(),
            "components": len(self.components),
            "component_status": dict(sorted(statuses.items())),
            "edit_cost": round(sum(c.cost for c in self.components), 9),
            "extracted_triples": len(self.triples),
            "extracted_weight": self.triples.total_weight(),
            "no_signal": self.no_signal,
            "exact": self.exact,
        }
        if self.subset is not None:
            out["subset"] = {
                "status": self.subset.status,
                "triples": len(self.subset.sstar),
                "weight": self.subset.objective,
                "nodes": self.subset.nodes,
            }
        if self.species is not None:
            out["species_tree"] = self.species.report()
            out["species_tree"]["nodes"] = self.species.nodes
        if self.bootstrap_trees:
            freq = cluster_frequencies(self.bootstrap_trees)
            n = len(self.tree.leaves)
            out["bootstrap"] = {
                "scheme": cfg.bootstrap,
                "replicates": len(self.bootstrap_trees),
                "consensus": newick_write(self.consensus),
                "consensus_equals_estimate": self.consensus == self.tree,
                "cluster_support": [
                    {"cluster": sorted(c), "frequency": round(freq.get(c, 0.0), 6)}
                    for c in sorted(self.tree.hierarchy().nontrivial(), key=lambda c: (len(c), sorted(c)))
                    if len(c) < n
                ],
            }
        return out


def _edit_job(args) -> EditedCograph:
    comp, time_limit, size_limit, node_limit, threshold = args
    return cograph_edit(comp, time_limit, size_limit, node_limit, threshold)


def edit_components(est: OrthologyEstimate, cfg: PipelineConfig) -> list[EditedCograph]:
    comps = connected_components(est, cfg.threshold)
    jobs = [(c, cfg.time_limit, cfg.component_limit, cfg.node_limit, cfg.threshold) for c in comps]
    return parallel_map(_edit_job, jobs, cfg.threads)


def gene_trees_of(edited: Sequence[EditedCograph], species) -> list[EventLabeledTree]:
    return [cotree(e.graph(), species) for e in edited]


def reconstruct(est: OrthologyEstimate, cfg: PipelineConfig | None = None) -> Reconstruction:
    """Run every stage on an in-memory orthology estimate."""
    cfg = cfg or PipelineConfig()
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    edited = edit_components(est, cfg)
    timings["editing"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    trees = gene_trees_of(edited, est.species)
    per_comp = [frozenset(species_triples_of(t)) for t in trees]
    universe = sorted(est.species_set)
    counts: dict[Triple, float] = {}
    for comp in per_comp:
        for r in comp:
            counts[r] = counts.get(r, 0.0) + 1.0
    triples = TripleSet(counts, universe)
    timings["extraction"] = time.perf_counter() - t0

    if len(triples) == 0:
        log.warning("no species triples extracted; emitting the star tree")
        star = Tree.star(universe) if len(universe) > 1 else None
        res = None
        if star is not None:
            res = least_resolved_tree(TripleSet((), universe), "build", triples)
            res.status = NO_SIGNAL
        return Reconstruction(edited, trees, per_comp, triples, None, res, timings)

    t0 = time.perf_counter()
    sub = max_consistent_subset(triples, node_limit=cfg.node_limit)
    timings["subset"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    sstar = sub.sstar.with_universe(universe)
    sp = least_resolved_tree(sstar, cfg.tree_mode, triples, node_limit=tree_budget(cfg.node_limit))
    timings["tree"] = time.perf_counter() - t0

    rec = Reconstruction(edited, trees, per_comp, triples, sub, sp, timings)
    if cfg.bootstrap != "none":
        t0 = time.perf_counter()
        rec.bootstrap_trees = bootstrap(
            per_comp, universe, cfg.bootstrap, cfg.replicates, cfg.seed, cfg.tree_mode, cfg.threads, cfg.node_limit
        )
        rec.consensus = majority_consensus(rec.bootstrap_trees)
        timings["bootstrap"] = time.perf_counter() - t0
    return rec


# --------------------------------------------------------------------------
# Artifacts
# --------------------------------------------------------------------------

EDITED = "edited_orthology.tsv"
GENE_TREES = "gene_trees.nwk"
TRIPLES = "species_triples.tsv"
SUBSET = "consistent_triples.tsv"
SPECIES_TREE = "species_tree.nwk"
REPORT = "report.json"
TIMINGS = "timings.json"
BOOT_TREES = "bootstrap_trees.nwk"
CONSENSUS = "consensus.nwk"


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


def write_artifacts(rec: Reconstruction, cfg: PipelineConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    edges = sorted(e for c in rec.components for e in c.edges)
    write_relation(out / EDITED, edges)
    with open(out / GENE_TREES, "w", encoding="utf-8") as fh:
        for t in rec.gene_trees:
            fh.write(t.newick() + "\n")
    write_triples(out / TRIPLES, rec.triples)
    if rec.subset is not None:
        write_triples(out / SUBSET, rec.subset.sstar)
    if rec.species is not None:
        (out / SPECIES_TREE).write_text(rec.species.newick() + "\n", encoding="utf-8")
    write_json(out / REPORT, rec.report(cfg))
    # wall-clock data lives apart from the reproducible artifacts
    write_json(out / TIMINGS, {"threads": cfg.threads, "seconds": {k: round(v, 6) for k, v in rec.timings.items()}})
    if rec.bootstrap_trees:
        with open(out / BOOT_TREES, "w", encoding="utf-8") as fh:
            for t in rec.bootstrap_trees:
                fh.write(newick_write(t) + "\n")
        (out / CONSENSUS).write_text(newick_write(rec.consensus) + "\n", encoding="utf-8")


def export_editing_models(est: OrthologyEstimate, cfg: PipelineConfig, out: Path) -> list[Path]:
    """Write one LP file per component that is not already a cograph."""
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, comp in enumerate(connected_components(est, cfg.threshold)):
        if len(comp.genes) < 4 or len(comp.genes) > cfg.component_limit:
            continue
        model, _ = editing_model(comp)
        p = out / f"component_{i:05d}.lp"
        p.write_text(ilp.export_lp(model), encoding="utf-8")
        paths.append(p)
    return paths


def run_pipeline(cfg: PipelineConfig, est: OrthologyEstimate) -> tuple[int, Reconstruction | None]:
    """Run and persist every stage; returns the exit code."""
    out = Path(cfg.out or ".")
    if cfg.solver == "export-only":
        paths = export_editing_models(est, cfg, out / "lp")
        write_json(out / REPORT, {"config": cfg.recorded(), "exported_models": [p.name for p in paths]})
        return EXIT_OK, None
    rec = reconstruct(est, cfg)
    write_artifacts(rec, cfg, out)
    return (EXIT_NO_SIGNAL if rec.no_signal else EXIT_OK), rec


# --------------------------------------------------------------------------
# Simulation study
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    species: int
    families: int
    noise: NoiseSpec | None


def family_groups(families: Iterable[EventLabeledTree]) -> list[frozenset[str]]:
    return [t.genes for t in families]


def run_dataset(
    n_species: int,
    n_families: int,
    noise: NoiseSpec | None,
    seed: int,
    cfg: PipelineConfig | None = None,
    sim: dict | None = None,
) -> dict:
    """Simulate, perturb, reconstruct and score one dataset."""
    cfg = cfg or PipelineConfig(time_limit=None)
    data = simulate(SimConfig(species=n_species, families=n_families, seed=seed, **(sim or {})))
    est = data.orthology
    if noise is not None and noise.p > 0:
        est = add_noise(est, noise, family_groups(data.families))
    rec = reconstruct(est, cfg)
    truth = data.species_tree
    tree = rec.tree if rec.tree is not None else Tree.star(sorted(truth.leaves))
    dist = tree_distance(truth, tree, normalize=True)
    return {"distance": dist, "reconstruction": rec, "simulation": data}


def run_experiment(
    species_counts: Sequence[int],
    family_counts: Sequence[int],
    noises: Sequence[NoiseSpec | None],
    reps: int,
    seed: int = 0,
    cfg: PipelineConfig | None = None,
    sim: dict | None = None,
) -> list[dict]:
    """Distance rows for every grid cell and repetition.  Repetition r of
    every cell uses simulation seed ``seed + r`` so that noise levels are
    compared on the same histories."""
    rows = []
    for n in species_counts:
        for f in family_counts:
            for noise in noises:
                for r in range(reps):
                    spec = None if noise is None else NoiseSpec(noise.model, noise.p, noise.seed + seed + r)
                    res = run_dataset(n, f, spec, seed + r, cfg, sim)
                    d = res["distance"]
                    for metric, raw, norm in d.rows():
                        rows.append(
                            {
                                "species": n,
                                "families": f,
                                "noise": "none" if noise is None else noise.model,
                                "p": 0.0 if noise is None else noise.p,
                                "rep": r,
                                "metric": metric,
                                "raw": raw,
                                "normalized": norm,
                            }
                        )
    return rows


EXPERIMENT_COLUMNS = ("species", "families", "noise", "p", "rep", "metric", "raw", "normalized")


def write_experiment(path: Path, rows: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(EXPERIMENT_COLUMNS) + "\n")
        for row in rows:
            vals = []
            for c in EXPERIMENT_COLUMNS:
                v = row[c]
                vals.append(f"{v:.6f}" if isinstance(v, float) else str(v))
            fh.write("\t".join(vals) + "\n")
