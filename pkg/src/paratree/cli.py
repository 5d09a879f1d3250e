"""Command-line interface.  Every stage is its own subcommand; ``run`` chains
them.  Options default from ``PT_<NAME>`` environment variables."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from paratree import ilp
from paratree.cograph import read_orthology, write_relation
from paratree.model import (
    Event,
    EventLabeledTree,
    InputError,
    NewickError,
    TripleSet,
    newick_parse,
    newick_write,
    read_species_map,
    read_triples,
    write_species_map,
    write_triples,
)
from paratree.pipeline import (
    BOOTSTRAP,
    EXIT_INPUT,
    EXIT_NO_SIGNAL,
    EXIT_OK,
    SOLVERS,
    PipelineConfig,
    edit_components,
    gene_trees_of,
    run_experiment,
    run_pipeline,
    write_experiment,
    write_json,
)
from paratree.sim_eval import NoiseSpec, SimConfig, add_noise, simulate, tree_distance
from paratree.species_tree import MODES, least_resolved_tree, tree_budget, tree_model
from paratree.triples import accumulate, max_consistent_subset, subset_model

log = logging.getLogger("paratree")


def _env(name: str, default, kind=str):
    raw = os.environ.get("PT_" + name.upper().replace("-", "_"))
    if raw is None:
        return default
    try:
        return kind(raw)
    except ValueError:
        raise SystemExit(f"bad value for PT_{name.upper()}: {raw!r}") from None


def _opt_float(x: str) -> float | None:
    return None if x.lower() in ("none", "inf", "") else float(x)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=_env("out", "."), help="output directory")
    p.add_argument("--threads", type=int, default=_env("threads", 1, int))
    p.add_argument("--seed", type=int, default=_env("seed", 0, int))
    p.add_argument("-v", "--verbose", action="store_true")


def _solving(p: argparse.ArgumentParser) -> None:
    p.add_argument("--component-limit", type=int, default=_env("component_limit", 50, int))
    p.add_argument("--time-limit-secs", type=_opt_float, default=_env("time_limit_secs", 1800.0, _opt_float))
    p.add_argument("--node-limit", type=int, default=_env("node_limit", None, int),
                   help="cap on branch-and-bound nodes per program (reproducible truncation)")
    p.add_argument("--solver", choices=SOLVERS, default=_env("solver", "builtin"))
    p.add_argument("--tree-mode", choices=MODES, default=_env("tree_mode", "min-vertices"))


def _inputs(p: argparse.ArgumentParser, orthology: bool = True) -> None:
    if orthology:
        p.add_argument("--orthology", default=_env("orthology", None), required="PT_ORTHOLOGY" not in os.environ)
    p.add_argument("--species-map", default=_env("species_map", None), required="PT_SPECIES_MAP" not in os.environ)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="paratree", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="all stages from an orthology relation")
    _inputs(p)
    _common(p)
    _solving(p)
    p.add_argument("--bootstrap", choices=BOOTSTRAP, default=_env("bootstrap", "none"))
    p.add_argument("--replicates", type=int, default=_env("replicates", 100, int))

    p = sub.add_parser("bootstrap", help="run with bootstrap replicates and a consensus tree")
    _inputs(p)
    _common(p)
    _solving(p)
    p.add_argument("--scheme", choices=BOOTSTRAP[1:], default=_env("bootstrap", "components"))
    p.add_argument("--replicates", type=int, default=_env("replicates", 100, int))

    p = sub.add_parser("edit", help="cograph editing and gene trees")
    _inputs(p)
    _common(p)
    _solving(p)

    p = sub.add_parser("extract", help="species triples from event-labeled gene trees")
    p.add_argument("--gene-trees", required=True, help="Newick file, one tree per line, S/D inner labels")
    _inputs(p, orthology=False)
    _common(p)

    p = sub.add_parser("subset", help="maximum-weight consistent subset of species triples")
    p.add_argument("--triples", required=True)
    _common(p)
    _solving(p)

    p = sub.add_parser("tree", help="least-resolved species tree from consistent triples")
    p.add_argument("--triples", required=True, help="consistent triple set")
    p.add_argument("--extracted", help="all extracted triples, for support values")
    _common(p)
    _solving(p)

    p = sub.add_parser("simulate", help="simulated gene families with exact orthology")
    p.add_argument("--species", type=int, default=10)
    p.add_argument("--families", type=int, default=100)
    p.add_argument("--duplication", type=float, default=1.0)
    p.add_argument("--loss", type=float, default=0.5)
    p.add_argument("--loss-increment", type=float, default=0.1)
    p.add_argument("--noise", default="none", help="MODEL:P with MODEL one of i, ii, iii, iv")
    _common(p)

    p = sub.add_parser("distance", help="tree distances (TSV: metric, raw, normalized)")
    p.add_argument("tree1")
    p.add_argument("tree2")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--samples", type=int, default=1000)
    _common(p)

    p = sub.add_parser("experiment", help="simulation grid; writes a distance table")
    p.add_argument("--species", default="10", help="comma-separated species counts")
    p.add_argument("--families", default="100", help="comma-separated family counts")
    p.add_argument("--noise", default="none", help="comma-separated MODEL:P entries or none")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--duplication", type=float, default=1.0)
    _common(p)
    _solving(p)
    return ap


def _config(a: argparse.Namespace, **extra) -> PipelineConfig:
    cfg = PipelineConfig(
        orthology=getattr(a, "orthology", None),
        species_map=getattr(a, "species_map", None),
        out=a.out,
        component_limit=getattr(a, "component_limit", 50),
        time_limit=getattr(a, "time_limit_secs", 1800.0),
        node_limit=getattr(a, "node_limit", None),
        solver=getattr(a, "solver", "builtin"),
        tree_mode=getattr(a, "tree_mode", "min-vertices"),
        seed=a.seed,
        threads=a.threads,
        **extra,
    )
    cfg.validate()
    return cfg


def _noise(text: str) -> NoiseSpec | None:
    if text in ("none", ""):
        return None
    model, _, p = text.partition(":")
    return NoiseSpec(model, float(p or 0.0))


def _read_gene_trees(path: str, sigma) -> list[EventLabeledTree]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                tree = newick_parse(line)
                out.append(EventLabeledTree(tree, {g: sigma[g] for g in tree.leaves if g in sigma}))
            except (NewickError, ValueError) as exc:
                raise InputError(str(exc), path, lineno) from None
    return out


def cmd_run(a, bootstrap: str) -> int:
    cfg = _config(a, bootstrap=bootstrap, replicates=a.replicates)
    sigma = read_species_map(cfg.species_map)
    est = read_orthology(cfg.orthology, sigma)
    code, rec = run_pipeline(cfg, est)
    if rec is not None and rec.species is not None:
        print(rec.species.newick())
    if code == EXIT_NO_SIGNAL:
        log.warning("no species triples: the species tree is a star")
    return code


def cmd_edit(a) -> int:
    cfg = _config(a)
    sigma = read_species_map(cfg.species_map)
    est = read_orthology(cfg.orthology, sigma)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.solver == "export-only":
        from paratree.pipeline import export_editing_models

        paths = export_editing_models(est, cfg, out / "lp")
        print(f"wrote {len(paths)} LP files to {out / 'lp'}")
        return EXIT_OK
    edited = edit_components(est, cfg)
    write_relation(out / "edited_orthology.tsv", sorted(e for c in edited for e in c.edges))
    with open(out / "gene_trees.nwk", "w", encoding="utf-8") as fh:
        for t in gene_trees_of(edited, est.species):
            fh.write(t.newick() + "\n")
    write_json(
        out / "edit_report.json",
        [
            {"genes": len(c.genes), "status": c.status, "cost": c.cost, "inserted": len(c.inserted), "deleted": len(c.deleted)}
            for c in edited
        ],
    )
    return EXIT_OK


def cmd_extract(a) -> int:
    sigma = read_species_map(a.species_map)
    trees = _read_gene_trees(a.gene_trees, sigma)
    for t in trees:
        for v in t.tree.inner_vertices:
            if t.tree.events[v] is None:
                raise InputError("gene tree has an inner vertex without S/D label", a.gene_trees)
    triples = accumulate(trees)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_triples(out / "species_triples.tsv", triples)
    return EXIT_OK if len(triples) else EXIT_NO_SIGNAL


def cmd_subset(a) -> int:
    s = read_triples(a.triples)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    if a.solver == "export-only":
        (out / "subset.lp").write_text(ilp.export_lp(subset_model(s)), encoding="utf-8")
        return EXIT_OK
    res = max_consistent_subset(s, node_limit=a.node_limit)
    write_triples(out / "consistent_triples.tsv", res.sstar)
    return EXIT_OK if len(res.sstar) else EXIT_NO_SIGNAL


def cmd_tree(a) -> int:
    s = read_triples(a.triples)
    extracted = read_triples(a.extracted) if a.extracted else None
    if extracted is not None:
        s = s.with_universe(extracted.universe)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    if a.solver == "export-only":
        model, _ = tree_model(s, a.tree_mode if a.tree_mode != "build" else "min-vertices")
        (out / "tree.lp").write_text(ilp.export_lp(model), encoding="utf-8")
        return EXIT_OK
    res = least_resolved_tree(s, a.tree_mode, extracted, node_limit=tree_budget(a.node_limit))
    (out / "species_tree.nwk").write_text(res.newick() + "\n", encoding="utf-8")
    (out / "species_tree.json").write_text(res.to_json() + "\n", encoding="utf-8")
    print(res.newick())
    return EXIT_OK if len(s) else EXIT_NO_SIGNAL


def cmd_simulate(a) -> int:
    data = simulate(
        SimConfig(a.species, a.families, a.duplication, a.loss, a.loss_increment, seed=a.seed)
    )
    est = data.orthology
    spec = _noise(a.noise)
    if spec is not None:
        est = add_noise(est, NoiseSpec(spec.model, spec.p, a.seed), [f.genes for f in data.families])
    out = Path(a.out)
    (out / "families").mkdir(parents=True, exist_ok=True)
    write_relation(out / "orthology.tsv", sorted(e for e, w in est.weights.items() if w >= 0.5))
    write_species_map(out / "species_map.tsv", est.species)
    (out / "species_tree.nwk").write_text(newick_write(data.species_tree) + "\n", encoding="utf-8")
    for i, fam in enumerate(data.families):
        genes = fam.genes
        edges = sorted(e for e in est.weights if e[0] in genes and e[1] in genes)
        write_relation(out / "families" / f"family_{i:04d}.tsv", edges)
    with open(out / "gene_trees.nwk", "w", encoding="utf-8") as fh:
        for fam in data.families:
            fh.write(fam.newick() + "\n")
    return EXIT_OK


def cmd_distance(a) -> int:
    t1 = newick_parse(Path(a.tree1).read_text(encoding="utf-8")).strip_events()
    t2 = newick_parse(Path(a.tree2).read_text(encoding="utf-8")).strip_events()
    rep = tree_distance(t1, t2, a.normalize, a.samples, a.seed)
    lines = ["metric\traw\tnormalized"]
    for m, raw, norm in rep.rows():
        lines.append(f"{m}\t{raw:.6f}\t{'' if norm is None else f'{norm:.6f}'}")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_experiment(a) -> int:
    cfg = _config(a)
    species = [int(x) for x in a.species.split(",")]
    families = [int(x) for x in a.families.split(",")]
    noises = [_noise(x) for x in a.noise.split(",")]
    rows = run_experiment(species, families, noises, a.reps, a.seed, cfg, {"duplication": a.duplication})
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_experiment(out / "experiment.tsv", rows)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        if a.command == "run":
            return cmd_run(a, a.bootstrap)
        if a.command == "bootstrap":
            return cmd_run(a, a.scheme)
        return {
            "edit": cmd_edit,
            "extract": cmd_extract,
            "subset": cmd_subset,
            "tree": cmd_tree,
            "simulate": cmd_simulate,
            "distance": cmd_distance,
            "experiment": cmd_experiment,
        }[a.command](a)
    except (InputError, NewickError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
