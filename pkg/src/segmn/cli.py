"""Command line entry point.

Every artifact-producing command writes ``manifest.json`` into its output
directory with the command, argv and the fully resolved configuration.
Failures print one JSON line ``{"error": <kind>, "message": ...}`` on stderr
and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import autodiff as ad
from .datasets import (
    Corpus,
    LabelCacheMiss,
    bundled_corpus_path,
    generate_synthetic,
    label_corpus,
    load_corpus,
    required_pairs,
    save_corpus,
    save_label_cache,
)
from .ged import exact_ged_astar, normalized_target
from .graphs import (
    GraphValidationError,
    NodeGraph,
    adjacency_dump,
    assignment_graph_record,
    build_assignment_graph,
    build_line_graph,
    graph_from_record,
    line_graph_record,
    modified_incidence,
)
from .model import FeatureCache, make_batch
from .training import (
    ExperimentConfig,
    ablation_harness,
    build_model,
    config_from_mapping,
    evaluate,
    format_table,
    portability_harness,
    train,
)

log = logging.getLogger("segmn")


class CLIError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(f"usage: {message}")


# --------------------------------------------------------------------------
# helpers


def _write_manifest(out: Path, command: str, argv: list[str], merge: bool = False, **extra) -> None:
    """Run manifest; with ``merge`` the run fields are added to an existing
    manifest (a dataset directory keeps its name/vocab/split)."""
    out.mkdir(parents=True, exist_ok=True)
    path = out / "manifest.json"
    rec = json.loads(path.read_text()) if merge and path.exists() else {}
    rec |= {"command": command, "argv": argv, "version": __version__, "created": time.strftime("%Y-%m-%dT%H:%M:%S")}
    rec.update(extra)
    path.write_text(json.dumps(rec, indent=1, default=str))


def _dataset(path: str | None) -> tuple[Corpus, str]:
    p = Path(path) if path else bundled_corpus_path()
    return load_corpus(p), str(p)


def _config(args) -> ExperimentConfig:
    """Config file (flat map, or a previous run's manifest) then flag overrides."""
    raw: dict = {}
    if args.config:
        loaded = yaml.safe_load(Path(args.config).read_text()) or {}
        if not isinstance(loaded, dict):
            raise CLIError(f"{args.config}: config must be a key: value map")
        if "command" in loaded and isinstance(loaded.get("config"), dict):
            loaded = loaded["config"]
        if any(isinstance(v, dict) for v in loaded.values()):
            raise CLIError(f"{args.config}: config must be a flat key: value map")
        raw.update(loaded)
    for key in ("variant", "spm_layers", "seed", "epochs"):
        v = getattr(args, key, None)
        if v is not None:
            raw[key] = v
    if getattr(args, "dataset", None):
        raw["dataset"] = args.dataset
    return config_from_mapping(raw)


def _load_pair_files(a: str, b: str) -> tuple[NodeGraph, NodeGraph]:
    recs = []
    for p in (a, b):
        try:
            recs.append(json.loads(Path(p).read_text()))
        except FileNotFoundError:
            raise CLIError(f"missing input file {p}") from None
        except json.JSONDecodeError as exc:
            raise GraphValidationError(f"{p}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    tokens = {str(t) for r in recs for t in (r.get("node_labels") or [])}
    vocab = sorted(tokens) or None
    for r in recs:
        if r.get("node_labels") is not None:
            r["node_labels"] = [str(t) for t in r["node_labels"]]
        r.setdefault("id", "")
    return graph_from_record(recs[0], vocab, a), graph_from_record(recs[1], vocab, b)


def _load_run(run: Path, corpus: Corpus):
    try:
        manifest = json.loads((run / "manifest.json").read_text())
    except FileNotFoundError:
        raise CLIError(f"{run}: no manifest.json (not a training run directory)") from None
    cfg = config_from_mapping(manifest["config"])
    model = build_model(cfg, corpus)
    model.load_state(ad.load_checkpoint(run / "checkpoint.npz"))
    return cfg, model


HEAT = " .:-=+*#%@"


def heat_table(m: np.ndarray) -> str:
    """Character-ramp rendering of a non-negative matrix (darker = larger)."""
    m = np.asarray(m, dtype=np.float64)
    top = m.max() if m.size and m.max() > 0 else 1.0
    idx = np.clip((m / top * (len(HEAT) - 1)).round().astype(int), 0, len(HEAT) - 1)
    head = "    " + "".join(f"{a:>2}" for a in range(m.shape[1]))
    rows = [f"{i:>3} " + "".join(" " + HEAT[k] for k in row) for i, row in enumerate(idx)]
    return "\n".join([head] + rows + [f"scale: '{HEAT[0]}' = 0 ... '{HEAT[-1]}' = {top:.4f}"])


def grid(m: np.ndarray) -> str:
    return "\n".join(" ".join(f"{v:.6f}" for v in row) for row in m)


# --------------------------------------------------------------------------
# commands


def cmd_gen(args, argv):
    c = generate_synthetic(args.n_graphs, (args.n_min, args.n_max), args.edge_prob, args.labels, args.seed, args.test_fraction, args.name)
    if args.label:
        label_corpus(c, args.node_budget, args.workers)
    out = Path(args.out)
    save_corpus(c, out)
    params = {k: getattr(args, k) for k in ("n_graphs", "n_min", "n_max", "edge_prob", "labels", "seed", "test_fraction", "name", "label", "node_budget")}
    _write_manifest(out, "gen", argv, merge=True, config=params, graphs=len(c.graphs))
    print(f"wrote {len(c.graphs)} graphs ({len(c.train_ids)} train / {len(c.test_ids)} test) to {out}")


def cmd_label(args, argv):
    c, path = _dataset(args.dataset)
    before = len(c.label_cache)
    t0 = time.perf_counter()
    label_corpus(c, args.node_budget, args.workers)
    save_label_cache(c.label_cache, Path(path) / "labels.txt")
    print(f"labeled {len(c.label_cache) - before} new pairs ({len(required_pairs(c))} required) in {time.perf_counter() - t0:.1f}s")


def cmd_transform(args, argv):
    out = Path(args.out) if args.out else None
    if args.kind == "assignment":
        if not args.other:
            raise CLIError("transform --kind assignment needs --other")
        g1, g2 = _load_pair_files(args.graph, args.other)
        ag = build_assignment_graph(g1, g2)
        rec = assignment_graph_record(ag, g1, g2)
    else:
        (g,) = _load_pair_files(args.graph, args.graph)[:1]
        if args.kind == "line":
            lg = build_line_graph(g)
            rec = line_graph_record(lg)
            rec["adjacency"] = adjacency_dump(lg.adjacency()).splitlines()
        else:
            rec = {"id": g.graph_id, "modified_incidence": modified_incidence(g).tolist()}
    text = json.dumps(rec, indent=1)
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.kind}.json").write_text(text)
        _write_manifest(out, "transform", argv, config={k: v for k, v in vars(args).items() if k != "func"})
    else:
        print(text)


def cmd_oracle(args, argv):
    g1, g2 = _load_pair_files(*args.pair)
    ged = exact_ged_astar(g1, g2, node_budget=args.node_budget)
    print(f"ged={ged:g} target={normalized_target(ged, g1.num_nodes, g2.num_nodes):.6g}")


def cmd_train(args, argv):
    cfg = _config(args)
    corpus, path = _dataset(cfg.dataset or None)
    cfg = cfg.with_(dataset=path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(out, "train", argv, config=cfg.to_dict(), status="running")
    log_path = out / "train_log.jsonl"
    log_path.write_text("")
    res = train(cfg, corpus, log_path=log_path)
    ad.save_checkpoint(out / "checkpoint.npz", res.model.params())
    report = evaluate(res.model, corpus)
    report.config = cfg.to_dict()
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1))
    _write_manifest(
        out, "train", argv, config=cfg.to_dict(), status="done", best_epoch=res.best_epoch, best_val_mse=res.best_val_mse,
        checksum=ad.parameters_checksum(res.model.params().values()),
    )
    print(json.dumps(report.summary()))


def cmd_eval(args, argv):
    run = Path(args.run)
    manifest_cfg = json.loads((run / "manifest.json").read_text())["config"] if (run / "manifest.json").exists() else {}
    corpus, path = _dataset(args.dataset or manifest_cfg.get("dataset"))
    cfg, model = _load_run(run, corpus)
    report = evaluate(model, corpus)
    report.config = cfg.to_dict()
    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(json.dumps(report.to_dict(), indent=1))
    if args.out:
        _write_manifest(out, "eval", argv, config=cfg.to_dict(), run=str(run), dataset=path)
    print(json.dumps(report.summary()))


def _harness(args, argv, name, fn):
    cfg = _config(args)
    corpus, path = _dataset(cfg.dataset or None)
    cfg = cfg.with_(dataset=path)
    rows = fn(cfg, corpus)
    out = Path(args.out)
    _write_manifest(out, name, argv, config=cfg.to_dict())
    (out / f"{name}.json").write_text(json.dumps(rows, indent=1))
    table = format_table(rows, "model" if name == "ablation" else "spm")
    (out / f"{name}.txt").write_text(table + "\n")
    print(table)
    if any(r["status"] != "ok" for r in rows):
        raise CLIError(f"{sum(r['status'] != 'ok' for r in rows)} {name} row(s) failed; see {out / (name + '.json')}")


def cmd_ablate(args, argv):
    _harness(args, argv, "ablation", ablation_harness)


def cmd_portability(args, argv):
    _harness(args, argv, "portability", portability_harness)


def cmd_dump_matrix(args, argv):
    run = Path(args.run)
    manifest_cfg = json.loads((run / "manifest.json").read_text())["config"] if (run / "manifest.json").exists() else {}
    corpus, path = _dataset(args.dataset or manifest_cfg.get("dataset"))
    cfg, model = _load_run(run, corpus)
    ids = []
    for ref in args.pair:
        if ref not in corpus.by_id:
            raise CLIError(f"graph id {ref!r} not in dataset {path}")
        ids.append(ref)
    g1, g2 = corpus.by_id[ids[0]], corpus.by_id[ids[1]]
    cache = FeatureCache(corpus.graphs, corpus.label_count, corpus.n_max)
    batch = make_batch([(g1, g2)], cache)
    s1, _, t1, _ = model.similarity(batch)
    score = model(batch).values[0]
    n1, n2 = g1.num_nodes, g2.num_nodes
    S1, S1p = s1.values[0, :n1, :n2], t1.values[0, :n1, :n2]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "S1.txt").write_text(grid(S1) + "\n")
    (out / "S1_prime.txt").write_text(grid(S1p) + "\n")
    heat = f"S1 ({g1.graph_id} x {g2.graph_id})\n{heat_table(S1)}\n\nS1' after SPM\n{heat_table(S1p)}\n"
    (out / "heat.txt").write_text(heat)
    try:
        truth = corpus.target(g1.graph_id, g2.graph_id)
    except LabelCacheMiss:
        truth = None
    _write_manifest(out, "dump-matrix", argv, config=cfg.to_dict(), run=str(run), pair=ids, prediction=float(score), target=truth)
    print(heat)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="segmn", description="Graph similarity learning with dual embeddings and structure perception matching.")
    p.add_argument("--verbose", "-v", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--n-graphs", type=int, default=200)
    g.add_argument("--n-min", type=int, default=4)
    g.add_argument("--n-max", type=int, default=8)
    g.add_argument("--edge-prob", type=float, default=0.35)
    g.add_argument("--labels", type=int, default=0, help="number of node labels (0 = unlabeled)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--test-fraction", type=float, default=0.2)
    g.add_argument("--name", default="synthetic")
    g.add_argument("--label", action="store_true", help="also compute exact GED labels")
    g.add_argument("--node-budget", type=int, default=10)
    g.add_argument("--workers", type=int, default=None)
    g.set_defaults(func=cmd_gen)

    g = sub.add_parser("label", help="fill a dataset's GED label cache")
    g.add_argument("--dataset", required=True)
    g.add_argument("--node-budget", type=int, default=10)
    g.add_argument("--workers", type=int, default=None)
    g.set_defaults(func=cmd_label)

    g = sub.add_parser("transform", help="line graph, assignment graph or modified incidence of graph files")
    g.add_argument("--graph", required=True)
    g.add_argument("--kind", choices=("line", "assignment", "incidence"), default="line")
    g.add_argument("--other", help="second graph (assignment only)")
    g.add_argument("--out")
    g.set_defaults(func=cmd_transform)

    g = sub.add_parser("oracle", help="exact GED of two graph files")
    g.add_argument("--pair", nargs=2, required=True, metavar=("A", "B"))
    g.add_argument("--node-budget", type=int, default=10)
    g.set_defaults(func=cmd_oracle)

    def experiment(g):
        g.add_argument("--dataset", help="dataset directory (default: bundled 100-graph corpus)")
        g.add_argument("--config", help="flat key: value file, or a previous run's manifest.json")
        g.add_argument("--variant", choices=("node", "edge", "dual"))
        g.add_argument("--spm-layers", type=int)
        g.add_argument("--seed", type=int)
        g.add_argument("--epochs", type=int)
        g.add_argument("--out", required=True)

    g = sub.add_parser("train", help="train a model")
    experiment(g)
    g.set_defaults(func=cmd_train)

    g = sub.add_parser("ablate", help="six-row ablation table")
    experiment(g)
    g.set_defaults(func=cmd_ablate)

    g = sub.add_parser("portability", help="SPM insertions into the GraphSim-style baseline")
    experiment(g)
    g.set_defaults(func=cmd_portability)

    g = sub.add_parser("eval", help="evaluate a training run")
    g.add_argument("--run", required=True)
    g.add_argument("--dataset")
    g.add_argument("--out")
    g.set_defaults(func=cmd_eval)

    g = sub.add_parser("dump-matrix", help="write S1 and S1' of one pair as grids and a heat table")
    g.add_argument("--run", required=True)
    g.add_argument("--pair", nargs=2, required=True, metavar=("ID1", "ID2"))
    g.add_argument("--dataset")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_dump_matrix)
    return p


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": " ".join(str(message).split())}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except CLIError as exc:
        return _fail("usage", str(exc), 2)
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args, argv)
    except CLIError as exc:
        usage = str(exc).startswith("usage:")
        return _fail("usage" if usage else "runtime", str(exc), 2 if usage else 1)
    except (GraphValidationError, ValueError, KeyError, FileNotFoundError, FloatingPointError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
