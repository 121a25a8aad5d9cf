"""Command-line orchestration.

Subcommands: ``hierarchy`` (build / randomize / export), ``gen-data``,
``train``, ``evaluate``, ``sweep``, ``report``. Outputs are UTF-8 CSV with
``#``-prefixed metadata headers carrying the run configuration and the
taxonomy hash, never paths or timestamps, so identical flags reproduce
byte-identical files.

Exit codes: 0 success, 1 usage error, 2 data error, 3 partial sweep failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from .data import (DataError, SplitSpec, dataset_from_csv, dataset_to_csv,
                   split, synth_hierarchical)
from .fileio import fmt, meta_header, sha16, write_text
from .metrics import MetricReport
from .model import (AdamOptimizer, ClassifierModel, LossSpec, TrainSchedule,
                    checkpoint_from_text, checkpoint_to_text,
                    confidence_half_width, evaluate_checkpoints,
                    evaluate_model, init_model, select_checkpoints,
                    trace_to_csv, train)
from .sweep import parse_sweep_config, run_sweep
from .taxonomy import (HierarchyError, apply_edits, leaf_permutation,
                       load_edges, load_taxonomy, prune_to_tree,
                       randomize_leaves)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PARTIAL = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _read(path: str, flag: str) -> str:
    p = Path(path)
    if not p.exists():
        raise DataError(f"{flag}: file not found: {path}")
    return p.read_text(encoding="utf-8")


def _read_classes(path: str, flag: str = "--classes") -> list[str]:
    lines = _read(path, flag).splitlines()
    classes = [l.strip() for l in lines if l.strip() and not l.startswith("#")]
    if not classes:
        raise DataError(f"{flag}: no class ids in {path}")
    return classes


def _load_tax(args):
    return load_taxonomy(_read(args.taxonomy, "--taxonomy"),
                         _read_classes(args.classes))


def _check_data_hash(data_text: str, tax) -> None:
    for line in data_text.splitlines():
        if line.startswith("# taxonomy_hash="):
            embedded = line.split("=", 1)[1].strip()
            if embedded != tax.hash_hex():
                raise DataError(
                    f"dataset taxonomy hash {embedded} does not match "
                    f"--taxonomy hash {tax.hash_hex()}"
                )
        if not line.startswith("#"):
            break


def _parse_triple(text: str) -> tuple[float, float, float]:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise DataError(f"--split needs three comma-separated values, got {text!r}")
    return parts[0], parts[1], parts[2]


def _parse_ks(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x)


def _csv_body(text: str) -> list[list[str]]:
    lines = [l for l in text.splitlines() if l and not l.startswith("#")]
    return [l.split(",") for l in lines]


def _csv_meta(text: str) -> dict:
    meta = {}
    for line in text.splitlines():
        if line.startswith("# ") and "=" in line:
            key, _, val = line[2:].partition("=")
            meta[key] = val
    return meta


# ---------------------------------------------------------------------------
# hierarchy
# ---------------------------------------------------------------------------


def _export_with_header(tax, extra_meta=None) -> str:
    meta = {
        "format": "hiercls-taxonomy-v1",
        "taxonomy_hash": tax.hash_hex(),
        "num_nodes": tax.num_nodes,
        "num_leaves": tax.num_leaves,
        "tree_height": tax.tree_height,
    }
    if extra_meta:
        meta.update(extra_meta)
    return meta_header(meta) + tax.export_edges()


def cmd_hierarchy(args) -> int:
    if args.action == "build":
        graph = load_edges(_read(args.edges, "--edges"))
        tax = prune_to_tree(graph, _read_classes(args.classes))
        if args.edits:
            edit_rows = []
            for lineno, line in enumerate(
                    _read(args.edits, "--edits").splitlines(), start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                fields = line.split("\t")
                if len(fields) != 2:
                    raise DataError(
                        f"--edits line {lineno}: expected 'node<TAB>new_parent'"
                    )
                edit_rows.append((fields[0], fields[1]))
            tax = apply_edits(tax, edit_rows)
        write_text(args.out, _export_with_header(tax))
    elif args.action == "randomize":
        tax = _load_tax(args)
        randomized = randomize_leaves(tax, args.seed)
        write_text(args.out, _export_with_header(
            randomized, {"randomize_seed": args.seed,
                         "source_taxonomy_hash": tax.hash_hex()}))
        perm = leaf_permutation(tax, args.seed)
        lines = ["slot,label_before,label_after"]
        lines += [f"{i},{a},{b}" for i, (a, b) in enumerate(perm)]
        sidecar = args.permutation_out or (args.out + ".permutation.csv")
        write_text(sidecar, meta_header({"randomize_seed": args.seed,
                                         "source_taxonomy_hash": tax.hash_hex()})
                   + "\n".join(lines) + "\n")
    else:  # export
        tax = _load_tax(args)
        write_text(args.out, _export_with_header(tax))
    return EXIT_OK


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    tax = _load_tax(args)
    ds = synth_hierarchical(tax, per_class=args.per_class, dim=args.dim,
                            step_scale=args.step_scale,
                            noise_scale=args.noise_scale, seed=args.seed,
                            level_decay=args.level_decay)
    params = {
        "per_class": args.per_class,
        "dim": args.dim,
        "step_scale": fmt(args.step_scale),
        "noise_scale": fmt(args.noise_scale),
        "level_decay": fmt(args.level_decay),
        "seed": args.seed,
        "taxonomy_hash": tax.hash_hex(),
    }
    write_text(args.out, meta_header(params) + dataset_to_csv(ds))
    manifest = dict(params, format="hiercls-dataset-manifest-v1",
                    num_examples=ds.n)
    write_text(args.out + ".manifest.json",
               json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / evaluate
# ---------------------------------------------------------------------------


def _report_rows(means: dict, halves: dict, reports: list[MetricReport]):
    rows = []
    for name in means:
        if name.startswith("top") and name.endswith("_error"):
            rows.append(("top_k_error", name[3:-6], means[name], halves[name]))
        elif name.startswith("avg_hier_dist_at_"):
            rows.append(("avg_hier_dist_topk", name.rsplit("_", 1)[1],
                         means[name], halves[name]))
        else:
            rows.append((name, "", means[name], halves[name]))
    counts = [r.mistake_count for r in reports]
    rows.append(("mistake_count", "", float(np.mean(counts)),
                 confidence_half_width(counts)))
    rows.append(("num_examples", "", float(reports[0].num_examples), 0.0))
    return rows


def _write_report_csv(path, rows, meta) -> None:
    lines = ["metric,k,mean,half_width"]
    for metric, k, mean, hw in rows:
        lines.append(f"{metric},{k},{fmt(mean)},{fmt(hw)}")
    write_text(path, meta_header(meta) + "\n".join(lines) + "\n")


def _write_histogram_csv(path, hist: dict, meta) -> None:
    lines = ["height,count"] + [f"{h},{c}" for h, c in sorted(hist.items())]
    write_text(path, meta_header(meta) + "\n".join(lines) + "\n")


def _train_meta(args, tax, data_text) -> dict:
    meta = {
        "loss": args.loss,
        "head": args.head,
        "steps": args.steps,
        "batch_size": args.batch_size,
        "checkpoint_every": args.checkpoint_every,
        "discard_before": args.discard_before,
        "lr": fmt(args.lr),
        "seed": args.seed,
        "split": args.split,
        "split_seed": args.split_seed,
        "ks": args.ks,
        "eval_split": args.eval_split,
        "taxonomy_hash": tax.hash_hex(),
        "data_sha": sha16(data_text),
    }
    if args.alpha is not None:
        meta["alpha"] = fmt(args.alpha)
    if args.beta is not None:
        meta["beta"] = fmt(args.beta)
    if args.hidden_dim is not None:
        meta["hidden_dim"] = args.hidden_dim
    return meta


def cmd_train(args) -> int:
    tax = _load_tax(args)
    data_text = _read(args.data, "--data")
    _check_data_hash(data_text, tax)
    ds = dataset_from_csv(data_text, tax)
    parts = split(ds, SplitSpec(_parse_triple(args.split), args.split_seed))
    spec = LossSpec(args.loss, alpha=args.alpha, beta=args.beta)
    schedule = TrainSchedule(steps=args.steps, batch_size=args.batch_size,
                             checkpoint_every=args.checkpoint_every,
                             seed=args.seed, discard_before=args.discard_before)
    ks = _parse_ks(args.ks)
    model = init_model(tax, args.head, ds.feature_dim, seed=args.seed,
                       hidden_dim=args.hidden_dim)
    trace = train(tax, model, parts[0], parts[1], spec, AdamOptimizer(lr=args.lr),
                  schedule, ks=ks)
    selected = select_checkpoints(trace, args.discard_before)
    eval_ds = parts[{"train": 0, "val": 1, "test": 2}[args.eval_split]]
    averaged = evaluate_checkpoints(tax, model, trace, selected, eval_ds, ks=ks)

    meta = _train_meta(args, tax, data_text)
    out = Path(args.out)
    write_text(out / "trace.csv", meta_header(meta) + trace_to_csv(trace))
    work = copy.deepcopy(model)
    for rec in trace.records:
        work.restore(rec.params)
        write_text(out / "checkpoints" / f"step_{rec.step:06d}.txt",
                   checkpoint_to_text(work, rec.step, tax.hash_hex()))
    sel_lines = ["trace_index,step"]
    sel_lines += [f"{i},{trace.records[i].step}" for i in selected]
    write_text(out / "selected.csv", meta_header(meta) + "\n".join(sel_lines) + "\n")
    _write_report_csv(out / "report.csv",
                      _report_rows(averaged.means, averaged.half_widths,
                                   averaged.reports), meta)
    _write_histogram_csv(out / "histogram.csv", averaged.severity_histogram, meta)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    tax = _load_tax(args)
    data_text = _read(args.data, "--data")
    _check_data_hash(data_text, tax)
    ds = dataset_from_csv(data_text, tax)
    parts = split(ds, SplitSpec(_parse_triple(args.split), args.split_seed))
    eval_ds = parts[{"train": 0, "val": 1, "test": 2}[args.split_name]]
    ks = _parse_ks(args.ks)
    meta = {
        "split": args.split,
        "split_seed": args.split_seed,
        "split_name": args.split_name,
        "ks": args.ks,
        "taxonomy_hash": tax.hash_hex(),
        "data_sha": sha16(data_text),
    }

    def load_ckpt(path: str) -> ClassifierModel:
        model, _, tax_hash = checkpoint_from_text(_read(path, "--checkpoint"))
        if tax_hash != tax.hash_hex():
            raise DataError(
                f"checkpoint taxonomy hash {tax_hash} does not match "
                f"--taxonomy hash {tax.hash_hex()}"
            )
        return model

    if args.run:
        run_dir = Path(args.run)
        sel_text = _read(run_dir / "selected.csv", "--run")
        steps = [int(cells[1]) for cells in _csv_body(sel_text)[1:]]
        reports = []
        for step in steps:
            model = load_ckpt(str(run_dir / "checkpoints" / f"step_{step:06d}.txt"))
            reports.append(evaluate_model(tax, model, eval_ds, ks=ks))
        names = reports[0].scalars().keys()
        series = {n: [r.scalars()[n] for r in reports] for n in names}
        means = {n: float(np.mean(v)) for n, v in series.items()}
        halves = {n: confidence_half_width(v) for n, v in series.items()}
        hist: dict[int, int] = {}
        for r in reports:
            for h, c in r.severity_histogram.items():
                hist[h] = hist.get(h, 0) + c
        meta["checkpoints"] = ",".join(str(s) for s in steps)
    else:
        model = load_ckpt(args.checkpoint)
        report = evaluate_model(tax, model, eval_ds, ks=ks)
        reports = [report]
        means = report.scalars()
        halves = {n: 0.0 for n in means}
        hist = report.severity_histogram
    _write_report_csv(args.out_report, _report_rows(means, halves, reports), meta)
    if args.out_histogram:
        _write_histogram_csv(args.out_histogram, hist, meta)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep / report
# ---------------------------------------------------------------------------


def cmd_sweep(args) -> int:
    cfg_path = Path(args.config)
    config = parse_sweep_config(_read(args.config, "--config"), cfg_path.parent)
    if args.workers is not None:
        config.workers = args.workers
    failed = run_sweep(config, args.out)
    if failed:
        print(f"sweep finished with {failed} failed point(s); see failures.csv",
              file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


_ID_COLUMNS = ("method", "head", "parameter", "taxonomy", "seed", "num_seeds")


def cmd_report(args) -> int:
    if args.histogram:
        text = _read(args.histogram, "--histogram")
        body = _csv_body(text)
        if not body or body[0] != ["height", "count"]:
            raise DataError("histogram input must have a 'height,count' header")
        rows = [(cells[0], int(cells[1])) for cells in body[1:]]
        total = sum(c for _, c in rows)
        meta = dict(_csv_meta(text), normalization="frequency")
        lines = ["height,frequency"]
        lines += [f"{h},{fmt(c / total if total else 0.0)}" for h, c in rows]
        write_text(args.out, meta_header(meta) + "\n".join(lines) + "\n")
        return EXIT_OK

    tables, metas = [], []
    for path in args.tables:
        text = _read(path, "--tables")
        body = _csv_body(text)
        if not body:
            raise DataError(f"empty table: {path}")
        tables.append((Path(path).stem, body[0], body[1:]))
        metas.append(_csv_meta(text))
    header0 = tables[0][1]
    for _, header, _ in tables[1:]:
        if header != header0:
            raise DataError("column mismatch across input tables")
    meta = {"sources": ",".join(stem for stem, _, _ in tables)}
    hashes = {m.get("taxonomy_hash") for m in metas if "taxonomy_hash" in m}
    if len(hashes) == 1:
        meta["taxonomy_hash"] = hashes.pop()
    ids = [c for c in header0 if c in _ID_COLUMNS]
    metrics = [c for c in header0 if c not in _ID_COLUMNS and not c.endswith("_hw")]
    col = {c: i for i, c in enumerate(header0)}
    out_lines = [",".join(["source"] + ids + ["metric", "value", "half_width"])]
    for source, _, rows in tables:
        for cells in rows:
            for metric in metrics:
                hw_idx = col.get(metric + "_hw")
                hw = cells[hw_idx] if hw_idx is not None else ""
                out_lines.append(",".join(
                    [source] + [cells[col[c]] for c in ids]
                    + [metric, cells[col[metric]], hw]))
    write_text(args.out, meta_header(meta) + "\n".join(out_lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="hiercls",
                     description="hierarchy-aware classification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_h = sub.add_parser("hierarchy", help="build, randomize, or export trees")
    hsub = p_h.add_subparsers(dest="action", required=True)
    p_build = hsub.add_parser("build")
    p_build.add_argument("--edges", required=True)
    p_build.add_argument("--classes", required=True)
    p_build.add_argument("--edits", default=None)
    p_build.add_argument("--out", required=True)
    p_rand = hsub.add_parser("randomize")
    p_rand.add_argument("--taxonomy", required=True)
    p_rand.add_argument("--classes", required=True)
    p_rand.add_argument("--seed", type=int, required=True)
    p_rand.add_argument("--out", required=True)
    p_rand.add_argument("--permutation-out", default=None)
    p_exp = hsub.add_parser("export")
    p_exp.add_argument("--taxonomy", required=True)
    p_exp.add_argument("--classes", required=True)
    p_exp.add_argument("--out", required=True)

    p_g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p_g.add_argument("--taxonomy", required=True)
    p_g.add_argument("--classes", required=True)
    p_g.add_argument("--per-class", type=int, default=500)
    p_g.add_argument("--dim", type=int, default=16)
    p_g.add_argument("--step-scale", type=float, default=1.0)
    p_g.add_argument("--noise-scale", type=float, default=0.75)
    p_g.add_argument("--level-decay", type=float, default=1.0)
    p_g.add_argument("--seed", type=int, default=0)
    p_g.add_argument("--out", required=True)

    p_t = sub.add_parser("train", help="train one classifier")
    p_t.add_argument("--data", required=True)
    p_t.add_argument("--taxonomy", required=True)
    p_t.add_argument("--classes", required=True)
    p_t.add_argument("--loss", choices=("ce", "hxe", "soft"), required=True)
    p_t.add_argument("--alpha", type=float, default=None)
    p_t.add_argument("--beta", type=float, default=None)
    p_t.add_argument("--head", choices=("class", "conditional"), default="class")
    p_t.add_argument("--hidden-dim", type=int, default=None)
    p_t.add_argument("--steps", type=int, default=20_000)
    p_t.add_argument("--batch-size", type=int, default=64)
    p_t.add_argument("--checkpoint-every", type=int, default=500)
    p_t.add_argument("--discard-before", type=int, default=5_000)
    p_t.add_argument("--lr", type=float, default=1e-5)
    p_t.add_argument("--seed", type=int, default=0)
    p_t.add_argument("--split", default="0.7,0.15,0.15")
    p_t.add_argument("--split-seed", type=int, default=0)
    p_t.add_argument("--ks", default="1,5,20")
    p_t.add_argument("--eval-split", choices=("train", "val", "test"),
                     default="val")
    p_t.add_argument("--out", required=True)

    p_e = sub.add_parser("evaluate", help="evaluate checkpoints")
    p_e.add_argument("--data", required=True)
    p_e.add_argument("--taxonomy", required=True)
    p_e.add_argument("--classes", required=True)
    p_e.add_argument("--split", default="0.7,0.15,0.15")
    p_e.add_argument("--split-seed", type=int, default=0)
    p_e.add_argument("--split-name", choices=("train", "val", "test"),
                     default="test")
    p_e.add_argument("--ks", default="1,5,20")
    group = p_e.add_mutually_exclusive_group(required=True)
    group.add_argument("--run", default=None,
                       help="training output directory (averages the selection)")
    group.add_argument("--checkpoint", default=None,
                       help="a single checkpoint file")
    p_e.add_argument("--out-report", required=True)
    p_e.add_argument("--out-histogram", default=None)

    p_s = sub.add_parser("sweep", help="run a hyperparameter grid")
    p_s.add_argument("--config", required=True)
    p_s.add_argument("--workers", type=int, default=None)
    p_s.add_argument("--out", required=True)

    p_r = sub.add_parser("report", help="merge tables or normalize histograms")
    rgroup = p_r.add_mutually_exclusive_group(required=True)
    rgroup.add_argument("--tables", nargs="+", default=None)
    rgroup.add_argument("--histogram", default=None)
    p_r.add_argument("--out", required=True)
    return parser


_HANDLERS = {
    "hierarchy": cmd_hierarchy,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _HANDLERS[args.command](args)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (HierarchyError, DataError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
