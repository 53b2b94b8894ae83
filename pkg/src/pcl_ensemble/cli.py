"""Command-line entry point: prepare, train, grid, predict, ensemble, sweep, analyze, report.

Exit codes: 0 success, 2 input error, 3 registry/selection error,
4 missing labels, 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .config import PipelineConfig, load_config
from .corpus import (
    DataSplit, SplitConfig, load_task_tsv, make_splits, read_id_list, read_split_tsv, write_task_tsv,
)
from .ensemble import (
    EnsembleSpec, PredictionSet, build, compose, ensemble_sweep, evaluate_at, optimize_threshold,
    write_sweep_csv,
)
from .errors import InputError, LabelAvailabilityError, PipelineError, SelectionError
from .evaluation import error_by_keyword, export_errors, macro_average
from .plotting import plot_family_summary, plot_sweep
from .text_prep import build_vocab, load_pretrained
from .training import RunRegistry, TrainedModelRecord, expand_grid, predict_split, train

log = logging.getLogger("pcl_ensemble")


class Workspace:
    """Output-root layout shared by all commands."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.root = Path(cfg.output_root)
        self.data = self.root / "data"
        self.runs = self.root / "runs"
        self.registry = RunRegistry(self.runs / "registry.jsonl")

    def ensure_writable(self) -> None:
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            probe = self.root / ".write-probe"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise InputError(f"output root not writable: {self.root}: {exc}") from exc

    def split(self, name: str) -> DataSplit:
        path = self.data / f"{name}.tsv"
        if not path.is_file():
            raise InputError(f"split {name!r} not prepared ({path}); run `prepare` first")
        return read_split_tsv(path, name, self.cfg.data.cutoff)

    def run_dir(self, run_id: str) -> Path:
        return self.runs / run_id

    def records(self) -> list[TrainedModelRecord]:
        return self.registry.records()

    def predictions(self, record: TrainedModelRecord, split: str) -> PredictionSet:
        if split == "dev":
            return record.load_dev_predictions()
        path = self.run_dir(record.run_id) / f"{split}_predictions.tsv"
        if not path.is_file():
            predict_split(record.checkpoint, self.split(split), record.run_id).write_tsv(path)
        return PredictionSet.read_tsv(path, record.run_id, split)


def _labels_or_exit(split: DataSplit) -> dict[str, int]:
    if not split.labelled:
        raise LabelAvailabilityError(f"split {split.name!r} has no gold labels")
    return split.labels()


# -- prepare ------------------------------------------------------------------

def cmd_prepare(ws: Workspace, args) -> None:
    cfg = ws.cfg
    records = load_task_tsv(cfg.data.corpus, cfg.data.schema_.to_schema(), cfg.data.cutoff)
    if cfg.splits.mode == "explicit":
        ids = {"train": read_id_list(cfg.splits.train_ids), "dev": read_id_list(cfg.splits.dev_ids)}
        if cfg.splits.test_ids is not None:
            ids["test"] = read_id_list(cfg.splits.test_ids)
        splits = make_splits(records, SplitConfig(ids=ids))
    else:
        splits = make_splits(records, SplitConfig(fractions=cfg.splits.fractions, seed=cfg.splits.seed))
    if cfg.data.test is not None:
        schema = (cfg.data.test_schema or cfg.data.schema_).to_schema()
        test = load_task_tsv(cfg.data.test, schema, cfg.data.cutoff)
        clash = {r.par_id for r in test} & {r.par_id for s in splits.values() for r in s.records}
        if clash:
            raise InputError(f"test file shares par_ids with the corpus splits: {sorted(clash)[:10]}")
        splits["test"] = DataSplit("test", test)

    ws.data.mkdir(parents=True, exist_ok=True)
    summary = {}
    for name, split in sorted(splits.items()):
        write_task_tsv(split.records, ws.data / f"{name}.tsv")
        pos = sum(r.binary_label or 0 for r in split.records)
        summary[name] = {"records": len(split), "positives": pos if split.labelled else None}
    vocab = build_vocab((r.text for r in splits["train"].records), cfg.text.min_freq)
    vocab.save(ws.data / "vocab.txt")

    coverage = {}
    for alias, src in sorted(cfg.embeddings.sources.items()):
        if src.path is None:
            coverage[alias] = {"path": None, "format": src.format, "coverage": None}
        else:
            table = load_pretrained(src.path, src.format, vocab, seed=cfg.seed)
            coverage[alias] = {"path": str(src.path), "format": src.format,
                               "coverage": table.coverage, "dim": table.dim}
    (ws.data / "coverage.json").write_text(json.dumps(coverage, indent=2, sort_keys=True) + "\n")
    (ws.data / "splits.json").write_text(
        json.dumps({"splits": summary, "vocab_size": len(vocab)}, indent=2, sort_keys=True) + "\n")
    for name, s in sorted(summary.items()):
        print(f"{name}\t{s['records']} records\t{s['positives']} PCL")


# -- training ------------------------------------------------------------------

def _train_and_register(spec, train_split, dev_split, run_dir, embeddings, registry_path) -> str:
    record = train(spec, train_split, dev_split, run_dir, embeddings)
    RunRegistry(registry_path).append(record)
    return f"{record.run_id}\tbest epoch {record.best_epoch}\tdev F1 {record.best_dev_f1:.4f}"


def _grid_specs(ws: Workspace, family: str | None):
    specs = expand_grid(ws.cfg.grid, ws.cfg.text.max_len, ws.cfg.text.min_freq)
    return [s for s in specs if family is None or s.family == family]


def cmd_train(ws: Workspace, args) -> None:
    specs = {s.run_id: s for s in _grid_specs(ws, None)}
    if args.run not in specs:
        raise InputError(f"unknown run id {args.run!r}; `grid --list` shows the grid")
    print(_train_and_register(specs[args.run], ws.split("train"), ws.split("dev"),
                              ws.run_dir(args.run), ws.cfg.embeddings, ws.registry.path))


def cmd_grid(ws: Workspace, args) -> None:
    specs = _grid_specs(ws, args.family)
    if args.list:
        for s in specs:
            print(s.run_id)
        return
    if args.resume:
        done = ws.registry.completed()
        skipped = [s for s in specs if s.run_id in done]
        specs = [s for s in specs if s.run_id not in done]
        if skipped:
            print(f"resume: skipping {len(skipped)} completed runs")
    train_split, dev_split = ws.split("train"), ws.split("dev")
    jobs = [(s, train_split, dev_split, ws.run_dir(s.run_id), ws.cfg.embeddings, ws.registry.path)
            for s in specs]
    if args.jobs <= 1:
        for job in jobs:
            print(_train_and_register(*job))
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for line in pool.map(_train_and_register, *zip(*jobs)) if jobs else []:
                print(line)
    print(f"trained {len(jobs)} runs")


def cmd_predict(ws: Workspace, args) -> None:
    split = ws.split(args.split)
    for rec in ws.records():
        if args.family and rec.family != args.family:
            continue
        path = ws.run_dir(rec.run_id) / f"{args.split}_predictions.tsv"
        predict_split(rec.checkpoint, split, rec.run_id).write_tsv(path)
        print(path)


# -- ensembles -------------------------------------------------------------------

def _member_metrics_rows(ws, spec, records, labels, threshold):
    by_id = {r.run_id: r for r in records}
    rows = []
    for rid in spec.members:
        rec = by_id[rid]
        m = evaluate_at(rec.load_dev_predictions(), labels, threshold)
        sched = rec.spec.lr_schedule
        rows.append([rid, rec.family, rec.spec.embedding or "",
                     sched.step_size if sched.kind == "stepwise" else "", rec.spec.seed,
                     rec.best_dev_f1, m.precision, m.recall, m.f1])
    return rows


def cmd_ensemble(ws: Workspace, args) -> None:
    cfg = ws.cfg
    if args.name not in cfg.ensembles:
        raise InputError(f"ensemble {args.name!r} not defined; known: {', '.join(cfg.ensembles)}")
    rule = cfg.ensembles[args.name]
    records = ws.records()
    spec = compose(records, rule.top, rule.add, rule.family, ensemble_id=args.name)
    dev = ws.split("dev")
    labels = _labels_or_exit(dev)
    dev_avg = build(spec, {r.run_id: ws.predictions(r, "dev") for r in records if r.run_id in spec.members})
    spec.threshold, _ = optimize_threshold(dev_avg, labels, cfg.threshold_grid)

    out = ws.root / "ensembles" / args.name
    out.mkdir(parents=True, exist_ok=True)
    spec.write_json(out / "spec.json")
    dev_avg.write_tsv(out / "dev_predictions.tsv")
    dev_m = evaluate_at(dev_avg, labels, spec.threshold)
    dev_m.write_json(out / "dev_metrics.json")
    with (out / "members.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "family", "embedding", "step_size", "seed", "best_dev_f1",
                    "precision", "recall", "f1"])
        w.writerows(_member_metrics_rows(ws, spec, records, labels, spec.threshold))
    print(f"{args.name}\tthreshold {spec.threshold:.2f}\tdev P {dev_m.precision:.4f} "
          f"R {dev_m.recall:.4f} F1 {dev_m.f1:.4f}")

    test_path = ws.data / "test.tsv"
    if test_path.is_file():
        test = ws.split("test")
        by_id = {r.run_id: r for r in records}
        test_avg = build(spec, {m: ws.predictions(by_id[m], "test") for m in spec.members})
        test_avg.write_tsv(out / "test_predictions.tsv")
        if test.labelled:
            test_m = evaluate_at(test_avg, test.labels(), spec.threshold)
            test_m.write_json(out / "test_metrics.json")
            print(f"{args.name}\ttest P {test_m.precision:.4f} R {test_m.recall:.4f} F1 {test_m.f1:.4f}")
        else:
            print(f"{args.name}\ttest labels unavailable; wrote predictions only")


def cmd_sweep(ws: Workspace, args) -> None:
    cfg = ws.cfg
    n_max = args.n_max or cfg.sweep.n_max
    records = ws.records()
    if len(records) < n_max:
        raise SelectionError(f"sweep up to n={n_max} needs {n_max} runs; registry holds {len(records)}")
    labels = _labels_or_exit(ws.split("dev"))
    preds = {r.run_id: ws.predictions(r, "dev") for r in records}
    points = ensemble_sweep(records, preds, n_max, labels, cfg.threshold_grid, cfg.sweep.frozen_threshold)
    out = ws.root / "sweep"
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(points, out / "sweep.csv")
    (out / "sweep.json").write_text(json.dumps(
        [{"n": p.n, "threshold": p.threshold, "members": p.members} for p in points], indent=2) + "\n")
    plot_sweep(points, out / "sweep.png")
    for p in points:
        print(f"{p.n}\t{p.threshold:.2f}\t{p.f1:.4f}")


# -- analysis / report -------------------------------------------------------------

def _source_predictions(ws: Workspace, source: str, split: str) -> tuple[PredictionSet, float]:
    ens_dir = ws.root / "ensembles" / source
    if (ens_dir / "spec.json").is_file():
        spec = EnsembleSpec.read_json(ens_dir / "spec.json")
        path = ens_dir / f"{split}_predictions.tsv"
        return PredictionSet.read_tsv(path, source, split), spec.threshold
    by_id = {r.run_id: r for r in ws.records()}
    if source not in by_id:
        raise InputError(f"{source!r} is neither a built ensemble nor a registered run")
    rec = by_id[source]
    threshold, _ = optimize_threshold(rec.load_dev_predictions(), ws.split("dev").labels(),
                                      ws.cfg.threshold_grid)
    return ws.predictions(rec, split), threshold


def cmd_analyze(ws: Workspace, args) -> None:
    split = ws.split(args.split)
    labels = _labels_or_exit(split)
    pset, threshold = _source_predictions(ws, args.source, args.split)
    preds = {pid: int(p >= threshold) for pid, p in pset.as_dict().items()}
    out = ws.root / "analysis" / f"{args.source}-{args.split}"
    out.mkdir(parents=True, exist_ok=True)
    breakdown = error_by_keyword(preds, labels, split.records)
    breakdown.write_csv(out / "errors_by_keyword.csv")
    probs = pset.as_dict()
    n_fp = export_errors(probs, threshold, labels, split.records, "fp", out / "false_positives.tsv")
    n_fn = export_errors(probs, threshold, labels, split.records, "fn", out / "false_negatives.tsv")
    evaluate_at(pset, labels, threshold).write_json(out / "metrics.json")
    print(f"{args.source} on {args.split} at threshold {threshold:.2f}: {n_fp} FP, {n_fn} FN -> {out}")


def _variant(rec: TrainedModelRecord) -> str:
    if rec.family == "transformer":
        return f"step_size={rec.spec.lr_schedule.step_size}"
    return rec.spec.embedding or "random"


def cmd_report(ws: Workspace, args) -> None:
    """Per-family tuned thresholds and seed-averaged metrics per model variant."""
    cfg = ws.cfg
    labels = _labels_or_exit(ws.split("dev"))
    records = sorted(ws.records(), key=lambda r: r.run_id)
    if not records:
        raise SelectionError("registry is empty; run `grid` first")
    out = ws.root / "report"
    out.mkdir(parents=True, exist_ok=True)
    thresholds, rows = {}, []
    for family in ("transformer", "cnn", "bilstm"):
        fam = [r for r in records if r.family == family]
        if not fam:
            continue
        preds = [r.load_dev_predictions() for r in fam]
        # one threshold per family: the grid value maximizing the seed-averaged F1
        best_t, best_f1 = None, -1.0
        for t in sorted(cfg.threshold_grid):
            f1 = macro_average([evaluate_at(p, labels, t) for p in preds])["f1"]
            if f1 > best_f1:
                best_t, best_f1 = t, f1
        thresholds[family] = best_t
        variants: dict[str, list] = {}
        for rec, p in zip(fam, preds):
            variants.setdefault(_variant(rec), []).append(evaluate_at(p, labels, best_t))
        for variant, reports in sorted(variants.items()):
            avg = macro_average(reports)
            rows.append({"family": family, "variant": variant, **avg, "threshold": best_t})
    with (out / "variant_summary.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, ["family", "variant", "runs", "threshold", "precision", "recall", "f1"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    (out / "thresholds.json").write_text(json.dumps(thresholds, indent=2, sort_keys=True) + "\n")
    plot_family_summary(rows, out / "variant_summary.png")
    for r in rows:
        print(f"{r['family']}\t{r['variant']}\tP {r['precision']:.4f}\tR {r['recall']:.4f}\tF1 {r['f1']:.4f}")


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="pipeline YAML config")
    common.add_argument("--out", type=Path, help="override the config's output_root")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pcl-ensemble", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("prepare", parents=[common], help="materialize splits, vocabulary, coverage report")
    t = sub.add_parser("train", parents=[common], help="train one grid run")
    t.add_argument("--run", required=True, help="run id from the expanded grid")
    g = sub.add_parser("grid", parents=[common], help="train every run of the grid")
    g.add_argument("--family", choices=["cnn", "bilstm", "transformer"])
    g.add_argument("--jobs", type=int, default=1)
    g.add_argument("--resume", action="store_true", help="skip runs already in the registry")
    g.add_argument("--list", action="store_true", help="print run ids and exit")
    pr = sub.add_parser("predict", parents=[common], help="score a split with every registered run")
    pr.add_argument("--split", choices=["dev", "test"], default="test")
    pr.add_argument("--family", choices=["cnn", "bilstm", "transformer"])
    e = sub.add_parser("ensemble", parents=[common], help="build a configured ensemble")
    e.add_argument("name")
    s = sub.add_parser("sweep", parents=[common], help="F1 for top-1..N ensembles")
    s.add_argument("--n-max", type=int)
    a = sub.add_parser("analyze", parents=[common], help="per-keyword error slices and FP/FN listings")
    a.add_argument("source", help="ensemble name or run id")
    a.add_argument("--split", choices=["dev", "test"], default="dev")
    sub.add_parser("report", parents=[common], help="seed-averaged metrics per model variant")
    return p


COMMANDS = {
    "prepare": cmd_prepare, "train": cmd_train, "grid": cmd_grid, "predict": cmd_predict,
    "ensemble": cmd_ensemble, "sweep": cmd_sweep, "analyze": cmd_analyze, "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, output_root=args.out)
        ws = Workspace(cfg)
        ws.ensure_writable()
        COMMANDS[args.command](ws, args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
