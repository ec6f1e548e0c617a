"""Command-line entry point.

    unreal prepare-split --rho 10 --majority 20 --seed 1
    unreal run --method unreal --rounds 40 --alpha 4 --kprime 300 --gamma 0.5 --rbo-p 0.75
    unreal sweep --config sweep.cfg --grid run.seed=0,1,2 --grid selection.gamma=0.25,0.5
    unreal audit runs/run.jsonl --top-n 100
    unreal report runs/*.jsonl --format markdown

Exit codes: 0 success, 2 usage or configuration error, 3 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import CliConfig, ConfigError, load_config, set_value, validate
from .gcn import NumericError
from .graph import Graph, GraphFormatError, load_graph_dir
from .metrics import SchemaMismatch, emit_report
from .pipeline import audit_pseudo_labels, load_record, run
from .splitter import CapacityError, make_step_imbalance, read_split, split_stats, subsample_split, write_split

log = logging.getLogger("unreal")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

# flag dest -> config key
FLAG_KEYS = {
    "data_dir": "data.dir",
    "dataset": "data.dataset",
    "rho": "split.rho",
    "majority": "split.majority",
    "val_per_class": "split.val_per_class",
    "minority_fraction": "split.minority_fraction",
    "split_seed": "split.seed",
    "split_file": "split.file",
    "from_split_file": "split.from_file",
    "method": "run.method",
    "rounds": "run.rounds",
    "kprime": "run.k_prime",
    "seed": "run.seed",
    "retrain_policy": "run.retrain_policy",
    "budget": "run.budget",
    "normalize_embeddings": "run.normalize_embeddings",
    "alpha": "selection.alpha",
    "gamma": "selection.gamma",
    "rbo_p": "selection.p",
    "ranking_mode": "selection.ranking_mode",
    "no_dgin": "selection.dgin_enabled",
    "minority_only": "selection.minority_only",
    "lr": "model.lr",
    "hidden": "model.hidden",
    "layers": "model.layers",
    "epochs": "model.max_epochs",
    "patience": "model.patience",
    "weight_decay": "model.weight_decay",
    "bn_stat_rows": "model.bn_stat_rows",
    "out_dir": "output.out_dir",
    "workers": "sweep.workers",
}


class UsageError(Exception):
    pass


# -- argument parsing --------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override any config key")
    p.add_argument("--data-dir", help="dataset directory (default $UNREAL_DATA_DIR/<dataset>)")
    p.add_argument("--dataset")
    p.add_argument("--out-dir")
    p.add_argument("--rho", type=float)
    p.add_argument("--majority", type=int, help="training nodes per majority class")
    p.add_argument("--val-per-class", type=int)
    p.add_argument("--minority-fraction", type=float)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("-v", "--verbose", action="store_true")


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--split-file", help="use this split as-is")
    p.add_argument("--from-split-file", help="impose step imbalance on an existing split")
    p.add_argument("--method", choices=["vanilla", "reweight", "self_training", "unreal"])
    p.add_argument("--rounds", type=int)
    p.add_argument("--alpha", help="per-class cap; one value or a comma list per class")
    p.add_argument("--kprime", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--rbo-p", type=float)
    p.add_argument("--ranking-mode", choices=["fused", "geometric", "confidence"])
    p.add_argument("--no-dgin", action="store_const", const=False, default=None)
    p.add_argument("--minority-only", action="store_const", const=True, default=None)
    p.add_argument("--retrain-policy", choices=["fresh_init", "warm_start"])
    p.add_argument("--budget", choices=["full", "acceptance"])
    p.add_argument("--normalize-embeddings", action="store_const", const=True, default=None)
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--epochs", type=int, help="max epochs for single-shot baselines")
    p.add_argument("--patience", type=int)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--bn-stat-rows", choices=["train", "all"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="unreal", description="Imbalanced semi-supervised node classification")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-split", help="write a step-imbalanced split file")
    _common(p)
    p.add_argument("--out", help="split file path (default <out-dir>/split.txt)")

    p = sub.add_parser("run", help="run one method and write its journal")
    _common(p)
    _run_flags(p)
    p.add_argument("--journal", help="journal path (default <out-dir>/run.jsonl)")

    p = sub.add_parser("sweep", help="run a grid of configurations")
    _common(p)
    _run_flags(p)
    p.add_argument("--grid", action="append", default=[], metavar="SECTION.KEY=V1,V2", help="grid axis")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("audit", help="pseudo-label accuracy audit of finished runs")
    p.add_argument("records", nargs="+")
    p.add_argument("--top-n", type=int, default=100)
    p.add_argument("--data-dir")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("report", help="aggregate finished runs into a table")
    p.add_argument("records", nargs="+")
    p.add_argument("--format", choices=["markdown", "json"], default="markdown")
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args) -> CliConfig:
    cfg = load_config(getattr(args, "config", None))
    for dest, key in FLAG_KEYS.items():
        val = getattr(args, dest, None)
        if val is None:
            continue
        set_value(cfg, key, str(val) if isinstance(val, str) else val)
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        set_value(cfg, key.strip(), value)
    return cfg


# -- shared steps ------------------------------------------------------------


def _load_graph(cfg: CliConfig) -> Graph:
    d = cfg.data.resolved_dir()
    try:
        return load_graph_dir(d, name=cfg.data.dataset)
    except FileNotFoundError as exc:
        raise UsageError(f"dataset files missing: {exc}") from exc
    except GraphFormatError as exc:
        raise UsageError(f"bad dataset in {d}: {exc}") from exc


def make_split(cfg: CliConfig, g: Graph):
    sc = cfg.split
    seed = cfg.split_seed()
    try:
        if sc.file:
            return read_split(sc.file, g)
        if sc.from_file:
            base = read_split(sc.from_file, g)
            return subsample_split(base, g, sc.rho, sc.minority_fraction, seed)
        return make_step_imbalance(g, sc.rho, sc.majority, sc.minority_fraction, sc.val_per_class, seed)
    except FileNotFoundError as exc:
        raise UsageError(f"split file missing: {exc.filename}") from exc
    except (CapacityError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


class Manifest:
    def __init__(self, out_dir: Path):
        self.path = out_dir / "manifest.json"
        self.data = json.loads(self.path.read_text()) if self.path.exists() else {"artifacts": []}

    def add(self, path: Path, kind: str) -> None:
        rel = os.path.relpath(path, self.path.parent)
        self.data["artifacts"] = [a for a in self.data["artifacts"] if a["path"] != rel]
        self.data["artifacts"].append({"path": rel, "kind": kind})

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")


# -- commands ----------------------------------------------------------------


def cmd_prepare_split(args) -> int:
    cfg = resolve_config(args)
    g = _load_graph(cfg)
    s = make_split(cfg, g)
    out_dir = Path(cfg.output.out_dir)
    out = Path(args.out) if args.out else out_dir / "split.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_split(out, s)
    print(split_stats(s, g).table("train"))
    print(f"val={len(s.val_ids)} test={len(s.test_ids)} -> {out}")
    m = Manifest(out_dir)
    m.add(out, "split")
    m.save()
    return EXIT_OK


def _execute(cfg: CliConfig, journal: Path, g: Graph | None = None) -> dict:
    run_cfg = validate(cfg)
    g = _load_graph(cfg) if g is None else g
    split = make_split(cfg, g)
    rec = run(g, split, run_cfg, journal=journal)
    return rec.summary()


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    validate(cfg)
    out_dir = Path(cfg.output.out_dir)
    journal = Path(args.journal) if args.journal else out_dir / "run.jsonl"
    summary = _execute(cfg, journal)
    m = Manifest(out_dir)
    m.add(journal, "run_record")
    m.save()
    test = summary.get("test", {})
    print(f"{summary['config']['method']}: bAcc {100 * test.get('bacc', float('nan')):.2f}  F1 {100 * test.get('f1', float('nan')):.2f}")
    print(f"journal: {journal}")
    return EXIT_OK


def _grid(cfg: CliConfig, extra: list[str]) -> dict[str, list[str]]:
    grid = dict(cfg.sweep.grid)
    for item in extra:
        if "=" not in item:
            raise ConfigError(f"--grid expects SECTION.KEY=V1,V2, got {item!r}")
        key, values = item.split("=", 1)
        grid[key.strip()] = [v.strip() for v in values.split(",") if v.strip()]
    return grid


def _sweep_job(job):
    name, cfg, journal = job
    logging.basicConfig(level=logging.WARNING)
    try:
        return name, _execute(cfg, journal), None
    except Exception as exc:  # recorded, the sweep continues
        return name, None, f"{type(exc).__name__}: {exc}"


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    grid = _grid(cfg, args.grid)
    if not grid or any(not v for v in grid.values()):
        raise UsageError("empty grid")
    keys = sorted(grid)
    out_dir = Path(cfg.output.out_dir)
    jobs = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        c = copy.deepcopy(cfg)
        for k, v in zip(keys, combo):
            set_value(c, k, v)
        validate(c)
        name = "__".join(f"{k.split('.')[-1]}={v}" for k, v in zip(keys, combo)).replace("/", "_")
        jobs.append((name, c, out_dir / "runs" / f"{name}.jsonl"))

    workers = cfg.sweep.workers or os.cpu_count() or 1
    if workers == 1:
        results = [_sweep_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))

    m = Manifest(out_dir)
    ok = []
    failures = {}
    for (name, _, journal), (_, summary, err) in zip(jobs, results):
        if err is None:
            ok.append(journal)
            m.add(journal, "run_record")
        else:
            failures[name] = err
            print(f"FAILED {name}: {err}", file=sys.stderr)
    if ok:
        report = out_dir / "report.md"
        emit_report([str(p) for p in ok], "markdown", report)
        emit_report([str(p) for p in ok], "json", out_dir / "report.json")
        m.add(report, "report")
        m.add(out_dir / "report.json", "report")
        print(report.read_text())
    if failures:
        (out_dir / "failures.json").write_text(json.dumps(failures, indent=2, sort_keys=True) + "\n")
        m.add(out_dir / "failures.json", "failures")
    m.save()
    print(f"{len(ok)}/{len(jobs)} runs succeeded")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_audit(args) -> int:
    out = {}
    for path in args.records:
        rec = load_record(path)
        header = rec.lines[0]
        cfg = CliConfig()
        if args.data_dir:
            cfg.data.dir = args.data_dir
        cfg.data.dataset = header.get("dataset", "cora")
        g = _load_graph(cfg)
        out[path] = {"method": header["config"]["method"], **audit_pseudo_labels(rec, g, args.top_n)}
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        text = emit_report(args.records, args.format, args.out)
    except SchemaMismatch as exc:
        raise UsageError(str(exc)) from exc
    print(text)
    return EXIT_OK


COMMANDS = {
    "prepare-split": cmd_prepare_split,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "audit": cmd_audit,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (RuntimeError, MemoryError, ValueError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
