"""Round loop for UNREAL and self-training, single-shot baselines, and the run journal.

A run journal is a JSON-lines file: one ``config`` line, one ``round`` line
per training round, and a closing ``summary`` line.  Keys starting with
``wall_clock`` carry timing and are the only non-deterministic content.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from .cluster import assign_cluster_labels, class_centers, cluster_label_sets, kmeans, l2_normalize
from .gcn import Model, ModelConfig, prepare_inputs, predict, train
from .graph import Graph, NormAdj, normalize_adjacency
from .metrics import evaluate
from .rng import derive_seed
from .select import SelectionConfig, build_pool, confidence_select, select_round
from .splitter import Split

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
METHODS = ("vanilla", "reweight", "self_training", "unreal")


@dataclass
class RunConfig:
    method: str = "unreal"
    rounds: int = 40
    model: ModelConfig = field(default_factory=ModelConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    k_prime: int = 300
    retrain_policy: str = "fresh_init"
    seed: int = 0
    normalize_embeddings: bool = False
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-4

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.method in ("self_training", "unreal") and self.rounds < 1:
            raise ValueError("iterative methods need rounds >= 1")
        if self.k_prime < 1:
            raise ValueError("k_prime must be >= 1")
        if self.retrain_policy not in ("fresh_init", "warm_start"):
            raise ValueError("retrain_policy must be fresh_init or warm_start")

    def to_dict(self) -> dict:
        d = asdict(self)
        alpha = d["selection"]["alpha"]
        d["selection"]["alpha"] = alpha if np.isscalar(alpha) else list(alpha)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d["model"] = ModelConfig(**d.get("model", {}))
        d["selection"] = SelectionConfig(**d.get("selection", {}))
        return cls(**d)


def acceptance_budget(cfg: RunConfig) -> RunConfig:
    """Reduced CI budget: 500-epoch later rounds, patience 100, ten rounds."""
    model = replace(cfg.model, later_round_epochs=500, patience=100)
    return replace(cfg, model=model, rounds=min(cfg.rounds, 10))


# -- journal -----------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


class RunRecord:
    """In-memory journal, optionally mirrored line by line to a file."""

    def __init__(self, path: str | Path | None = None):
        self.lines: list[dict] = []
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def append(self, line: dict) -> None:
        line = _plain(line)
        self.lines.append(line)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(line, sort_keys=True) + "\n")
                fh.flush()

    @property
    def config(self) -> dict:
        return self.lines[0]["config"]

    @property
    def rounds(self) -> list[dict]:
        return [x for x in self.lines if x.get("type") == "round"]

    def summary(self) -> dict:
        for x in reversed(self.lines):
            if x.get("type") == "summary":
                return x
        raise KeyError("run has no summary line")

    def added(self) -> list[tuple[int, int]]:
        """All (node, pseudo-label) pairs in the order they joined the training set."""
        return [(int(u), int(c)) for r in self.rounds for u, c in r.get("added", [])]

    def dumps(self, drop_wall_clock: bool = False) -> str:
        lines = [strip_wall_clock(x) for x in self.lines] if drop_wall_clock else self.lines
        return "".join(json.dumps(x, sort_keys=True) + "\n" for x in lines)


def strip_wall_clock(obj):
    if isinstance(obj, dict):
        return {k: strip_wall_clock(v) for k, v in obj.items() if not k.startswith("wall_clock")}
    if isinstance(obj, list):
        return [strip_wall_clock(v) for v in obj]
    return obj


def read_journal(path: str | Path) -> list[dict]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: {exc.msg}") from exc
    return out


def load_record(path: str | Path) -> RunRecord:
    rec = RunRecord()
    rec.lines = read_journal(path)
    rec.path = Path(path)
    return rec


# -- helpers -----------------------------------------------------------------


@dataclass
class _Context:
    g: Graph
    a: NormAdj
    inputs: object
    split: Split
    truth: np.ndarray
    k: int


def _context(g: Graph, split: Split, cfg: RunConfig, a: NormAdj | None = None) -> _Context:
    a = normalize_adjacency(g) if a is None else a
    inputs = prepare_inputs(g, cfg.model.row_normalize_features, np.dtype(cfg.model.dtype))
    return _Context(g=g, a=a, inputs=inputs, split=split, truth=np.asarray(g.labels), k=g.k)


def _metrics(ctx: _Context, predicted) -> dict:
    out = {}
    for name, ids in (("val", ctx.split.val_ids), ("test", ctx.split.test_ids)):
        if ids:
            ev = evaluate(predicted, ctx.truth, np.asarray(ids), k=ctx.k)
            out[name] = {"bacc": ev.balanced_accuracy, "f1": ev.macro_f1, "acc": ev.accuracy}
    return out


def _fit(ctx, cfg: RunConfig, train_ids, labels, epochs: int, prev: Model | None):
    start = prev.copy() if (prev is not None and cfg.retrain_policy == "warm_start") else None
    split = SimpleNamespace(train_ids=train_ids, val_ids=ctx.split.val_ids)
    return train(ctx.inputs, ctx.a, split, cfg.model, labels=labels, max_epochs=epochs, k=ctx.k, model=start)


def _round_line(i, train_ids, labels, k, trace, metrics, added, t0, extra=None) -> dict:
    line = {
        "type": "round",
        "round": i,
        "train_size": len(train_ids),
        "train_counts": np.bincount(labels[list(train_ids)], minlength=k).tolist(),
        "added": [[u, c] for u, c in added],
        "epochs": len(trace),
        "best_epoch": trace.best_epoch,
        "best_val_acc": trace.best_val_acc,
        "lr_final": trace.lr[-1] if trace.lr else None,
        "lr_halvings": int(round(math.log2(trace.lr[0] / trace.lr[-1]))) if trace.lr else 0,
        **metrics,
        "wall_clock_s": time.perf_counter() - t0,
    }
    if extra:
        line.update(extra)
    return line


def _header(ctx: _Context, cfg: RunConfig) -> dict:
    return {
        "type": "config",
        "schema_version": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "dataset": ctx.g.name,
        "rho": ctx.split.rho,
        "split_seed": ctx.split.seed,
        "initial_train_counts": list(ctx.split.per_class_train_counts),
        "n_val": len(ctx.split.val_ids),
        "n_test": len(ctx.split.test_ids),
    }


def _summary(ctx, cfg, rec: RunRecord, metrics, t_start, early_exit=False) -> dict:
    rounds = rec.rounds
    return {
        "type": "summary",
        "schema_version": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "dataset": ctx.g.name,
        "rho": ctx.split.rho,
        "rounds_run": len(rounds),
        "early_exit": early_exit,
        "n_added": sum(len(r["added"]) for r in rounds),
        "final_train_counts": rounds[-1]["train_counts"] if rounds else None,
        **metrics,
        "wall_clock_total_s": time.perf_counter() - t_start,
    }


# -- runs --------------------------------------------------------------------


def run_baseline(g: Graph, split: Split, cfg: RunConfig, journal=None, a: NormAdj | None = None) -> RunRecord:
    """Single training run with plain (``vanilla``) or inverse-frequency weighted (``reweight``) loss."""
    if cfg.method not in ("vanilla", "reweight"):
        raise ValueError("run_baseline handles vanilla and reweight")
    if cfg.method == "reweight" and cfg.model.class_weight_mode != "inverse_frequency":
        cfg = replace(cfg, model=replace(cfg.model, class_weight_mode="inverse_frequency"))
    ctx = _context(g, split, cfg, a)
    rec = RunRecord(journal)
    rec.append(_header(ctx, cfg))
    t0 = time.perf_counter()
    labels = ctx.truth.copy()
    m, trace = _fit(ctx, cfg, split.train_ids, labels, cfg.model.max_epochs, None)
    snap = predict(m, ctx.inputs, ctx.a)
    metrics = _metrics(ctx, snap.predicted)
    rec.append(_round_line(0, split.train_ids, labels, ctx.k, trace, metrics, [], t0))
    rec.append(_summary(ctx, cfg, rec, metrics, t0))
    return rec


def _iterate(g, split, cfg: RunConfig, journal, a, chooser) -> RunRecord:
    ctx = _context(g, split, cfg, a)
    rec = RunRecord(journal)
    rec.append(_header(ctx, cfg))
    t_start = time.perf_counter()
    labels = ctx.truth.copy()
    train_ids = list(split.train_ids)
    labeled = set(train_ids) | set(split.val_ids)

    t0 = time.perf_counter()
    m, trace = _fit(ctx, cfg, train_ids, labels, cfg.model.first_round_epochs, None)
    snap = predict(m, ctx.inputs, ctx.a)
    pending = {"trace": trace, "metrics": _metrics(ctx, snap.predicted), "added": [], "t0": t0, "extra": None}
    early = False
    for i in range(cfg.rounds):
        unlabeled = np.array(sorted(set(range(g.n)) - labeled), dtype=np.int64)
        counts = np.bincount(labels[train_ids], minlength=ctx.k)
        selected, extra = chooser(i, m, snap, unlabeled, train_ids, labels, counts)
        extra = dict(pending["extra"] or {}, **extra)
        rec.append(
            _round_line(i, train_ids, labels, ctx.k, pending["trace"], pending["metrics"], pending["added"], pending["t0"], extra)
        )
        if not selected:
            early = True
            break
        added = _selection_order(selected, extra)
        for u, c in added:
            labels[u] = c
            train_ids.append(u)
            labeled.add(u)
        t0 = time.perf_counter()
        m, trace = _fit(ctx, cfg, sorted(train_ids), labels, cfg.model.later_round_epochs, m)
        snap = predict(m, ctx.inputs, ctx.a)
        pending = {"trace": trace, "metrics": _metrics(ctx, snap.predicted), "added": added, "t0": t0, "extra": None}
    if not early:
        rec.append(
            _round_line(cfg.rounds, train_ids, labels, ctx.k, pending["trace"], pending["metrics"], pending["added"], pending["t0"])
        )
    rec.append(_summary(ctx, cfg, rec, pending["metrics"], t_start, early_exit=early))
    return rec


def _selection_order(selected: dict, extra: dict):
    """Selected pairs grouped by class, each class in its ranked order."""
    order = []
    for entry in extra.get("selection", []):
        for u in entry["selected_ids"]:
            order.append((int(u), int(selected[u])))
    return order


def run_unreal(g: Graph, split: Split, cfg: RunConfig, journal=None, a: NormAdj | None = None) -> RunRecord:
    """Iterative pseudo-labeling with cluster agreement, fused rankings and the GI filter."""
    if cfg.method != "unreal":
        raise ValueError("run_unreal needs method='unreal'")
    truth = np.asarray(g.labels)

    def chooser(i, m, snap, unlabeled, train_ids, labels, counts):
        emb = np.asarray(snap.embeddings, dtype=np.float64)
        if cfg.normalize_embeddings:
            emb = l2_normalize(emb)
        tr = np.asarray(sorted(train_ids), dtype=np.int64)
        cc = class_centers(emb[tr], labels[tr], k=g.k)
        if unlabeled.size == 0:
            return {}, {"selection": [], "dpam": None}
        cl = kmeans(
            emb[unlabeled],
            min(cfg.k_prime, unlabeled.size),
            seed=derive_seed(cfg.seed, f"kmeans/{i}"),
            max_iters=cfg.kmeans_max_iters,
            tol=cfg.kmeans_tol,
            node_ids=unlabeled,
        )
        sets = cluster_label_sets(cl, assign_cluster_labels(cl, cc), g.k)
        pool = build_pool(unlabeled, sets, snap.predicted, snap.confidence, emb, cc.centers, cfg.selection.p)
        selected, audit = select_round(pool, cfg.selection, counts, labeled=train_ids, round_index=i, truth=truth)
        inside = np.zeros(g.n, dtype=bool)
        for lst in pool.S:
            inside[lst] = True
        in_ids = unlabeled[inside[unlabeled]]
        out_ids = unlabeled[~inside[unlabeled]]
        correct = snap.predicted == truth
        dpam_stats = {
            "n_in": int(in_ids.size),
            "acc_in": float(correct[in_ids].mean()) if in_ids.size else None,
            "n_out": int(out_ids.size),
            "acc_out": float(correct[out_ids].mean()) if out_ids.size else None,
        }
        extra = {
            "selection": audit,
            "rbo": list(pool.rbo),
            "dpam": dpam_stats,
            "kmeans": {"k_prime": cl.k_prime, "iterations": cl.iterations_run, "inertia": cl.inertia, "empty": len(cl.empty_clusters)},
        }
        return selected, extra

    return _iterate(g, split, cfg, journal, a, chooser)


def run_self_training(g: Graph, split: Split, cfg: RunConfig, journal=None, a: NormAdj | None = None) -> RunRecord:
    """Iterative pseudo-labeling with the classifier's most confident predictions only."""
    if cfg.method != "self_training":
        raise ValueError("run_self_training needs method='self_training'")
    truth = np.asarray(g.labels)

    def chooser(i, m, snap, unlabeled, train_ids, labels, counts):
        selected, audit = confidence_select(
            unlabeled, snap.predicted, snap.confidence, g.k, cfg.selection, counts, round_index=i, truth=truth
        )
        return selected, {"selection": audit}

    return _iterate(g, split, cfg, journal, a, chooser)


def run(g: Graph, split: Split, cfg: RunConfig, journal=None, a: NormAdj | None = None) -> RunRecord:
    fn = {
        "vanilla": run_baseline,
        "reweight": run_baseline,
        "self_training": run_self_training,
        "unreal": run_unreal,
    }[cfg.method]
    return fn(g, split, cfg, journal=journal, a=a)


# -- audits ------------------------------------------------------------------


def audit_pseudo_labels(record: RunRecord, g: Graph, top_n: int = 100) -> dict:
    """Accuracy of the first ``top_n`` pseudo-labels given to minority and to majority classes.

    Minority classes are those whose initial training count is below the
    largest one.  Also reports the classifier's accuracy inside and outside
    the agreement set, averaged over rounds, when the run logged it.
    """
    truth = np.asarray(g.labels)
    header = record.lines[0]
    counts = np.asarray(header["initial_train_counts"])
    minority = set(np.flatnonzero(counts < counts.max()).tolist())
    out: dict = {}
    groups = {"minority": [], "majority": []}
    for u, c in record.added():
        groups["minority" if c in minority else "majority"].append((u, c))
    for name, pairs in groups.items():
        used = pairs[:top_n]
        acc = float(np.mean([truth[u] == c for u, c in used])) if used else None
        out[name] = {"n": len(used), "available": len(pairs), "truncated": len(pairs) < top_n, "accuracy": acc}
    dp = [r["dpam"] for r in record.rounds if r.get("dpam")]
    if dp:
        acc_in = [d["acc_in"] for d in dp if d["acc_in"] is not None]
        acc_out = [d["acc_out"] for d in dp if d["acc_out"] is not None]
        out["dpam"] = {
            "rounds": len(dp),
            "acc_in": float(np.mean(acc_in)) if acc_in else None,
            "acc_out": float(np.mean(acc_out)) if acc_out else None,
            "first_round": dp[0],
        }
    return out
