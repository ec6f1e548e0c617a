"""Balanced accuracy, macro-F1, seed aggregation and report emission."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalResult:
    balanced_accuracy: float
    macro_f1: float
    per_class_recall: tuple[float, ...]
    per_class_f1: tuple[float, ...]
    confusion: np.ndarray
    absent_classes: tuple[int, ...] = ()

    @property
    def accuracy(self) -> float:
        total = self.confusion.sum()
        return float(np.trace(self.confusion) / total) if total else 0.0

    def as_dict(self) -> dict:
        return {
            "bacc": self.balanced_accuracy,
            "f1": self.macro_f1,
            "acc": self.accuracy,
            "per_class_recall": list(self.per_class_recall),
            "per_class_f1": list(self.per_class_f1),
        }


def confusion_matrix(predicted, truth, k: int) -> np.ndarray:
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (truth, predicted), 1)
    return cm


def evaluate(predicted, truth, mask=None, k: int | None = None) -> EvalResult:
    """Confusion-matrix metrics over ``mask`` (bool mask or index array; default all nodes).

    A class with no true members in the mask gets recall 0 and is listed in
    ``absent_classes``.
    """
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if mask is not None:
        mask = np.asarray(mask)
        idx = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
        predicted, truth = predicted[idx], truth[idx]
    if truth.size == 0:
        raise ValueError("empty evaluation mask")
    if k is None:
        k = int(max(truth.max(), predicted.max())) + 1
    cm = confusion_matrix(predicted, truth, k)
    tp = np.diag(cm).astype(float)
    support = cm.sum(axis=1).astype(float)
    pred_count = cm.sum(axis=0).astype(float)
    recall = np.divide(tp, support, out=np.zeros(k), where=support > 0)
    precision = np.divide(tp, pred_count, out=np.zeros(k), where=pred_count > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(k), where=denom > 0)
    absent = tuple(int(c) for c in np.flatnonzero(support == 0))
    if absent:
        log.warning("classes %s absent from evaluation mask; recall set to 0", list(absent))
    return EvalResult(
        balanced_accuracy=float(recall.mean()),
        macro_f1=float(f1.mean()),
        per_class_recall=tuple(float(r) for r in recall),
        per_class_f1=tuple(float(v) for v in f1),
        confusion=cm,
        absent_classes=absent,
    )


@dataclass(frozen=True)
class Aggregate:
    mean: float
    stderr: float
    n: int

    def fmt(self, scale: float = 100.0) -> str:
        return f"{scale * self.mean:.2f} ± {scale * self.stderr:.2f}"


def aggregate_values(values) -> Aggregate:
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        raise ValueError("nothing to aggregate")
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return Aggregate(mean=float(v.mean()), stderr=se, n=int(v.size))


def aggregate(results) -> dict[str, Aggregate]:
    """Mean and standard error (sample std / sqrt(n)) of bAcc and macro-F1."""
    results = list(results)
    return {
        "bacc": aggregate_values(r.balanced_accuracy for r in results),
        "f1": aggregate_values(r.macro_f1 for r in results),
    }


# -- reports -----------------------------------------------------------------


class SchemaMismatch(ValueError):
    pass


def _summary_of(record) -> dict:
    """Accept a RunRecord-like object, a summary dict, or a path to a journal file."""
    if isinstance(record, (str, Path)):
        from .pipeline import read_journal

        lines = read_journal(record)
        summary = next((x for x in reversed(lines) if x.get("type") == "summary"), None)
        if summary is None:
            raise SchemaMismatch(f"{record}: no summary line")
        summary = dict(summary)
        summary.setdefault("_source", str(record))
        return summary
    if isinstance(record, dict):
        return record
    return record.summary()


def emit_report(records, fmt: str = "markdown", path: str | Path | None = None) -> str:
    summaries = [_summary_of(r) for r in records]
    versions = {s.get("schema_version") for s in summaries}
    if len(versions) > 1:
        first = summaries[0].get("schema_version")
        bad = next(s for s in summaries if s.get("schema_version") != first)
        raise SchemaMismatch(
            f"mixed schema versions {sorted(map(str, versions))}; offending: {bad.get('_source', bad.get('run_id', '?'))}"
        )

    groups: dict[tuple, list[dict]] = {}
    for s in summaries:
        key = (s["config"]["method"], s.get("dataset", "?"), float(s.get("rho", float("nan"))))
        groups.setdefault(key, []).append(s)
    rows = []
    for key in sorted(groups, key=lambda t: (t[0], t[1], t[2])):
        items = groups[key]
        bacc = aggregate_values(x["test"]["bacc"] for x in items)
        f1 = aggregate_values(x["test"]["f1"] for x in items)
        rows.append({"method": key[0], "dataset": key[1], "rho": key[2], "n": len(items), "bacc": bacc, "f1": f1})

    if fmt == "json":
        text = json.dumps(
            [
                {
                    "method": r["method"],
                    "dataset": r["dataset"],
                    "rho": r["rho"],
                    "n": r["n"],
                    "bacc_mean": r["bacc"].mean,
                    "bacc_stderr": r["bacc"].stderr,
                    "f1_mean": r["f1"].mean,
                    "f1_stderr": r["f1"].stderr,
                }
                for r in rows
            ],
            indent=2,
        )
    elif fmt in ("markdown", "markdown-table", "md"):
        lines = ["| Method | Dataset | rho | bAcc. | F1 | runs |", "|---|---|---|---|---|---|"]
        for r in rows:
            lines.append(
                f"| {r['method']} | {r['dataset']} | {r['rho']:g} | {r['bacc'].fmt()} | {r['f1'].fmt()} | {r['n']} |"
            )
        text = "\n".join(lines)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return text
