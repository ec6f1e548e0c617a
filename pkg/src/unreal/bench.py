"""Reference Cora protocol and a journal-cached job runner.

The experiment scripts and the acceptance suite both go through here so
that every reported number comes from the same configuration.  A finished
journal is reused when its config line matches the job exactly; delete the
cache directory (or pass ``fresh=True``) to recompute.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

from .gcn import ModelConfig
from .graph import Graph, NormAdj, load_graph_dir, normalize_adjacency
from .pipeline import RunConfig, RunRecord, acceptance_budget, load_record, run
from .select import SelectionConfig
from .splitter import make_step_imbalance

# training nodes per majority class for each imbalance ratio
MAJORITY = {1: 20, 5: 20, 10: 20, 20: 20, 50: 50, 100: 100}

REFERENCE_MODEL = ModelConfig(lr=0.005, bn_stat_rows="all")
REFERENCE_SELECTION = SelectionConfig(alpha=4, gamma=0.25, p=0.75)
REFERENCE_RUN = RunConfig(
    method="unreal",
    rounds=40,
    model=REFERENCE_MODEL,
    selection=REFERENCE_SELECTION,
    k_prime=300,
    normalize_embeddings=True,
)


@dataclass(frozen=True)
class Job:
    method: str
    rho: float
    seed: int
    budget: str = "full"
    dataset: str = "cora"

    def run_config(self, base: RunConfig = REFERENCE_RUN) -> RunConfig:
        cfg = replace(base, method=self.method, seed=self.seed, model=replace(base.model, seed=self.seed))
        return acceptance_budget(cfg) if self.budget == "acceptance" else cfg

    @property
    def majority(self) -> int:
        return MAJORITY[int(self.rho)]

    @property
    def name(self) -> str:
        return f"{self.dataset}_rho{self.rho:g}_{self.method}_s{self.seed}_{self.budget}"


def _fingerprint(job: Job, cfg: RunConfig) -> str:
    blob = json.dumps({"config": cfg.to_dict(), "rho": float(job.rho), "majority": job.majority}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _cached(path: Path, cfg: RunConfig) -> RunRecord | None:
    if not path.exists():
        return None
    try:
        rec = load_record(path)
        rec.summary()
    except (ValueError, KeyError, IndexError):
        return None
    return rec if rec.config == json.loads(json.dumps(cfg.to_dict())) else None


def run_job(
    job: Job,
    g: Graph,
    a: NormAdj | None = None,
    cache_dir: str | Path | None = None,
    base: RunConfig = REFERENCE_RUN,
    fresh: bool = False,
) -> RunRecord:
    """Run one (method, rho, seed) job, reusing a matching journal from ``cache_dir``."""
    cfg = job.run_config(base)
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"{job.name}_{_fingerprint(job, cfg)}.jsonl"
        if not fresh:
            hit = _cached(path, cfg)
            if hit is not None:
                return hit
    split = make_step_imbalance(g, job.rho, job.majority, seed=job.seed)
    tmp = None if path is None else path.with_suffix(".partial")
    rec = run(g, split, cfg, journal=tmp, a=a)
    if path is not None:
        tmp.replace(path)
        rec.path = path
    return rec


def run_jobs(jobs, data_dir: str | Path, cache_dir: str | Path | None = None, fresh: bool = False, log=print):
    """Run jobs sequentially on one graph; returns ``{job: RunRecord}``."""
    g = load_graph_dir(data_dir)
    a = normalize_adjacency(g)
    out = {}
    for job in jobs:
        t0 = time.perf_counter()
        rec = run_job(job, g, a, cache_dir, fresh=fresh)
        s = rec.summary()
        if log is not None:
            log(f"{job.name}: F1 {100 * s['test']['f1']:.2f} bAcc {100 * s['test']['bacc']:.2f} ({time.perf_counter() - t0:.0f}s)")
        out[job] = rec
    return out
