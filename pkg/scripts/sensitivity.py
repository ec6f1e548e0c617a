"""UNREAL sensitivity to one hyperparameter on Cora (k', gamma, alpha, p, rounds).

    python scripts/sensitivity.py --param k_prime --values 100 300 500 700 900
    python scripts/sensitivity.py --param gamma --values 0.25 0.5 0.75 1.0
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

import numpy as np  # noqa: E402

from unreal.bench import REFERENCE_RUN, Job, run_job  # noqa: E402
from unreal.graph import load_graph_dir, normalize_adjacency  # noqa: E402

PARAMS = {
    "k_prime": ("run", int),
    "rounds": ("run", int),
    "normalize_embeddings": ("run", lambda v: v.lower() in ("1", "true", "yes")),
    "alpha": ("selection", int),
    "gamma": ("selection", float),
    "p": ("selection", float),
}


def with_value(name: str, raw: str):
    where, cast = PARAMS[name]
    value = cast(raw)
    if where == "run":
        return replace(REFERENCE_RUN, **{name: value})
    return replace(REFERENCE_RUN, selection=replace(REFERENCE_RUN.selection, **{name: value}))


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--param", required=True, choices=sorted(PARAMS))
    p.add_argument("--values", nargs="+", required=True)
    p.add_argument("--rho", type=float, default=10)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--budget", choices=["full", "acceptance"], default="full")
    p.add_argument("--data-dir", default=str(ROOT / "data" / "cora"))
    p.add_argument("--cache", default=str(ROOT / "runs" / "sensitivity"))
    args = p.parse_args(argv)

    g = load_graph_dir(args.data_dir)
    a = normalize_adjacency(g)
    print(f"| {args.param} | F1 | bAcc | seeds |\n|---|---|---|---|")
    for raw in args.values:
        base = with_value(args.param, raw)
        f1, bacc = [], []
        for seed in range(args.seeds):
            s = run_job(Job("unreal", args.rho, seed, args.budget), g, a, args.cache, base=base).summary()
            f1.append(s["test"]["f1"])
            bacc.append(s["test"]["bacc"])
        print(f"| {raw} | {100 * np.mean(f1):.2f} | {100 * np.mean(bacc):.2f} | {args.seeds} |", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
