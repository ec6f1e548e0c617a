"""Seed-averaged comparison table on Cora for the reference protocol.

    python scripts/reproduce.py --rho 10 20 --methods vanilla reweight self_training unreal

Journals land in --cache (default runs/acceptance, shared with the
acceptance suite) and are reused when their config matches.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from unreal.bench import Job, run_jobs  # noqa: E402
from unreal.metrics import emit_report  # noqa: E402
from unreal.pipeline import METHODS  # noqa: E402


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data-dir", default=str(ROOT / "data" / "cora"))
    p.add_argument("--rho", type=float, nargs="+", default=[10])
    p.add_argument("--methods", nargs="+", default=list(METHODS), choices=METHODS)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--budget", choices=["full", "acceptance"], default="full")
    p.add_argument("--cache", default=str(ROOT / "runs" / "acceptance"))
    p.add_argument("--fresh", action="store_true", help="ignore cached journals")
    p.add_argument("--out", help="write the markdown table here")
    args = p.parse_args(argv)

    jobs = [
        Job(m, rho, seed, "full" if m in ("vanilla", "reweight") else args.budget)
        for rho in args.rho
        for m in args.methods
        for seed in range(args.seeds)
    ]
    recs = run_jobs(jobs, args.data_dir, args.cache, fresh=args.fresh)
    print(emit_report(list(recs.values()), "markdown", args.out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
