"""Produce Cora in the library's on-disk formats.

The raw LINQS release (``cora.content`` / ``cora.cites``) is vendored under
``data/raw/cora``; it was taken from the ``pgl`` 2.2.6 source distribution on
PyPI, which is also what ``--download`` re-fetches.  Class ids follow the
Planetoid ordering so that per-class counts line up with the usual tables:
(351, 217, 418, 818, 426, 298, 180).

    python scripts/fetch_cora.py --out data/cora
"""

from __future__ import annotations

import argparse
import gzip
import io
import sys
import tarfile
import urllib.request
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from unreal.graph import from_edges, save_graph  # noqa: E402

PGL_SDIST = (
    "https://files.pythonhosted.org/packages/fc/76/"
    "f85e59a3543a6b0ad995dee80c562b58f33e769a25282a440d0c9a5e2333/pgl-2.2.6.tar.gz"
)
CLASS_ORDER = [
    "Theory",
    "Reinforcement_Learning",
    "Genetic_Algorithms",
    "Neural_Networks",
    "Probabilistic_Methods",
    "Case_Based",
    "Rule_Learning",
]
RAW_DIR = ROOT / "data" / "raw" / "cora"


def download_raw(dest: Path = RAW_DIR) -> None:
    dest.mkdir(parents=True, exist_ok=True)
    blob = urllib.request.urlopen(PGL_SDIST, timeout=120).read()
    with tarfile.open(fileobj=io.BytesIO(blob)) as tar:
        for name in ("cora.content", "cora.cites"):
            member = tar.getmember(f"pgl-2.2.6/pgl/data/cora/{name}")
            data = tar.extractfile(member).read()
            with gzip.open(dest / f"{name}.gz", "wb") as fh:
                fh.write(data)


def _open(raw_dir: Path, name: str):
    gz = raw_dir / f"{name}.gz"
    if gz.exists():
        return gzip.open(gz, "rt", encoding="utf-8")
    return open(raw_dir / name, encoding="utf-8")


def parse_linqs(raw_dir: Path = RAW_DIR):
    ids, feats, labels = [], [], []
    with _open(raw_dir, "cora.content") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            ids.append(parts[0])
            feats.append(np.array(parts[1:-1], dtype=np.float32))
            labels.append(CLASS_ORDER.index(parts[-1]))
    index = {pid: i for i, pid in enumerate(ids)}
    edges = []
    with _open(raw_dir, "cora.cites") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) == 2 and parts[0] in index and parts[1] in index:
                edges.append((index[parts[1]], index[parts[0]]))
    return np.asarray(edges, dtype=np.int64), np.stack(feats), np.asarray(labels, dtype=np.int64)


def build(out: Path, raw_dir: Path = RAW_DIR) -> dict:
    edges, feats, labels = parse_linqs(raw_dir)
    g = from_edges(edges, feats, labels, name="cora")
    return save_graph(g, out)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=ROOT / "data" / "cora")
    ap.add_argument("--download", action="store_true", help="re-fetch the raw files from PyPI")
    args = ap.parse_args(argv)
    if args.download or not (RAW_DIR / "cora.content.gz").exists():
        download_raw()
    paths = build(args.out)
    for k, p in paths.items():
        print(f"{k}: {p}")


if __name__ == "__main__":
    main()
