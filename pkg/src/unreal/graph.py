"""Graph container, file ingestion and the symmetric-normalized propagation operator."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"GFM1"


class GraphFormatError(ValueError):
    """Malformed or inconsistent graph input."""


class ParseError(GraphFormatError):
    pass


class BoundsError(GraphFormatError):
    pass


class SchemaError(GraphFormatError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected, unweighted node-classification instance.

    ``indptr``/``indices`` hold the CSR adjacency with both directions stored,
    sorted column indices and no self-loops.
    """

    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    name: str = "graph"

    def __post_init__(self):
        for arr in (self.indptr, self.indices, self.features, self.labels):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    @property
    def f(self) -> int:
        return int(self.features.shape[1])

    @property
    def k(self) -> int:
        return int(self.labels.max()) + 1 if self.n else 0

    @property
    def node_ids(self) -> np.ndarray:
        return np.arange(self.n, dtype=np.int64)

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return int(self.indices.shape[0]) // 2

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def edges(self) -> np.ndarray:
        """Undirected edge list with ``src < dst``, shape (m, 2)."""
        src = np.repeat(np.arange(self.n), self.degrees())
        keep = src < self.indices
        return np.stack([src[keep], self.indices[keep]], axis=1)

    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(self.indices.shape[0], dtype=np.float32)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


def from_edges(
    edges: np.ndarray, features: np.ndarray, labels: np.ndarray, name: str = "graph"
) -> Graph:
    """Build a Graph from an arbitrary (possibly directed, duplicated) edge array."""
    features = np.ascontiguousarray(features, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    if features.ndim != 2 or features.shape[0] != n:
        raise SchemaError(
            f"feature rows ({features.shape[0] if features.ndim else 0}) != label count ({n})"
        )
    if n and labels.min() < 0:
        raise BoundsError("negative class id")
    k = int(labels.max()) + 1 if n else 0
    missing = np.setdiff1d(np.arange(k), labels)
    if missing.size:
        raise SchemaError(f"classes {missing.tolist()} never appear in labels")

    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        bad = edges[(edges < 0).any(1) | (edges >= n).any(1)][0]
        raise BoundsError(f"edge {tuple(bad.tolist())} out of range for n={n}")
    loops = edges[:, 0] == edges[:, 1]
    if loops.any():
        log.warning("dropping %d self-loop(s)", int(loops.sum()))
        edges = edges[~loops]

    both = np.concatenate([edges, edges[:, ::-1]], axis=0)
    adj = sp.coo_matrix(
        (np.ones(both.shape[0], dtype=np.int8), (both[:, 0], both[:, 1])), shape=(n, n)
    ).tocsr()
    adj.sum_duplicates()
    adj.sort_indices()
    return Graph(
        indptr=adj.indptr.astype(np.int64),
        indices=adj.indices.astype(np.int64),
        features=features,
        labels=labels,
        name=name,
    )


# -- file formats ------------------------------------------------------------


def read_edges(path: str | Path) -> np.ndarray:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split("\t")
            if len(parts) != 2:
                parts = s.split()
            try:
                if len(parts) != 2:
                    raise ValueError
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: expected 'src<TAB>dst', got {s!r}") from None
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def write_edges(path: str | Path, edges: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# undirected edge list, one pair per line\n")
        for u, v in np.asarray(edges):
            fh.write(f"{int(u)}\t{int(v)}\n")


def read_features(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".csv":
        rows = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                s = line.strip()
                if not s:
                    continue
                try:
                    rows.append([float(x) for x in s.split(",")])
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: non-numeric feature value") from None
        widths = {len(r) for r in rows}
        if len(widths) > 1:
            raise ParseError(f"{path}: ragged feature rows (widths {sorted(widths)})")
        return np.array(rows, dtype=np.float32).reshape(len(rows), widths.pop() if widths else 0)

    raw = path.read_bytes()
    if raw[:4] != FEATURE_MAGIC or len(raw) < 20:
        raise ParseError(f"{path}: missing GFM1 header")
    n, f = struct.unpack("<QQ", raw[4:20])
    body = raw[20:]
    if len(body) != 4 * n * f:
        raise ParseError(f"{path}: expected {n}x{f} float32 payload, got {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").reshape(n, f).astype(np.float32)


def write_features(path: str | Path, features: np.ndarray) -> None:
    path = Path(path)
    x = np.asarray(features, dtype="<f4")
    if path.suffix == ".csv":
        with open(path, "w", encoding="utf-8") as fh:
            for row in x:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        return
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<QQ", x.shape[0], x.shape[1]))
        fh.write(np.ascontiguousarray(x).tobytes())


def read_labels(path: str | Path) -> np.ndarray:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            try:
                out.append(int(s))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: expected integer class id, got {s!r}") from None
    return np.array(out, dtype=np.int64)


def write_labels(path: str | Path, labels: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{int(c)}\n" for c in labels)


def load_graph(edge_path, feature_path, label_path, name: str | None = None) -> Graph:
    for p in (edge_path, feature_path, label_path):
        if not Path(p).exists():
            raise FileNotFoundError(p)
    labels = read_labels(label_path)
    features = read_features(feature_path)
    edges = read_edges(edge_path)
    return from_edges(edges, features, labels, name=name or Path(edge_path).parent.name or "graph")


def save_graph(g: Graph, directory: str | Path, binary: bool = True) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "edges": directory / "edges.tsv",
        "features": directory / ("features.gfm" if binary else "features.csv"),
        "labels": directory / "labels.txt",
    }
    write_edges(paths["edges"], g.edges())
    write_features(paths["features"], g.features)
    write_labels(paths["labels"], g.labels)
    return paths


def load_graph_dir(directory: str | Path, name: str | None = None) -> Graph:
    """Load ``edges.tsv`` + ``features.gfm`` (or ``.csv``) + ``labels.txt`` from a directory."""
    directory = Path(directory)
    feat = directory / "features.gfm"
    if not feat.exists():
        feat = directory / "features.csv"
    return load_graph(directory / "edges.tsv", feat, directory / "labels.txt", name=name or directory.name)


# -- propagation -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NormAdj:
    """CSR form of D^-1/2 (A + I) D^-1/2 with cached self-loop degrees."""

    matrix: sp.csr_matrix
    degrees: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def normalize_adjacency(g: Graph) -> NormAdj:
    n = g.n
    deg_hat = (g.degrees() + 1).astype(np.float64)
    # A + I with sorted columns: insert the diagonal entry into every row.
    rows = np.repeat(np.arange(n), g.degrees())
    r = np.concatenate([rows, np.arange(n)])
    c = np.concatenate([g.indices, np.arange(n)])
    order = np.lexsort((c, r))
    r, c = r[order], c[order]
    vals = 1.0 / np.sqrt(deg_hat[r] * deg_hat[c])
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=n), out=indptr[1:])
    mat = sp.csr_matrix((vals.astype(np.float32), c, indptr), shape=(n, n))
    return NormAdj(matrix=mat, degrees=deg_hat)


@numba.njit(cache=True)
def _csr_dense_kernel(indptr, indices, data, x, out):
    n_rows = indptr.shape[0] - 1
    d = x.shape[1]
    acc = np.empty(d, dtype=np.float64)
    for i in range(n_rows):
        acc[:] = 0.0
        for jj in range(indptr[i], indptr[i + 1]):
            j = indices[jj]
            w = np.float64(data[jj])
            for c in range(d):
                acc[c] += w * x[j, c]
        for c in range(d):
            out[i, c] = acc[c]


def spmm(a: NormAdj | sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    """Sparse (CSR) times dense with float64 accumulation.

    Each output row is accumulated over its stored entries in ascending
    column order, so results do not depend on threading.  The output has the
    dtype of ``x`` (float64 for integer input).
    """
    m = a.matrix if isinstance(a, NormAdj) else a
    x = np.asarray(x)
    vec = x.ndim == 1
    if vec:
        x = x[:, None]
    if x.shape[0] != m.shape[1]:
        raise ValueError(f"shape mismatch: operator is {m.shape}, dense operand has {x.shape[0]} rows")
    if not m.has_sorted_indices:
        m = m.sorted_indices()
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    out = np.empty((m.shape[0], x.shape[1]), dtype=x.dtype)
    _csr_dense_kernel(m.indptr, m.indices, m.data, np.ascontiguousarray(x), out)
    return out[:, 0] if vec else out
