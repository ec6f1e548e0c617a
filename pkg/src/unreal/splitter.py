"""Step-imbalanced train/val/test splits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import Graph
from .rng import SplitMix64


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class LabelDistribution:
    counts: tuple[int, ...]
    rho: float

    @property
    def fractions(self) -> tuple[float, ...]:
        total = sum(self.counts)
        return tuple(c / total if total else 0.0 for c in self.counts)

    def table(self, name: str = "train") -> str:
        head = " | ".join(f"C{i}" for i in range(len(self.counts)))
        cells = " | ".join(f"{c} ({100 * f:.2f}%)" for c, f in zip(self.counts, self.fractions))
        return f"| split | {head} | rho |\n|{'---|' * (len(self.counts) + 2)}\n| {name} | {cells} | {self.rho:.2f} |"


@dataclass(frozen=True)
class Split:
    train_ids: tuple[int, ...]
    val_ids: tuple[int, ...]
    test_ids: tuple[int, ...]
    per_class_train_counts: tuple[int, ...]
    rho: float
    seed: int = 0

    def mask(self, which: str, n: int) -> np.ndarray:
        m = np.zeros(n, dtype=bool)
        m[list(getattr(self, f"{which}_ids"))] = True
        return m


def imbalance_ratio(counts) -> float:
    nz = [c for c in counts if c > 0]
    return max(nz) / min(nz) if nz else float("nan")


def split_stats(s: Split, g: Graph) -> LabelDistribution:
    counts = np.bincount(g.labels[list(s.train_ids)], minlength=g.k) if s.train_ids else np.zeros(g.k, int)
    counts = tuple(int(c) for c in counts)
    return LabelDistribution(counts=counts, rho=imbalance_ratio(counts))


def _finish(g: Graph, train, val, seed: int, test=None) -> Split:
    train = sorted(int(i) for i in train)
    val = sorted(int(i) for i in val)
    if test is None:
        used = set(train) | set(val)
        test = [i for i in range(g.n) if i not in used]
    test = sorted(int(i) for i in test)
    counts = tuple(int(c) for c in np.bincount(g.labels[train], minlength=g.k))
    return Split(tuple(train), tuple(val), tuple(test), counts, imbalance_ratio(counts), seed)


def minority_classes(k: int, fraction: float = 0.5) -> list[int]:
    """The highest-indexed ``floor(k * fraction)`` classes (at least one when k > 1)."""
    m = max(1, int(math.floor(k * fraction + 1e-9))) if k > 1 else 0
    return list(range(k - m, k))


def _class_pools(g: Graph, rng: SplitMix64) -> list[list[int]]:
    pools = []
    for c in range(g.k):
        members = [int(i) for i in np.flatnonzero(g.labels == c)]
        pools.append(rng.shuffle(members))
    return pools


def make_step_imbalance(
    g: Graph,
    rho: float,
    majority_count: int,
    minority_class_fraction: float = 0.5,
    val_per_class: int = 30,
    seed: int = 0,
) -> Split:
    """Step-imbalanced split.

    Minority classes keep ``round(majority_count / rho)`` (at least one)
    training nodes, the others keep ``majority_count``.  Each class then
    contributes ``val_per_class`` validation nodes and everything left is test.
    """
    if rho < 1:
        raise ValueError("rho must be >= 1")
    if not 0 < minority_class_fraction <= 1:
        raise ValueError("minority_class_fraction must lie in (0, 1]")
    minority_n = max(1, int(math.floor(majority_count / rho + 0.5)))
    minor = set(minority_classes(g.k, minority_class_fraction))
    rng = SplitMix64(seed)
    pools = _class_pools(g, rng)
    train, val = [], []
    for c, pool in enumerate(pools):
        want = minority_n if c in minor else majority_count
        if want + val_per_class > len(pool):
            raise CapacityError(
                f"class {c} has {len(pool)} nodes; needs {want} train + {val_per_class} val"
            )
        train += pool[:want]
        val += pool[want : want + val_per_class]
    return _finish(g, train, val, seed)


def make_proportional(g: Graph, budget: int, val_per_class: int = 30, seed: int = 0) -> Split:
    """Training set whose label distribution follows the whole graph's (Computers-Random style)."""
    rng = SplitMix64(seed)
    pools = _class_pools(g, rng)
    sizes = np.array([len(p) for p in pools], dtype=float)
    want = np.maximum(1, np.floor(budget * sizes / sizes.sum() + 0.5)).astype(int)
    train, val = [], []
    for c, pool in enumerate(pools):
        if want[c] + val_per_class > len(pool):
            raise CapacityError(f"class {c} has {len(pool)} nodes; needs {want[c]} + {val_per_class}")
        train += pool[: want[c]]
        val += pool[want[c] : want[c] + val_per_class]
    return _finish(g, train, val, seed)


def subsample_split(
    base: Split, g: Graph, rho: float, minority_class_fraction: float = 0.5, seed: int = 0
) -> Split:
    """Impose step imbalance on an existing split; dropped train nodes become unlabeled."""
    minor = set(minority_classes(g.k, minority_class_fraction))
    rng = SplitMix64(seed)
    by_class = [[i for i in base.train_ids if g.labels[i] == c] for c in range(g.k)]
    majority_count = max(len(b) for b in by_class)
    minority_n = max(1, int(math.floor(majority_count / rho + 0.5)))
    train = []
    for c, members in enumerate(by_class):
        if not members:
            raise CapacityError(f"class {c} has no training nodes in the base split")
        want = minority_n if c in minor else len(members)
        if want > len(members):
            raise CapacityError(f"class {c} has {len(members)} training nodes; needs {want}")
        train += rng.shuffle(list(members))[:want]
    return _finish(g, train, base.val_ids, seed, test=base.test_ids)


# -- split file --------------------------------------------------------------


def write_split(path: str | Path, s: Split) -> None:
    lines = [f"# seed = {s.seed}"]
    for section in ("train", "val", "test"):
        lines.append(f"[{section}]")
        lines += [str(i) for i in getattr(s, f"{section}_ids")]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_split(path: str | Path, g: Graph) -> Split:
    sections: dict[str, list[int]] = {"train": [], "val": [], "test": []}
    current = None
    seed = 0
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            if "seed" in s and "=" in s:
                seed = int(s.split("=", 1)[1])
            continue
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
            if current not in sections:
                raise ValueError(f"{path}:{lineno}: unknown section [{current}]")
            continue
        if current is None:
            raise ValueError(f"{path}:{lineno}: node id outside any section")
        node = int(s)
        if not 0 <= node < g.n:
            raise ValueError(f"{path}:{lineno}: node {node} out of range")
        sections[current].append(node)
    ids = sections["train"] + sections["val"] + sections["test"]
    if len(ids) != len(set(ids)):
        raise ValueError(f"{path}: train/val/test overlap")
    counts = tuple(int(c) for c in np.bincount(g.labels[sections["train"]], minlength=g.k))
    return Split(
        tuple(sections["train"]),
        tuple(sections["val"]),
        tuple(sections["test"]),
        counts,
        imbalance_ratio(counts),
        seed,
    )
