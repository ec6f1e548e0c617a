"""Candidate filtering and ranking for pseudo-label selection.

A node is a candidate for class ``m`` when both the classifier and the
cluster labeling put it in ``m``.  Candidates are ranked by distance to the
class center and by confidence; the two orderings are fused with weights
taken from their rank-biased overlap, filtered by a geometric-imbalance
threshold, and capped per class.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

RANKING_MODES = ("fused", "geometric", "confidence")


class ContractError(ValueError):
    pass


@dataclass
class SelectionConfig:
    alpha: int | Sequence[int] = 4
    gamma: float = 0.5
    p: float = 0.75
    minority_only: bool = False
    ranking_mode: str = "fused"
    dgin_enabled: bool = True

    def __post_init__(self):
        caps = [self.alpha] if np.isscalar(self.alpha) else list(self.alpha)
        if any(int(a) < 0 for a in caps):
            raise ValueError("alpha must be >= 0")
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")
        if self.ranking_mode not in RANKING_MODES:
            raise ValueError(f"ranking_mode must be one of {RANKING_MODES}")

    def cap(self, m: int) -> int:
        return int(self.alpha) if np.isscalar(self.alpha) else int(self.alpha[m])


@dataclass
class CandidatePool:
    """Per-class candidate lists plus per-node geometry and confidence.

    ``S[m]`` is ordered by distance to the class center (ascending), ``T[m]``
    by confidence (descending); both hold the same nodes.
    """

    k: int
    S: list[list[int]]
    T: list[list[int]]
    delta: dict[int, float] = field(default_factory=dict)
    beta: dict[int, float] = field(default_factory=dict)
    confidence: dict[int, float] = field(default_factory=dict)
    rbo: list[float] = field(default_factory=list)

    def nodes(self, m: int) -> list[int]:
        return sorted(self.S[m])

    def gi(self, u: int) -> float:
        return gi_index(self.delta[u], self.beta[u])


# -- DPAM --------------------------------------------------------------------


def dpam(u_tilde: Sequence, u_hat: Sequence) -> list[np.ndarray]:
    """Per-class intersection of cluster-labeled and classifier-labeled node sets."""
    if len(u_tilde) != len(u_hat):
        raise ContractError("both partitions must cover the same classes")
    return [
        np.intersect1d(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64))
        for a, b in zip(u_tilde, u_hat)
    ]


def predicted_sets(unlabeled, predicted: np.ndarray, k: int) -> list[np.ndarray]:
    unlabeled = np.asarray(unlabeled, dtype=np.int64)
    pred = np.asarray(predicted)[unlabeled]
    return [np.sort(unlabeled[pred == m]) for m in range(k)]


# -- rankings ----------------------------------------------------------------


def center_distances(embeddings: np.ndarray, nodes, centers: np.ndarray) -> np.ndarray:
    """Euclidean distance from each listed node to every class center."""
    h = np.asarray(embeddings, dtype=np.float64)[np.asarray(nodes, dtype=np.int64)]
    diff = h[:, None, :] - np.asarray(centers, dtype=np.float64)[None, :, :]
    return np.sqrt((diff**2).sum(axis=2))


def geometric_ranking(sets: Sequence, embeddings: np.ndarray, centers: np.ndarray):
    """Order each class's candidates by distance to that class's center.

    Returns ``(S, delta, beta)`` where ``beta[u]`` is the distance to the
    nearest other class center.  Ties go to the lower node id.
    """
    k = len(sets)
    S: list[list[int]] = []
    delta: dict[int, float] = {}
    beta: dict[int, float] = {}
    for m in range(k):
        nodes = np.sort(np.asarray(sets[m], dtype=np.int64))
        if nodes.size == 0:
            S.append([])
            continue
        d = center_distances(embeddings, nodes, centers)
        own = d[:, m]
        if k > 1:
            others = np.delete(d, m, axis=1).min(axis=1)
        else:
            others = np.full(len(nodes), np.inf)
        order = np.lexsort((nodes, own))
        S.append([int(nodes[i]) for i in order])
        for u, a, b in zip(nodes, own, others):
            delta[int(u)] = float(a)
            beta[int(u)] = float(b)
    return S, delta, beta


def confidence_ranking(sets: Sequence, confidence: np.ndarray) -> list[list[int]]:
    """Order each class's candidates by confidence, highest first; ties to lower id."""
    conf = np.asarray(confidence, dtype=np.float64)
    out = []
    for nodes in sets:
        nodes = np.sort(np.asarray(nodes, dtype=np.int64))
        order = np.lexsort((nodes, -conf[nodes]))
        out.append([int(nodes[i]) for i in order])
    return out


# -- rank-biased overlap -----------------------------------------------------


def rbo(s: Sequence, t: Sequence, p: float) -> float:
    """Extrapolated rank-biased overlap of two rankings of the same items.

    With ``A_d`` the fraction of shared items among the top ``d`` of each
    list and ``L`` the list length::

        RBO = (1 - p) * sum_{d=1..L} p^(d-1) A_d + p^L A_L
    """
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    s, t = list(s), list(t)
    if len(s) != len(t) or set(s) != set(t) or len(set(s)) != len(s):
        raise ContractError("rbo expects two rankings of the same distinct items")
    if s == t:
        return 1.0
    L = len(s)
    seen_s: set = set()
    seen_t: set = set()
    overlap = 0
    total = 0.0
    weight = 1.0
    for d in range(1, L + 1):
        a, b = s[d - 1], t[d - 1]
        if a == b:
            overlap += 1
        else:
            overlap += (a in seen_t) + (b in seen_s)
        seen_s.add(a)
        seen_t.add(b)
        total += weight * overlap / d
        weight *= p
    return (1 - p) * total + weight * overlap / L


# -- fusion and filtering ----------------------------------------------------


def reorder(s_m: Sequence[int], t_m: Sequence[int], r_m: float) -> list[int]:
    """Fuse two rankings by a weighted sum of 1-based positions.

    The geometric list ``s_m`` always gets weight ``max(r, 1-r)``.  Ties are
    broken by geometric position, then node id.
    """
    s_m, t_m = list(s_m), list(t_m)
    if set(s_m) != set(t_m) or len(s_m) != len(t_m):
        raise ContractError("reorder expects two rankings of the same items")
    hi, lo = max(r_m, 1 - r_m), min(r_m, 1 - r_m)
    rank_s = {u: i + 1 for i, u in enumerate(s_m)}
    rank_t = {u: i + 1 for i, u in enumerate(t_m)}
    return sorted(s_m, key=lambda u: (hi * rank_s[u] + lo * rank_t[u], rank_s[u], u))


def gi_index(delta: float, beta: float) -> float:
    """Relative margin ``(beta - delta) / delta``; infinite at the center itself."""
    if delta == 0:
        return float("inf")
    return (beta - delta) / delta


def gi_and_dgin(nodes: Sequence[int], delta, beta, gamma: float, enabled: bool = True) -> list[int]:
    """Drop nodes whose geometric-imbalance index is below ``gamma``; order kept."""
    nodes = list(nodes)
    if not enabled:
        return nodes
    return [u for u in nodes if gi_index(delta[u], beta[u]) >= gamma]


# -- per-round selection -----------------------------------------------------


def build_pool(
    unlabeled,
    cluster_sets: Sequence,
    predicted: np.ndarray,
    confidence: np.ndarray,
    embeddings: np.ndarray,
    centers: np.ndarray,
    p: float,
) -> CandidatePool:
    k = len(cluster_sets)
    sets = dpam(cluster_sets, predicted_sets(unlabeled, predicted, k))
    S, delta, beta = geometric_ranking(sets, embeddings, centers)
    T = confidence_ranking(sets, confidence)
    conf = {u: float(confidence[u]) for lst in S for u in lst}
    return CandidatePool(
        k=k, S=S, T=T, delta=delta, beta=beta, confidence=conf, rbo=[rbo(a, b, p) for a, b in zip(S, T)]
    )


def eligible_classes(class_counts, minority_only: bool) -> list[int]:
    counts = np.asarray(class_counts)
    if not minority_only:
        return list(range(len(counts)))
    top = counts.max()
    return [m for m in range(len(counts)) if counts[m] < top]


def class_quota(class_counts, cfg: SelectionConfig) -> dict[int, int]:
    """Per-class pick limit for this round.

    With ``minority_only`` a class may grow up to the current maximum count
    and no further, so the largest classes stay frozen.
    """
    counts = np.asarray(class_counts)
    quota = {}
    for m in eligible_classes(counts, cfg.minority_only):
        q = cfg.cap(m)
        if cfg.minority_only:
            q = min(q, int(counts.max() - counts[m]))
        quota[m] = q
    return quota


def select_round(
    pool: CandidatePool,
    cfg: SelectionConfig,
    class_counts,
    labeled=(),
    round_index: int = 0,
    truth: np.ndarray | None = None,
):
    """Pick up to ``alpha`` nodes per eligible class.

    Returns ``(selected, audit)`` where ``selected`` maps node id to its
    pseudo-label and ``audit`` holds one record per class.
    """
    taken = set(int(u) for u in labeled)
    quota = class_quota(class_counts, cfg)
    selected: dict[int, int] = {}
    audit = []
    for m in range(pool.k):
        if cfg.ranking_mode == "geometric":
            ordered = pool.S[m]
        elif cfg.ranking_mode == "confidence":
            ordered = pool.T[m]
        else:
            ordered = reorder(pool.S[m], pool.T[m], pool.rbo[m])
        kept = gi_and_dgin(ordered, pool.delta, pool.beta, cfg.gamma, cfg.dgin_enabled)
        n_negative = sum(1 for u in pool.S[m] if pool.gi(u) < 0)
        picks: list[int] = []
        if m in quota:
            for u in kept:
                if len(picks) >= quota[m]:
                    break
                if u not in taken and u not in selected:
                    picks.append(u)
        for u in picks:
            selected[u] = m
        rec = {
            "round": round_index,
            "class": m,
            "rbo": pool.rbo[m],
            "n_candidates": len(pool.S[m]),
            "n_after_dgin": len(kept),
            "n_negative_gi": n_negative,
            "n_selected": len(picks),
            "selected_ids": picks,
        }
        if truth is not None and picks:
            rec["pseudo_label_accuracy"] = float(np.mean(np.asarray(truth)[picks] == m))
        audit.append(rec)
    return selected, audit


def confidence_select(
    unlabeled,
    predicted: np.ndarray,
    confidence: np.ndarray,
    k: int,
    cfg: SelectionConfig,
    class_counts,
    round_index: int = 0,
    truth: np.ndarray | None = None,
):
    """Plain self-training: top-``alpha`` most confident predictions per class."""
    sets = predicted_sets(unlabeled, predicted, k)
    ranked = confidence_ranking(sets, confidence)
    quota = class_quota(class_counts, cfg)
    selected: dict[int, int] = {}
    audit = []
    for m in range(k):
        picks = ranked[m][: quota.get(m, 0)]
        for u in picks:
            selected[u] = m
        rec = {
            "round": round_index,
            "class": m,
            "n_candidates": len(ranked[m]),
            "n_selected": len(picks),
            "selected_ids": picks,
        }
        if truth is not None and picks:
            rec["pseudo_label_accuracy"] = float(np.mean(np.asarray(truth)[picks] == m))
        audit.append(rec)
    return selected, audit
