"""Oracles shared by the unit tests and the acceptance suite."""

import numpy as np

from unreal.gcn import ModelConfig, init_model, loss_and_grad, make_plan, prepare_inputs
from unreal.graph import from_edges, normalize_adjacency

GRAD_RTOL = 1e-4
GRAD_ATOL = 1e-6


def gradient_check(seed: int, eps: float = 1e-5, full_plan: bool = False) -> tuple[float, bool]:
    """Compare every analytic gradient entry with central differences.

    Returns the worst relative error and whether every entry passed
    ``|num - an| <= max(GRAD_RTOL * max(|num|, |an|), GRAD_ATOL)``.
    """
    r = np.random.default_rng(seed)
    n = int(r.integers(4, 17))
    f = int(r.integers(2, 11))
    h = int(r.integers(2, 9))
    k = int(r.integers(2, 5))
    labels = np.concatenate([np.arange(k), r.integers(0, k, n - k)])
    e = r.integers(0, n, (2 * n, 2))
    e = e[e[:, 0] != e[:, 1]]
    g = from_edges(e, r.random((n, f)).astype(np.float32), labels)
    a = normalize_adjacency(g)
    cfg = ModelConfig(hidden=h, layers=int(r.integers(1, 3)), dtype="float64", seed=seed)
    inp = prepare_inputs(g, True, np.float64)
    m = init_model(cfg, inp, k)
    for v in m.params.values():
        v += r.normal(0, 0.1, v.shape)
    rows = np.sort(r.choice(n, max(2, n // 2), replace=False))
    weights = r.uniform(0.5, 2.0, k)
    # full plan: BatchNorm statistics over every row instead of the loss rows
    plan = make_plan(inp, a, cfg.layers) if full_plan else None

    def loss():
        return loss_and_grad(m, inp, a, g.labels, rows, weights, plan=plan)[0]

    _, grads, _ = loss_and_grad(m, inp, a, g.labels, rows, weights, plan=plan)
    worst, ok = 0.0, True
    for name, v in m.params.items():
        for idx in np.ndindex(v.shape):
            old = v[idx]
            v[idx] = old + eps
            lp = loss()
            v[idx] = old - eps
            lm = loss()
            v[idx] = old
            num = (lp - lm) / (2 * eps)
            an = grads[name][idx]
            scale = max(abs(num), abs(an))
            diff = abs(num - an)
            worst = max(worst, diff / max(scale, GRAD_ATOL))
            ok &= diff <= max(GRAD_RTOL * scale, GRAD_ATOL)
    return worst, bool(ok)


def rbo_oracle(s, t, p):
    """Extrapolated rank-biased overlap by direct summation of the definition."""
    L = len(s)
    agree = [len(set(s[:d]) & set(t[:d])) / d for d in range(1, L + 1)]
    return (1 - p) * sum(p ** (d - 1) * agree[d - 1] for d in range(1, L + 1)) + p**L * agree[-1]


def selection_instance(seed: int):
    """Random DPAM/ranking instance: |U| <= 200, k <= 6, with ties in distance and confidence."""
    r = np.random.default_rng(seed)
    k = int(r.integers(1, 7))
    n_u = int(r.integers(1, 201))
    unlabeled = np.sort(r.choice(1000, n_u, replace=False))
    d = int(r.integers(1, 4))
    emb = np.round(r.normal(size=(1000, d)), 1)  # coarse grid so distance ties occur
    centers = np.round(r.normal(size=(k, d)), 1)
    predicted = r.integers(0, k, 1000)
    confidence = np.round(r.uniform(1 / k, 1, 1000), 2)
    cluster = r.integers(0, k, n_u)
    cluster_sets = [unlabeled[cluster == m] for m in range(k)]
    return dict(
        k=k, unlabeled=unlabeled, emb=emb, centers=centers, predicted=predicted,
        confidence=confidence, cluster_sets=cluster_sets, gamma=float(r.choice([0.0, 0.25, 0.5, 1.0])),
        r_m=float(r.uniform()),
    )


def dpam_oracle(inst):
    out = []
    for m in range(inst["k"]):
        cl = {int(u) for u in inst["cluster_sets"][m]}
        pred = {int(u) for u in inst["unlabeled"] if inst["predicted"][u] == m}
        out.append(sorted(cl & pred))
    return out


def geometric_oracle(nodes, m, inst):
    def dist(u, j):
        return float(np.sqrt(sum((a - b) ** 2 for a, b in zip(inst["emb"][u], inst["centers"][j]))))

    delta = {u: dist(u, m) for u in nodes}
    beta = {u: min((dist(u, j) for j in range(inst["k"]) if j != m), default=float("inf")) for u in nodes}
    return sorted(nodes, key=lambda u: (delta[u], u)), delta, beta


def confidence_oracle(nodes, inst):
    return sorted(nodes, key=lambda u: (-inst["confidence"][u], u))


def reorder_oracle(s, t, r):
    w1, w2 = max(r, 1 - r), min(r, 1 - r)
    score = {u: w1 * (s.index(u) + 1) + w2 * (t.index(u) + 1) for u in s}
    return sorted(s, key=lambda u: (score[u], s.index(u), u))


def dgin_oracle(nodes, delta, beta, gamma):
    keep = []
    for u in nodes:
        gi = float("inf") if delta[u] == 0 else (beta[u] - delta[u]) / delta[u]
        if gi >= gamma:
            keep.append(u)
    return keep


def selection_matches_oracle(seed: int) -> bool:
    """Run every selection stage on one random instance and compare with the oracles."""
    from unreal.select import confidence_ranking, dpam, geometric_ranking, gi_and_dgin, predicted_sets, reorder

    inst = selection_instance(seed)
    k = inst["k"]
    sets = dpam(inst["cluster_sets"], predicted_sets(inst["unlabeled"], inst["predicted"], k))
    want = dpam_oracle(inst)
    if [s.tolist() for s in sets] != want:
        return False
    S, delta, beta = geometric_ranking(sets, inst["emb"], inst["centers"])
    T = confidence_ranking(sets, inst["confidence"])
    for m in range(k):
        s_o, d_o, b_o = geometric_oracle(want[m], m, inst)
        if S[m] != s_o or T[m] != confidence_oracle(want[m], inst):
            return False
        if any(not np.isclose(delta[u], d_o[u], rtol=0, atol=1e-12) or not np.isclose(beta[u], b_o[u], rtol=0, atol=1e-12) for u in want[m]):
            return False
        fused = reorder(S[m], T[m], inst["r_m"])
        if fused != reorder_oracle(s_o, T[m], inst["r_m"]):
            return False
        if gi_and_dgin(fused, delta, beta, inst["gamma"]) != dgin_oracle(fused, d_o, b_o, inst["gamma"]):
            return False
    return True
