"""Two-layer GCN (BatchNorm + PReLU) with a linear softmax head, trained full-batch.

Gradients are derived by hand.  Training runs in float32 by default; passes
are restricted to the receptive field of the rows whose outputs matter.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np
import scipy.sparse as sp

from .graph import Graph, NormAdj, spmm
from .rng import derive_seed, numpy_rng

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"UNM1"
BN_EPS = 1e-5


class NumericError(FloatingPointError):
    pass


@dataclass
class ModelConfig:
    layers: int = 2
    hidden: int = 128
    batchnorm: bool = True
    bn_momentum: float = 0.99
    lr: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 2000
    patience: int = 300
    scheduler_window: int = 100
    class_weight_mode: str = "none"
    seed: int = 0
    first_round_epochs: int = 200
    later_round_epochs: int = 2000
    row_normalize_features: bool = True
    dtype: str = "float32"
    bn_stat_rows: str = "train"

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1:
            raise ValueError("layers and hidden must be >= 1")
        if not 0 < self.bn_momentum < 1:
            raise ValueError("bn_momentum must lie in (0, 1)")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.class_weight_mode not in ("none", "inverse_frequency"):
            raise ValueError(f"unknown class_weight_mode {self.class_weight_mode!r}")
        if self.bn_stat_rows not in ("train", "all"):
            raise ValueError("bn_stat_rows must be 'train' or 'all'")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")


@dataclass
class Model:
    cfg: ModelConfig
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    epoch: int = 0

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return list(self.params.items()) + list(self.buffers.items())


@dataclass
class InferenceSnapshot:
    embeddings: np.ndarray
    logits: np.ndarray
    predicted: np.ndarray
    confidence: np.ndarray

    @property
    def probabilities(self) -> np.ndarray:
        return softmax(self.logits)


@dataclass
class TrainTrace:
    epochs: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_acc: float = float("nan")

    def __len__(self):
        return len(self.epochs)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "val_acc", "lr"])
            for row in zip(self.epochs, self.loss, self.val_acc, self.lr):
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


# -- inputs ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModelInputs:
    """Preprocessed features; sparse when the matrix is mostly zeros."""

    x: np.ndarray | sp.csr_matrix
    labels: np.ndarray

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def f(self) -> int:
        return self.x.shape[1]


def prepare_inputs(g: Graph, row_normalize: bool = True, dtype=np.float32) -> ModelInputs:
    x = np.asarray(g.features, dtype=np.float64)
    if row_normalize:
        s = x.sum(axis=1, keepdims=True)
        s[s == 0] = 1.0
        x = x / s
    x = x.astype(dtype)
    if x.size and np.count_nonzero(x) < 0.2 * x.size:
        x = sp.csr_matrix(x)
        x.sort_indices()
    return ModelInputs(x=x, labels=np.asarray(g.labels))


def _as_inputs(g, cfg: ModelConfig) -> ModelInputs:
    if isinstance(g, ModelInputs):
        return g
    return prepare_inputs(g, cfg.row_normalize_features, np.dtype(cfg.dtype))


@dataclass(frozen=True, eq=False)
class Plan:
    """Row-restricted propagation for a pass that only needs ``target`` rows.

    ``rows[l]`` are the rows whose layer-``l`` output is needed; ``ops[l]``
    maps layer-``l`` inputs (``rows[l-1]``, or ``input_rows`` for the first
    layer) to them.  ``stat_pos[l]`` locates the BatchNorm statistic rows
    inside ``rows[l]``.
    """

    input_rows: np.ndarray
    x0: np.ndarray | sp.csr_matrix
    ops: tuple
    ops_t: tuple
    rows: tuple
    stat_pos: tuple
    stat_mask: tuple
    no_stats: tuple
    x0_t: sp.csr_matrix | None
    n: int


def _closed_neighbourhood(adj: sp.csr_matrix, rows: np.ndarray) -> np.ndarray:
    sub = adj[rows]
    return np.union1d(rows, sub.indices)


def _pos_mask(n: int, pos: np.ndarray) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    mask[pos] = True
    return mask


def make_plan(inp: ModelInputs, a: NormAdj, layers: int, target=None, stat_rows=None) -> Plan:
    n = inp.n
    full = target is None
    target = np.arange(n) if full else np.asarray(target, dtype=np.int64)
    stat_rows = target if stat_rows is None else np.unique(np.asarray(stat_rows, dtype=np.int64))
    rows = [target]
    for _ in range(layers):
        rows.append(np.arange(n) if full else _closed_neighbourhood(a.matrix, rows[-1]))
    rows = rows[::-1]  # rows[0] = layer-0 inputs ... rows[-1] = target
    ops = []
    for l in range(layers):
        if full:
            ops.append(a.matrix)
        else:
            op = a.matrix[rows[l + 1]][:, rows[l]]
            op.sort_indices()
            ops.append(op)
    stat_pos = []
    for l in range(layers):
        r = rows[l + 1]
        pos = np.searchsorted(r, stat_rows)
        if np.any(pos >= len(r)) or np.any(r[np.minimum(pos, len(r) - 1)] != stat_rows):
            raise ValueError("statistic rows must lie inside the target rows")
        stat_pos.append(pos)
    x0 = inp.x if full else inp.x[rows[0]]
    return Plan(
        input_rows=rows[0],
        x0=x0,
        ops=tuple(ops),
        ops_t=tuple(op.T.tocsr() for op in ops),
        rows=tuple(rows[1:]),
        stat_pos=tuple(stat_pos),
        stat_mask=tuple(_pos_mask(len(r), q) for r, q in zip(rows[1:], stat_pos)),
        no_stats=tuple(np.zeros(len(r), dtype=bool) for r in rows[1:]),
        x0_t=x0.T.tocsr() if sp.issparse(x0) else None,
        n=n,
    )


# -- parameters --------------------------------------------------------------


def _glorot(rng, fan_in, fan_out):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


def init_model(cfg: ModelConfig, g: Graph | ModelInputs, k: int | None = None) -> Model:
    """Glorot-uniform weights, unit BatchNorm scale, PReLU slopes at 0.25."""
    f = g.f
    k = k if k is not None else int(np.max(g.labels)) + 1
    dt = np.dtype(cfg.dtype)
    rng = numpy_rng(derive_seed(cfg.seed, "init"))
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    fan_in = f
    for layer in range(cfg.layers):
        params[f"W{layer}"] = _glorot(rng, fan_in, cfg.hidden).astype(dt)
        if cfg.batchnorm:
            params[f"bn_scale{layer}"] = np.ones(cfg.hidden, dtype=dt)
            params[f"bn_shift{layer}"] = np.zeros(cfg.hidden, dtype=dt)
            buffers[f"bn_mean{layer}"] = np.zeros(cfg.hidden, dtype=dt)
            buffers[f"bn_var{layer}"] = np.ones(cfg.hidden, dtype=dt)
        params[f"prelu{layer}"] = np.full(1, 0.25, dtype=dt)
        fan_in = cfg.hidden
    params["cls_W"] = _glorot(rng, cfg.hidden, k).astype(dt)
    params["cls_b"] = np.zeros(k, dtype=dt)
    return Model(cfg=cfg, params=params, buffers=buffers)


# -- forward / backward ------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check(name: str, arr: np.ndarray) -> None:
    with np.errstate(all="ignore"):
        total = arr.sum()
    if not np.isfinite(total) and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite activation in {name}")


@numba.njit(cache=True)
def _masked_moments(z, mask):
    n, d = z.shape
    mu = np.zeros(d)
    m2 = np.zeros(d)
    cnt = 0
    for i in range(n):
        if mask[i]:
            cnt += 1
            for c in range(d):
                mu[c] += z[i, c]
    mu /= max(cnt, 1)
    for i in range(n):
        if mask[i]:
            for c in range(d):
                t = z[i, c] - mu[c]
                m2[c] += t * t
    return mu, m2, cnt


@numba.njit(cache=True)
def _bn_prelu_fwd(z, mu, inv, gamma, beta, slope, xhat, b, out):
    n, d = z.shape
    for i in range(n):
        for c in range(d):
            h = (z[i, c] - mu[c]) * inv[c]
            v = h * gamma[c] + beta[c]
            xhat[i, c] = h
            b[i, c] = v
            out[i, c] = v * slope if v < 0 else v


@numba.njit(cache=True)
def _bn_prelu_bwd(dx, b, xhat, gamma, inv, slope, mask, cnt, dz):
    n, d = dx.shape
    dslope = 0.0
    dgamma = np.zeros(d)
    dbeta = np.zeros(d)
    for i in range(n):
        for c in range(d):
            g = dx[i, c]
            if b[i, c] < 0:
                dslope += g * b[i, c]
                g *= slope
            dgamma[c] += g * xhat[i, c]
            dbeta[c] += g
            dz[i, c] = g * gamma[c]
    s1 = dbeta * gamma
    s2 = dgamma * gamma
    for i in range(n):
        if mask[i]:
            for c in range(d):
                dz[i, c] = (dz[i, c] - (s1[c] + xhat[i, c] * s2[c]) / cnt) * inv[c]
        else:
            for c in range(d):
                dz[i, c] = dz[i, c] * inv[c]
    return dslope, dgamma, dbeta


def _forward(m: Model, plan: Plan, mode: str):
    """Run the network over ``plan``; returns (embeddings, logits, cache, batch_stats)."""
    p = m.params
    x = plan.x0
    cache = []
    stats = []
    for layer in range(m.cfg.layers):
        w = p[f"W{layer}"]
        xw = spmm(x, w) if sp.issparse(x) else x @ w
        z = spmm(plan.ops[layer], xw)
        dt = z.dtype
        h = z.shape[1]
        if m.cfg.batchnorm:
            if mode == "train":
                mask = plan.stat_mask[layer]
                mu64, m2, cnt = _masked_moments(z, mask)
                var64 = m2 / cnt
                stats.append((mu64.astype(dt), (m2 / (cnt - 1) if cnt > 1 else var64).astype(dt)))
                mu, var = mu64, var64
            else:
                mu = m.buffers[f"bn_mean{layer}"].astype(np.float64)
                var = m.buffers[f"bn_var{layer}"].astype(np.float64)
            inv = (1.0 / np.sqrt(var + BN_EPS)).astype(dt)
            mu = mu.astype(dt)
            gamma, beta = p[f"bn_scale{layer}"], p[f"bn_shift{layer}"]
        else:
            mu, inv = np.zeros(h, dt), np.ones(h, dt)
            gamma, beta = np.ones(h, dt), np.zeros(h, dt)
        xhat = np.empty_like(z)
        b = np.empty_like(z)
        out = np.empty_like(z)
        _bn_prelu_fwd(z, mu, inv, gamma, beta, p[f"prelu{layer}"][0], xhat, b, out)
        _check(f"layer {layer}", out)
        cache.append({"x_in": x, "xhat": xhat, "b": b, "inv": inv})
        x = out
    logits = x @ p["cls_W"] + p["cls_b"]
    _check("classifier", logits)
    return x, logits, cache, stats


def snapshot_from(embeddings: np.ndarray, logits: np.ndarray) -> InferenceSnapshot:
    logits = np.asarray(logits, dtype=np.float64)
    probs = softmax(logits)
    pred = np.argmax(logits, axis=1)  # first maximum -> lowest class index on ties
    conf = probs[np.arange(len(pred)), pred]
    return InferenceSnapshot(embeddings=embeddings, logits=logits, predicted=pred, confidence=conf)


def forward(m: Model, g, a: NormAdj, mode: str = "eval", train_mask: np.ndarray | None = None) -> InferenceSnapshot:
    """Full-graph forward pass.

    In ``train`` mode BatchNorm normalizes every row with the statistics of
    the ``train_mask`` rows (all rows when no mask is given); ``eval`` uses
    the running statistics.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    inp = _as_inputs(g, m.cfg)
    stat = None if train_mask is None else _rows(train_mask)
    plan = make_plan(inp, a, m.cfg.layers, None, stat)
    emb, logits, _, _ = _forward(m, plan, mode)
    return snapshot_from(emb, logits)


def predict(m: Model, g, a: NormAdj) -> InferenceSnapshot:
    return forward(m, g, a, mode="eval")


def _rows(mask) -> np.ndarray:
    mask = np.asarray(mask)
    return np.flatnonzero(mask) if mask.dtype == bool else np.unique(mask.astype(np.int64))


def class_weights_for(labels: np.ndarray, train_rows: np.ndarray, k: int, mode: str) -> np.ndarray:
    if mode == "none":
        return np.ones(k)
    counts = np.bincount(labels[train_rows], minlength=k).astype(float)
    w = np.zeros(k)
    present = counts > 0
    w[present] = len(train_rows) / (k * counts[present])
    return w


def cross_entropy(logits: np.ndarray, labels: np.ndarray, class_weights=None) -> float:
    """Mean (optionally class-weighted) negative log-likelihood of ``labels`` under ``logits``."""
    lsm = log_softmax(np.asarray(logits, dtype=np.float64))
    nll = -lsm[np.arange(len(labels)), labels]
    if class_weights is None:
        return float(nll.mean())
    w = class_weights[labels]
    return float((w * nll).sum() / w.sum())


def loss_and_grad(
    m: Model,
    g,
    a: NormAdj,
    labels: np.ndarray,
    train_mask,
    class_weights: np.ndarray | None = None,
    plan: Plan | None = None,
):
    """Weighted mean cross-entropy on the masked rows plus L2 penalty, and its gradient.

    Without a ``plan`` only the receptive field of the masked rows is
    evaluated and BatchNorm statistics come from those rows.  Returns
    ``(loss, grads, batch_stats)``.
    """
    rows = _rows(train_mask)
    if rows.size == 0:
        raise ValueError("empty training mask")
    if plan is None:
        plan = make_plan(_as_inputs(g, m.cfg), a, m.cfg.layers, rows)
    target = plan.rows[-1]
    pos = np.searchsorted(target, rows)
    if np.any(pos >= len(target)) or np.any(target[np.minimum(pos, len(target) - 1)] != rows):
        raise ValueError("training rows must lie inside the plan's target rows")
    p = m.params
    emb, logits, cache, stats = _forward(m, plan, "train")
    k = logits.shape[1]
    if class_weights is None:
        class_weights = np.ones(k)
    y = labels[rows]
    w = class_weights[y]
    wsum = w.sum()
    lsm = log_softmax(logits[pos].astype(np.float64))
    ce = float((w * -lsm[np.arange(len(rows)), y]).sum() / wsum)
    wd = m.cfg.weight_decay
    l2 = 0.5 * wd * sum(float(np.dot(v.ravel(), v.ravel())) for v in p.values())
    loss = ce + l2

    d = np.exp(lsm)
    d[np.arange(len(rows)), y] -= 1.0
    d *= (w / wsum)[:, None]
    dlogits = np.zeros_like(logits)
    dlogits[pos] = d

    grads: dict[str, np.ndarray] = {}
    grads["cls_W"] = emb.T @ dlogits
    grads["cls_b"] = dlogits.sum(axis=0)
    dx = dlogits @ p["cls_W"].T
    for layer in reversed(range(m.cfg.layers)):
        c = cache[layer]
        dz = np.empty_like(dx)
        if m.cfg.batchnorm:
            gamma, mask, cnt = p[f"bn_scale{layer}"], plan.stat_mask[layer], len(plan.stat_pos[layer])
        else:
            gamma, mask, cnt = np.ones(dx.shape[1], dx.dtype), plan.no_stats[layer], 1
        dslope, dgamma, dbeta = _bn_prelu_bwd(
            dx, c["b"], c["xhat"], gamma, c["inv"], p[f"prelu{layer}"][0], mask, cnt, dz
        )
        grads[f"prelu{layer}"] = np.array([dslope])
        if m.cfg.batchnorm:
            grads[f"bn_scale{layer}"] = dgamma
            grads[f"bn_shift{layer}"] = dbeta
        dxw = spmm(plan.ops_t[layer], dz)
        if layer == 0:
            grads["W0"] = spmm(plan.x0_t, dxw) if plan.x0_t is not None else plan.x0.T @ dxw
        else:
            grads[f"W{layer}"] = c["x_in"].T @ dxw
            dx = dxw @ p[f"W{layer}"].T
    for name, v in p.items():
        grads[name] = (grads[name] + wd * v).astype(v.dtype, copy=False)
    grads = {name: grads[name] for name in p}
    return loss, grads, stats


# -- optimisation ------------------------------------------------------------


def adam_step(m: Model, grads: dict[str, np.ndarray], lr: float, b1=0.9, b2=0.999, eps=1e-8) -> None:
    m.step += 1
    t = m.step
    for name, gr in grads.items():
        mm = m.adam_m.get(name)
        if mm is None:
            mm = m.adam_m[name] = np.zeros_like(gr)
            m.adam_v[name] = np.zeros_like(gr)
        vv = m.adam_v[name]
        mm *= b1
        mm += (1 - b1) * gr
        vv *= b2
        vv += (1 - b2) * gr * gr
        mhat = mm / (1 - b1**t)
        vhat = vv / (1 - b2**t)
        m.params[name] -= lr * mhat / (np.sqrt(vhat) + eps)


def update_running_stats(m: Model, stats) -> None:
    mom = m.cfg.bn_momentum
    for layer, (mu, var) in enumerate(stats):
        m.buffers[f"bn_mean{layer}"] = (1 - mom) * m.buffers[f"bn_mean{layer}"] + mom * mu
        m.buffers[f"bn_var{layer}"] = (1 - mom) * m.buffers[f"bn_var{layer}"] + mom * var


def train(
    g,
    a: NormAdj,
    split,
    cfg: ModelConfig,
    labels: np.ndarray | None = None,
    max_epochs: int | None = None,
    k: int | None = None,
    model: Model | None = None,
) -> tuple[Model, TrainTrace]:
    """Adam training with LR halving on validation-loss plateaus and early stopping.

    ``labels`` overrides the graph labels on training rows (pseudo-labels);
    ``split`` is anything with ``train_ids`` and ``val_ids``.  Returns the
    parameters of the epoch with the best validation accuracy.
    """
    inp = _as_inputs(g, cfg)
    labels = np.asarray(inp.labels if labels is None else labels)
    k = k if k is not None else int(np.max(inp.labels)) + 1
    epochs = cfg.max_epochs if max_epochs is None else max_epochs
    m = init_model(cfg, inp, k) if model is None else model
    trace = TrainTrace()
    train_rows = np.asarray(sorted(split.train_ids), dtype=np.int64)
    val_rows = np.asarray(sorted(split.val_ids), dtype=np.int64)
    if epochs <= 0:
        return m, trace
    if train_rows.size == 0:
        raise ValueError("empty training set")
    cw = class_weights_for(labels, train_rows, k, cfg.class_weight_mode)
    true_val = inp.labels[val_rows]
    if cfg.bn_stat_rows == "train":
        train_plan = make_plan(inp, a, cfg.layers, train_rows)
    else:
        train_plan = make_plan(inp, a, cfg.layers)
    val_plan = make_plan(inp, a, cfg.layers, val_rows) if val_rows.size else None

    lr = cfg.lr
    best = None
    best_acc = -1.0
    best_val_loss = np.inf
    since_best_acc = 0
    since_loss_drop = 0
    for epoch in range(epochs):
        loss, grads, stats = loss_and_grad(m, inp, a, labels, train_rows, cw, plan=train_plan)
        adam_step(m, grads, lr)
        update_running_stats(m, stats)
        m.epoch += 1

        if val_plan is not None:
            _, logits, _, _ = _forward(m, val_plan, "eval")
            val_loss = cross_entropy(logits, true_val)
            val_acc = float((np.argmax(logits, axis=1) == true_val).mean())
        else:
            val_loss, val_acc = loss, 0.0
        trace.epochs.append(epoch)
        trace.loss.append(loss)
        trace.val_acc.append(val_acc)
        trace.lr.append(lr)

        if val_acc > best_acc:
            best_acc = val_acc
            best = (copy.deepcopy(m.params), copy.deepcopy(m.buffers), epoch)
            since_best_acc = 0
        else:
            since_best_acc += 1

        if val_loss < best_val_loss:
            best_val_loss = val_loss
            since_loss_drop = 0
        else:
            since_loss_drop += 1
            if since_loss_drop >= cfg.scheduler_window:
                lr *= 0.5
                since_loss_drop = 0

        if since_best_acc >= cfg.patience:
            break

    m.params, m.buffers, trace.best_epoch = best
    trace.best_val_acc = best_acc
    return m, trace


# -- checkpoint --------------------------------------------------------------


def save_checkpoint(m: Model, path: str | Path) -> None:
    arrays = m.state_arrays()
    header = {
        "config": asdict(m.cfg),
        "epoch": m.epoch,
        "tensors": [[name, list(arr.shape)] for name, arr in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> Model:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a UNM1 checkpoint")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + hlen])
    off = 8 + hlen
    cfg = ModelConfig(**header["config"])
    params, buffers = {}, {}
    for name, shape in header["tensors"]:
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape).astype(cfg.dtype)
        off += 4 * size
        (buffers if name.startswith(("bn_mean", "bn_var")) else params)[name] = arr
    return Model(cfg=cfg, params=params, buffers=buffers, epoch=header["epoch"])
