"""Few-shot classifiers over patch embeddings.

All classifiers are deliberately minimal: exact 1-NN (configurable k) and
a single linear softmax layer, optionally behind a per-feature
standardizer. Everything is seeded and single-threaded-deterministic;
worker counts only change how work is split, never the outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .spectra import FeatureMask, Standardizer, apply_mask, apply_standardizer, \
    fit_standardizer


@dataclass
class KnnIndex:
    train_vectors: np.ndarray  # (N, D) float32
    train_labels: np.ndarray   # (N,) int64
    k: int = 1
    metric: str = "l2"         # "l2" | "cosine"

    def __post_init__(self):
        self.train_vectors = np.ascontiguousarray(self.train_vectors,
                                                  dtype=np.float32)
        self.train_labels = np.asarray(self.train_labels, dtype=np.int64)
        if self.train_vectors.ndim != 2 or self.train_vectors.shape[0] == 0:
            raise ValueError("index needs a non-empty (N, D) vector matrix")
        if self.train_labels.shape != (self.train_vectors.shape[0],):
            raise ValueError("one label per train vector required")
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.metric not in ("l2", "cosine"):
            raise ValueError(f"unknown metric {self.metric!r}")


def _prep_metric(index: KnnIndex, queries: np.ndarray):
    train = index.train_vectors
    q = np.ascontiguousarray(queries, dtype=np.float32)
    if q.ndim != 2 or q.shape[1] != train.shape[1]:
        raise ValueError(f"queries must be (Q, {train.shape[1]})")
    if index.metric == "cosine":
        train = train / np.maximum(np.linalg.norm(train, axis=1, keepdims=True), 1e-12)
        q = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
    return train.astype(np.float32), q.astype(np.float32)


def knn_classify(index: KnnIndex, queries, threads: int = 1) -> np.ndarray:
    """Exact k-NN class prediction per query row.

    Distance ties break to the lowest train index; for k > 1 the majority
    vote breaks ties to the lowest class id.
    """
    train, q = _prep_metric(index, queries)
    if index.k == 1:
        nearest = kernels.nearest_index(train, q, threads=threads)
        return index.train_labels[nearest]
    return _topk_vote(train, index.train_labels, q, index.k)


def _topk_vote(train, labels, queries, k):
    k = min(k, train.shape[0])
    t64 = train.astype(np.float64)
    q64 = queries.astype(np.float64)
    t_sq = np.einsum("ij,ij->i", t64, t64)
    preds = np.empty(q64.shape[0], dtype=np.int64)
    for start in range(0, q64.shape[0], 1024):
        stop = min(start + 1024, q64.shape[0])
        block = q64[start:stop]
        dist = (np.einsum("ij,ij->i", block, block)[:, None]
                - 2.0 * block @ t64.T + t_sq[None, :])
        for i in range(stop - start):
            # stable ordering on (distance, index) keeps ties deterministic
            order = np.lexsort((np.arange(dist.shape[1]), dist[i]))[:k]
            votes = np.bincount(labels[order])
            preds[start + i] = votes.argmax()
    return preds


@dataclass(frozen=True)
class ProbeConfig:
    learning_rate: float = 0.01
    epochs: int = 100
    batch_size: int = 1024
    momentum: float = 0.9
    seed: int = 0
    standardize: bool = False


@dataclass
class LinearProbe:
    weights: np.ndarray  # (C, D) float64
    bias: np.ndarray     # (C,) float64
    standardizer: Standardizer | None
    config: ProbeConfig


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fit_linear_probe(train_x, train_y, config: ProbeConfig = ProbeConfig(),
                     num_classes: int | None = None) -> LinearProbe:
    """Multinomial logistic regression by seeded mini-batch SGD with momentum."""
    x = np.asarray(train_x, dtype=np.float64)
    y = np.asarray(train_y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise ValueError("train_x must be (N, D) with one label per row")
    n, d = x.shape
    c = int(num_classes if num_classes is not None else y.max() + 1)

    standardizer = None
    if config.standardize:
        standardizer = fit_standardizer(x)
        x = apply_standardizer(x, standardizer)

    w = np.zeros((c, d))
    b = np.zeros(c)
    vw = np.zeros_like(w)
    vb = np.zeros_like(b)
    onehot = np.eye(c)[y]
    rng = np.random.default_rng(config.seed)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            sel = order[start:start + config.batch_size]
            xb, tb = x[sel], onehot[sel]
            probs = _softmax(xb @ w.T + b)
            err = (probs - tb) / sel.shape[0]
            gw = err.T @ xb
            gb = err.sum(axis=0)
            vw = config.momentum * vw + gw
            vb = config.momentum * vb + gb
            w -= config.learning_rate * vw
            b -= config.learning_rate * vb
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise FloatingPointError(f"non-finite probe weights at epoch {epoch}")
    return LinearProbe(weights=w, bias=b, standardizer=standardizer, config=config)


def probe_predict(probe: LinearProbe, queries) -> np.ndarray:
    x = np.asarray(queries, dtype=np.float64)
    if probe.standardizer is not None:
        x = apply_standardizer(x, probe.standardizer)
    return np.argmax(x @ probe.weights.T + probe.bias, axis=1).astype(np.int64)


def save_probe(probe: LinearProbe, path) -> None:
    """Structured-text metadata plus a float64 little-endian weight blob."""
    path = Path(path)
    c, d = probe.weights.shape
    blobs = [probe.weights, probe.bias]
    layout = [["weights", [c, d]], ["bias", [c]]]
    if probe.standardizer is not None:
        blobs += [probe.standardizer.mean, probe.standardizer.std]
        layout += [["standardizer_mean", [d]], ["standardizer_std", [d]]]
    meta = {
        "classes": c,
        "dim": d,
        "config": {
            "learning_rate": probe.config.learning_rate,
            "epochs": probe.config.epochs,
            "batch_size": probe.config.batch_size,
            "momentum": probe.config.momentum,
            "seed": probe.config.seed,
            "standardize": probe.config.standardize,
        },
        "epsilon": None if probe.standardizer is None else probe.standardizer.epsilon,
        "blob_layout": layout,
    }
    path.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in blobs)
    path.with_suffix(path.suffix + ".bin").write_bytes(blob)


def load_probe(path) -> LinearProbe:
    path = Path(path)
    meta = json.loads(path.read_text(encoding="utf-8"))
    raw = path.with_suffix(path.suffix + ".bin").read_bytes()
    arrays = {}
    off = 0
    for name, shape in meta["blob_layout"]:
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=count,
                                     offset=off).reshape(shape).copy()
        off += count * 8
    standardizer = None
    if "standardizer_mean" in arrays:
        standardizer = Standardizer(mean=arrays["standardizer_mean"],
                                    std=arrays["standardizer_std"],
                                    epsilon=meta["epsilon"])
    return LinearProbe(weights=arrays["weights"], bias=arrays["bias"],
                       standardizer=standardizer,
                       config=ProbeConfig(**meta["config"]))


def image_representation(shard, mode: str, mask: FeatureMask | None = None):
    """Image-level vector: the stored [CLS]-style token or the mean patch."""
    if mode == "cls_token":
        if shard.image_vector is None:
            raise ValueError(f"shard {shard.image_id!r} has no image_vector")
        vec = shard.image_vector.astype(np.float64)
        return apply_mask(vec, mask) if mask is not None else vec
    if mode == "mean_patches":
        patches = shard.patches().astype(np.float64)
        if mask is not None:
            patches = apply_mask(patches, mask)
        return patches.mean(axis=0)
    raise ValueError(f"unknown mode {mode!r}")


def image_knn_classify(train_shards, train_labels, query_shards, mode: str,
                       mask: FeatureMask | None = None, k: int = 1,
                       threads: int = 1) -> np.ndarray:
    """1-NN (configurable k) over image-level representations."""
    train = np.stack([image_representation(s, mode, mask) for s in train_shards])
    queries = np.stack([image_representation(s, mode, mask) for s in query_shards])
    index = KnnIndex(train_vectors=train.astype(np.float32),
                     train_labels=np.asarray(train_labels, dtype=np.int64), k=k)
    return knn_classify(index, queries.astype(np.float32), threads=threads)


@dataclass
class RidgeModel:
    weights: np.ndarray  # (D,)
    bias: float
    lam: float


def fit_ridge(x, y, lam: float) -> RidgeModel:
    """Closed-form L2-regularized least squares on centered data."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError("x must be (N, D) and y (N,)")
    if x.shape[0] < 2:
        raise ValueError("need N > 1 samples")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    x_mean = x.mean(axis=0)
    y_mean = y.mean()
    xc = x - x_mean
    yc = y - y_mean
    gram = xc.T @ xc + lam * np.eye(x.shape[1])
    try:
        w = np.linalg.solve(gram, xc.T @ yc)
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            "singular normal equations; use lambda > 0 to regularize") from exc
    if not np.all(np.isfinite(w)):
        raise ValueError("non-finite ridge solution; use lambda > 0")
    return RidgeModel(weights=w, bias=float(y_mean - x_mean @ w), lam=lam)


def ridge_predict(model: RidgeModel, x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) @ model.weights + model.bias


def r_squared(model: RidgeModel, x, y) -> float:
    """1 - SS_res/SS_tot on the given split; constant targets give 0."""
    y = np.asarray(y, dtype=np.float64)
    pred = ridge_predict(model, x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 0.0
    ss_res = float(np.sum((y - pred) ** 2))
    return 1.0 - ss_res / ss_tot


@dataclass
class LayerData:
    """Train/eval patch sets for one extraction layer."""
    layer: int
    grid: tuple[int, int]
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray


def layer_sweep(layers, evaluation: str, num_classes: int,
                probe_config: ProbeConfig = ProbeConfig(),
                mask_m: int = 0, threads: int = 1):
    """Run the same evaluation on every layer; returns per-layer metrics.

    Emits one row per layer: (layer, miou, per_class_iou). The optional
    mask_m removes the top-m variance features, fit per layer on train.
    """
    from .report import ConfusionMatrix, miou  # local import to avoid a cycle
    from .spectra import feature_stats, top_variance_mask

    grids = {tuple(ld.grid) for ld in layers}
    if len(grids) > 1:
        raise ValueError(f"layers disagree on grid shape: {sorted(grids)}")
    rows = []
    for ld in sorted(layers, key=lambda l: l.layer):
        tx, vx = ld.train_x, ld.val_x
        if mask_m:
            mask = top_variance_mask(feature_stats(tx), mask_m)
            tx, vx = apply_mask(tx, mask), apply_mask(vx, mask)
        if evaluation == "knn":
            index = KnnIndex(train_vectors=tx.astype(np.float32),
                             train_labels=ld.train_y)
            pred = knn_classify(index, vx.astype(np.float32), threads=threads)
        elif evaluation == "linear":
            probe = fit_linear_probe(tx, ld.train_y, probe_config,
                                     num_classes=num_classes)
            pred = probe_predict(probe, vx)
        else:
            raise ValueError(f"unknown evaluation {evaluation!r}")
        cm = ConfusionMatrix.empty(num_classes)
        cm.add(ld.val_y, pred)
        per_class, mean = miou(cm)
        rows.append((ld.layer, mean, per_class))
    return rows
