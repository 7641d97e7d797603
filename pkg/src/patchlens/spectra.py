"""Per-feature statistics, high-variance pruning, and standardization.

The pruning remedy removes the m features with the largest variance over
an analysis sample of patches; reconstruction-trained embeddings
concentrate nearly all of their variance there while the information
needed for distance-based classifiers lives in the rest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass
class FeatureStats:
    dim: int
    mean: np.ndarray       # (D,) float64
    variance: np.ndarray   # (D,) float64, population (1/N)
    sample_count: int


@dataclass(frozen=True)
class FeatureMask:
    dim: int
    retained: tuple[int, ...]  # sorted ascending
    provenance: str = ""

    @property
    def removed_m(self) -> int:
        return self.dim - len(self.retained)

    def removed(self) -> frozenset:
        return frozenset(range(self.dim)) - frozenset(self.retained)

    def index_array(self) -> np.ndarray:
        return np.asarray(self.retained, dtype=np.int64)


@dataclass
class Standardizer:
    mean: np.ndarray  # (D,) float64
    std: np.ndarray   # (D,) float64
    epsilon: float = 1e-5


class StatsAccumulator:
    """Associative partial sums (count, sum, sum of squares) for parallel
    or streaming accumulation."""

    def __init__(self, dim: int):
        self.dim = dim
        self.count = 0
        self.sum = np.zeros(dim, dtype=np.float64)
        self.sumsq = np.zeros(dim, dtype=np.float64)

    def update(self, vectors) -> "StatsAccumulator":
        v = _as_matrix(vectors)
        if v.shape[1] != self.dim:
            raise ValueError(f"dim mismatch: expected {self.dim}, got {v.shape[1]}")
        self.count += v.shape[0]
        self.sum += v.sum(axis=0, dtype=np.float64)
        self.sumsq += np.einsum("ij,ij->j", v, v, dtype=np.float64)
        return self

    def merge(self, other: "StatsAccumulator") -> "StatsAccumulator":
        if other.dim != self.dim:
            raise ValueError("cannot merge accumulators of different dims")
        self.count += other.count
        self.sum += other.sum
        self.sumsq += other.sumsq
        return self

    def finalize(self) -> FeatureStats:
        if self.count < 2:
            raise ValueError("need at least 2 vectors for feature statistics")
        mean = self.sum / self.count
        var = np.maximum(self.sumsq / self.count - mean * mean, 0.0)
        return FeatureStats(dim=self.dim, mean=mean, variance=var,
                            sample_count=self.count)


def _as_matrix(vectors) -> np.ndarray:
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim == 1:
        v = v[None, :]
    return v.reshape(-1, v.shape[-1])


def feature_stats(patches) -> FeatureStats:
    """Elementwise mean and population variance over patch vectors."""
    v = _as_matrix(patches)
    return StatsAccumulator(v.shape[1]).update(v).finalize()


def top_variance_mask(stats: FeatureStats, m: int, provenance: str = "") -> FeatureMask:
    """Mask removing the m largest-variance features (ties: lower index
    removed first); retained indices are sorted ascending."""
    if not 0 <= m < stats.dim:
        raise ValueError(f"m must be in [0, {stats.dim}), got {m}")
    order = np.lexsort((np.arange(stats.dim), -stats.variance))
    removed = set(order[:m].tolist())
    retained = tuple(i for i in range(stats.dim) if i not in removed)
    return FeatureMask(dim=stats.dim, retained=retained, provenance=provenance)


def apply_mask(vectors, mask: FeatureMask):
    """Project onto the retained coordinates (order preserving)."""
    v = np.asarray(vectors)
    if v.shape[-1] != mask.dim:
        raise ValueError(f"dim mismatch: vectors D={v.shape[-1]}, mask D={mask.dim}")
    return v[..., mask.index_array()]


def fit_standardizer(train_patches, epsilon: float = 1e-5) -> Standardizer:
    stats = feature_stats(train_patches)
    return Standardizer(mean=stats.mean, std=np.sqrt(stats.variance),
                        epsilon=epsilon)


def apply_standardizer(vectors, s: Standardizer):
    v = np.asarray(vectors, dtype=np.float64)
    if v.shape[-1] != s.mean.shape[0]:
        raise ValueError(f"dim mismatch: vectors D={v.shape[-1]}, "
                         f"standardizer D={s.mean.shape[0]}")
    return (v - s.mean) / (s.std + s.epsilon)


def mask_overlap(a: FeatureMask, b: FeatureMask) -> int:
    """Size of the intersection of the two removed sets."""
    if a.dim != b.dim:
        raise ValueError("masks cover different dims")
    if a.removed_m != b.removed_m:
        raise ValueError("masks removed different feature counts")
    return len(a.removed() & b.removed())


def save_stats(stats: FeatureStats, path, provenance: str = "") -> None:
    doc = {
        "dim": stats.dim,
        "sample_count": stats.sample_count,
        "provenance": provenance,
        "mean": [float(x) for x in stats.mean],
        "variance": [float(x) for x in stats.variance],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_stats(path) -> FeatureStats:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return FeatureStats(dim=doc["dim"],
                        mean=np.asarray(doc["mean"], dtype=np.float64),
                        variance=np.asarray(doc["variance"], dtype=np.float64),
                        sample_count=doc["sample_count"])


def save_mask(mask: FeatureMask, path) -> None:
    doc = {
        "dim": mask.dim,
        "removed_m": mask.removed_m,
        "provenance": mask.provenance,
        "retained": list(mask.retained),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_mask(path) -> FeatureMask:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return FeatureMask(dim=doc["dim"], retained=tuple(doc["retained"]),
                       provenance=doc.get("provenance", ""))
