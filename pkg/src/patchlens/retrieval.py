"""Nearest-patch retrieval with granularity buckets, and object-instance
association across video frames.

All distances are squared Euclidean (matching the probe module); ties
resolve to the lowest database entry index. The retrieval database holds
the complete set of original-image patches, background included.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels
from .corrupt import CorrespondenceMap


class RetrievalBucket(Enum):
    SAME_PATCH = "same_patch"
    SAME_FINE_GRAINED = "same_fine_grained"
    SAME_SUPERCATEGORY = "same_supercategory"
    WRONG_OR_BACKGROUND = "wrong_or_background"
    # exclusion mode only:
    WRONG_SUPERCATEGORY = "wrong_supercategory"
    BACKGROUND = "background"


STANDARD_BUCKETS = (RetrievalBucket.SAME_PATCH, RetrievalBucket.SAME_FINE_GRAINED,
                    RetrievalBucket.SAME_SUPERCATEGORY,
                    RetrievalBucket.WRONG_OR_BACKGROUND)
EXCLUSION_BUCKETS = (RetrievalBucket.SAME_FINE_GRAINED,
                     RetrievalBucket.SAME_SUPERCATEGORY,
                     RetrievalBucket.WRONG_SUPERCATEGORY,
                     RetrievalBucket.BACKGROUND)


@dataclass
class PatchDatabase:
    """Flat arrays over every original patch, plus an image group id used
    for same-image exclusion."""

    vectors: np.ndarray        # (M, D) float32
    image_ids: list[str]
    rows: np.ndarray           # (M,) int32
    cols: np.ndarray           # (M,) int32
    class_ids: np.ndarray      # (M,) int64
    supercategory_ids: np.ndarray  # (M,) int64
    background_id: int
    image_groups: np.ndarray = field(init=False)   # (M,) int64
    _group_of: dict = field(init=False)

    def __post_init__(self):
        uniq: dict[str, int] = {}
        groups = np.empty(len(self.image_ids), dtype=np.int64)
        for i, image_id in enumerate(self.image_ids):
            groups[i] = uniq.setdefault(image_id, len(uniq))
        self.image_groups = groups
        self._group_of = uniq

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def group_of(self, image_id: str) -> int:
        return self._group_of.get(image_id, -1)


def build_patch_database(shards, label_grids, taxonomy) -> PatchDatabase:
    """Flatten shards into a database; label_grids: image_id -> (Hp, Wp) ids."""
    supercats = taxonomy.supercategory_ids()
    vectors, image_ids, rows, cols, classes = [], [], [], [], []
    for shard in shards:
        hp, wp, _ = shard.grid.shape
        labels = np.asarray(label_grids[shard.image_id])
        if labels.shape != (hp, wp):
            raise ValueError(f"label grid for {shard.image_id!r} has shape "
                             f"{labels.shape}, expected {(hp, wp)}")
        r, c = np.mgrid[0:hp, 0:wp]
        vectors.append(shard.patches())
        image_ids.extend([shard.image_id] * (hp * wp))
        rows.append(r.ravel())
        cols.append(c.ravel())
        classes.append(labels.ravel())
    class_ids = np.concatenate(classes).astype(np.int64)
    return PatchDatabase(
        vectors=np.ascontiguousarray(np.concatenate(vectors), dtype=np.float32),
        image_ids=image_ids,
        rows=np.concatenate(rows).astype(np.int32),
        cols=np.concatenate(cols).astype(np.int32),
        class_ids=class_ids,
        supercategory_ids=supercats[class_ids],
        background_id=taxonomy.background_id,
    )


@dataclass(frozen=True)
class PatchQuery:
    """An annotated patch of a transformed image.

    image_id names the original image the transform was applied to; row
    and col index the patch inside the transformed grid.
    """

    image_id: str
    row: int
    col: int
    vector: np.ndarray
    class_id: int
    supercategory_id: int


def _bucket(db: PatchDatabase, query: PatchQuery, match: int,
            target, exclude_same_image: bool) -> RetrievalBucket:
    matched_class = int(db.class_ids[match])
    if exclude_same_image:
        if matched_class == query.class_id:
            return RetrievalBucket.SAME_FINE_GRAINED
        if matched_class == db.background_id:
            return RetrievalBucket.BACKGROUND
        if int(db.supercategory_ids[match]) == query.supercategory_id:
            return RetrievalBucket.SAME_SUPERCATEGORY
        return RetrievalBucket.WRONG_SUPERCATEGORY
    if (target is not None
            and db.image_ids[match] == query.image_id
            and int(db.rows[match]) == int(target[0])
            and int(db.cols[match]) == int(target[1])):
        return RetrievalBucket.SAME_PATCH
    if matched_class == query.class_id:
        return RetrievalBucket.SAME_FINE_GRAINED
    if (matched_class != db.background_id
            and int(db.supercategory_ids[match]) == query.supercategory_id):
        return RetrievalBucket.SAME_SUPERCATEGORY
    return RetrievalBucket.WRONG_OR_BACKGROUND


def nearest_patches(db: PatchDatabase, queries, correspondence: CorrespondenceMap,
                    exclude_same_image: bool = False, threads: int = 1):
    """Batched nearest_patch: returns (buckets, matched indices)."""
    if not queries:
        return [], np.empty(0, dtype=np.int64)
    vectors = np.ascontiguousarray(np.stack([q.vector for q in queries]),
                                   dtype=np.float32)
    if exclude_same_image:
        q_groups = np.array([db.group_of(q.image_id) for q in queries],
                            dtype=np.int64)
        matches = kernels.nearest_index(db.vectors, vectors,
                                        db_groups=db.image_groups,
                                        q_groups=q_groups, threads=threads)
    else:
        matches = kernels.nearest_index(db.vectors, vectors, threads=threads)
    buckets = []
    for query, match in zip(queries, matches):
        target = correspondence.targets[query.row, query.col]
        if target[0] < 0:
            target = None
        buckets.append(_bucket(db, query, int(match), target, exclude_same_image))
    return buckets, matches


def nearest_patch(db: PatchDatabase, query: PatchQuery,
                  correspondence: CorrespondenceMap,
                  exclude_same_image: bool = False):
    """Single-query form: (bucket, matched entry index)."""
    buckets, matches = nearest_patches(db, [query], correspondence,
                                       exclude_same_image)
    return buckets[0], int(matches[0])


def retrieval_curve(db: PatchDatabase, queries_per_level: dict,
                    correspondences: dict, exclude_same_image: bool = False,
                    threads: int = 1):
    """Bucket fractions per transform level.

    queries_per_level / correspondences: level -> (queries, CorrespondenceMap).
    Returns rows (level, {bucket: fraction}, upper_bound) sorted by level;
    fractions are over annotated queries and sum to 1.
    """
    bucket_set = EXCLUSION_BUCKETS if exclude_same_image else STANDARD_BUCKETS
    rows = []
    for level in sorted(queries_per_level):
        queries = queries_per_level[level]
        corr = correspondences[level]
        buckets, _ = nearest_patches(db, queries, corr,
                                     exclude_same_image, threads=threads)
        total = len(buckets)
        if total == 0:
            raise ValueError(f"level {level!r} has no annotated queries")
        fractions = {b: sum(1 for x in buckets if x is b) / total
                     for b in bucket_set}
        rows.append((level, fractions, corr.upper_bound))
    return rows


@dataclass(frozen=True)
class TrackInstance:
    video_id: str
    frame_index: int
    instance_id: int
    class_id: int
    pooled: np.ndarray  # (D,) feature vector from ROI pooling


def track_associate(instances, delta: int):
    """Nearest-embedding association between frames t and t+delta.

    instance_accuracy counts queries whose instance persists at t+delta;
    category_accuracy counts every query. Frames pair up only inside one
    video. Returns NaNs when no frame pairs exist.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    by_video: dict[str, dict[int, list[TrackInstance]]] = {}
    for inst in instances:
        by_video.setdefault(inst.video_id, {}).setdefault(
            inst.frame_index, []).append(inst)

    inst_hits = inst_total = 0
    cat_hits = cat_total = 0
    for video in sorted(by_video):
        frames = by_video[video]
        for t in sorted(frames):
            later = frames.get(t + delta)
            if not later:
                continue
            candidates = sorted(later, key=lambda x: x.instance_id)
            cand_vectors = np.ascontiguousarray(
                np.stack([c.pooled for c in candidates]), dtype=np.float32)
            queries = sorted(frames[t], key=lambda x: x.instance_id)
            q_vectors = np.ascontiguousarray(
                np.stack([q.pooled for q in queries]), dtype=np.float32)
            nearest = kernels.nearest_index(cand_vectors, q_vectors)
            persistent = {c.instance_id for c in candidates}
            for query, match in zip(queries, nearest):
                retrieved = candidates[int(match)]
                cat_total += 1
                cat_hits += retrieved.class_id == query.class_id
                if query.instance_id in persistent:
                    inst_total += 1
                    inst_hits += retrieved.instance_id == query.instance_id
    instance_accuracy = inst_hits / inst_total if inst_total else float("nan")
    category_accuracy = cat_hits / cat_total if cat_total else float("nan")
    return instance_accuracy, category_accuracy


def track_curve(instances, deltas):
    """Rows (delta, instance_accuracy, category_accuracy) per requested delta."""
    return [(d, *track_associate(instances, d)) for d in deltas]
