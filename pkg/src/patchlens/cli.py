"""Command-line front-end: one subcommand per experiment.

Datasets are directories written by `synth` or the shard extractor:
manifest.json + shard files, a labels/ subdirectory of class-id PNGs
(image_id with '/' replaced by '__'), and optional split files listing one
image_id per line. Every emitted CSV echoes the full invocation so the
experiment can be rerun from the file alone. Outputs are byte-identical
for any --workers value.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import corrupt as corruptmod
from . import embedset, kernels, labels as labelsmod, probe as probemod
from . import report as reportmod
from . import retrieval as retrievalmod
from . import spectra as spectramod

PROG = "patchlens"


def _read_split(path) -> list[str]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                out.append(line)
    return out


def _label_path(dataset_dir, image_id: str) -> Path:
    return Path(dataset_dir) / "labels" / (image_id.replace("/", "__") + ".png")


def _load_patch_labels(dataset_dir, manifest, shards):
    """Rasterize each image's label mask to the shard grid."""
    hp, wp = manifest.grid
    grids = {}
    for shard in shards:
        mask = labelsmod.read_mask(_label_path(dataset_dir, shard.image_id))
        if mask.shape[0] % hp or mask.shape[1] % wp:
            raise ValueError(
                f"label mask {mask.shape} for {shard.image_id!r} does not "
                f"tile the {hp}x{wp} patch grid")
        pp = mask.shape[0] // hp
        if mask.shape[1] // wp != pp:
            raise ValueError(f"non-square patches in mask for {shard.image_id!r}")
        grids[shard.image_id] = labelsmod.rasterize_labels(
            mask, pp, image_id=shard.image_id).labels
    return grids


def _load_dataset(dataset_dir, split_file=None):
    ids = _read_split(split_file) if split_file else None
    manifest, shards = embedset.read_shards(dataset_dir, image_ids=ids)
    if ids is not None and len(shards) != len(ids):
        found = {s.image_id for s in shards}
        missing = [i for i in ids if i not in found]
        raise ValueError(f"split ids missing from {dataset_dir}: {missing[:5]}")
    return manifest, shards


def _flatten(shards, label_grids):
    x = np.concatenate([s.patches() for s in shards])
    y = np.concatenate([np.asarray(label_grids[s.image_id]).ravel()
                        for s in shards])
    return x, y.astype(np.int64)


def _config_echo(args) -> dict:
    # workers stays out: it may never change results, so identical
    # experiments must produce identical files at any parallelism.
    skip = {"func", "command", "workers"}
    return {k: v for k, v in sorted(vars(args).items())
            if k not in skip and v is not None}


def _prepare_features(args, train_x, val_x):
    """Apply the optional top-variance mask and standardizer (fit on train)."""
    extra = {}
    if getattr(args, "m", 0):
        stats = spectramod.feature_stats(train_x)
        mask = spectramod.top_variance_mask(stats, args.m)
        train_x = spectramod.apply_mask(train_x, mask)
        val_x = spectramod.apply_mask(val_x, mask)
        extra["mask_removed"] = args.m
    if getattr(args, "standardize", False):
        s = spectramod.fit_standardizer(train_x)
        train_x = spectramod.apply_standardizer(train_x, s)
        val_x = spectramod.apply_standardizer(val_x, s)
    return train_x, val_x, extra


def _class_names(args, num_classes: int):
    if getattr(args, "taxonomy", None):
        tax = labelsmod.read_taxonomy(args.taxonomy)
        return tax, [tax.name_of(i) for i in range(tax.num_classes)]
    tax = labelsmod.default_taxonomy(num_classes)
    return tax, [f"class_{i}" for i in range(num_classes)]


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    spec = embedset.SynthSpec(
        classes=args.classes, signal_dims=args.signal_dims,
        noise_dims=args.noise_dims, noise_sigma=args.noise_sigma,
        class_separation=args.separation, seed=args.seed,
        images=args.images, grid=(args.grid_rows, args.grid_cols))
    manifest, shards, label_grids = embedset.synth_shards(spec)
    out = Path(args.out)
    embedset.write_shards(manifest, shards, out)
    (out / "labels").mkdir(exist_ok=True)
    for shard, grid in zip(shards, label_grids):
        labelsmod.write_mask(grid, _label_path(out, shard.image_id))
    if args.train_images is not None:
        if not 0 < args.train_images < len(shards):
            raise ValueError("--train-images must split the dataset in two")
        ids = [s.image_id for s in shards]
        (out / "train.txt").write_text(
            "\n".join(ids[:args.train_images]) + "\n", encoding="utf-8")
        (out / "val.txt").write_text(
            "\n".join(ids[args.train_images:]) + "\n", encoding="utf-8")
    print(f"wrote {len(shards)} shards (D={manifest.feature_dim}, "
          f"grid={manifest.grid}) to {out}")
    return 0


# ------------------------------------------------------------- validate

def cmd_validate(args) -> int:
    manifest, shards = embedset.read_shards(args.shards)
    sizes = {s.grid.shape for s in shards}
    print(f"manifest: model={manifest.model_id} layer={manifest.layer} "
          f"D={manifest.feature_dim} grid={manifest.grid} "
          f"dataset={manifest.dataset_id}")
    print(f"shards: {len(shards)} grids={sorted(sizes)} all finite")
    return 0


# ---------------------------------------------------------- stats / mask

def cmd_stats(args) -> int:
    manifest, shards = _load_dataset(args.shards, args.split)
    acc = spectramod.StatsAccumulator(manifest.feature_dim)
    for shard in shards:
        acc.update(shard.patches())
    stats = acc.finalize()
    provenance = f"{manifest.dataset_id}/{manifest.model_id}/layer{manifest.layer}"
    spectramod.save_stats(stats, args.out, provenance=provenance)
    print(f"stats over {stats.sample_count} patches -> {args.out}")
    return 0


def cmd_mask(args) -> int:
    stats = spectramod.load_stats(args.stats)
    mask = spectramod.top_variance_mask(stats, args.m, provenance=str(args.stats))
    spectramod.save_mask(mask, args.out)
    print(f"retained {len(mask.retained)} of {mask.dim} features -> {args.out}")
    return 0


# ------------------------------------------------------------ knn / linear

def _load_train_val(args):
    train_man, train_shards = _load_dataset(args.train, args.train_split)
    val_man, val_shards = _load_dataset(args.val, args.val_split)
    if train_man.feature_dim != val_man.feature_dim:
        raise ValueError("train and val feature dims differ")
    train_grids = _load_patch_labels(args.train, train_man, train_shards)
    val_grids = _load_patch_labels(args.val, val_man, val_shards)
    train_x, train_y = _flatten(train_shards, train_grids)
    val_x, val_y = _flatten(val_shards, val_grids)
    return train_x, train_y, val_x, val_y


def _emit_miou(args, kind, val_y, pred, num_classes, extra_config):
    tax, names = _class_names(args, num_classes)
    cm = reportmod.ConfusionMatrix.empty(max(num_classes, tax.num_classes),
                                         ignore_id=tax.ignore_id)
    cm.add(val_y, pred)
    config = _config_echo(args) | extra_config
    rep = reportmod.miou_report(kind, config, cm, class_names=names)
    reportmod.emit_csv(rep, args.out)
    _, mean = reportmod.miou(cm)
    print(f"mIoU {mean:.4f} -> {args.out}")
    return 0


def cmd_knn(args) -> int:
    train_x, train_y, val_x, val_y = _load_train_val(args)
    num_classes = int(max(train_y.max(), val_y.max())) + 1
    train_x, val_x, extra = _prepare_features(args, train_x, val_x)
    index = probemod.KnnIndex(train_vectors=train_x.astype(np.float32),
                              train_labels=train_y, k=args.k, metric=args.metric)
    pred = probemod.knn_classify(index, val_x.astype(np.float32),
                                 threads=args.workers)
    return _emit_miou(args, "knn", val_y, pred, num_classes, extra)


def cmd_linear(args) -> int:
    train_x, train_y, val_x, val_y = _load_train_val(args)
    num_classes = int(max(train_y.max(), val_y.max())) + 1
    mask_args = argparse.Namespace(m=args.m, standardize=False)
    train_x, val_x, extra = _prepare_features(mask_args, train_x, val_x)
    config = probemod.ProbeConfig(
        learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size,
        momentum=args.momentum, seed=args.seed, standardize=args.standardize)
    model = probemod.fit_linear_probe(train_x, train_y, config,
                                      num_classes=num_classes)
    if args.save_probe:
        probemod.save_probe(model, args.save_probe)
    pred = probemod.probe_predict(model, val_x)
    return _emit_miou(args, "linear", val_y, pred, num_classes, extra)


# ------------------------------------------------------------- image-knn

def _read_image_labels(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "image_id,label":
            raise ValueError(f"{path}: expected header 'image_id,label'")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            image_id, label = line.rsplit(",", 1)
            out[image_id] = int(label)
    return out


def cmd_image_knn(args) -> int:
    _, train_shards = _load_dataset(args.train, args.train_split)
    _, val_shards = _load_dataset(args.val, args.val_split)
    train_labels = _read_image_labels(args.train_labels)
    val_labels = _read_image_labels(args.val_labels)
    mask = spectramod.load_mask(args.mask) if args.mask else None
    y_train = [train_labels[s.image_id] for s in train_shards]
    pred = probemod.image_knn_classify(train_shards, y_train, val_shards,
                                       mode=args.mode, mask=mask, k=args.k,
                                       threads=args.workers)
    rows, hits = [], 0
    for shard, p in zip(val_shards, pred):
        truth = val_labels[shard.image_id]
        hits += int(p == truth)
        rows.append((shard.image_id, truth, int(p), int(p == truth)))
    accuracy = hits / len(rows) if rows else float("nan")
    rows.append(("overall", "", "", accuracy))
    rep = reportmod.EvalReport(kind="image-knn", config=_config_echo(args),
                               columns=["image_id", "truth", "prediction",
                                        "correct"], rows=rows)
    reportmod.emit_csv(rep, args.out)
    print(f"image accuracy {accuracy:.4f} -> {args.out}")
    return 0


# --------------------------------------------------------------- corrupt

def cmd_corrupt(args) -> int:
    spec = corruptmod.CorruptionSpec(kind=args.kind, level=args.level,
                                     band=args.band, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    images = sorted(Path(p) for p in args.images)
    for path in images:
        img = corruptmod.read_png(path)
        result = corruptmod.corrupt_image(img, spec)
        suffix = f"{args.kind}_{args.level:g}"
        if args.band is not None:
            suffix += f"_b{args.band}"
        dest = out / f"{path.stem}__{suffix}.png"
        corruptmod.write_png(result, dest)
        corruptmod.write_sidecar(spec, dest)
    print(f"corrupted {len(images)} images -> {out}")
    return 0


# -------------------------------------------------------------- retrieve

def _annotations_by_image(path):
    anns = {}
    for ann in labelsmod.read_annotations(path):
        anns.setdefault(ann.image_id, []).append(ann)
    return anns


def _transform_boxes(boxes, spec, width, height):
    if spec is None:
        return boxes
    out = []
    for b in boxes:
        corners = tuple(
            tuple(float(v) for v in corruptmod.forward_point(spec, x, y,
                                                             width, height))
            for x, y in b.corners)
        out.append(labelsmod.BoxAnnotation(
            image_id=b.image_id, corners=corners, class_id=b.class_id,
            instance_id=b.instance_id, frame_index=b.frame_index))
    return out


def _annotated_queries(shards, anns_by_image, spec, taxonomy, grid, pp):
    """Patch queries of transformed images whose patch center lies in an
    annotated (transformed) box present in the tile."""
    hp, wp = grid
    width, height = wp * pp, hp * pp
    supercats = taxonomy.supercategory_ids()
    queries = []
    for shard in shards:
        boxes = _transform_boxes(anns_by_image.get(shard.image_id, []),
                                 spec, width, height)
        boxes = [b for b in boxes
                 if labelsmod.box_presence(b, (0, 0, width, height))]
        grid_labels = labelsmod.patch_object_labels(
            boxes, taxonomy, grid, pp, image_id=shard.image_id).labels
        rows, cols = np.nonzero(grid_labels != taxonomy.background_id)
        for r, c in zip(rows, cols):
            cls = int(grid_labels[r, c])
            queries.append(retrievalmod.PatchQuery(
                image_id=shard.image_id, row=int(r), col=int(c),
                vector=shard.grid[r, c], class_id=cls,
                supercategory_id=int(supercats[cls])))
    return queries


def cmd_retrieve(args) -> int:
    taxonomy = labelsmod.read_taxonomy(args.taxonomy)
    manifest, db_shards = _load_dataset(args.db)
    grid, pp = manifest.grid, manifest.patch_pixels
    anns = _annotations_by_image(args.annotations)
    db_grids = {}
    for shard in db_shards:
        boxes = [b for b in anns.get(shard.image_id, [])
                 if labelsmod.box_presence(b, (0, 0, grid[1] * pp, grid[0] * pp))]
        db_grids[shard.image_id] = labelsmod.patch_object_labels(
            boxes, taxonomy, grid, pp, image_id=shard.image_id).labels
    db = retrievalmod.build_patch_database(db_shards, db_grids, taxonomy)

    queries_per_level, correspondences = {}, {}
    for level_spec in args.query:
        level_str, _, shard_dir = level_spec.partition("=")
        if not shard_dir:
            raise ValueError(f"--query must look like LEVEL=DIR, got {level_spec!r}")
        level = float(level_str)
        q_man, q_shards = _load_dataset(shard_dir)
        if q_man.grid != manifest.grid:
            raise ValueError(f"query grid {q_man.grid} != db grid {manifest.grid}")
        if level == 0:
            spec = None
            corr = corruptmod.identity_correspondence(grid)
        else:
            spec = corruptmod.CorruptionSpec(kind=args.kind, level=level,
                                             band=args.band, seed=args.seed)
            corr = corruptmod.build_correspondence(spec, grid, pp)
        queries_per_level[level] = _annotated_queries(
            q_shards, anns, spec, taxonomy, grid, pp)
        correspondences[level] = corr

    rows = retrievalmod.retrieval_curve(db, queries_per_level, correspondences,
                                        exclude_same_image=args.exclude_same_image,
                                        threads=args.workers)
    buckets = (retrievalmod.EXCLUSION_BUCKETS if args.exclude_same_image
               else retrievalmod.STANDARD_BUCKETS)
    columns = ["level"] + [b.value for b in buckets] + ["upper_bound"]
    csv_rows = [(level, *[fr[b] for b in buckets], ub)
                for level, fr, ub in rows]
    rep = reportmod.EvalReport(kind="retrieve", config=_config_echo(args),
                               columns=columns, rows=csv_rows)
    reportmod.emit_csv(rep, args.out)
    print(f"{len(csv_rows)} levels -> {args.out}")
    return 0


# ----------------------------------------------------------------- track

def _video_of(image_id: str) -> str:
    head, sep, _ = image_id.rpartition("/")
    return head if sep else "video0"


def cmd_track(args) -> int:
    manifest, shards = _load_dataset(args.shards)
    by_id = {s.image_id: s for s in shards}
    instances = []
    for ann in labelsmod.read_annotations(args.annotations):
        if ann.frame_index is None or ann.instance_id is None:
            raise ValueError("track annotations need frame_index and instance_id")
        shard = by_id.get(ann.image_id)
        if shard is None:
            raise ValueError(f"no shard for annotated image {ann.image_id!r}")
        pooled = labelsmod.roi_pool(shard, ann, manifest.patch_pixels)
        instances.append(retrievalmod.TrackInstance(
            video_id=_video_of(ann.image_id), frame_index=ann.frame_index,
            instance_id=ann.instance_id, class_id=ann.class_id,
            pooled=pooled.astype(np.float32)))
    deltas = [int(d) for d in args.deltas.split(",") if d]
    rows = retrievalmod.track_curve(instances, deltas)
    rep = reportmod.EvalReport(kind="track", config=_config_echo(args),
                               columns=["delta", "instance_accuracy",
                                        "category_accuracy"], rows=rows)
    reportmod.emit_csv(rep, args.out)
    print(f"{len(rows)} deltas -> {args.out}")
    return 0


# ---------------------------------------------------------------- layers

def cmd_layers(args) -> int:
    layer_data = []
    names_seen = None
    for spec in args.layer:
        layer_str, _, dataset_dir = spec.partition("=")
        if not dataset_dir:
            raise ValueError(f"--layer must look like N=DIR, got {spec!r}")
        man, train_shards = _load_dataset(dataset_dir, args.train_split)
        _, val_shards = _load_dataset(dataset_dir, args.val_split)
        train_grids = _load_patch_labels(dataset_dir, man, train_shards)
        val_grids = _load_patch_labels(dataset_dir, man, val_shards)
        train_x, train_y = _flatten(train_shards, train_grids)
        val_x, val_y = _flatten(val_shards, val_grids)
        layer_data.append(probemod.LayerData(
            layer=int(layer_str), grid=man.grid, train_x=train_x,
            train_y=train_y, val_x=val_x, val_y=val_y))
        names_seen = max(names_seen or 0,
                         int(max(train_y.max(), val_y.max())) + 1)
    probe_config = probemod.ProbeConfig(seed=args.seed,
                                        standardize=args.standardize)
    rows = probemod.layer_sweep(layer_data, evaluation=args.evaluation,
                                num_classes=names_seen,
                                probe_config=probe_config, mask_m=args.m,
                                threads=args.workers)
    _, names = _class_names(args, names_seen)
    csv_rows = []
    for layer, mean, per_class in rows:
        for cid, iou in enumerate(per_class):
            if not np.isnan(iou):
                csv_rows.append((layer, cid, names[cid], float(iou)))
        csv_rows.append((layer, "mean", "mean", mean))
    rep = reportmod.EvalReport(kind="layers", config=_config_echo(args),
                               columns=["layer", "class_id", "class_name", "iou"],
                               rows=csv_rows)
    reportmod.emit_csv(rep, args.out)
    print(f"{len(rows)} layers -> {args.out}")
    return 0


# -------------------------------------------------------------- probe-r2

def _central_patch_matrix(manifest, shards):
    hp, wp = manifest.grid
    return np.stack([s.grid[hp // 2, wp // 2] for s in shards]).astype(np.float64)


def _targets_from_labels(dataset_dir, manifest, shards, class_ids):
    rows = {}
    for shard in shards:
        mask = labelsmod.read_mask(_label_path(dataset_dir, shard.image_id))
        total = mask.size
        rows[shard.image_id] = {f"class_{c}": float((mask == c).sum()) / total
                                for c in class_ids}
    return rows


def _read_targets_csv(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[0] != "image_id":
            raise ValueError(f"{path}: first column must be image_id")
        names = header[1:]
        rows = {}
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            rows[parts[0]] = {n: float(v) for n, v in zip(names, parts[1:])}
    return rows


def cmd_probe_r2(args) -> int:
    manifest, train_shards = _load_dataset(args.shards, args.train_split)
    _, val_shards = _load_dataset(args.shards, args.val_split)
    if args.targets:
        targets = _read_targets_csv(args.targets)
    else:
        class_ids = [int(c) for c in args.targets_from_labels.split(",")]
        all_shards = train_shards + val_shards
        targets = _targets_from_labels(args.shards, manifest, all_shards,
                                       class_ids)
    names = sorted(next(iter(targets.values())).keys())
    train_x = _central_patch_matrix(manifest, train_shards)
    val_x = _central_patch_matrix(manifest, val_shards)
    rows = []
    scores = []
    for name in names:
        y_train = np.array([targets[s.image_id][name] for s in train_shards])
        y_val = np.array([targets[s.image_id][name] for s in val_shards])
        model = probemod.fit_ridge(train_x, y_train, lam=args.l2)
        score = probemod.r_squared(model, val_x, y_val)
        scores.append(score)
        rows.append((name, score))
    rows.append(("mean", float(np.mean(scores))))
    rep = reportmod.EvalReport(kind="probe-r2", config=_config_echo(args),
                               columns=["target", "r_squared"], rows=rows)
    reportmod.emit_csv(rep, args.out)
    print(f"mean R^2 {np.mean(scores):.4f} -> {args.out}")
    return 0


# ---------------------------------------------------------- recon-metrics

def cmd_recon_metrics(args) -> int:
    original = Path(args.original)
    recon = Path(args.reconstructed)
    names = sorted(p.name for p in original.glob("*.png"))
    if not names:
        raise ValueError(f"no PNGs under {original}")
    rows = []
    sums = np.zeros(3)
    for name in names:
        a = corruptmod.read_png(original / name)
        b = corruptmod.read_png(recon / name)
        values = (reportmod.mse(a, b), reportmod.psnr(a, b), reportmod.ssim(a, b))
        sums += values
        rows.append((name, *values))
    rows.append(("mean", *(sums / len(names))))
    rep = reportmod.EvalReport(kind="recon-metrics", config=_config_echo(args),
                               columns=["image_id", "mse", "psnr", "ssim"],
                               rows=rows)
    reportmod.emit_csv(rep, args.out)
    print(f"{len(names)} image pairs -> {args.out}")
    return 0


# ----------------------------------------------------------------- parser

def _add_common(p, out=True):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1,
                   help="data-parallel threads; never changes results")
    if out:
        p.add_argument("--out", required=True)


def _add_split_flags(p):
    p.add_argument("--train-split", default=None)
    p.add_argument("--val-split", default=None)


def _add_feature_flags(p):
    p.add_argument("--m", type=int, default=0,
                   help="remove the m highest-variance features (fit on train)")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--metric", choices=["l2", "cosine"], default="l2")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG, description="Patch-embedding evaluation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic shard dataset")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--signal-dims", type=int, default=568)
    p.add_argument("--noise-dims", type=int, default=200)
    p.add_argument("--noise-sigma", type=float, default=50.0)
    p.add_argument("--separation", type=float, default=12.0)
    p.add_argument("--images", type=int, default=50)
    p.add_argument("--grid-rows", type=int, default=10)
    p.add_argument("--grid-cols", type=int, default=10)
    p.add_argument("--train-images", type=int, default=None,
                   help="also write train.txt/val.txt split files")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="check shard directory integrity")
    p.add_argument("--shards", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", help="per-feature mean/variance over patches")
    p.add_argument("--shards", required=True)
    p.add_argument("--split", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("mask", help="top-variance feature mask from stats")
    p.add_argument("--stats", required=True)
    p.add_argument("--m", type=int, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("knn", help="patch k-NN classification -> mIoU")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--taxonomy", default=None)
    p.add_argument("--k", type=int, default=1)
    _add_split_flags(p)
    _add_feature_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_knn)

    p = sub.add_parser("linear", help="linear softmax probe -> mIoU")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--taxonomy", default=None)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=1024)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--save-probe", default=None)
    _add_split_flags(p)
    _add_feature_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_linear)

    p = sub.add_parser("image-knn", help="image-level k-NN over [CLS] or mean")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--train-labels", required=True)
    p.add_argument("--val-labels", required=True)
    p.add_argument("--mode", choices=["cls_token", "mean_patches"],
                   default="mean_patches")
    p.add_argument("--mask", default=None, help="feature mask JSON")
    p.add_argument("--k", type=int, default=1)
    _add_split_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_image_knn)

    p = sub.add_parser("corrupt", help="apply one corruption to PNG images")
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--kind", choices=list(corruptmod.PHOTOMETRIC_KINDS
                                          + corruptmod.GEOMETRIC_KINDS),
                   required=True)
    p.add_argument("--level", type=float, required=True)
    p.add_argument("--band", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("retrieve", help="nearest-patch retrieval buckets")
    p.add_argument("--db", required=True, help="original-image shard dataset")
    p.add_argument("--annotations", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--kind", choices=list(corruptmod.PHOTOMETRIC_KINDS
                                          + corruptmod.GEOMETRIC_KINDS),
                   required=True)
    p.add_argument("--band", type=int, default=None)
    p.add_argument("--query", action="append", required=True,
                   metavar="LEVEL=DIR", help="transformed shards per level")
    p.add_argument("--exclude-same-image", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("track", help="instance association across frames")
    p.add_argument("--shards", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--deltas", required=True, help="comma-separated frame gaps")
    _add_common(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("layers", help="per-layer evaluation sweep")
    p.add_argument("--layer", action="append", required=True, metavar="N=DIR")
    p.add_argument("--evaluation", choices=["knn", "linear"], default="knn")
    p.add_argument("--taxonomy", default=None)
    _add_split_flags(p)
    _add_feature_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_layers)

    p = sub.add_parser("probe-r2", help="ridge R^2 of global context from the "
                                        "central patch")
    p.add_argument("--shards", required=True)
    p.add_argument("--targets", default=None, help="CSV image_id,<targets...>")
    p.add_argument("--targets-from-labels", default=None,
                   help="comma-separated class ids; targets = pixel fractions")
    p.add_argument("--l2", type=float, default=1.0)
    _add_split_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_probe_r2)

    p = sub.add_parser("recon-metrics", help="MSE/PSNR/SSIM between image dirs")
    p.add_argument("--original", required=True)
    p.add_argument("--reconstructed", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_recon_metrics)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) == "probe-r2":
        if bool(args.targets) == bool(args.targets_from_labels):
            parser.error("probe-r2 needs exactly one of --targets / "
                         "--targets-from-labels")
    try:
        return args.func(args)
    except Exception as exc:  # runtime failures -> exit 1, not a traceback
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
