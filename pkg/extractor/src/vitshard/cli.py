"""Job-file driven CLI: `vitshard extract` and `vitshard reconstruct`."""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

from .extract import extract, list_images
from .families import IMAGENET_MEAN, IMAGENET_STD, ModelSpec
from .mae import reconstruct

PROG = "vitshard"


def model_spec_from(doc: dict) -> ModelSpec:
    model = doc["model"]
    norm = doc.get("normalization")
    normalization = ((tuple(norm["mean"]), tuple(norm["std"])) if norm
                     else (IMAGENET_MEAN, IMAGENET_STD))
    return ModelSpec(
        family=model["family"],
        checkpoint=model.get("checkpoint"),
        checkpoint_sha256=model.get("checkpoint_sha256"),
        layers=tuple(model.get("layers", [12])),
        arch=model.get("arch", {}),
        normalization=normalization,
    )


def cmd_extract(args) -> int:
    with open(args.job, encoding="utf-8") as fh:
        job = json.load(fh)
    spec = model_spec_from(job)
    images = list_images(job["input"]["images"])
    if not images:
        raise ValueError(f"no images under {job['input']['images']}")
    out_root = Path(job["output"])
    dirs = extract(spec, images, tiling=job.get("tiling", "tiled_256"),
                   out_root=out_root,
                   dataset_id=job["input"].get("dataset_id", "dataset"))
    # provenance: the job that produced these shards, next to each manifest
    for layer_dir in dirs.values():
        shutil.copyfile(args.job, layer_dir / "extraction_job.json")
    for layer, layer_dir in sorted(dirs.items()):
        print(f"layer {layer}: {len(images)} images -> {layer_dir}")
    return 0


def cmd_reconstruct(args) -> int:
    with open(args.job, encoding="utf-8") as fh:
        job = json.load(fh)
    spec = model_spec_from(job)
    written = reconstruct(
        spec,
        shard_dir=job["shards"],
        out_dir=job["output"],
        zero_mask_path=job.get("zero_mask"),
        mask_ratio=job.get("mask_ratio", 0.0),
        seed=job.get("seed", 0),
    )
    print(f"{len(written)} reconstructions -> {job['output']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG, description="ViT patch-embedding shard extractor")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("extract", help="export embeddings per the job file")
    p.add_argument("--job", required=True)
    p.set_defaults(func=cmd_extract)
    p = sub.add_parser("reconstruct",
                       help="decode stored MAE shards back to images")
    p.add_argument("--job", required=True)
    p.set_defaults(func=cmd_reconstruct)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
