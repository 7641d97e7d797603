import json
import shutil
import subprocess

import numpy as np
import pytest
import torch
from PIL import Image

from conftest import TINY_ARCH
from vitshard.cli import main
from vitshard.families import sha256_of


def make_inputs(tmp_path):
    rng = np.random.default_rng(5)
    imgs = tmp_path / "imgs"
    imgs.mkdir()
    for i in range(2):
        Image.fromarray(rng.integers(0, 256, (224, 224, 3))
                        .astype(np.uint8)).save(imgs / f"im{i}.png")
    from test_mae import tiny_mae_checkpoint
    ckpt = tiny_mae_checkpoint(tmp_path)
    return imgs, ckpt


def test_extract_then_reconstruct_jobs(tmp_path, capsys):
    imgs, ckpt = make_inputs(tmp_path)
    extract_job = {
        "model": {"family": "mae", "checkpoint": str(ckpt),
                  "checkpoint_sha256": sha256_of(ckpt),
                  "layers": [2], "arch": TINY_ARCH},
        "input": {"images": str(imgs), "dataset_id": "toy"},
        "tiling": "full_image",
        "output": str(tmp_path / "shards"),
    }
    job1 = tmp_path / "extract.json"
    job1.write_text(json.dumps(extract_job, indent=2))
    assert main(["extract", "--job", str(job1)]) == 0
    layer_dir = tmp_path / "shards" / "layer02"
    assert (layer_dir / "manifest.json").exists()
    assert (layer_dir / "extraction_job.json").exists()

    recon_job = {
        "model": extract_job["model"],
        "shards": str(layer_dir),
        "mask_ratio": 0.75,
        "seed": 2,
        "output": str(tmp_path / "recon"),
    }
    job2 = tmp_path / "reconstruct.json"
    job2.write_text(json.dumps(recon_job, indent=2))
    assert main(["reconstruct", "--job", str(job2)]) == 0
    pngs = sorted((tmp_path / "recon").glob("*.png"))
    assert [p.name for p in pngs] == ["im0.png", "im1.png"]


def test_bad_job_exits_one(tmp_path):
    job = tmp_path / "job.json"
    job.write_text(json.dumps({"model": {"family": "nope"},
                               "input": {"images": "x"}, "output": "y"}))
    assert main(["extract", "--job", str(job)]) == 1


def test_full_loop_through_patchlens(tmp_path):
    """extract -> reconstruct -> patchlens recon-metrics on the outputs."""
    if shutil.which("patchlens") is None:
        pytest.skip("patchlens CLI not installed")
    imgs, ckpt = make_inputs(tmp_path)
    extract_job = {
        "model": {"family": "mae", "checkpoint": str(ckpt), "layers": [2],
                  "arch": TINY_ARCH},
        "input": {"images": str(imgs), "dataset_id": "toy"},
        "tiling": "full_image",
        "output": str(tmp_path / "shards"),
    }
    job1 = tmp_path / "extract.json"
    job1.write_text(json.dumps(extract_job))
    assert main(["extract", "--job", str(job1)]) == 0
    recon_job = {
        "model": extract_job["model"],
        "shards": str(tmp_path / "shards" / "layer02"),
        "output": str(tmp_path / "recon"),
    }
    job2 = tmp_path / "recon.json"
    job2.write_text(json.dumps(recon_job))
    assert main(["reconstruct", "--job", str(job2)]) == 0

    out_csv = tmp_path / "metrics.csv"
    proc = subprocess.run(
        ["patchlens", "recon-metrics", "--original", str(imgs),
         "--reconstructed", str(tmp_path / "recon"), "--out", str(out_csv)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    rows = [l for l in out_csv.read_text().splitlines()
            if not l.startswith("#")]
    assert rows[0] == "image_id,mse,psnr,ssim"
    assert rows[-1].startswith("mean,")
