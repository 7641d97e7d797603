"""Model registry: architecture parameters, preprocessing constants, and
checkpoint loading for every supported family."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .vit import VisionTransformer

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# ViT-B across the board; DINOv2's distilled model uses 14px patches.
FAMILIES = {
    "supervised": {"patch_size": 16, "layerscale": False},
    "dino": {"patch_size": 16, "layerscale": False},
    "ibot": {"patch_size": 16, "layerscale": False},
    "mae": {"patch_size": 16, "layerscale": False},
    "simmim": {"patch_size": 16, "layerscale": False},
    "scale_mae": {"patch_size": 16, "layerscale": False},
    "dinov2": {"patch_size": 14, "layerscale": True},
}

VIT_B = {"dim": 768, "depth": 12, "num_heads": 12}


@dataclass
class ModelSpec:
    family: str
    checkpoint: str | None = None       # state-dict file; None = random init
    checkpoint_sha256: str | None = None
    layers: tuple[int, ...] = (12,)
    arch: dict = field(default_factory=dict)  # overrides for small test models
    normalization: tuple = (IMAGENET_MEAN, IMAGENET_STD)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; "
                             f"known: {sorted(FAMILIES)}")
        bad = [l for l in self.layers if not 1 <= l <= 12]
        if bad:
            raise ValueError(f"layers out of range 1..12: {bad}")

    @property
    def patch_size(self) -> int:
        return self.arch.get("patch_size", FAMILIES[self.family]["patch_size"])


def build_backbone(spec: ModelSpec) -> VisionTransformer:
    params = dict(VIT_B)
    params["patch_size"] = FAMILIES[spec.family]["patch_size"]
    params["layerscale"] = FAMILIES[spec.family]["layerscale"]
    params.update({k: v for k, v in spec.arch.items() if k != "decoder"})
    model = VisionTransformer(**params)
    if spec.checkpoint is not None:
        state = load_checkpoint(spec.checkpoint, spec.checkpoint_sha256)
        state = remap_state_dict(state)
        missing, unexpected = model.load_state_dict(state, strict=False)
        missing = [k for k in missing if not k.endswith("num_batches_tracked")]
        if missing:
            raise ValueError(f"checkpoint is missing parameters: {missing[:8]}")
        if unexpected:
            # decoder/head tensors riding along are fine; real key clashes not
            clashes = [k for k in unexpected
                       if k.split(".")[0] in {"patch_embed", "blocks", "norm",
                                              "cls_token", "pos_embed"}]
            if clashes:
                raise ValueError(f"unconvertible checkpoint keys: {clashes[:8]}")
    model.eval()
    return model


def sha256_of(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def load_checkpoint(path, expected_sha256: str | None = None) -> dict:
    path = Path(path)
    if expected_sha256 is not None:
        actual = sha256_of(path)
        if actual != expected_sha256:
            raise ValueError(f"checkpoint hash mismatch for {path.name}: "
                             f"expected {expected_sha256}, got {actual}")
    state = torch.load(path, map_location="cpu", weights_only=True)
    # released checkpoints wrap the weights in different envelopes
    for key in ("model", "state_dict", "teacher", "student"):
        if isinstance(state, dict) and key in state and isinstance(state[key], dict):
            state = state[key]
            break
    return state


# torchvision's supervised ViT-B/16 naming -> timm-style naming
_TORCHVISION_STATIC = {
    "class_token": "cls_token",
    "encoder.pos_embedding": "pos_embed",
    "conv_proj.weight": "patch_embed.proj.weight",
    "conv_proj.bias": "patch_embed.proj.bias",
    "encoder.ln.weight": "norm.weight",
    "encoder.ln.bias": "norm.bias",
}


def remap_state_dict(state: dict) -> dict:
    """Normalize checkpoint keys to this package's (timm-style) naming.

    Handles: timm-style dicts (identity), 'module.'/'backbone.' prefixes,
    and torchvision's supervised ViT naming including its fused attention
    projections.
    """
    out = {}
    for key, value in state.items():
        if key in _TORCHVISION_STATIC:
            out[_TORCHVISION_STATIC[key]] = value
            continue
        if key.startswith("encoder.layers.encoder_layer_"):
            rest = key[len("encoder.layers.encoder_layer_"):]
            idx, _, tail = rest.partition(".")
            tail = (tail
                    .replace("ln_1", "norm1")
                    .replace("ln_2", "norm2")
                    .replace("self_attention.out_proj", "attn.proj")
                    .replace("self_attention.in_proj_weight", "attn.qkv.weight")
                    .replace("self_attention.in_proj_bias", "attn.qkv.bias")
                    .replace("mlp.linear_1", "mlp.fc1")
                    .replace("mlp.linear_2", "mlp.fc2")
                    .replace("mlp.0", "mlp.fc1")
                    .replace("mlp.3", "mlp.fc2"))
            out[f"blocks.{idx}.{tail}"] = value
            continue
        for prefix in ("module.", "backbone.", "encoder."):
            if key.startswith(prefix):
                key = key[len(prefix):]
        if ".gamma_1" in key or key.startswith("gamma_1") \
                or ".gamma_2" in key or key.startswith("gamma_2"):
            key = key.replace("gamma_1", "ls1.gamma").replace("gamma_2",
                                                              "ls2.gamma")
        out[key] = value
    # classifier heads never load; everything else (incl. decoder tensors
    # and mask_token, which the MAE path wants) rides along harmlessly
    for junk in [k for k in out if k.split(".")[0] in {"head", "heads"}]:
        out.pop(junk)
    return out
