"""Batch export: images (and text prompts, for clip) to VFMT tensors.

Per image one tensor is written: grid_h x grid_w x 768 dense patches for
dinov2, 1 x 1 x 512 pooled for clip. Per prompt one 1 x 1 x 512 text
embedding. Sidecars carry the patch stride and origin so the consumer can
map grid cells back to pixels without guessing from tensor shapes.
"""

import os
from dataclasses import dataclass

from . import vfmt
from .backbones import IMAGE_SIZE, ExportError, load_backbone, load_image_tensor


@dataclass(frozen=True)
class ExportJob:
    backbone: str                  # "clip" | "dinov2"
    images: tuple = ()
    prompts: tuple = ()
    out_dir: str = "."
    pretrained: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.backbone not in ("clip", "dinov2"):
            raise ExportError(f"unknown backbone {self.backbone!r}")
        if not self.images and not self.prompts:
            raise ExportError("empty job: no images and no prompts")
        if self.prompts and self.backbone != "clip":
            raise ExportError("text prompts require the clip backbone")


def _sidecar_for(spec, grid_shape):
    grid_h, grid_w, _ = grid_shape
    stride = IMAGE_SIZE / grid_w
    return {
        "stride_px": stride,
        "origin_px": [stride / 2.0, stride / 2.0],
        "image_size": [IMAGE_SIZE, IMAGE_SIZE],
        "model": spec.model_tag,
    }


def export_features(job: ExportJob) -> list:
    """Run the backbone over the job; returns the written tensor paths."""
    backbone = load_backbone(job.backbone, pretrained=job.pretrained, seed=job.seed)
    os.makedirs(job.out_dir, exist_ok=True)
    written = []
    for image_path in job.images:
        pixels = load_image_tensor(image_path, backbone.spec)
        feats = backbone.image_features(pixels)
        stem = os.path.splitext(os.path.basename(image_path))[0]
        out_path = os.path.join(job.out_dir, f"{stem}.vfmt")
        vfmt.write_tensor(out_path, feats)
        vfmt.write_sidecar(out_path, _sidecar_for(backbone.spec, feats.shape))
        written.append(out_path)
    for i, prompt in enumerate(job.prompts):
        emb = backbone.text_features(prompt)
        out_path = os.path.join(job.out_dir, f"prompt_{i:03d}.vfmt")
        vfmt.write_tensor(out_path, emb)
        vfmt.write_sidecar(
            out_path,
            {
                "stride_px": float(IMAGE_SIZE),
                "origin_px": [IMAGE_SIZE / 2.0, IMAGE_SIZE / 2.0],
                "image_size": [IMAGE_SIZE, IMAGE_SIZE],
                "model": backbone.spec.model_tag,
                "prompt": prompt,
            },
        )
        written.append(out_path)
    return written
