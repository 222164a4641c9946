"""Backbone loading and image preprocessing.

Two backbones, matching the published configuration: CLIP ViT-B/32 (pooled
512-dim image embeddings, 512-dim text-prompt embeddings) and DINOv2
ViT-B/14 (dense 768-dim patch features, 16x16 grid at 224x224 input).

``pretrained=True`` pulls weights from the HuggingFace hub and fails with
ExportError when they cannot be obtained (offline hosts). With
``pretrained=False`` the same architectures are instantiated from their
configs with seeded random weights: tensor shapes, strides and determinism
are identical to the pretrained path, which is what pipeline validation
needs when no network is available. Random-init text encoding uses a
deterministic byte-level tokenizer stub instead of the BPE vocabulary.
"""

from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

CLIP_NAME = "openai/clip-vit-base-patch32"
DINOV2_NAME = "facebook/dinov2-base"

CLIP_IMAGE_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_IMAGE_STD = (0.26862954, 0.26130258, 0.27577711)
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

IMAGE_SIZE = 224


class ExportError(Exception):
    """Raised for unusable jobs, unreadable inputs or unobtainable weights."""


@dataclass(frozen=True)
class BackboneSpec:
    key: str
    model_tag: str        # goes into the sidecar "model" field
    patch_size: int
    feature_dim: int
    image_mean: tuple
    image_std: tuple


SPECS = {
    "clip": BackboneSpec("clip", "clip-vit-b32", 32, 512, CLIP_IMAGE_MEAN, CLIP_IMAGE_STD),
    "dinov2": BackboneSpec(
        "dinov2", "dinov2-vit-b14", 14, 768, IMAGENET_MEAN, IMAGENET_STD
    ),
}


def load_image_tensor(path, spec: BackboneSpec) -> torch.Tensor:
    """Resize (short side), center-crop to 224 and normalize -> (1, 3, H, W)."""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            w, h = img.size
            scale = IMAGE_SIZE / min(w, h)
            img = img.resize(
                (max(IMAGE_SIZE, round(w * scale)), max(IMAGE_SIZE, round(h * scale))),
                Image.Resampling.BICUBIC,
            )
            left = (img.width - IMAGE_SIZE) // 2
            top = (img.height - IMAGE_SIZE) // 2
            img = img.crop((left, top, left + IMAGE_SIZE, top + IMAGE_SIZE))
            arr = np.asarray(img, dtype=np.float32) / 255.0
    except OSError as exc:
        raise ExportError(f"cannot read image {path}: {exc}") from None
    arr = (arr - np.array(spec.image_mean, dtype=np.float32)) / np.array(
        spec.image_std, dtype=np.float32
    )
    return torch.from_numpy(arr.transpose(2, 0, 1))[None, :]


def _wrap_download_failure(name, exc):
    return ExportError(
        f"could not obtain pretrained weights for {name}: {exc} "
        "(use --random-init for offline pipeline validation)"
    )


class ClipBackbone:
    def __init__(self, pretrained=True, seed=0):
        from transformers import (
            CLIPTextConfig,
            CLIPTextModelWithProjection,
            CLIPVisionConfig,
            CLIPVisionModelWithProjection,
        )

        self.spec = SPECS["clip"]
        self.pretrained = pretrained
        if pretrained:
            try:
                self.vision = CLIPVisionModelWithProjection.from_pretrained(CLIP_NAME)
                self.text = CLIPTextModelWithProjection.from_pretrained(CLIP_NAME)
                from transformers import CLIPTokenizerFast

                self.tokenizer = CLIPTokenizerFast.from_pretrained(CLIP_NAME)
            except (OSError, ValueError) as exc:
                raise _wrap_download_failure(CLIP_NAME, exc) from None
        else:
            torch.manual_seed(seed)
            self.vision = CLIPVisionModelWithProjection(CLIPVisionConfig())
            self.text = CLIPTextModelWithProjection(CLIPTextConfig())
            self.tokenizer = None
        self.vision.eval()
        self.text.eval()
        self._text_cfg = self.text.config

    def _token_ids(self, prompt: str) -> torch.Tensor:
        if self.tokenizer is not None:
            return self.tokenizer(
                prompt, return_tensors="pt", padding=False, truncation=True, max_length=77
            ).input_ids
        # offline stub: bos + clamped utf-8 bytes + eos, deterministic
        cfg = self._text_cfg
        body = [min(b, cfg.vocab_size - 1) for b in prompt.encode("utf-8")[:75]]
        ids = [cfg.bos_token_id] + body + [cfg.eos_token_id]
        return torch.tensor([ids], dtype=torch.long)

    @torch.no_grad()
    def image_features(self, pixel_values: torch.Tensor) -> np.ndarray:
        """Pooled embedding as a 1x1xD tensor (D = 512)."""
        out = self.vision(pixel_values=pixel_values).image_embeds
        emb = out[0].numpy()
        if emb.shape != (self.spec.feature_dim,):
            raise ExportError(
                f"clip produced {emb.shape}, expected ({self.spec.feature_dim},)"
            )
        return emb.reshape(1, 1, -1)

    @torch.no_grad()
    def text_features(self, prompt: str) -> np.ndarray:
        out = self.text(input_ids=self._token_ids(prompt)).text_embeds
        emb = out[0].numpy()
        if emb.shape != (self.spec.feature_dim,):
            raise ExportError(
                f"clip text produced {emb.shape}, expected ({self.spec.feature_dim},)"
            )
        return emb.reshape(1, 1, -1)


class Dinov2Backbone:
    def __init__(self, pretrained=True, seed=0):
        from transformers import Dinov2Config, Dinov2Model

        self.spec = SPECS["dinov2"]
        self.pretrained = pretrained
        if pretrained:
            try:
                self.model = Dinov2Model.from_pretrained(DINOV2_NAME)
            except (OSError, ValueError) as exc:
                raise _wrap_download_failure(DINOV2_NAME, exc) from None
        else:
            torch.manual_seed(seed)
            self.model = Dinov2Model(Dinov2Config(image_size=IMAGE_SIZE))
        self.model.eval()

    @torch.no_grad()
    def image_features(self, pixel_values: torch.Tensor) -> np.ndarray:
        """Dense patch grid as grid_h x grid_w x 768 (CLS token dropped)."""
        tokens = self.model(pixel_values=pixel_values).last_hidden_state[0]
        side = pixel_values.shape[-1] // self.spec.patch_size
        expected = side * side + 1
        if tokens.shape != (expected, self.spec.feature_dim):
            raise ExportError(
                f"dinov2 produced {tuple(tokens.shape)}, expected ({expected}, "
                f"{self.spec.feature_dim}) for a {pixel_values.shape[-1]}px input"
            )
        return tokens[1:].numpy().reshape(side, side, self.spec.feature_dim)


def load_backbone(key: str, pretrained=True, seed=0):
    if key == "clip":
        return ClipBackbone(pretrained=pretrained, seed=seed)
    if key == "dinov2":
        return Dinov2Backbone(pretrained=pretrained, seed=seed)
    raise ExportError(f"unknown backbone {key!r} (choose clip or dinov2)")
