"""Dual-encoder bundles: paired text/image towers over one embedding space.

A bundle carries everything scoring needs: the two encode functions, the
logit scale, the preprocessing recipe, and an architecture tag. Bundles
are immutable; swapping in a fine-tuned text tower returns a new bundle
whose vision side is bit-identical to the old one, which is what makes
plug-and-play substitution into downstream consumers sound.

The "toy-bow" family is a small deterministic pair of towers (hashed
bag-of-words text features, downsampled-pixel vision features, linear
projections) used for desk-scale tests and smoke training. Real CLIP
checkpoints can be wrapped through the same interface when the
``transformers`` weights are available locally.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .negation import tokenize
from .triplets import BBox

FORMAT_VERSION = 1
NORM_TOL = 1e-5


class EncoderError(RuntimeError):
    pass


class ArchitectureMismatch(EncoderError):
    pass


def normalize(vec: np.ndarray) -> np.ndarray:
    """Project onto the unit sphere; idempotent; zero vectors are an error."""
    vec = np.asarray(vec, dtype=np.float32)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise EncoderError("cannot normalize a zero vector")
    return vec / norm


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; symmetric, in [-1, 1], scale-invariant."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise EncoderError(f"dim mismatch: {a.shape} vs {b.shape}")
    value = float(np.dot(normalize(a), normalize(b)))
    return max(-1.0, min(1.0, value))


@dataclass(frozen=True)
class PreprocessSpec:
    """Resize + channel normalization; serialized with checkpoints so crops
    reproduce exactly."""

    size: int = 16
    mean: tuple[float, ...] = (0.5, 0.5, 0.5)
    std: tuple[float, ...] = (0.5, 0.5, 0.5)

    def apply(self, image) -> np.ndarray:
        """PIL image -> float32 CHW array."""
        from PIL import Image

        img = image.convert("RGB").resize((self.size, self.size), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32) / 255.0
        arr = (arr - np.array(self.mean, dtype=np.float32)) / np.array(self.std, dtype=np.float32)
        return arr.transpose(2, 0, 1)

    def as_dict(self) -> dict:
        return {"size": self.size, "mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessSpec":
        return cls(size=d["size"], mean=tuple(d["mean"]), std=tuple(d["std"]))


def hashed_bow_features(texts: Sequence[str], feat_dim: int) -> np.ndarray:
    """Stable bag-of-words featurizer: sha256 token hashing, L2-normalized.

    Hash-based, so identical across processes and platforms (no reliance on
    Python's randomized str hash).
    """
    out = np.zeros((len(texts), feat_dim), dtype=np.float32)
    for row, text in enumerate(texts):
        for token in tokenize(text):
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            idx = int.from_bytes(digest[:4], "big") % feat_dim
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            out[row, idx] += sign
        norm = np.linalg.norm(out[row])
        if norm > 0:
            out[row] /= norm
        else:
            out[row, 0] = 1.0  # empty text maps to a fixed unit feature
    return out


@dataclass
class EncoderBundle:
    """Paired towers plus the scale and preprocessing they were trained with."""

    architecture: str
    family: str
    embed_dim: int
    feat_dim: int
    logit_scale: float
    preprocess: PreprocessSpec
    text_tower: "object"  # torch nn.Module
    vision_tower: "object"  # torch nn.Module, frozen by convention

    def __post_init__(self):
        if self.logit_scale <= 0:
            raise EncoderError("logit_scale must be positive")

    # -- text side -------------------------------------------------------
    def text_features(self, texts: Sequence[str]):
        import torch

        return torch.from_numpy(hashed_bow_features(texts, self.feat_dim))

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        import torch

        with torch.no_grad():
            raw = self.text_tower(self.text_features(texts))
            unit = raw / raw.norm(dim=-1, keepdim=True)
        return unit.numpy().astype(np.float32)

    def text_encode(self, text: str) -> np.ndarray:
        return self.encode_texts([text])[0]

    # -- vision side ------------------------------------------------------
    def encode_pixels(self, batch: np.ndarray) -> np.ndarray:
        import torch

        with torch.no_grad():
            flat = torch.from_numpy(batch.reshape(batch.shape[0], -1))
            raw = self.vision_tower(flat)
            unit = raw / raw.norm(dim=-1, keepdim=True)
        return unit.numpy().astype(np.float32)

    def image_encode(self, image) -> np.ndarray:
        arr = self.preprocess.apply(image)
        return self.encode_pixels(arr[None])[0]

    # -- bookkeeping ------------------------------------------------------
    def text_tower_digest(self) -> str:
        return _module_digest(self.text_tower)

    def vision_tower_digest(self) -> str:
        return _module_digest(self.vision_tower)


def _module_digest(module) -> str:
    h = hashlib.sha256()
    for name, param in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(param.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def build_toy_bundle(embed_dim: int = 32, feat_dim: int = 128, image_size: int = 16,
                     logit_scale: float = 20.0, seed: int = 0) -> EncoderBundle:
    """Deterministic small bundle for tests, smoke training, and demos."""
    import torch
    from torch import nn

    gen = torch.Generator().manual_seed(seed)
    text_tower = nn.Linear(feat_dim, embed_dim)
    vision_tower = nn.Linear(3 * image_size * image_size, embed_dim)
    with torch.no_grad():
        for tower in (text_tower, vision_tower):
            tower.weight.copy_(torch.randn(tower.weight.shape, generator=gen) * 0.2)
            tower.bias.copy_(torch.randn(tower.bias.shape, generator=gen) * 0.01)
    vision_tower.requires_grad_(False)
    return EncoderBundle(
        architecture=f"toy-bow/{image_size}px-d{embed_dim}",
        family="toy-bow",
        embed_dim=embed_dim,
        feat_dim=feat_dim,
        logit_scale=logit_scale,
        preprocess=PreprocessSpec(size=image_size),
        text_tower=text_tower,
        vision_tower=vision_tower,
    )


def crop_and_encode(image, bbox: BBox, bundle: EncoderBundle) -> np.ndarray:
    """Crop exactly to bbox, then run the bundle's stock preprocessing."""
    if bbox.w < 2 or bbox.h < 2:
        raise EncoderError(f"degenerate crop: {bbox.w}x{bbox.h}")
    if not bbox.within(image.width, image.height):
        raise EncoderError(f"bbox {bbox} outside {image.width}x{image.height} image")
    patch = image.crop((bbox.x, bbox.y, bbox.x2, bbox.y2))
    return bundle.image_encode(patch)


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(bundle: EncoderBundle, directory: str | Path,
                    component: str = "full") -> Path:
    """Manifest JSON + tensor payload. text_tower_only payloads contain
    exclusively text-tower parameters."""
    import torch

    if component not in ("full", "text_tower_only"):
        raise EncoderError(f"unknown component: {component}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "family": bundle.family,
        "architecture": bundle.architecture,
        "component": component,
        "embed_dim": bundle.embed_dim,
        "feat_dim": bundle.feat_dim,
        "logit_scale": bundle.logit_scale,
        "preprocess": bundle.preprocess.as_dict(),
    }
    payload = {"text_tower": bundle.text_tower.state_dict()}
    if component == "full":
        payload["vision_tower"] = bundle.vision_tower.state_dict()
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    torch.save(payload, directory / "weights.pt")
    return directory


def read_manifest(directory: str | Path) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise EncoderError(f"bundle-not-found: no manifest at {path}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise EncoderError(f"unsupported checkpoint format: {manifest.get('format_version')}")
    return manifest


def load_bundle(directory: str | Path) -> EncoderBundle:
    """Reconstruct a full bundle from a checkpoint directory."""
    import torch
    from torch import nn

    manifest = read_manifest(directory)
    if manifest["component"] != "full":
        raise EncoderError("cannot load a bundle from a text_tower_only checkpoint")
    if manifest["family"] != "toy-bow":
        raise EncoderError(f"unknown bundle family: {manifest['family']}")
    payload = torch.load(Path(directory) / "weights.pt", weights_only=True)
    pre = PreprocessSpec.from_dict(manifest["preprocess"])
    text_tower = nn.Linear(manifest["feat_dim"], manifest["embed_dim"])
    vision_tower = nn.Linear(3 * pre.size * pre.size, manifest["embed_dim"])
    text_tower.load_state_dict(payload["text_tower"])
    vision_tower.load_state_dict(payload["vision_tower"])
    vision_tower.requires_grad_(False)
    return EncoderBundle(
        architecture=manifest["architecture"],
        family=manifest["family"],
        embed_dim=manifest["embed_dim"],
        feat_dim=manifest["feat_dim"],
        logit_scale=manifest["logit_scale"],
        preprocess=pre,
        text_tower=text_tower,
        vision_tower=vision_tower,
    )


def swap_text_tower(bundle: EncoderBundle, checkpoint_dir: str | Path) -> EncoderBundle:
    """New bundle with only the text tower replaced.

    The vision tower, preprocessing, and logit scale are the same objects
    as the input bundle's, so image embeddings are exactly preserved.
    """
    import torch
    from torch import nn

    manifest = read_manifest(checkpoint_dir)
    if manifest["component"] != "text_tower_only":
        raise EncoderError("swap requires a text_tower_only checkpoint")
    if manifest["architecture"] != bundle.architecture:
        raise ArchitectureMismatch(
            f"checkpoint is {manifest['architecture']!r}, bundle is {bundle.architecture!r}")
    payload = torch.load(Path(checkpoint_dir) / "weights.pt", weights_only=True)
    text_tower = nn.Linear(bundle.feat_dim, bundle.embed_dim)
    text_tower.load_state_dict(payload["text_tower"])
    return replace(bundle, text_tower=text_tower)
