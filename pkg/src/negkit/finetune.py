"""Text-tower contrastive fine-tuning against a frozen vision tower.

Freezing the vision side keeps the original embedding geometry, which is
what lets the fine-tuned text tower drop into downstream consumers without
retraining them. Because the vision tower never moves, image embeddings
are precomputed once and cached, making epochs cheap.

The objective is the symmetric InfoNCE: cross-entropy over the scaled
cosine-similarity matrix in both directions (text->image and image->text),
averaged, with the matching index as the positive.
"""

from __future__ import annotations

import copy
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .datagen import PIPELINES, read_pairs
from .encoders import EncoderBundle, save_checkpoint

# Per-architecture batch sizes used for the published training runs.
ARCH_BATCH_SIZES = {
    "ViT-B/32": 512,
    "ViT-B/16": 256,
    "ViT-L/14": 128,
    "ViT-L/14@336px": 128,
    "ViT-bigG/14": 64,
}

NORM_DEV_LIMIT = 1e-3


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class DataConfig:
    sources: tuple[str, ...] = ("P1", "P2")
    split_seed: int = 0
    train_fraction: float = 0.8

    def __post_init__(self):
        if not self.sources:
            raise ValueError("sources must be non-empty")
        unknown = set(self.sources) - set(PIPELINES)
        if unknown:
            raise ValueError(f"unknown sources: {sorted(unknown)}")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must be in (0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-6
    batch_size: int = 512
    epochs: int = 5
    logit_scale_trainable: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (in-batch negatives)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass(frozen=True)
class TrainExample:
    id: str
    text: str
    image_path: str


def assemble(paths: Sequence[str | Path], config: DataConfig,
             ) -> tuple[list[TrainExample], list[TrainExample]]:
    """Filter pairs by source, seeded-shuffle, and split train/validation.

    The original-caption source trains on original_caption; all other
    sources train on the augmented caption.
    """
    examples = []
    for path in paths:
        for pair in read_pairs(path):
            if pair.pipeline not in config.sources:
                continue
            text = (pair.original_caption if pair.pipeline == "OriginalCaption"
                    else pair.augmented_caption)
            examples.append(TrainExample(pair.id, text, pair.image.path))
    if not examples:
        raise ValueError(f"no pairs left after filtering to sources {config.sources}")
    random.Random(config.split_seed).shuffle(examples)
    cut = int(len(examples) * config.train_fraction)
    return examples[:cut], examples[cut:]


def info_nce(text_emb, image_emb, logit_scale):
    """Symmetric InfoNCE over unit-normalized embedding rows.

    Non-normalized rows are a hard error: silently renormalizing here would
    hide an upstream bug.
    """
    import torch
    import torch.nn.functional as F

    if text_emb.shape != image_emb.shape:
        raise ValueError(f"shape mismatch: {tuple(text_emb.shape)} vs {tuple(image_emb.shape)}")
    n = text_emb.shape[0]
    if n < 2:
        raise ValueError("InfoNCE needs at least 2 rows for in-batch negatives")
    for name, emb in (("text", text_emb), ("image", image_emb)):
        dev = (emb.norm(dim=-1) - 1.0).abs().max().item()
        if not dev <= NORM_DEV_LIMIT:  # also catches NaN
            raise ValueError(f"{name} rows not unit-normalized (max deviation {dev:.2e})")

    logits = logit_scale * text_emb @ image_emb.T
    target = torch.arange(n, device=logits.device)
    return 0.5 * (F.cross_entropy(logits, target) + F.cross_entropy(logits.T, target))


@dataclass
class TrainResult:
    text_tower: "object"
    log: list[dict] = field(default_factory=list)
    best_epoch: Optional[int] = None
    vision_digest_before: str = ""
    vision_digest_after: str = ""
    checkpoint_dir: Optional[Path] = None


def _l2norm(t):
    return t / t.norm(dim=-1, keepdim=True)


def _precompute_image_embeddings(bundle: EncoderBundle, examples) -> "object":
    """One vision forward per distinct image; cached, read-only afterwards."""
    import torch
    from PIL import Image

    by_path: dict[str, np.ndarray] = {}
    rows = []
    for ex in examples:
        if ex.image_path not in by_path:
            with Image.open(ex.image_path) as img:
                by_path[ex.image_path] = bundle.preprocess.apply(img)
        rows.append(by_path[ex.image_path])
    if not rows:
        return torch.zeros((0, bundle.embed_dim))
    with torch.no_grad():
        flat = torch.from_numpy(np.stack(rows).reshape(len(rows), -1))
        return _l2norm(bundle.vision_tower(flat))


def train(bundle: EncoderBundle, train_set: Sequence[TrainExample],
          val_set: Sequence[TrainExample], config: TrainConfig,
          out_dir: Optional[str | Path] = None) -> TrainResult:
    """Fine-tune a copy of the bundle's text tower; the bundle itself and its
    vision tower are never mutated.

    The epoch with the lowest validation loss is exported as a
    text_tower_only checkpoint (when out_dir is given); with epochs=0 the
    export equals the input tower.
    """
    import torch

    torch.manual_seed(config.seed)
    result = TrainResult(text_tower=copy.deepcopy(bundle.text_tower))
    result.vision_digest_before = bundle.vision_tower_digest()

    tower = result.text_tower
    params = list(tower.parameters())
    scale = torch.tensor(float(bundle.logit_scale))
    if config.logit_scale_trainable:
        scale = torch.nn.Parameter(scale)
        params.append(scale)
    optimizer = torch.optim.AdamW(params, lr=config.learning_rate)

    train_images = _precompute_image_embeddings(bundle, train_set)
    val_images = _precompute_image_embeddings(bundle, val_set)
    train_feats = bundle.text_features([ex.text for ex in train_set])
    val_feats = bundle.text_features([ex.text for ex in val_set])

    def eval_loss(feats, images) -> Optional[float]:
        losses = []
        with torch.no_grad():
            for start in range(0, len(images), config.batch_size):
                batch = slice(start, start + config.batch_size)
                if images[batch].shape[0] < 2:
                    continue
                try:
                    losses.append(info_nce(_l2norm(tower(feats[batch])),
                                           images[batch], scale).item())
                except ValueError as exc:
                    raise TrainingDiverged(f"during validation: {exc}") from None
        return float(np.mean(losses)) if losses else None

    best_state = copy.deepcopy(tower.state_dict())
    best_val = math.inf
    step = 0
    for epoch in range(config.epochs):
        order = list(range(len(train_set)))
        random.Random(config.seed * 1000 + epoch).shuffle(order)
        tower.train()
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            if len(idx) < 2:
                continue
            optimizer.zero_grad()
            text = _l2norm(tower(train_feats[idx]))
            try:
                loss = info_nce(text, train_images[idx], scale)
            except ValueError as exc:
                # rows were normalized just above, so a norm failure here
                # means the tower started emitting non-finite values
                raise TrainingDiverged(f"at epoch {epoch} step {step}: {exc}") from None
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} step {step}: {loss.item()}")
            loss.backward()
            optimizer.step()
            result.log.append({"step": step, "epoch": epoch, "split": "train",
                               "loss": loss.item()})
            step += 1
        tower.eval()
        val_loss = eval_loss(val_feats, val_images)
        result.log.append({"step": step, "epoch": epoch, "split": "val",
                           "loss": val_loss})
        if val_loss is not None and val_loss < best_val:
            best_val = val_loss
            best_state = copy.deepcopy(tower.state_dict())
            result.best_epoch = epoch

    if config.epochs > 0 and best_val < math.inf:
        tower.load_state_dict(best_state)
    result.vision_digest_after = bundle.vision_tower_digest()

    if out_dir is not None:
        out_dir = Path(out_dir)
        exported = copy.copy(bundle)
        exported.text_tower = tower
        result.checkpoint_dir = save_checkpoint(exported, out_dir / "text_tower",
                                                component="text_tower_only")
        with (out_dir / "train_log.jsonl").open("w", encoding="utf-8") as fh:
            for entry in result.log:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return result
