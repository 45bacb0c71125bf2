"""Optional wrapper for real pretrained dual-encoder checkpoints.

Loads a CLIP-style model through ``transformers`` and exposes it behind
the same bundle interface the scoring protocols consume. Only used by the
integration path; none of the desk-scale suite needs it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import EncoderBundle, PreprocessSpec


@dataclass
class HFClipBundle(EncoderBundle):
    processor: "object" = None
    model: "object" = None

    def encode_texts(self, texts):
        import torch

        inputs = self.processor(text=list(texts), return_tensors="pt",
                                padding=True, truncation=True)
        with torch.no_grad():
            feats = self.model.get_text_features(**inputs)
            feats = feats / feats.norm(dim=-1, keepdim=True)
        return feats.numpy().astype(np.float32)

    def text_encode(self, text):
        return self.encode_texts([text])[0]

    def image_encode(self, image):
        import torch

        inputs = self.processor(images=image.convert("RGB"), return_tensors="pt")
        with torch.no_grad():
            feats = self.model.get_image_features(**inputs)
            feats = feats / feats.norm(dim=-1, keepdim=True)
        return feats.numpy().astype(np.float32)[0]


def load_hf_clip_bundle(model_name_or_path: str) -> HFClipBundle:
    """Wrap a local or hub CLIP checkpoint; raises ImportError/OSError when
    transformers or the weights are unavailable."""
    import torch
    from transformers import CLIPModel, CLIPProcessor

    model = CLIPModel.from_pretrained(model_name_or_path)
    model.eval()
    processor = CLIPProcessor.from_pretrained(model_name_or_path)
    with torch.no_grad():
        scale = float(model.logit_scale.exp().item())
    return HFClipBundle(
        architecture=getattr(model.config, "name_or_path", str(model_name_or_path)),
        family="hf-clip",
        embed_dim=model.config.projection_dim,
        feat_dim=0,
        logit_scale=scale,
        preprocess=PreprocessSpec(),
        text_tower=model.text_model,
        vision_tower=model.vision_model,
        processor=processor,
        model=model,
    )
