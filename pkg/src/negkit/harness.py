"""Scoring protocols and benchmark reports.

Every protocol produces a BenchmarkReport: per-item scores plus an
aggregate that is always the mean of the non-excluded item scores times a
protocol scale (100 for accuracy-style numbers, 1 for fraction-style).
Loading a report re-derives the aggregate from the items and refuses
reports where they disagree.

Comparison rules are shared across protocols: ties lose in two-way
comparisons, and argmax ties break to the first index. Image generation,
object detection, and mask prediction enter only through adapter
interfaces, so everything here runs on stubs.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .chat import ChatClient, ChatTurn, parse_yes_no
from .encoders import EncoderBundle, crop_and_encode, similarity
from .triplets import BBox, NegTriplet

AGGREGATE_TOL = 1e-9


class ReportIntegrityError(ValueError):
    pass


@dataclass
class EvalItemResult:
    id: str
    score: float
    excluded: bool = False
    detail: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"id": self.id, "score": self.score, "excluded": self.excluded,
                "detail": self.detail}


@dataclass
class BenchmarkReport:
    protocol: str
    items: list[EvalItemResult]
    scale: float = 100.0
    config: dict = field(default_factory=dict)

    @property
    def aggregate(self) -> float:
        scores = [i.score for i in self.items if not i.excluded]
        return float(np.mean(scores)) * self.scale if scores else 0.0

    @property
    def excluded_count(self) -> int:
        return sum(1 for i in self.items if i.excluded)

    def as_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "aggregate": self.aggregate,
            "scale": self.scale,
            "excluded": self.excluded_count,
            "config": self.config,
            "items": [i.as_dict() for i in self.items],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.as_dict(), indent=2, sort_keys=True, ensure_ascii=False),
            encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BenchmarkReport":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        report = cls(
            protocol=doc["protocol"],
            items=[EvalItemResult(i["id"], i["score"], i.get("excluded", False),
                                  i.get("detail", {})) for i in doc["items"]],
            scale=doc.get("scale", 100.0),
            config=doc.get("config", {}),
        )
        if abs(report.aggregate - doc["aggregate"]) > AGGREGATE_TOL:
            raise ReportIntegrityError(
                f"stored aggregate {doc['aggregate']} != recomputed {report.aggregate}")
        return report


def load_asset(name: str) -> dict:
    with resources.files("negkit.assets").joinpath(name).open("r", encoding="utf-8") as fh:
        return json.load(fh)


def attribute_prompt_table() -> list[dict]:
    return load_asset("attribute_prompts.json")["rows"]


def negation_prompt_table() -> list[dict]:
    return load_asset("negation_prompts.json")["rows"]


def _bundle_tag(bundle: EncoderBundle) -> dict:
    return {"bundle": bundle.architecture, "logit_scale": bundle.logit_scale}


def _open_image(path: str):
    from PIL import Image

    img = Image.open(path)
    img.load()
    return img


# -- patch-matching benchmark ------------------------------------------------

def score_negrefcocog(triplets: Sequence[NegTriplet], bundle: EncoderBundle,
                      images_root: Optional[str | Path] = None) -> BenchmarkReport:
    """1 when the prompt is closer to P+ than to P-; ties and misses score 0."""
    root = Path(images_root) if images_root else None
    items = []
    for t in triplets:
        item_id = f"{t.image_id}/{t.ann_pos}"
        path = str(root / t.image_path) if root else t.image_path
        try:
            image = _open_image(path)
        except OSError as exc:
            items.append(EvalItemResult(item_id, 0.0, excluded=True,
                                        detail={"error": f"unreadable image: {exc}"}))
            continue
        with image:
            text_emb = bundle.text_encode(t.text)
            sim_pos = similarity(text_emb, crop_and_encode(image, t.patch_pos, bundle))
            sim_neg = similarity(text_emb, crop_and_encode(image, t.patch_neg, bundle))
        items.append(EvalItemResult(
            item_id, 1.0 if sim_pos > sim_neg else 0.0,
            detail={"sim_pos": sim_pos, "sim_neg": sim_neg}))
    return BenchmarkReport("negrefcocog", items, config=_bundle_tag(bundle))


# -- existence ---------------------------------------------------------------

def score_existence(items_in: Sequence[dict], bundle: EncoderBundle) -> BenchmarkReport:
    """items: id, image_path, present_caption, absent_caption, truth."""
    items = []
    for rec in items_in:
        item_id = str(rec["id"])
        if rec["truth"] not in ("present", "absent"):
            raise ValueError(f"bad truth label: {rec['truth']!r}")
        try:
            image = _open_image(rec["image_path"])
        except OSError as exc:
            items.append(EvalItemResult(item_id, 0.0, excluded=True,
                                        detail={"error": f"unreadable image: {exc}"}))
            continue
        with image:
            img_emb = bundle.image_encode(image)
        sim_present = similarity(img_emb, bundle.text_encode(rec["present_caption"]))
        sim_absent = similarity(img_emb, bundle.text_encode(rec["absent_caption"]))
        if sim_present > sim_absent:
            predicted = "present"
        elif sim_absent > sim_present:
            predicted = "absent"
        else:
            predicted = "tie"  # ties never match the truth
        items.append(EvalItemResult(
            item_id, 1.0 if predicted == rec["truth"] else 0.0,
            detail={"sim_present": sim_present, "sim_absent": sim_absent,
                    "predicted": predicted}))
    return BenchmarkReport("existence", items, config=_bundle_tag(bundle))


# -- attribute balanced accuracy ----------------------------------------------

def balanced_accuracy_attributes(images: Sequence[dict], prompt_rows: Sequence[dict],
                                 bundle: EncoderBundle) -> BenchmarkReport:
    """images: id, image_path, labels {attribute: 0/1}. One report item per
    attribute, score = (TPR + TNR) / 2; attributes with no positives or no
    negatives are excluded from the mean."""
    embeddings = {}
    for rec in images:
        with _open_image(rec["image_path"]) as image:
            embeddings[str(rec["id"])] = bundle.image_encode(image)

    items = []
    for row in prompt_rows:
        attr = row["attribute"]
        pos_emb = bundle.text_encode(row["positive_prompt"])
        neg_emb = bundle.text_encode(row["negative_prompt"])
        tp = fp = tn = fn = 0
        for rec in images:
            label = rec["labels"].get(attr)
            if label not in (0, 1):
                raise ValueError(f"label for {attr!r} on {rec['id']} must be 0/1")
            img_emb = embeddings[str(rec["id"])]
            predicted = 1 if similarity(img_emb, pos_emb) > similarity(img_emb, neg_emb) else 0
            if label == 1:
                tp, fn = tp + (predicted == 1), fn + (predicted == 0)
            else:
                tn, fp = tn + (predicted == 0), fp + (predicted == 1)
        positives, negatives = tp + fn, tn + fp
        if positives == 0 or negatives == 0:
            items.append(EvalItemResult(attr, 0.0, excluded=True,
                                        detail={"reason": "single-class attribute",
                                                "positives": positives,
                                                "negatives": negatives}))
            continue
        balanced = (tp / positives + tn / negatives) / 2
        items.append(EvalItemResult(attr, balanced,
                                    detail={"tpr": tp / positives, "tnr": tn / negatives}))
    return BenchmarkReport("attribute-balanced-accuracy", items, config=_bundle_tag(bundle))


# -- zero-shot classification -------------------------------------------------

def zero_shot_classify(images: Sequence[dict], class_names: Sequence[str],
                       bundle: EncoderBundle,
                       template: str = "a photo of a {}") -> BenchmarkReport:
    """images: id, image_path, label (class index or name). Argmax over
    class-prompt similarities, ties to the first index."""
    if len(class_names) < 2:
        raise ValueError("need at least 2 classes")
    class_embs = [bundle.text_encode(template.format(name)) for name in class_names]
    name_to_idx = {name: i for i, name in enumerate(class_names)}
    items = []
    for rec in images:
        label = rec["label"]
        truth = name_to_idx[label] if isinstance(label, str) else int(label)
        with _open_image(rec["image_path"]) as image:
            img_emb = bundle.image_encode(image)
        sims = [similarity(img_emb, emb) for emb in class_embs]
        predicted = int(np.argmax(sims))  # first index on ties
        items.append(EvalItemResult(str(rec["id"]), 1.0 if predicted == truth else 0.0,
                                    detail={"predicted": predicted, "truth": truth}))
    return BenchmarkReport("zero-shot", items,
                           config={**_bundle_tag(bundle), "classes": len(class_names),
                                   "template": template})


# -- text-to-image retrieval ---------------------------------------------------

def recall_at_k(queries: Sequence[dict], images: Sequence[dict],
                bundle: EncoderBundle, k: int = 5) -> BenchmarkReport:
    """queries: id, text, image_id (ground truth). images: image_id,
    image_path. Hit when the ground-truth image ranks in the top k by
    similarity, ties broken by ascending image id."""
    ids = [str(rec["image_id"]) for rec in images]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate image ids in the pool")
    pool = {}
    for rec in images:
        with _open_image(rec["image_path"]) as image:
            pool[str(rec["image_id"])] = bundle.image_encode(image)
    known = set(pool)

    items = []
    for query in queries:
        truth = str(query["image_id"])
        if truth not in known:
            raise ValueError(f"ground-truth image {truth!r} not in pool")
        text_emb = bundle.text_encode(query["text"])
        ranked = sorted(((similarity(text_emb, emb), image_id)
                         for image_id, emb in pool.items()),
                        key=lambda pair: (-pair[0], pair[1]))
        rank = next(i for i, (_, image_id) in enumerate(ranked, start=1)
                    if image_id == truth)
        items.append(EvalItemResult(str(query["id"]), 1.0 if rank <= k else 0.0,
                                    detail={"rank": rank}))
    return BenchmarkReport("recall-at-k", items,
                           config={**_bundle_tag(bundle), "k": k, "pool": len(pool)})


# -- adapters -----------------------------------------------------------------

GeneratorAdapter = Callable[[str, int], str]  # (prompt, seed) -> image path
DetectorAdapter = Callable[[str, str], bool]  # (image path, object) -> found?


class AdapterError(RuntimeError):
    pass


def command_generator(command: list[str]) -> GeneratorAdapter:
    """Process-spawn generator: sends {"prompt","seed"} on stdin, expects
    {"image_path"} on stdout."""

    def generate(prompt: str, seed: int) -> str:
        reply = _spawn(command, {"prompt": prompt, "seed": seed})
        return reply["image_path"]

    return generate


def command_detector(command: list[str]) -> DetectorAdapter:
    """Process-spawn detector: sends {"image_path","object"}, expects
    {"detected": bool}."""

    def detect(image_path: str, obj: str) -> bool:
        reply = _spawn(command, {"image_path": image_path, "object": obj})
        return bool(reply["detected"])

    return detect


def _spawn(command: list[str], payload: dict) -> dict:
    try:
        proc = subprocess.run(command, input=json.dumps(payload), text=True,
                              capture_output=True, timeout=300)
    except (OSError, subprocess.TimeoutExpired) as exc:
        raise AdapterError(f"adapter failed to run: {exc}") from None
    if proc.returncode != 0:
        raise AdapterError(f"adapter exited {proc.returncode}: {proc.stderr[:200]}")
    try:
        return json.loads(proc.stdout)
    except json.JSONDecodeError:
        raise AdapterError(f"adapter emitted non-JSON: {proc.stdout[:200]}") from None


# -- generation scoring ---------------------------------------------------------

MLLM_EVAL_SYSTEM = (
    "A chat between a curious human and an artificial intelligence assistant. "
    "The assistant gives helpful, detailed, and polite answers to the human's "
    "questions."
)


def _ask_yes_no(client: ChatClient, image_path: str, question: str) -> str:
    turns = [
        ChatTurn("system", MLLM_EVAL_SYSTEM),
        ChatTurn("user", f"{question} Answer either yes or no.", image_ref=image_path),
    ]
    return parse_yes_no(client.complete(turns))


def neg_score(prompt_rows: Sequence[dict], generator: GeneratorAdapter,
              mllm: ChatClient, seeds: Sequence[int] = (0, 1, 2, 3, 4)) -> BenchmarkReport:
    """Generate one image per (prompt, seed) and ask two questions: the
    subject question must come back "yes" and the negation question "no".
    Ambiguous answers score 0 and are flagged, never retried."""
    items = []
    for row in prompt_rows:
        for seed in seeds:
            item_id = f"{row['prompt']}#{seed}"
            try:
                image_path = generator(row["prompt"], seed)
            except AdapterError as exc:
                items.append(EvalItemResult(item_id, 0.0, excluded=True,
                                            detail={"error": str(exc)}))
                continue
            answer_subject = _ask_yes_no(mllm, image_path, row["question_subject"])
            answer_negation = _ask_yes_no(mllm, image_path, row["question_negation"])
            score = 1.0 if (answer_subject == "yes" and answer_negation == "no") else 0.0
            detail = {"subject": answer_subject, "negation": answer_negation}
            if "ambiguous" in (answer_subject, answer_negation):
                detail["flagged"] = True
            items.append(EvalItemResult(item_id, score, detail=detail))
    return BenchmarkReport("neg-score", items, scale=1.0,
                           config={"seeds": list(seeds), "prompts": len(prompt_rows)})


def score_absence(prompts: Sequence[dict], generator: GeneratorAdapter,
                  detector: DetectorAdapter,
                  seeds: Sequence[int] = (0,)) -> BenchmarkReport:
    """prompts: prompt, object. Score 1 when the detector does NOT find the
    named object in the generated image; adapter failures exclude the item."""
    items = []
    for row in prompts:
        for seed in seeds:
            item_id = f"{row['object']}#{seed}"
            try:
                image_path = generator(row["prompt"], seed)
                detected = detector(image_path, row["object"])
            except AdapterError as exc:
                items.append(EvalItemResult(item_id, 0.0, excluded=True,
                                            detail={"error": str(exc)}))
                continue
            items.append(EvalItemResult(item_id, 0.0 if detected else 1.0,
                                        detail={"detected": detected}))
    return BenchmarkReport("absence-check", items,
                           config={"seeds": list(seeds), "prompts": len(prompts)})


# -- segmentation metrics --------------------------------------------------------

def segmentation_metrics(predictions: Sequence[np.ndarray],
                         masks: Sequence[np.ndarray],
                         threshold: float) -> tuple[float, float]:
    """(mIoU, pooled IoU) of thresholded heatmaps against boolean masks.

    mIoU averages per-item IoU with empty-vs-empty defined as 1; the pooled
    variant computes one IoU over all pixels of all items concatenated.
    """
    if len(predictions) != len(masks):
        raise ValueError("prediction/mask counts differ")
    per_item = []
    inter_total = union_total = 0
    for pred, mask in zip(predictions, masks):
        pred, mask = np.asarray(pred), np.asarray(mask)
        if pred.shape != mask.shape:
            raise ValueError(f"shape mismatch: {pred.shape} vs {mask.shape}")
        binary = pred > threshold
        truth = mask.astype(bool)
        inter = int(np.logical_and(binary, truth).sum())
        union = int(np.logical_or(binary, truth).sum())
        per_item.append(inter / union if union else 1.0)
        inter_total += inter
        union_total += union
    miou = float(np.mean(per_item)) if per_item else 0.0
    iou_bin = inter_total / union_total if union_total else 1.0
    return miou, iou_bin


def score_segmentation(items_in: Sequence[dict], threshold: float) -> BenchmarkReport:
    """items: id, pred (npy path), mask (npy path). Per-item score is the
    item IoU; the pooled IoU rides in the report config."""
    preds, masks, ids = [], [], []
    for rec in items_in:
        preds.append(np.load(rec["pred"]))
        masks.append(np.load(rec["mask"]))
        ids.append(str(rec["id"]))
    miou, iou_bin = segmentation_metrics(preds, masks, threshold)
    items = []
    for item_id, pred, mask in zip(ids, preds, masks):
        item_miou, _ = segmentation_metrics([pred], [mask], threshold)
        items.append(EvalItemResult(item_id, item_miou))
    report = BenchmarkReport("segmentation", items, scale=1.0,
                             config={"threshold": threshold, "iou_bin": iou_bin})
    assert abs(report.aggregate - miou) < 1e-9
    return report
