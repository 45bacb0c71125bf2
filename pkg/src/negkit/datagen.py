"""Caption augmentation pipelines.

Pipeline "P1" adds the absence of a contextually plausible object: an LLM
proposes an object the caption does not mention, an MLLM confirms it is
absent from the image, and the LLM rewrites the caption to state that
absence. "RandP1" is the ablation variant that picks the object uniformly
from a fixed vocabulary instead of asking the LLM. "P2" rewrites captions
from VQA triplets whose answer is "no", which covers negated actions and
attributes, not just objects.

Every emitted caption is validated: it must contain a lexicon term, and
for object-based pipelines it must mention the object. Items that fail any
step are dropped with a reason, never silently; the run report conserves
``attempted = emitted + sum(dropped)``.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .chat import ChatClient, TEMPLATES, parse_object, parse_yes_no, render
from .negation import NegationLexicon, contains_negation, tokenize

PIPELINES = ("P1", "P2", "RandP1", "OriginalCaption")

# 80 common object categories of the standard detection vocabulary; the
# ablation samples from these instead of asking the LLM.
COMMON_OBJECTS = (
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train",
    "truck", "boat", "traffic light", "fire hydrant", "stop sign",
    "parking meter", "bench", "bird", "cat", "dog", "horse", "sheep", "cow",
    "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella",
    "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard",
    "sports ball", "kite", "baseball bat", "baseball glove", "skateboard",
    "surfboard", "tennis racket", "bottle", "wine glass", "cup", "fork",
    "knife", "spoon", "bowl", "banana", "apple", "sandwich", "orange",
    "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair",
    "couch", "potted plant", "bed", "dining table", "toilet", "tv",
    "laptop", "mouse", "remote", "keyboard", "cell phone", "microwave",
    "oven", "toaster", "sink", "refrigerator", "book", "clock", "vase",
    "scissors", "teddy bear", "hair drier", "toothbrush",
)


@dataclass(frozen=True)
class ImageRef:
    path: str
    width: Optional[int] = None
    height: Optional[int] = None

    def as_dict(self) -> dict:
        return {"path": self.path, "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d) -> "ImageRef":
        if isinstance(d, str):
            return cls(path=d)
        return cls(path=d["path"], width=d.get("width"), height=d.get("height"))


def object_mentioned(text: str, obj: str) -> bool:
    """True when every word of ``obj`` appears as a token of ``text``."""
    tokens = set(tokenize(text))
    return all(word in tokens for word in tokenize(obj))


@dataclass
class GeneratedPair:
    id: str
    image: ImageRef
    original_caption: str
    augmented_caption: str
    pipeline: str
    provenance: Optional[dict] = None
    verification: Optional[dict] = None
    matched_terms: list[str] = field(default_factory=list)

    def validate(self, lexicon: Optional[NegationLexicon] = None) -> None:
        lexicon = lexicon or NegationLexicon()
        if self.pipeline not in PIPELINES:
            raise ValueError(f"unknown pipeline tag: {self.pipeline}")
        if not self.augmented_caption:
            raise ValueError("augmented_caption is empty")
        if self.pipeline == "OriginalCaption":
            if self.augmented_caption != self.original_caption:
                raise ValueError("OriginalCaption pair must keep the caption unchanged")
            return
        if not self.matched_terms:
            raise ValueError("augmented caption carries no lexicon term")
        ok, found = contains_negation(self.augmented_caption, lexicon)
        if not ok or found != self.matched_terms:
            raise ValueError("matched_terms inconsistent with augmented_caption")
        if self.pipeline in ("P1", "RandP1"):
            obj = (self.provenance or {}).get("object", "")
            if not obj or not object_mentioned(self.augmented_caption, obj):
                raise ValueError("object missing from augmented caption")

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "image": self.image.as_dict(),
            "original_caption": self.original_caption,
            "augmented_caption": self.augmented_caption,
            "pipeline": self.pipeline,
            "provenance": self.provenance,
            "verification": self.verification,
            "matched_terms": self.matched_terms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratedPair":
        return cls(
            id=str(d["id"]),
            image=ImageRef.from_dict(d["image"]),
            original_caption=d["original_caption"],
            augmented_caption=d["augmented_caption"],
            pipeline=d["pipeline"],
            provenance=d.get("provenance"),
            verification=d.get("verification"),
            matched_terms=list(d.get("matched_terms", [])),
        )


@dataclass
class PipelineRunReport:
    pipeline: str
    attempted: int = 0
    emitted: int = 0
    dropped_by_reason: Counter = field(default_factory=Counter)

    def drop(self, reason: str) -> None:
        self.dropped_by_reason[reason] += 1

    def conserved(self) -> bool:
        return self.attempted == self.emitted + sum(self.dropped_by_reason.values())

    def merge(self, other: "PipelineRunReport") -> "PipelineRunReport":
        return PipelineRunReport(
            pipeline=self.pipeline,
            attempted=self.attempted + other.attempted,
            emitted=self.emitted + other.emitted,
            dropped_by_reason=self.dropped_by_reason + other.dropped_by_reason,
        )

    def as_dict(self) -> dict:
        return {
            "pipeline": self.pipeline,
            "attempted": self.attempted,
            "emitted": self.emitted,
            "dropped_by_reason": dict(sorted(self.dropped_by_reason.items())),
        }


def _image_dims(path: str) -> tuple[Optional[int], Optional[int]]:
    try:
        from PIL import Image

        with Image.open(path) as img:
            return img.width, img.height
    except Exception:
        return None, None


def _stable_seed(*parts) -> int:
    blob = ":".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


class Pipeline1:
    """Object-absence augmentation (and its random-object ablation)."""

    def __init__(self, llm: ChatClient, mllm: ChatClient, variant: str = "plausible",
                 lexicon: Optional[NegationLexicon] = None,
                 vocabulary: Iterable[str] = COMMON_OBJECTS, seed: int = 0):
        if variant not in ("plausible", "random"):
            raise ValueError(f"unknown variant: {variant}")
        self.llm = llm
        self.mllm = mllm
        self.variant = variant
        self.lexicon = lexicon or NegationLexicon()
        self.vocabulary = tuple(vocabulary)
        if variant == "random" and not self.vocabulary:
            raise ValueError("random variant needs an object vocabulary")
        self.seed = seed
        self.tag = "RandP1" if variant == "random" else "P1"

    def extract_plausible_object(self, caption: str) -> Optional[str]:
        """LLM object proposal; re-queries once on a bad or duplicate answer."""
        for attempt in (0, 1):
            raw = self.llm.complete(render(TEMPLATES["pipeline1.step1"], {"caption": caption}),
                                    attempt=attempt)
            obj = parse_object(raw)
            if obj is not None and not object_mentioned(caption, obj):
                return obj
        return None

    def pick_random_object(self, caption: str, item_id: str) -> Optional[str]:
        candidates = [v for v in self.vocabulary if not object_mentioned(caption, v)]
        if not candidates:
            return None
        rng = random.Random(_stable_seed(self.seed, item_id))
        return rng.choice(candidates)

    def verify_absence(self, image_path: str, obj: str) -> str:
        """Ask the MLLM whether the object is in the image.

        Returns "absent", "present", or "ambiguous" (after one retry).
        """
        turns = render(TEMPLATES["pipeline1.step2"], {"object": obj}, image_ref=image_path)
        for attempt in (0, 1):
            verdict = parse_yes_no(self.mllm.complete(turns, attempt=attempt))
            if verdict == "no":
                return "absent"
            if verdict == "yes":
                return "present"
        return "ambiguous"

    def augment_with_absence(self, caption: str, obj: str) -> Optional[tuple[str, list[str]]]:
        """Rewrite the caption to state the object's absence; validated output."""
        turns = render(TEMPLATES["pipeline1.step3"], {"object": obj, "caption": caption})
        for attempt in (0, 1):
            candidate = self.llm.complete(turns, attempt=attempt).strip()
            ok, terms = contains_negation(candidate, self.lexicon)
            if ok and object_mentioned(candidate, obj):
                return candidate, terms
        return None

    def run(self, records: Iterable[dict],
            report: Optional[PipelineRunReport] = None) -> Iterator[GeneratedPair]:
        """records: dicts with "id", "image", "caption". Yields validated pairs."""
        self.report = report if report is not None else PipelineRunReport(self.tag)
        for rec in records:
            self.report.attempted += 1
            item_id = str(rec["id"])
            caption = rec["caption"]
            image_path = rec["image"]

            if self.variant == "random":
                obj = self.pick_random_object(caption, item_id)
                if obj is None:
                    self.report.drop("no-candidate")
                    continue
            else:
                obj = self.extract_plausible_object(caption)
                if obj is None:
                    self.report.drop("parse-reject")
                    continue

            if not os.path.isfile(image_path):
                self.report.drop("io-error")
                continue
            verdict = self.verify_absence(image_path, obj)
            if verdict == "present":
                self.report.drop("object-present")
                continue
            if verdict == "ambiguous":
                self.report.drop("ambiguous")
                continue

            augmented = self.augment_with_absence(caption, obj)
            if augmented is None:
                self.report.drop("missing-negation")
                continue
            text, terms = augmented

            width, height = _image_dims(image_path)
            pair = GeneratedPair(
                id=item_id,
                image=ImageRef(image_path, width, height),
                original_caption=caption,
                augmented_caption=text,
                pipeline=self.tag,
                provenance={"object": obj},
                verification={"verdict": verdict},
                matched_terms=terms,
            )
            pair.validate(self.lexicon)
            self.report.emitted += 1
            yield pair


class Pipeline2:
    """VQA-derived augmentation over triplets whose answer is "no"."""

    def __init__(self, llm: ChatClient, lexicon: Optional[NegationLexicon] = None):
        self.llm = llm
        self.lexicon = lexicon or NegationLexicon()

    def augment(self, caption: str, question: str) -> Optional[tuple[str, list[str]]]:
        turns = render(TEMPLATES["pipeline2.step2"],
                       {"question": question, "caption": caption})
        for attempt in (0, 1):
            candidate = self.llm.complete(turns, attempt=attempt).strip()
            ok, terms = contains_negation(candidate, self.lexicon)
            if ok:
                return candidate, terms
        return None

    def run(self, records: Iterable[dict],
            report: Optional[PipelineRunReport] = None) -> Iterator[GeneratedPair]:
        """records: dicts with "id", "image", "question", "answer", "caption"."""
        self.report = report if report is not None else PipelineRunReport("P2")
        for rec in records:
            self.report.attempted += 1
            answer = str(rec["answer"]).strip().lower()
            if answer != "no":
                self.report.drop("answer-not-no")
                continue
            augmented = self.augment(rec["caption"], rec["question"])
            if augmented is None:
                self.report.drop("missing-negation")
                continue
            text, terms = augmented
            width, height = _image_dims(rec["image"])
            pair = GeneratedPair(
                id=str(rec["id"]),
                image=ImageRef(rec["image"], width, height),
                original_caption=rec["caption"],
                augmented_caption=text,
                pipeline="P2",
                provenance={"question": rec["question"], "answer": "no"},
                matched_terms=terms,
            )
            pair.validate(self.lexicon)
            self.report.emitted += 1
            yield pair


def run_original_caption(records: Iterable[dict],
                         lexicon: Optional[NegationLexicon] = None,
                         report: Optional[PipelineRunReport] = None) -> Iterator[GeneratedPair]:
    """Pass-through pairs for the original-caption ablation."""
    lexicon = lexicon or NegationLexicon()
    rep = report if report is not None else PipelineRunReport("OriginalCaption")
    for rec in records:
        rep.attempted += 1
        width, height = _image_dims(rec["image"])
        _, terms = contains_negation(rec["caption"], lexicon)
        rep.emitted += 1
        yield GeneratedPair(
            id=str(rec["id"]),
            image=ImageRef(rec["image"], width, height),
            original_caption=rec["caption"],
            augmented_caption=rec["caption"],
            pipeline="OriginalCaption",
            matched_terms=terms,
        )


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_pairs(pairs: Iterable[GeneratedPair], path: str | Path) -> int:
    """Write pairs as JSON Lines; atomic (temp file + rename). Returns count."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    n = 0
    with tmp.open("w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(canonical_json(pair.as_dict()) + "\n")
            n += 1
    os.replace(tmp, path)
    return n


def read_pairs(path: str | Path) -> Iterator[GeneratedPair]:
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield GeneratedPair.from_dict(json.loads(line))


def read_records(path: str | Path) -> Iterator[dict]:
    """Input datasets as JSON Lines; ids default to the line number."""
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            rec = json.loads(line)
            rec.setdefault("id", f"line-{lineno}")
            if "image" not in rec and "image_path" in rec:
                rec["image"] = rec["image_path"]
            yield rec
