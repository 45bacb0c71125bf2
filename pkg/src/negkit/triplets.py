"""Hard-negative patch benchmark construction from referring expressions.

A triplet pairs a negation-inclusive referring expression T with two image
patches from the same image: P+ (the region T describes) and P- (a
different instance of the same category, the hard negative). Original
annotation boxes are grown to give the encoder more context, under these
constraints:

  * the grown patch still contains its original box,
  * growth is capped at the original width per side horizontally and the
    original height per side vertically,
  * the grown patch stays inside the image,
  * it must not overlap the OTHER patch's original box.

The caps and the image border define a constraint box; when the full
constraint box collides with the other original box, the maximum-area
feasible rectangle is one of the four single-edge clips that separate the
two boxes along an axis (disjointness means full separation along x or y,
so nothing outside this family can be larger). Ties prefer horizontal
clips, then the clip that keeps the left/top edge.

Selection, the choice of hard negative among several candidates, and the
tie rules here are deterministic so two runs over the same annotation file
produce identical benchmark files.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .negation import NegationLexicon, contains_negation

DEFAULT_MIN_DIM = 100


@dataclass(frozen=True)
class BBox:
    """Integer pixel box: top-left corner plus extents, w > 0 and h > 0."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"degenerate box: {self}")

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def overlaps(self, other: "BBox") -> bool:
        """Positive-area intersection; shared edges do not count."""
        return (self.x < other.x2 and other.x < self.x2
                and self.y < other.y2 and other.y < self.y2)

    def contains(self, other: "BBox") -> bool:
        return (self.x <= other.x and self.y <= other.y
                and self.x2 >= other.x2 and self.y2 >= other.y2)

    def within(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x2 <= width and self.y2 <= height

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def from_list(cls, xywh) -> "BBox":
        x, y, w, h = (int(v) for v in xywh)
        return cls(x, y, w, h)

    @classmethod
    def from_edges(cls, x1: int, y1: int, x2: int, y2: int) -> "BBox":
        return cls(x1, y1, x2 - x1, y2 - y1)


@dataclass(frozen=True)
class RegionAnnotation:
    annotation_id: int
    image_id: str
    image_path: str
    image_width: int
    image_height: int
    bbox: BBox
    category: int | str
    ref_text: str

    def __post_init__(self):
        if not self.bbox.within(self.image_width, self.image_height):
            raise ValueError(
                f"annotation {self.annotation_id}: bbox {self.bbox} outside "
                f"{self.image_width}x{self.image_height} image")


@dataclass(frozen=True)
class NegTriplet:
    text: str
    image_id: str
    image_path: str
    image_width: int
    image_height: int
    category: int | str
    patch_pos: BBox
    patch_neg: BBox
    orig_pos: BBox
    orig_neg: BBox
    ann_pos: int
    ann_neg: int

    def check_invariants(self, lexicon: Optional[NegationLexicon] = None,
                         min_dim: int = DEFAULT_MIN_DIM) -> None:
        lexicon = lexicon or NegationLexicon()
        if not contains_negation(self.text, lexicon)[0]:
            raise ValueError("triplet text carries no negation term")
        if self.ann_pos == self.ann_neg:
            raise ValueError("positive and negative share an annotation id")
        if self.patch_pos.overlaps(self.orig_neg) or self.patch_neg.overlaps(self.orig_pos):
            raise ValueError("expanded patch overlaps the other original box")
        for orig in (self.orig_pos, self.orig_neg):
            if orig.w < min_dim or orig.h < min_dim:
                raise ValueError("original patch below the minimum dimension")
        for patch, orig in ((self.patch_pos, self.orig_pos), (self.patch_neg, self.orig_neg)):
            if not patch.contains(orig):
                raise ValueError("expanded patch lost its original box")
            if not patch.within(self.image_width, self.image_height):
                raise ValueError("expanded patch leaves the image")

    def as_dict(self) -> dict:
        return {
            "text": self.text,
            "image_id": self.image_id,
            "image_path": self.image_path,
            "image_width": self.image_width,
            "image_height": self.image_height,
            "category": self.category,
            "patch_pos": self.patch_pos.as_list(),
            "patch_neg": self.patch_neg.as_list(),
            "orig_pos": self.orig_pos.as_list(),
            "orig_neg": self.orig_neg.as_list(),
            "ann_pos": self.ann_pos,
            "ann_neg": self.ann_neg,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NegTriplet":
        return cls(
            text=d["text"],
            image_id=str(d["image_id"]),
            image_path=d["image_path"],
            image_width=d["image_width"],
            image_height=d["image_height"],
            category=d["category"],
            patch_pos=BBox.from_list(d["patch_pos"]),
            patch_neg=BBox.from_list(d["patch_neg"]),
            orig_pos=BBox.from_list(d["orig_pos"]),
            orig_neg=BBox.from_list(d["orig_neg"]),
            ann_pos=d["ann_pos"],
            ann_neg=d["ann_neg"],
        )


def maximize_patch(box: BBox, other: BBox, image_size: tuple[int, int]) -> BBox:
    """Largest expansion of ``box`` that respects all growth constraints.

    ``other`` is the opposite patch's ORIGINAL box; the two must be
    disjoint going in. The result contains ``box``, grows at most w per
    side horizontally and h per side vertically, stays inside the image,
    and never overlaps ``other``.
    """
    width, height = image_size
    if not box.within(width, height):
        raise ValueError("box outside image")
    if box.overlaps(other):
        raise ValueError("box overlaps the other original box")

    full = BBox.from_edges(
        max(0, box.x - box.w),
        max(0, box.y - box.h),
        min(width, box.x2 + box.w),
        min(height, box.y2 + box.h),
    )
    if not full.overlaps(other):
        return full

    # Disjoint rectangles separate along an axis, so the optimum clips
    # exactly one edge of the full expansion to the other box's near edge.
    # Priority on area ties: right, left, bottom, top clip.
    candidates = []
    if other.x >= box.x2:  # clip right edge
        candidates.append((0, BBox.from_edges(full.x, full.y, min(full.x2, other.x), full.y2)))
    if other.x2 <= box.x:  # clip left edge
        candidates.append((1, BBox.from_edges(max(full.x, other.x2), full.y, full.x2, full.y2)))
    if other.y >= box.y2:  # clip bottom edge
        candidates.append((2, BBox.from_edges(full.x, full.y, full.x2, min(full.y2, other.y))))
    if other.y2 <= box.y:  # clip top edge
        candidates.append((3, BBox.from_edges(full.x, max(full.y, other.y2), full.x2, full.y2)))

    best = max(candidates, key=lambda c: (c[1].area, -c[0]))
    return best[1]


def select_candidates(annotations: Iterable[RegionAnnotation],
                      lexicon: Optional[NegationLexicon] = None,
                      min_dim: int = DEFAULT_MIN_DIM,
                      ) -> Iterator[tuple[RegionAnnotation, list[RegionAnnotation]]]:
    """Yield (prompt annotation, hard-negative candidates) pairs.

    A prompt annotation qualifies when its text contains a negation term,
    its box is at least min_dim on both sides (inclusive), and a disjoint
    same-category annotation of qualifying size exists in the same image.
    """
    lexicon = lexicon or NegationLexicon()
    by_image: dict[str, list[RegionAnnotation]] = {}
    for ann in annotations:
        by_image.setdefault(ann.image_id, []).append(ann)

    for image_id in sorted(by_image):
        group = sorted(by_image[image_id], key=lambda a: a.annotation_id)
        big_enough = [a for a in group if a.bbox.w >= min_dim and a.bbox.h >= min_dim]
        for ann in group:
            if ann.bbox.w < min_dim or ann.bbox.h < min_dim:
                continue
            if not contains_negation(ann.ref_text, lexicon)[0]:
                continue
            peers = [
                peer for peer in big_enough
                if peer.annotation_id != ann.annotation_id
                and peer.category == ann.category
                and not peer.bbox.overlaps(ann.bbox)
            ]
            if peers:
                yield ann, peers


def choose_hard_negative(candidates: list[RegionAnnotation]) -> RegionAnnotation:
    """Deterministic pick: largest area, ties to the smallest annotation id."""
    if not candidates:
        raise ValueError("no hard-negative candidates")
    return max(candidates, key=lambda a: (a.bbox.area, -a.annotation_id))


def build(annotations: Iterable[RegionAnnotation],
          lexicon: Optional[NegationLexicon] = None,
          min_dim: int = DEFAULT_MIN_DIM) -> list[NegTriplet]:
    """Construct the full triplet set; deterministic for a given input."""
    lexicon = lexicon or NegationLexicon()
    triplets = []
    for ann, peers in select_candidates(annotations, lexicon, min_dim):
        negative = choose_hard_negative(peers)
        size = (ann.image_width, ann.image_height)
        patch_pos = maximize_patch(ann.bbox, negative.bbox, size)
        patch_neg = maximize_patch(negative.bbox, ann.bbox, size)
        triplet = NegTriplet(
            text=ann.ref_text,
            image_id=ann.image_id,
            image_path=ann.image_path,
            image_width=ann.image_width,
            image_height=ann.image_height,
            category=ann.category,
            patch_pos=patch_pos,
            patch_neg=patch_neg,
            orig_pos=ann.bbox,
            orig_neg=negative.bbox,
            ann_pos=ann.annotation_id,
            ann_neg=negative.annotation_id,
        )
        triplet.check_invariants(lexicon, min_dim)
        triplets.append(triplet)
    triplets.sort(key=lambda t: (t.image_id, t.ann_pos))
    return triplets


def load_annotations(path: str | Path) -> list[RegionAnnotation]:
    """Annotation JSON: images (id, path, width, height) + annotations
    (id, image_id, bbox [x,y,w,h], category, ref_text)."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    images = {str(img["id"]): img for img in doc["images"]}
    out = []
    for ann in doc["annotations"]:
        img = images[str(ann["image_id"])]
        out.append(RegionAnnotation(
            annotation_id=int(ann["id"]),
            image_id=str(ann["image_id"]),
            image_path=img.get("path", img.get("file_name", "")),
            image_width=int(img["width"]),
            image_height=int(img["height"]),
            bbox=BBox.from_list(ann["bbox"]),
            category=ann["category"],
            ref_text=ann["ref_text"],
        ))
    return out


def write_triplets(triplets: Iterable[NegTriplet], path: str | Path) -> int:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    n = 0
    with tmp.open("w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(json.dumps(t.as_dict(), sort_keys=True, ensure_ascii=False,
                                separators=(",", ":")) + "\n")
            n += 1
    os.replace(tmp, path)
    return n


def read_triplets(path: str | Path) -> Iterator[NegTriplet]:
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield NegTriplet.from_dict(json.loads(line))
