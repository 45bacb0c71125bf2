"""Negation-term detection and corpus statistics.

This is the reference implementation of the counting rules: any other
scanner (e.g. the high-throughput one living outside this package) must
reproduce its output field-for-field on the same bytes.

Tokenization rules, fixed so results are reproducible across runtimes:
    1. split on Unicode whitespace (the set accepted by ``str.split()``),
    2. strip leading/trailing Unicode punctuation (category ``P*``) from
       each token; interior punctuation stays ("o'clock" is one token),
    3. drop tokens that became empty,
    4. lowercase via the Unicode default lowercase mapping (``str.lower``).

A caption counts as negated when any token equals a lexicon term exactly
(whole-token match, never substring).
"""

from __future__ import annotations

import gzip
import io
import json
import re
import unicodedata
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator

DEFAULT_NEGATION_TERMS = ("no", "not", "without")

# Blank input lines are ignored entirely (ASCII whitespace only); anything
# else either parses or increments the skip counter.
_BLANK = re.compile(r"^[ \t\r\n\f\v]*$")


@lru_cache(maxsize=None)
def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Split ``text`` into lowercase word tokens.

    Deterministic and locale-independent; see the module docstring for the
    exact rules.
    """
    tokens = []
    for raw in text.split():
        start, end = 0, len(raw)
        while start < end and _is_punct(raw[start]):
            start += 1
        while end > start and _is_punct(raw[end - 1]):
            end -= 1
        if end > start:
            tokens.append(raw[start:end].lower())
    return tokens


class LexiconError(ValueError):
    pass


@dataclass(frozen=True)
class NegationLexicon:
    """Ordered set of lowercase negation terms."""

    terms: tuple[str, ...] = DEFAULT_NEGATION_TERMS

    def __post_init__(self):
        if not self.terms:
            raise LexiconError("lexicon must not be empty")
        seen = set()
        for term in self.terms:
            if not term or term != term.lower():
                raise LexiconError(f"lexicon term must be lowercase: {term!r}")
            if any(ch.isspace() for ch in term):
                raise LexiconError(f"lexicon term must not contain whitespace: {term!r}")
            if term in seen:
                raise LexiconError(f"duplicate lexicon term: {term!r}")
            seen.add(term)

    @classmethod
    def parse(cls, spec: str) -> "NegationLexicon":
        """Build a lexicon from a comma-separated list, e.g. ``no,not,without``."""
        terms = tuple(t.strip().lower() for t in spec.split(",") if t.strip())
        return cls(terms)

    def __contains__(self, token: str) -> bool:
        return token in self._term_set

    @property
    def _term_set(self) -> frozenset:
        # cached on first use; frozen dataclass, so stash via object.__setattr__
        cached = self.__dict__.get("_terms_frozen")
        if cached is None:
            cached = frozenset(self.terms)
            object.__setattr__(self, "_terms_frozen", cached)
        return cached


def contains_negation(text: str, lexicon: NegationLexicon | None = None) -> tuple[bool, list[str]]:
    """Whole-token lexicon match over ``tokenize(text)``.

    Returns ``(matched?, matched_terms)`` where matched_terms preserves
    token order and multiplicity ("No no NO" -> ["no","no","no"]).
    """
    lexicon = lexicon or NegationLexicon()
    matched = [tok for tok in tokenize(text) if tok in lexicon]
    return bool(matched), matched


@dataclass
class NegationStats:
    """Caption- and word-level negation counters plus derived ratios."""

    caption_total: int = 0
    caption_neg: int = 0
    word_total: int = 0
    word_neg: int = 0

    @property
    def caption_ratio(self) -> float:
        return self.caption_neg / self.caption_total if self.caption_total else 0.0

    @property
    def word_ratio(self) -> float:
        return self.word_neg / self.word_total if self.word_total else 0.0

    def add_caption(self, tokens: list[str], matched: list[str]) -> None:
        self.caption_total += 1
        self.word_total += len(tokens)
        self.word_neg += len(matched)
        if matched:
            self.caption_neg += 1

    def merge(self, other: "NegationStats") -> "NegationStats":
        """Associative shard merge; ratios recompute from the summed counters."""
        return NegationStats(
            caption_total=self.caption_total + other.caption_total,
            caption_neg=self.caption_neg + other.caption_neg,
            word_total=self.word_total + other.word_total,
            word_neg=self.word_neg + other.word_neg,
        )

    def as_dict(self) -> dict:
        return {
            "caption_total": self.caption_total,
            "caption_neg": self.caption_neg,
            "word_total": self.word_total,
            "word_neg": self.word_neg,
            "caption_ratio": self.caption_ratio,
            "word_ratio": self.word_ratio,
        }


@dataclass
class ScanReport:
    """scan output: the six counters plus skip count and lexicon echo."""

    stats: NegationStats
    skipped: int = 0
    lexicon: NegationLexicon = field(default_factory=NegationLexicon)

    def as_dict(self) -> dict:
        out = self.stats.as_dict()
        out["skipped"] = self.skipped
        out["lexicon"] = list(self.lexicon.terms)
        return out


class MalformedRecord(ValueError):
    pass


def _validate_record(obj) -> tuple[str, str]:
    if not isinstance(obj, dict):
        raise MalformedRecord("record is not an object")
    if "id" not in obj or not isinstance(obj["id"], (str, int, float)) or isinstance(obj["id"], bool):
        raise MalformedRecord("missing or non-scalar id")
    text = obj.get("text")
    if not isinstance(text, str):
        raise MalformedRecord("missing or non-string text")
    return str(obj["id"]), text


def _reject_constant(_):
    # json.loads would otherwise accept NaN/Infinity, which strict JSON
    # parsers reject; treat such lines as malformed everywhere.
    raise MalformedRecord("non-standard JSON constant")


def parse_jsonl_line(line: str) -> tuple[str, str]:
    """One JSON Lines record -> (id, text). Raises MalformedRecord."""
    try:
        obj = json.loads(line, parse_constant=_reject_constant)
    except (json.JSONDecodeError, MalformedRecord, RecursionError) as exc:
        raise MalformedRecord(str(exc)) from None
    return _validate_record(obj)


def parse_tsv_line(line: str) -> tuple[str, str]:
    """One 2-column TSV record (id, text) -> (id, text); text may hold tabs."""
    rec_id, sep, text = line.partition("\t")
    if not sep:
        raise MalformedRecord("no tab separator")
    return rec_id, text


def detect_format(path: str | Path) -> str:
    name = str(path)
    if name.endswith(".gz"):
        name = name[: -len(".gz")]
    return "tsv" if name.endswith(".tsv") else "jsonl"


def iter_corpus_lines(path: str | Path) -> Iterator[str]:
    """Decoded lines of a plain or gzip corpus file, split on LF bytes."""
    path = Path(path)
    opener = gzip.open if path.name.endswith(".gz") else io.open
    with opener(path, "rb") as fh:
        for raw in fh:
            yield raw.decode("utf-8")


def scan_lines(lines: Iterable[str], lexicon: NegationLexicon, fmt: str) -> ScanReport:
    parse = parse_jsonl_line if fmt == "jsonl" else parse_tsv_line
    report = ScanReport(NegationStats(), lexicon=lexicon)
    for line in lines:
        if _BLANK.match(line):
            continue
        try:
            _, text = parse(line.rstrip("\n").rstrip("\r"))
        except MalformedRecord:
            report.skipped += 1
            continue
        tokens = tokenize(text)
        matched = [tok for tok in tokens if tok in lexicon]
        report.stats.add_caption(tokens, matched)
    return report


def scan_corpus(records: Iterable, lexicon: NegationLexicon | None = None) -> ScanReport:
    """Single-pass negation statistics over an in-memory record stream.

    Accepts dicts with "id"/"text" keys or (id, text) tuples; malformed
    records are skipped and counted, never absorbed into the totals. The
    result is independent of record order and merges associatively across
    shards.
    """
    lexicon = lexicon or NegationLexicon()
    report = ScanReport(NegationStats(), lexicon=lexicon)
    for rec in records:
        try:
            if isinstance(rec, tuple):
                rec_id, text = rec
                if not isinstance(text, str):
                    raise MalformedRecord("non-string text")
            else:
                rec_id, text = _validate_record(rec)
        except MalformedRecord:
            report.skipped += 1
            continue
        tokens = tokenize(text)
        matched = [tok for tok in tokens if tok in lexicon]
        report.stats.add_caption(tokens, matched)
    return report


def scan_files(paths: Iterable[str | Path], lexicon: NegationLexicon | None = None,
               fmt: str = "auto") -> ScanReport:
    """Scan one or more corpus files (JSONL or TSV, optionally gzipped)."""
    lexicon = lexicon or NegationLexicon()
    total = ScanReport(NegationStats(), lexicon=lexicon)
    for path in paths:
        file_fmt = detect_format(path) if fmt == "auto" else fmt
        part = scan_lines(iter_corpus_lines(path), lexicon, file_fmt)
        total.stats = total.stats.merge(part.stats)
        total.skipped += part.skipped
    return total
