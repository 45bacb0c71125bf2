#!/usr/bin/env python3
"""Regenerate the frozen test fixtures under tests/data/.

Two corpora:

  synthetic_corpus_1000.jsonl
      1,000 captions with counts planted by construction: exactly 73
      captions carry negation terms and exactly 91 negation tokens occur.
      The expected-values JSON next to it is written from the generator's
      own bookkeeping, never from the scanner under test.

  conformance_captions.jsonl / .tsv
      1,000 adversarial captions (Unicode punctuation, contractions,
      emoji, exotic whitespace, near-miss words) plus malformed lines.
      Expected values for these come from the reference scanner, which is
      the contractual oracle for any other implementation.

Deterministic: fixed seed, stable iteration order.
"""

import json
import random
import sys
from pathlib import Path

DATA_DIR = Path(__file__).resolve().parent.parent / "tests" / "data"

NEG_TERMS = ["no", "not", "without"]

CLEAN_WORDS = [
    "a", "the", "man", "woman", "dog", "cat", "horse", "street", "park",
    "riding", "walking", "sitting", "red", "blue", "green", "table", "chair",
    "window", "door", "tree", "flower", "river", "mountain", "beach", "cloud",
    "nothing", "knot", "note", "noted", "notable", "nobody", "nowhere",
    "within", "withstand", "notwithstanding", "anode", "snow", "piano",
    "casino", "nono", "notion", "innot", "without-a-doubt", "no-parking",
]

DECORATIONS = [("", "."), ("", ","), ("", "!"), ("", "?"), ("(", ")"),
               ("“", "”"), ("«", "»"), ("'", "'"), ("", "…")]

CASINGS = [str.lower, str.upper, str.title]


def decorate(rng, word):
    if rng.random() < 0.3:
        prefix, suffix = rng.choice(DECORATIONS)
        word = prefix + word + suffix
    if rng.random() < 0.3:
        word = rng.choice(CASINGS)(word)
    return word


def make_planted_corpus():
    rng = random.Random(20240915)
    captions = []
    word_total = 0

    # 927 clean captions
    for _ in range(927):
        n = rng.randint(3, 12)
        words = [decorate(rng, rng.choice(CLEAN_WORDS)) for _ in range(n)]
        captions.append((" ".join(words), 0))
        word_total += n

    # 73 negated: the first 18 carry two terms, the rest one (18*2 + 55 = 91)
    for i in range(73):
        n = rng.randint(3, 10)
        words = [decorate(rng, rng.choice(CLEAN_WORDS)) for _ in range(n)]
        k = 2 if i < 18 else 1
        for _ in range(k):
            term = decorate(rng, rng.choice(NEG_TERMS))
            words.insert(rng.randrange(len(words) + 1), term)
        captions.append((" ".join(words), k))
        word_total += n + k

    rng.shuffle(captions)
    caption_neg = sum(1 for _, k in captions if k)
    word_neg = sum(k for _, k in captions)
    assert len(captions) == 1000 and caption_neg == 73 and word_neg == 91

    out_path = DATA_DIR / "synthetic_corpus_1000.jsonl"
    with out_path.open("w", encoding="utf-8") as fh:
        for i, (text, _) in enumerate(captions):
            fh.write(json.dumps({"id": f"c{i:04d}", "text": text},
                                ensure_ascii=False) + "\n")
    expected = {
        "caption_total": 1000,
        "caption_neg": 73,
        "word_total": word_total,
        "word_neg": 91,
        "skipped": 0,
    }
    (DATA_DIR / "synthetic_corpus_1000.expected.json").write_text(
        json.dumps(expected, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return expected


ADVERSARIAL_TOKENS = [
    "no", "not", "without", "NO", "Not", "WITHOUT",
    "«no»", "“not”", "'without'", "no,", "not|!", "(no)",
    "no…", "¡no!", "nothing", "anodyne", "knot", "notary",
    "don't", "won't", "can't", "n't", "ain't", "o'clock",
    "no-one", "no-parking", "without-a-doubt", "nope", "nos", "noto",
    "ｎｏ",  # fullwidth "no" must NOT match the ascii lexicon term
    "НО",  # Cyrillic capitals that lowercase to a lookalike
    "ÑO", "nö", "İstanbul", "straße", "ΣΙΣΥΦΟΣ",
    "café", "élève", "🙂", "👍🏽", "☃",
    "日本語", "한국어", "№5", "3.14", "$5", "100%",
    "--", "—", "...", "···", "__init__", "a,b,c",
]

EXOTIC_SPACES = [" ", "\t", " ", " ", "　", "  ", "   "]


def make_conformance_corpus():
    rng = random.Random(77)
    lines_jsonl = []
    rows_tsv = []
    for i in range(1000):
        n = rng.randint(1, 10)
        tokens = [rng.choice(ADVERSARIAL_TOKENS) for _ in range(n)]
        sep_text = ""
        for j, tok in enumerate(tokens):
            if j:
                sep_text += rng.choice(EXOTIC_SPACES)
            sep_text += tok
        if rng.random() < 0.05:
            sep_text = ""  # empty captions are valid records
        lines_jsonl.append(json.dumps({"id": f"a{i:04d}", "text": sep_text},
                                      ensure_ascii=False))
        rows_tsv.append(f"a{i:04d}\t" + sep_text.replace("\t", " "))

    # malformed and blank lines: skipped (or ignored) identically everywhere
    malformed = [
        "{broken json",
        '{"id": "x1"}',
        '{"text": "orphan"}',
        '{"id": "x2", "text": 7}',
        '{"id": NaN, "text": "no"}',
        '["id", "text"]',
        '{"id": null, "text": "no"}',
        '{"id": true, "text": "no"}',
    ]
    for pos, line in zip(range(100, 900, 100), malformed):
        lines_jsonl.insert(pos, line)
    lines_jsonl.insert(500, "")
    lines_jsonl.insert(700, "   ")

    (DATA_DIR / "conformance_captions.jsonl").write_text(
        "\n".join(lines_jsonl) + "\n", encoding="utf-8")

    rows_tsv.insert(300, "id-without-tab-or-text")
    rows_tsv.insert(600, "")
    (DATA_DIR / "conformance_captions.tsv").write_text(
        "\n".join(rows_tsv) + "\n", encoding="utf-8")


def freeze_conformance_expected():
    sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))
    from negkit.negation import scan_files

    for name in ("conformance_captions.jsonl", "conformance_captions.tsv"):
        report = scan_files([DATA_DIR / name])
        out = DATA_DIR / (name + ".expected.json")
        out.write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True,
                                  ensure_ascii=False) + "\n", encoding="utf-8")
        print(f"{name}: {report.as_dict()}")


if __name__ == "__main__":
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    planted = make_planted_corpus()
    print(f"planted corpus: {planted}")
    make_conformance_corpus()
    freeze_conformance_expected()
