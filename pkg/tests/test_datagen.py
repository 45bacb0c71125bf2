"""Pipeline behavior under deterministic stub clients."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from negkit.chat import StubChatClient, TEMPLATES, render
from negkit.datagen import (
    COMMON_OBJECTS,
    GeneratedPair,
    ImageRef,
    Pipeline1,
    Pipeline2,
    PipelineRunReport,
    object_mentioned,
    read_pairs,
    run_original_caption,
    write_pairs,
)
from negkit.negation import contains_negation


def make_images(tmp_path, n):
    from PIL import Image

    paths = []
    for i in range(n):
        path = tmp_path / f"img{i:03d}.png"
        Image.new("RGB", (8, 8), (i * 20 % 255, 10, 10)).save(path)
        paths.append(str(path))
    return paths


def step1_text(caption):
    return render(TEMPLATES["pipeline1.step1"], {"caption": caption})[1].text


def step2_text(obj):
    return f"Is there {obj} in this image? Answer either yes or no."


def step3_text(obj, caption):
    return render(TEMPLATES["pipeline1.step3"], {"object": obj, "caption": caption})[1].text


def p1_fixture(tmp_path, n=10, present_indices=()):
    """n captioned images plus stubs that pass every step, except that the
    MLLM reports the object as present for the given indices."""
    images = make_images(tmp_path, n)
    records, rules = [], []
    for i in range(n):
        caption = f"scene {i}"
        obj = f"ball{i}"
        records.append({"id": f"item-{i}", "image": images[i], "caption": caption})
        rules.append({"equals": step1_text(caption), "response": obj.capitalize() + "."})
        verdict = "Yes." if i in present_indices else "No."
        rules.append({"equals": step2_text(obj), "response": verdict})
        rules.append({"equals": step3_text(obj, caption),
                      "response": f"scene {i} without a ball{i}"})
    return records, StubChatClient(rules)


class TestPipeline1:
    def test_all_pass_emits_everything(self, tmp_path):
        records, stub = p1_fixture(tmp_path, n=10)
        p1 = Pipeline1(llm=stub, mllm=stub)
        pairs = list(p1.run(records))
        assert len(pairs) == 10
        assert p1.report.conserved()
        assert sum(p1.report.dropped_by_reason.values()) == 0
        for pair in pairs:
            assert contains_negation(pair.augmented_caption)[0]
            assert pair.pipeline == "P1"
            assert pair.matched_terms == ["without"]

    def test_present_objects_dropped_with_reason(self, tmp_path):
        records, stub = p1_fixture(tmp_path, n=10, present_indices={1, 3, 5, 7})
        p1 = Pipeline1(llm=stub, mllm=stub)
        pairs = list(p1.run(records))
        assert len(pairs) == 6
        assert p1.report.dropped_by_reason["object-present"] == 4
        assert p1.report.conserved()

    def test_duplicate_object_requeried_once(self, tmp_path):
        [image] = make_images(tmp_path, 1)
        caption = "a man riding a horse"
        stub = StubChatClient([
            {"equals": step1_text(caption), "responses": ["horse", "saddle"]},
            {"equals": step2_text("saddle"), "response": "no"},
            {"equals": step3_text("saddle", caption),
             "response": "a man riding a horse without a saddle"},
        ])
        p1 = Pipeline1(llm=stub, mllm=stub)
        pairs = list(p1.run([{"id": "x", "image": image, "caption": caption}]))
        assert pairs[0].provenance == {"object": "saddle"}
        assert pairs[0].augmented_caption == "a man riding a horse without a saddle"

    def test_unparseable_object_twice_rejects(self, tmp_path):
        [image] = make_images(tmp_path, 1)
        caption = "a man riding a horse"
        stub = StubChatClient([
            {"equals": step1_text(caption),
             "response": "I think there might be a frisbee"},
        ])
        p1 = Pipeline1(llm=stub, mllm=stub)
        assert list(p1.run([{"id": "x", "image": image, "caption": caption}])) == []
        assert p1.report.dropped_by_reason["parse-reject"] == 1

    def test_ambiguous_verdict_twice_drops(self, tmp_path):
        [image] = make_images(tmp_path, 1)
        caption = "a dog on grass"
        stub = StubChatClient([
            {"equals": step1_text(caption), "response": "ball"},
            {"equals": step2_text("ball"), "response": "unclear"},
        ])
        p1 = Pipeline1(llm=stub, mllm=stub)
        assert list(p1.run([{"id": "x", "image": image, "caption": caption}])) == []
        assert p1.report.dropped_by_reason["ambiguous"] == 1

    def test_missing_negation_twice_drops(self, tmp_path):
        [image] = make_images(tmp_path, 1)
        caption = "a man riding a horse"
        stub = StubChatClient([
            {"equals": step1_text(caption), "response": "saddle"},
            {"equals": step2_text("saddle"), "response": "no"},
            {"equals": step3_text("saddle", caption), "response": "a man riding a horse"},
        ])
        p1 = Pipeline1(llm=stub, mllm=stub)
        assert list(p1.run([{"id": "x", "image": image, "caption": caption}])) == []
        assert p1.report.dropped_by_reason["missing-negation"] == 1

    def test_unreadable_image_dropped_with_io_reason(self, tmp_path):
        caption = "a dog on grass"
        stub = StubChatClient([
            {"equals": step1_text(caption), "response": "ball"},
        ])
        p1 = Pipeline1(llm=stub, mllm=stub)
        records = [{"id": "x", "image": str(tmp_path / "missing.png"), "caption": caption}]
        assert list(p1.run(records)) == []
        assert p1.report.dropped_by_reason["io-error"] == 1

    def test_matched_terms_no_variant(self, tmp_path):
        [image] = make_images(tmp_path, 1)
        caption = "a dog on grass"
        stub = StubChatClient([
            {"equals": step1_text(caption), "response": "ball"},
            {"equals": step2_text("ball"), "response": "no"},
            {"equals": step3_text("ball", caption),
             "response": "a dog on grass, with no ball in sight"},
        ])
        p1 = Pipeline1(llm=stub, mllm=stub)
        [pair] = p1.run([{"id": "x", "image": image, "caption": caption}])
        assert pair.matched_terms == ["no"]

    def test_rerun_byte_identical(self, tmp_path):
        out_a, out_b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for out in (out_a, out_b):
            records, stub = p1_fixture(tmp_path, n=6, present_indices={2})
            write_pairs(Pipeline1(llm=stub, mllm=stub).run(records), out)
        assert out_a.read_bytes() == out_b.read_bytes()


class TestRandP1:
    def test_single_candidate_path(self, tmp_path):
        [image] = make_images(tmp_path, 1)
        caption = "a dog on grass"
        stub = StubChatClient([
            {"equals": step2_text("kite"), "response": "no"},
            {"equals": step3_text("kite", caption),
             "response": "a dog on grass with no kite"},
        ])
        p1 = Pipeline1(llm=stub, mllm=stub, variant="random",
                       vocabulary=["dog", "grass", "kite"], seed=7)
        [pair] = p1.run([{"id": "x", "image": image, "caption": caption}])
        assert pair.pipeline == "RandP1"
        assert pair.provenance == {"object": "kite"}

    def test_exhausted_vocabulary_drops(self, tmp_path):
        [image] = make_images(tmp_path, 1)
        p1 = Pipeline1(llm=StubChatClient([]), mllm=StubChatClient([]),
                       variant="random", vocabulary=["dog"], seed=0)
        assert list(p1.run([{"id": "x", "image": image, "caption": "a dog"}])) == []
        assert p1.report.dropped_by_reason["no-candidate"] == 1

    def test_same_seed_same_choice(self):
        p1 = Pipeline1(llm=StubChatClient([]), mllm=StubChatClient([]),
                       variant="random", seed=3)
        a = p1.pick_random_object("a man on a bench", "item-0")
        b = p1.pick_random_object("a man on a bench", "item-0")
        assert a == b

    @given(st.sampled_from(COMMON_OBJECTS), st.integers(0, 1000))
    def test_never_picks_mentioned_object(self, obj, seed):
        caption = f"a photo of a {obj} outside"
        p1 = Pipeline1(llm=StubChatClient([]), mllm=StubChatClient([]),
                       variant="random", seed=seed)
        picked = p1.pick_random_object(caption, "i")
        assert picked is not None
        assert not object_mentioned(caption, picked)


class TestPipeline2:
    def test_yes_answers_filtered_without_model_calls(self, tmp_path):
        [image] = make_images(tmp_path, 1)
        stub = StubChatClient([])
        p2 = Pipeline2(llm=stub)
        records = [{"id": "x", "image": image, "question": "Is it day?",
                    "answer": "yes", "caption": "a street"}]
        assert list(p2.run(records)) == []
        assert stub.network_calls == 0
        assert p2.report.dropped_by_reason["answer-not-no"] == 1

    def test_no_answer_augmented(self, tmp_path):
        [image] = make_images(tmp_path, 1)
        question, caption = "Is the dog swimming?", "a dog near a pool"
        user = render(TEMPLATES["pipeline2.step2"],
                      {"question": question, "caption": caption})[1].text
        stub = StubChatClient([{"equals": user, "response": "a dog near a pool, not swimming"}])
        p2 = Pipeline2(llm=stub)
        [pair] = p2.run([{"id": "x", "image": image, "question": question,
                          "answer": "no", "caption": caption}])
        assert pair.matched_terms == ["not"]
        assert pair.pipeline == "P2"
        assert pair.provenance == {"question": question, "answer": "no"}

    def test_rewrite_without_negation_drops(self, tmp_path):
        [image] = make_images(tmp_path, 1)
        stub = StubChatClient([], default="a plain caption")
        p2 = Pipeline2(llm=stub)
        records = [{"id": "x", "image": image, "question": "Q?",
                    "answer": "no", "caption": "a street"}]
        assert list(p2.run(records)) == []
        assert p2.report.dropped_by_reason["missing-negation"] == 1
        assert p2.report.conserved()


class TestOriginalCaption:
    def test_pass_through(self, tmp_path):
        [image] = make_images(tmp_path, 1)
        [pair] = run_original_caption([{"id": "x", "image": image, "caption": "no cats"}])
        assert pair.augmented_caption == pair.original_caption == "no cats"
        assert pair.pipeline == "OriginalCaption"
        assert pair.matched_terms == ["no"]
        pair.validate()

    def test_plain_caption_keeps_empty_terms(self, tmp_path):
        [image] = make_images(tmp_path, 1)
        [pair] = run_original_caption([{"id": "x", "image": image, "caption": "a cat"}])
        assert pair.matched_terms == []
        pair.validate()


class TestPairIO:
    def test_roundtrip(self, tmp_path):
        pair = GeneratedPair(
            id="p0",
            image=ImageRef("img.png", 8, 8),
            original_caption="a dog",
            augmented_caption="a dog without a ball",
            pipeline="P1",
            provenance={"object": "ball"},
            verification={"verdict": "absent"},
            matched_terms=["without"],
        )
        path = tmp_path / "pairs.jsonl"
        assert write_pairs([pair], path) == 1
        [back] = read_pairs(path)
        assert back == pair

    def test_validate_rejects_missing_object(self):
        pair = GeneratedPair(
            id="p0", image=ImageRef("x.png"),
            original_caption="a dog", augmented_caption="a dog without a hat",
            pipeline="P1", provenance={"object": "ball"}, matched_terms=["without"],
        )
        with pytest.raises(ValueError):
            pair.validate()

    def test_validate_rejects_missing_negation(self):
        pair = GeneratedPair(
            id="p0", image=ImageRef("x.png"),
            original_caption="a dog", augmented_caption="a dog and a ball",
            pipeline="P1", provenance={"object": "ball"}, matched_terms=["no"],
        )
        with pytest.raises(ValueError):
            pair.validate()


def test_report_merge_is_associative():
    a = PipelineRunReport("P1", attempted=3, emitted=2)
    a.drop("ambiguous")
    b = PipelineRunReport("P1", attempted=2, emitted=1)
    b.drop("object-present")
    merged = a.merge(b)
    assert merged.attempted == 5
    assert merged.emitted == 3
    assert merged.dropped_by_reason == {"ambiguous": 1, "object-present": 1}
    assert merged.conserved()
