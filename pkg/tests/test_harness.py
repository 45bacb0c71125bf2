"""Scorer oracles: every protocol against hand-computed fixture values."""

import json

import numpy as np
import pytest

from negkit.chat import StubChatClient
from negkit.harness import (
    AdapterError,
    BenchmarkReport,
    EvalItemResult,
    ReportIntegrityError,
    attribute_prompt_table,
    balanced_accuracy_attributes,
    neg_score,
    negation_prompt_table,
    recall_at_k,
    score_absence,
    score_existence,
    score_negrefcocog,
    score_segmentation,
    segmentation_metrics,
    zero_shot_classify,
)
from negkit.triplets import BBox, NegTriplet


def unit(x, y):
    v = np.array([x, y], dtype=np.float32)
    return v / np.linalg.norm(v)


class ProgrammedBundle:
    """Test double: text embeddings from a dict, image embeddings derived
    from the mean red-channel bucket of the (possibly cropped) image."""

    architecture = "programmed"
    logit_scale = 10.0

    def __init__(self, text_map, bucket_map, bucket_size=32):
        self.text_map = text_map
        self.bucket_map = bucket_map
        self.bucket_size = bucket_size

    def text_encode(self, text):
        return self.text_map[text]

    def image_encode(self, image):
        mean_red = np.asarray(image.convert("RGB"), dtype=np.float64)[:, :, 0].mean()
        return self.bucket_map[int(mean_red // self.bucket_size)]


def solid_image(path, red, size=(40, 40)):
    from PIL import Image

    Image.new("RGB", size, (red, 0, 0)).save(path)
    return str(path)


def split_image(path, red_left, red_right, size=(200, 100)):
    from PIL import Image

    img = Image.new("RGB", size, (red_left, 0, 0))
    for x in range(size[0] // 2, size[0]):
        for y in range(size[1]):
            img.putpixel((x, y), (red_right, 0, 0))
    img.save(path)
    return str(path)


class TestReport:
    def test_aggregate_is_mean_times_scale(self):
        report = BenchmarkReport("x", [EvalItemResult("a", 1.0),
                                       EvalItemResult("b", 0.0),
                                       EvalItemResult("c", 1.0)])
        assert report.aggregate == pytest.approx(200 / 3)

    def test_excluded_items_not_in_mean(self):
        report = BenchmarkReport("x", [EvalItemResult("a", 1.0),
                                       EvalItemResult("b", 0.0, excluded=True)])
        assert report.aggregate == 100.0
        assert report.excluded_count == 1

    def test_empty_report_aggregates_to_zero(self):
        assert BenchmarkReport("x", []).aggregate == 0.0

    def test_load_recomputes_and_rejects_tampering(self, tmp_path):
        report = BenchmarkReport("x", [EvalItemResult("a", 1.0), EvalItemResult("b", 0.0)])
        path = tmp_path / "r.json"
        report.save(path)
        assert BenchmarkReport.load(path).aggregate == report.aggregate

        doc = json.loads(path.read_text())
        doc["aggregate"] = 99.0
        path.write_text(json.dumps(doc))
        with pytest.raises(ReportIntegrityError):
            BenchmarkReport.load(path)


def make_triplet(image_path, text="the dog not running"):
    return NegTriplet(
        text=text, image_id="img0", image_path=image_path,
        image_width=200, image_height=100, category=1,
        patch_pos=BBox(0, 0, 100, 100), patch_neg=BBox(100, 0, 100, 100),
        orig_pos=BBox(10, 10, 50, 50), orig_neg=BBox(120, 10, 50, 50),
        ann_pos=1, ann_neg=2,
    )


class TestNegRefCOCOgScoring:
    def bundle(self, sim_pos, sim_neg):
        # bucket 0 is the left (dark) patch, bucket 4 the right
        return ProgrammedBundle(
            text_map={"the dog not running": unit(1, 0)},
            bucket_map={0: unit(sim_pos, np.sqrt(1 - sim_pos**2)),
                        4: unit(sim_neg, np.sqrt(1 - sim_neg**2))},
        )

    def test_higher_positive_similarity_scores_one(self, tmp_path):
        path = split_image(tmp_path / "a.png", red_left=10, red_right=150)
        report = score_negrefcocog([make_triplet(path)], self.bundle(0.31, 0.29))
        assert report.items[0].score == 1.0
        assert report.items[0].detail["sim_pos"] == pytest.approx(0.31, abs=1e-6)
        assert report.aggregate == 100.0

    def test_tie_scores_zero(self, tmp_path):
        path = split_image(tmp_path / "a.png", red_left=10, red_right=150)
        bundle = ProgrammedBundle(
            text_map={"the dog not running": unit(1, 0)},
            bucket_map={0: unit(0.30, np.sqrt(1 - 0.09)), 4: unit(0.30, np.sqrt(1 - 0.09))},
        )
        report = score_negrefcocog([make_triplet(path)], bundle)
        assert report.items[0].score == 0.0

    def test_lower_positive_similarity_scores_zero(self, tmp_path):
        path = split_image(tmp_path / "a.png", red_left=10, red_right=150)
        report = score_negrefcocog([make_triplet(path)], self.bundle(0.29, 0.31))
        assert report.aggregate == 0.0

    def test_unreadable_image_excluded(self, tmp_path):
        report = score_negrefcocog([make_triplet(str(tmp_path / "missing.png"))],
                                   self.bundle(0.3, 0.2))
        assert report.items[0].excluded
        assert report.aggregate == 0.0

    def test_similarity_rescaling_invariance(self, tmp_path):
        # comparison-based scoring only cares about order, not magnitude
        path = split_image(tmp_path / "a.png", red_left=10, red_right=150)
        base = self.bundle(0.8, 0.4)
        scaled = ProgrammedBundle(
            text_map={"the dog not running": unit(1, 0) * 7.0},
            bucket_map={k: v * 3.0 for k, v in base.bucket_map.items()},
        )
        a = score_negrefcocog([make_triplet(path)], base)
        b = score_negrefcocog([make_triplet(path)], scaled)
        assert a.items[0].score == b.items[0].score == 1.0


class TestExistenceScoring:
    def bundle(self):
        return ProgrammedBundle(
            text_map={"a dog": unit(1, 0), "no dog": unit(0, 1)},
            bucket_map={0: unit(0, 1), 4: unit(1, 0)},
        )

    def item(self, path, truth):
        return {"id": "i", "image_path": path, "present_caption": "a dog",
                "absent_caption": "no dog", "truth": truth}

    def test_absent_truth_higher_absent_sim(self, tmp_path):
        path = solid_image(tmp_path / "dark.png", red=5)  # bucket 0 -> absent side
        report = score_existence([self.item(path, "absent")], self.bundle())
        assert report.items[0].score == 1.0

    def test_wrong_side_scores_zero(self, tmp_path):
        path = solid_image(tmp_path / "bright.png", red=150)
        report = score_existence([self.item(path, "absent")], self.bundle())
        assert report.items[0].score == 0.0

    def test_equal_similarities_lose(self, tmp_path):
        path = solid_image(tmp_path / "dark.png", red=5)
        bundle = ProgrammedBundle(
            text_map={"a dog": unit(1, 1), "no dog": unit(1, 1)},
            bucket_map={0: unit(1, 0)},
        )
        report = score_existence([self.item(path, "absent")], bundle)
        assert report.items[0].score == 0.0
        assert report.items[0].detail["predicted"] == "tie"


class TestBalancedAccuracy:
    def images(self, tmp_path, labels_and_reds):
        out = []
        for i, (label, red) in enumerate(labels_and_reds):
            path = solid_image(tmp_path / f"i{i}.png", red=red)
            out.append({"id": f"i{i}", "image_path": path, "labels": {"Smiling": label}})
        return out

    def bundle(self):
        # bright images predict positive, dark negative
        return ProgrammedBundle(
            text_map={"smiling": unit(1, 0), "not smiling": unit(0, 1)},
            bucket_map={0: unit(0, 1), 4: unit(1, 0)},
        )

    ROWS = [{"attribute": "Smiling", "positive_prompt": "smiling",
             "negative_prompt": "not smiling"}]

    def test_tpr_one_tnr_half_gives_three_quarters(self, tmp_path):
        images = self.images(tmp_path, [(1, 150), (1, 150), (0, 5), (0, 150)])
        report = balanced_accuracy_attributes(images, self.ROWS, self.bundle())
        assert report.items[0].score == pytest.approx(0.75)
        assert report.aggregate == pytest.approx(75.0)

    def test_constant_predictor_on_balanced_attribute_is_half(self, tmp_path):
        images = self.images(tmp_path, [(1, 150), (0, 150)])  # all predicted positive
        report = balanced_accuracy_attributes(images, self.ROWS, self.bundle())
        assert report.items[0].score == pytest.approx(0.5)

    def test_single_class_attribute_excluded(self, tmp_path):
        images = self.images(tmp_path, [(1, 150), (1, 5)])
        report = balanced_accuracy_attributes(images, self.ROWS, self.bundle())
        assert report.items[0].excluded
        assert report.aggregate == 0.0

    def test_bad_label_rejected(self, tmp_path):
        images = self.images(tmp_path, [(2, 150)])
        with pytest.raises(ValueError):
            balanced_accuracy_attributes(images, self.ROWS, self.bundle())


class TestZeroShot:
    def test_separable_fixture_is_perfect(self, tmp_path):
        bundle = ProgrammedBundle(
            text_map={"a photo of a cat": unit(1, 0), "a photo of a dog": unit(0, 1)},
            bucket_map={0: unit(1, 0), 4: unit(0, 1)},
        )
        images = [
            {"id": "a", "image_path": solid_image(tmp_path / "a.png", red=5), "label": "cat"},
            {"id": "b", "image_path": solid_image(tmp_path / "b.png", red=150), "label": "dog"},
        ]
        report = zero_shot_classify(images, ["cat", "dog"], bundle)
        assert report.aggregate == 100.0

    def test_identical_prompts_tie_break_first_index(self, tmp_path):
        bundle = ProgrammedBundle(
            text_map={"a photo of a same": unit(1, 0)},
            bucket_map={0: unit(1, 0)},
        )
        images = [
            {"id": "a", "image_path": solid_image(tmp_path / "a.png", red=5), "label": 0},
            {"id": "b", "image_path": solid_image(tmp_path / "b.png", red=5), "label": 1},
        ]
        report = zero_shot_classify(images, ["same", "same"], bundle)
        # every item predicts class 0: only the class-0 item is correct
        assert report.aggregate == 50.0

    def test_needs_two_classes(self):
        with pytest.raises(ValueError):
            zero_shot_classify([], ["only"], ProgrammedBundle({}, {}))


class TestRecallAtK:
    def fixture(self, tmp_path):
        # pool of 7 images; similarity to the query drops with image index
        bucket_map = {i: unit(10 - i, 1) for i in range(7)}
        bundle = ProgrammedBundle(text_map={"q": unit(1, 0)}, bucket_map=bucket_map,
                                  bucket_size=10)
        images = [{"image_id": f"im{i}",
                   "image_path": solid_image(tmp_path / f"p{i}.png", red=i * 10 + 5)}
                  for i in range(7)]
        return bundle, images

    def test_rank_five_is_a_hit(self, tmp_path):
        bundle, images = self.fixture(tmp_path)
        report = recall_at_k([{"id": "q1", "text": "q", "image_id": "im4"}],
                             images, bundle, k=5)
        assert report.items[0].detail["rank"] == 5
        assert report.items[0].score == 1.0

    def test_rank_six_is_a_miss(self, tmp_path):
        bundle, images = self.fixture(tmp_path)
        report = recall_at_k([{"id": "q1", "text": "q", "image_id": "im5"}],
                             images, bundle, k=5)
        assert report.items[0].detail["rank"] == 6
        assert report.items[0].score == 0.0

    def test_monotone_in_k(self, tmp_path):
        bundle, images = self.fixture(tmp_path)
        queries = [{"id": f"q{i}", "text": "q", "image_id": f"im{i}"} for i in range(7)]
        hits = {}
        for k in (1, 2, 3, 4, 5, 6, 7):
            report = recall_at_k(queries, images, bundle, k=k)
            hits[k] = {i.id for i in report.items if i.score == 1.0}
        for k in range(1, 7):
            assert hits[k] <= hits[k + 1]

    def test_duplicate_pool_ids_hard_error(self, tmp_path):
        bundle, images = self.fixture(tmp_path)
        with pytest.raises(ValueError):
            recall_at_k([], images + [images[0]], bundle)

    def test_missing_ground_truth_hard_error(self, tmp_path):
        bundle, images = self.fixture(tmp_path)
        with pytest.raises(ValueError):
            recall_at_k([{"id": "q", "text": "q", "image_id": "nope"}], images, bundle)

    def test_tie_breaks_by_image_id(self, tmp_path):
        bundle = ProgrammedBundle(text_map={"q": unit(1, 0)},
                                  bucket_map={0: unit(1, 0)}, bucket_size=256)
        images = [{"image_id": "b", "image_path": solid_image(tmp_path / "x.png", red=5)},
                  {"image_id": "a", "image_path": solid_image(tmp_path / "y.png", red=5)}]
        report = recall_at_k([{"id": "q", "text": "q", "image_id": "a"}],
                             images, bundle, k=1)
        assert report.items[0].detail["rank"] == 1  # "a" sorts before "b"


class TestNegScore:
    def generator(self, tmp_path):
        def generate(prompt, seed):
            return str(tmp_path / f"{abs(hash((prompt, seed)))}.png")

        return generate

    def test_yes_no_scores_one(self, tmp_path):
        mllm = StubChatClient([
            {"contains": "Is this a man?", "response": "Yes."},
            {"contains": "Is the man wearing a hat?", "response": "No, he is not."},
        ])
        rows = [{"prompt": "a man not wearing a hat",
                 "question_subject": "Is this a man?",
                 "question_negation": "Is the man wearing a hat?"}]
        report = neg_score(rows, self.generator(tmp_path), mllm, seeds=(0, 1))
        assert report.aggregate == 1.0
        assert report.scale == 1.0
        assert len(report.items) == 2

    def test_negation_violated_scores_zero(self, tmp_path):
        mllm = StubChatClient([
            {"contains": "Is this a man?", "response": "yes"},
            {"contains": "wearing a hat", "response": "yes"},
        ])
        rows = [{"prompt": "a man not wearing a hat",
                 "question_subject": "Is this a man?",
                 "question_negation": "Is the man wearing a hat?"}]
        report = neg_score(rows, self.generator(tmp_path), mllm, seeds=(0,))
        assert report.aggregate == 0.0

    def test_subject_missing_scores_zero(self, tmp_path):
        mllm = StubChatClient([
            {"contains": "Is this a man?", "response": "no"},
            {"contains": "wearing a hat", "response": "no"},
        ])
        rows = [{"prompt": "a man not wearing a hat",
                 "question_subject": "Is this a man?",
                 "question_negation": "Is the man wearing a hat?"}]
        assert neg_score(rows, self.generator(tmp_path), mllm, seeds=(0,)).aggregate == 0.0

    def test_ambiguous_flagged_and_zero(self, tmp_path):
        mllm = StubChatClient([
            {"contains": "Is this a man?", "response": "hard to say"},
            {"contains": "wearing a hat", "response": "no"},
        ])
        rows = [{"prompt": "a man not wearing a hat",
                 "question_subject": "Is this a man?",
                 "question_negation": "Is the man wearing a hat?"}]
        report = neg_score(rows, self.generator(tmp_path), mllm, seeds=(0,))
        assert report.items[0].score == 0.0
        assert report.items[0].detail["flagged"] is True

    def test_mixed_prompts_mean(self, tmp_path):
        mllm = StubChatClient([
            {"contains": "Is this a dog?", "response": "yes"},
            {"contains": "Is the dog running?", "response": "no"},
            {"contains": "Is this a cat?", "response": "yes"},
            {"contains": "Is the cat white?", "response": "yes"},
        ])
        rows = [
            {"prompt": "a dog not running", "question_subject": "Is this a dog?",
             "question_negation": "Is the dog running?"},
            {"prompt": "a not white cat", "question_subject": "Is this a cat?",
             "question_negation": "Is the cat white?"},
        ]
        report = neg_score(rows, self.generator(tmp_path), mllm, seeds=(0, 1, 2))
        assert report.aggregate == pytest.approx(0.5)
        assert len(report.items) == 6

    def test_generator_failure_excluded(self, tmp_path):
        def broken(prompt, seed):
            raise AdapterError("generator down")

        mllm = StubChatClient([], default="yes")
        rows = [{"prompt": "p", "question_subject": "a?", "question_negation": "b?"}]
        report = neg_score(rows, broken, mllm, seeds=(0,))
        assert report.items[0].excluded


class TestAbsenceCheck:
    ROWS = [{"prompt": "a realistic photo of a scene without a dog", "object": "dog"}]

    def test_not_detected_scores_one(self, tmp_path):
        report = score_absence(self.ROWS, lambda p, s: "img.png", lambda i, o: False)
        assert report.aggregate == 100.0

    def test_detected_scores_zero(self):
        report = score_absence(self.ROWS, lambda p, s: "img.png", lambda i, o: True)
        assert report.aggregate == 0.0

    def test_adapter_failure_excluded(self):
        def broken(image_path, obj):
            raise AdapterError("detector down")

        report = score_absence(self.ROWS, lambda p, s: "img.png", broken)
        assert report.items[0].excluded


class TestSegmentationMetrics:
    def test_exact_match_is_one(self):
        mask = np.zeros(50)
        mask[:20] = 1
        miou, iou_bin = segmentation_metrics([mask.astype(float)], [mask], threshold=0.5)
        assert miou == 1.0 and iou_bin == 1.0

    def test_all_background_prediction_is_zero(self):
        mask = np.zeros(50)
        mask[:20] = 1
        miou, iou_bin = segmentation_metrics([np.zeros(50)], [mask], threshold=0.5)
        assert miou == 0.0 and iou_bin == 0.0

    def test_hand_built_pooled_fixture(self):
        # item 1: pred 0..29, gt 10..39 -> inter 20, union 40, IoU 0.5
        # item 2: pred 0..19, gt 10..39 -> inter 10, union 40, IoU 0.25
        # pooled: 30/80 = 0.375; mean: (0.5 + 0.25)/2 = 0.375
        def cells(lo, hi, n=100):
            arr = np.zeros(n)
            arr[lo:hi] = 1.0
            return arr

        preds = [cells(0, 30), cells(0, 20)]
        masks = [cells(10, 40), cells(10, 40)]
        miou, iou_bin = segmentation_metrics(preds, masks, threshold=0.5)
        assert miou == pytest.approx(0.375, abs=1e-12)
        assert iou_bin == pytest.approx(0.375, abs=1e-12)

    def test_empty_vs_empty_item_is_one(self):
        miou, iou_bin = segmentation_metrics(
            [np.zeros(10), np.ones(10)], [np.zeros(10), np.ones(10)], threshold=0.5)
        assert miou == 1.0 and iou_bin == 1.0

    def test_threshold_strictly_greater(self):
        pred = np.full(4, 0.3)
        mask = np.ones(4)
        miou, _ = segmentation_metrics([pred], [mask], threshold=0.3)
        assert miou == 0.0  # 0.3 is not > 0.3

    def test_shape_mismatch_hard_error(self):
        with pytest.raises(ValueError):
            segmentation_metrics([np.zeros(4)], [np.zeros(5)], threshold=0.5)

    def test_file_protocol(self, tmp_path):
        def cells(lo, hi, n=100):
            arr = np.zeros(n)
            arr[lo:hi] = 1.0
            return arr

        items = []
        for i, (pred, mask) in enumerate([(cells(0, 30), cells(10, 40)),
                                          (cells(0, 20), cells(10, 40))]):
            pred_path, mask_path = tmp_path / f"p{i}.npy", tmp_path / f"m{i}.npy"
            np.save(pred_path, pred)
            np.save(mask_path, mask)
            items.append({"id": f"s{i}", "pred": str(pred_path), "mask": str(mask_path)})
        report = score_segmentation(items, threshold=0.5)
        assert report.aggregate == pytest.approx(0.375)
        assert report.config["iou_bin"] == pytest.approx(0.375)


class TestAssets:
    def test_attribute_table_shape(self):
        rows = attribute_prompt_table()
        assert len(rows) == 40
        assert all(r["positive_prompt"] != r["negative_prompt"] for r in rows)

    def test_attribute_rows_carry_negation_or_antonym(self):
        from negkit.negation import contains_negation

        for row in attribute_prompt_table():
            has_term = (contains_negation(row["positive_prompt"])[0]
                        or contains_negation(row["negative_prompt"])[0])
            assert has_term, row["attribute"]

    def test_inverted_polarity_row(self):
        rows = {r["attribute"]: r for r in attribute_prompt_table()}
        assert "no beard" in rows["No Beard"]["positive_prompt"]

    def test_negation_prompt_table_shape(self):
        from negkit.negation import contains_negation

        rows = negation_prompt_table()
        assert len(rows) == 107
        for row in rows:
            assert contains_negation(row["prompt"])[0], row["prompt"]
            assert row["question_subject"].endswith("?")
            assert row["question_negation"].endswith("?")
