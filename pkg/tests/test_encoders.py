"""Bundle encode/normalize/similarity semantics, checkpoints, tower swap."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from negkit.encoders import (
    ArchitectureMismatch,
    EncoderError,
    build_toy_bundle,
    crop_and_encode,
    hashed_bow_features,
    load_bundle,
    normalize,
    save_checkpoint,
    similarity,
    swap_text_tower,
)
from negkit.triplets import BBox


def make_image(width=32, height=32, seed=0):
    from PIL import Image

    rng = np.random.default_rng(seed)
    return Image.fromarray(rng.integers(0, 255, (height, width, 3), dtype=np.uint8))


class TestNormalizeSimilarity:
    def test_identical_unit_vectors(self):
        v = normalize(np.array([1.0, 2.0, 2.0]))
        assert similarity(v, v) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(0.0)

    def test_opposite(self):
        v = np.array([0.3, -0.4])
        assert similarity(v, -v) == pytest.approx(-1.0)

    def test_dim_mismatch_is_hard_error(self):
        with pytest.raises(EncoderError):
            similarity(np.ones(3), np.ones(4))

    def test_zero_vector_rejected(self):
        with pytest.raises(EncoderError):
            normalize(np.zeros(4))

    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=8))
    def test_normalize_idempotent(self, values):
        v = np.array(values, dtype=np.float32)
        if np.linalg.norm(v) < 1e-3:
            return
        once = normalize(v)
        assert np.allclose(normalize(once), once, atol=1e-6)
        assert np.linalg.norm(once) == pytest.approx(1.0, abs=1e-5)

    @given(st.floats(0.1, 100.0))
    def test_similarity_scale_invariant(self, scale):
        a = np.array([1.0, 2.0, -1.0])
        b = np.array([0.5, -1.0, 2.0])
        assert similarity(a * scale, b) == pytest.approx(similarity(a, b), abs=1e-6)


class TestHashedFeatures:
    def test_stable_across_calls(self):
        a = hashed_bow_features(["a dog without a ball"], 64)
        b = hashed_bow_features(["a dog without a ball"], 64)
        assert np.array_equal(a, b)

    def test_unit_rows(self):
        feats = hashed_bow_features(["a dog", "", "no"], 64)
        assert np.allclose(np.linalg.norm(feats, axis=1), 1.0, atol=1e-6)

    def test_distinct_texts_distinct_features(self):
        feats = hashed_bow_features(["a dog", "a cat"], 256)
        assert not np.array_equal(feats[0], feats[1])


class TestToyBundle:
    def test_embeddings_are_unit_norm(self):
        bundle = build_toy_bundle(seed=1)
        t = bundle.text_encode("a dog without a ball")
        v = bundle.image_encode(make_image())
        assert np.linalg.norm(t) == pytest.approx(1.0, abs=1e-5)
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-5)
        assert t.shape == v.shape == (bundle.embed_dim,)

    def test_same_seed_same_bundle(self):
        a, b = build_toy_bundle(seed=5), build_toy_bundle(seed=5)
        assert a.text_tower_digest() == b.text_tower_digest()
        assert a.vision_tower_digest() == b.vision_tower_digest()

    def test_deterministic_encoding(self):
        bundle = build_toy_bundle(seed=2)
        img = make_image(seed=3)
        assert np.array_equal(bundle.image_encode(img), bundle.image_encode(img))

    def test_rejects_nonpositive_scale(self):
        with pytest.raises(EncoderError):
            build_toy_bundle(logit_scale=0.0)


class TestCropAndEncode:
    def test_full_image_crop_is_identity(self):
        bundle = build_toy_bundle(seed=0)
        img = make_image(40, 30)
        whole = bundle.image_encode(img)
        cropped = crop_and_encode(img, BBox(0, 0, 40, 30), bundle)
        assert np.array_equal(whole, cropped)

    def test_same_bbox_twice_identical(self):
        bundle = build_toy_bundle(seed=0)
        img = make_image(64, 64, seed=9)
        bbox = BBox(5, 7, 20, 18)
        assert np.array_equal(crop_and_encode(img, bbox, bundle),
                              crop_and_encode(img, bbox, bundle))

    def test_degenerate_bbox_rejected(self):
        bundle = build_toy_bundle(seed=0)
        with pytest.raises(EncoderError):
            crop_and_encode(make_image(), BBox(0, 0, 1, 1), bundle)

    def test_out_of_image_bbox_rejected(self):
        bundle = build_toy_bundle(seed=0)
        with pytest.raises(EncoderError):
            crop_and_encode(make_image(32, 32), BBox(20, 20, 20, 20), bundle)

    def test_different_crops_differ(self):
        bundle = build_toy_bundle(seed=0)
        img = make_image(64, 64, seed=4)
        a = crop_and_encode(img, BBox(0, 0, 20, 20), bundle)
        b = crop_and_encode(img, BBox(40, 40, 20, 20), bundle)
        assert not np.array_equal(a, b)


class TestCheckpoints:
    def test_full_roundtrip(self, tmp_path):
        bundle = build_toy_bundle(seed=11)
        save_checkpoint(bundle, tmp_path / "ckpt", component="full")
        loaded = load_bundle(tmp_path / "ckpt")
        assert loaded.architecture == bundle.architecture
        assert loaded.logit_scale == bundle.logit_scale
        assert loaded.text_tower_digest() == bundle.text_tower_digest()
        assert loaded.vision_tower_digest() == bundle.vision_tower_digest()
        text = "a cat with no hat"
        assert np.array_equal(loaded.text_encode(text), bundle.text_encode(text))

    def test_text_only_payload_excludes_vision(self, tmp_path):
        import torch

        bundle = build_toy_bundle(seed=11)
        save_checkpoint(bundle, tmp_path / "t", component="text_tower_only")
        payload = torch.load(tmp_path / "t" / "weights.pt", weights_only=True)
        assert set(payload) == {"text_tower"}

    def test_load_bundle_rejects_text_only(self, tmp_path):
        bundle = build_toy_bundle(seed=11)
        save_checkpoint(bundle, tmp_path / "t", component="text_tower_only")
        with pytest.raises(EncoderError):
            load_bundle(tmp_path / "t")

    def test_missing_manifest_error(self, tmp_path):
        with pytest.raises(EncoderError, match="bundle-not-found"):
            load_bundle(tmp_path / "nope")


class TestSwap:
    def test_vision_space_preserved_exactly(self, tmp_path):
        base = build_toy_bundle(seed=0)
        donor = build_toy_bundle(seed=99)  # same arch, different weights
        save_checkpoint(donor, tmp_path / "donor", component="text_tower_only")
        swapped = swap_text_tower(base, tmp_path / "donor")

        img = make_image(48, 48, seed=1)
        assert np.array_equal(base.image_encode(img), swapped.image_encode(img))
        assert swapped.vision_tower_digest() == base.vision_tower_digest()
        assert swapped.logit_scale == base.logit_scale
        assert swapped.preprocess == base.preprocess

        text = "a street with no lights"
        assert not np.array_equal(base.text_encode(text), swapped.text_encode(text))
        assert np.array_equal(swapped.text_encode(text), donor.text_encode(text))

    def test_identity_swap_keeps_text_embeddings(self, tmp_path):
        base = build_toy_bundle(seed=0)
        save_checkpoint(base, tmp_path / "self", component="text_tower_only")
        swapped = swap_text_tower(base, tmp_path / "self")
        text = "a dog not running"
        assert np.array_equal(base.text_encode(text), swapped.text_encode(text))

    def test_architecture_mismatch_names_both_tags(self, tmp_path):
        base = build_toy_bundle(embed_dim=32, seed=0)
        other = build_toy_bundle(embed_dim=64, seed=0)
        save_checkpoint(other, tmp_path / "other", component="text_tower_only")
        with pytest.raises(ArchitectureMismatch) as err:
            swap_text_tower(base, tmp_path / "other")
        assert base.architecture in str(err.value)
        assert other.architecture in str(err.value)

    def test_swap_rejects_full_checkpoint(self, tmp_path):
        base = build_toy_bundle(seed=0)
        save_checkpoint(base, tmp_path / "full", component="full")
        with pytest.raises(EncoderError):
            swap_text_tower(base, tmp_path / "full")
