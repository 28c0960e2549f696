"""Tests for the procedural corpus generators."""

import numpy as np
import pytest

import egmae.synthetic as syn
from egmae.data import load_manifest, load_sample
from egmae.errors import ParameterError
from egmae.rng import substream


def _image_bytes(root):
    out = {}
    for path in sorted(root.rglob("*.pgm")):
        out[path.relative_to(root).as_posix()] = path.read_bytes()
    return out


class TestGenerators:
    def test_noise_image_range_and_shape(self):
        img = syn.noise_image(substream(0, "t"), 16)
        assert img.shape == (16, 16, 1)
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_stripe_image_two_levels(self):
        img = syn.stripe_image(substream(1, "t"), 32)
        levels = np.unique(img)
        assert len(levels) == 2
        assert levels[0] <= 0.40 and levels[1] >= 0.60

    def test_stripe_image_period_four(self):
        img = syn.stripe_image(substream(2, "t"), 32)[..., 0]
        # bands repeat every 4 px along one axis and are constant along the other
        assert np.array_equal(img, np.roll(img, 4, axis=0))
        assert np.array_equal(img, np.roll(img, 4, axis=1))
        constant_rows = np.all(img == img[:, :1])
        constant_cols = np.all(img == img[:1, :])
        assert constant_rows or constant_cols

    def test_checkerboard_alternates(self):
        img = syn.checkerboard_image(substream(3, "t"), 16)[..., 0]
        assert len(np.unique(img)) == 2
        # adjacent cells differ; cell size 2 means a 2 px roll flips the board
        rolled = np.roll(img, 2, axis=0)
        assert not np.array_equal(img, rolled)
        assert np.array_equal(img, np.roll(img, 4, axis=0))

    def test_generators_deterministic(self):
        for maker in (syn.noise_image, syn.stripe_image, syn.checkerboard_image):
            a = maker(substream(7, "x"), 16)
            b = maker(substream(7, "x"), 16)
            np.testing.assert_array_equal(a, b)


class TestTextureCorpus:
    def test_manifest_and_files(self, tmp_path):
        manifest = load_manifest(syn.write_texture_corpus(tmp_path, count=9, size=16, seed=0))
        assert len(manifest.records) == 9
        assert all(r.split == "train" for r in manifest.records)
        # families cycle, three images each
        names = [manifest.class_names[r.label] for r in manifest.records]
        assert names == list(syn.TEXTURE_FAMILIES * 3)
        for rec in manifest.records:
            sample = load_sample(manifest, rec)
            assert sample.pixels.shape == (16, 16, 1)

    def test_corpus_deterministic(self, tmp_path):
        p1 = syn.write_texture_corpus(tmp_path / "a", count=6, size=16, seed=3)
        p2 = syn.write_texture_corpus(tmp_path / "b", count=6, size=16, seed=3)
        assert p1.read_bytes() == p2.read_bytes()
        assert _image_bytes(tmp_path / "a") == _image_bytes(tmp_path / "b")

    def test_seed_changes_content(self, tmp_path):
        syn.write_texture_corpus(tmp_path / "a", count=6, size=16, seed=3)
        syn.write_texture_corpus(tmp_path / "b", count=6, size=16, seed=4)
        assert _image_bytes(tmp_path / "a") != _image_bytes(tmp_path / "b")

    def test_count_validation(self, tmp_path):
        with pytest.raises(ParameterError):
            syn.write_texture_corpus(tmp_path, count=0)


class TestTwoClassSet:
    def test_splits_and_balance(self, tmp_path):
        manifest = load_manifest(
            syn.write_two_class_set(tmp_path, train_count=8, test_count=4, size=16, seed=0)
        )
        assert manifest.class_names == ["checkerboard", "stripes"]
        train = [r for r in manifest.records if r.split == "train"]
        test = [r for r in manifest.records if r.split == "test"]
        assert len(train) == 8 and len(test) == 4
        for group in (train, test):
            labels = [r.label for r in group]
            assert labels.count(0) == labels.count(1)

    def test_noise_breaks_two_level_structure(self, tmp_path):
        manifest = load_manifest(
            syn.write_two_class_set(tmp_path, train_count=2, test_count=2, size=16, seed=1)
        )
        sample = load_sample(manifest, manifest.records[0])
        # clean textures have 2 gray levels; additive noise spreads them out
        assert len(np.unique(sample.pixels)) > 2
        assert sample.pixels.min() >= 0.0 and sample.pixels.max() <= 1.0

    def test_deterministic(self, tmp_path):
        syn.write_two_class_set(tmp_path / "a", train_count=4, test_count=2, size=16, seed=5)
        syn.write_two_class_set(tmp_path / "b", train_count=4, test_count=2, size=16, seed=5)
        assert _image_bytes(tmp_path / "a") == _image_bytes(tmp_path / "b")

    def test_count_validation(self, tmp_path):
        with pytest.raises(ParameterError):
            syn.write_two_class_set(tmp_path, train_count=1, test_count=2)
