import json

import numpy as np
import pytest
from PIL import Image

from fscil_tricks.data import load_image_folder, load_manifest
from fscil_tricks.errors import DataError
from fscil_tricks.toydata import make_toy_dataset


class TestToyDataset:
    def test_deterministic_given_seed(self):
        a = make_toy_dataset(n_classes=4, train_per_class=3, test_per_class=2, seed=5)
        b = make_toy_dataset(n_classes=4, train_per_class=3, test_per_class=2, seed=5)
        for x, y in zip(a.train, b.train):
            assert x.sample_id == y.sample_id
            assert np.array_equal(x.image, y.image)
        c = make_toy_dataset(n_classes=4, train_per_class=3, test_per_class=2, seed=6)
        assert not np.array_equal(a.train[0].image, c.train[0].image)

    def test_shapes_and_ranges(self):
        ds = make_toy_dataset(n_classes=10, train_per_class=2, test_per_class=1, image_size=16)
        assert len(ds.train) == 20 and len(ds.test) == 10
        for s in ds.train:
            assert s.image.shape == (16, 16, 3)
            assert s.image.dtype == np.float32
            assert s.image.min() >= 0.0 and s.image.max() <= 1.0

    def test_every_pattern_changes_under_180_rotation(self):
        ds = make_toy_dataset(n_classes=10, train_per_class=1, test_per_class=0,
                              image_size=32, noise=0.0)
        for s in ds.train:
            rotated = np.rot90(s.image, 2, axes=(0, 1))
            assert np.abs(rotated - s.image).max() > 0.1, f"class {s.label} is 180-symmetric"

    def test_too_many_classes_errors(self):
        with pytest.raises(DataError):
            make_toy_dataset(n_classes=11)


def _write_png(path, rng):
    arr = (rng.uniform(size=(8, 8, 3)) * 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


class TestFolderIngestion:
    def test_directory_per_class_tree(self, tmp_path):
        rng = np.random.default_rng(0)
        for split, count in (("train", 3), ("test", 2)):
            for cls in ("0", "1"):
                d = tmp_path / split / cls
                d.mkdir(parents=True)
                for i in range(count):
                    _write_png(d / f"img{i}.png", rng)
        ds = load_image_folder(tmp_path)
        assert len(ds.train) == 6 and len(ds.test) == 4
        assert ds.class_ids == (0, 1)
        assert ds.train[0].image.shape == (8, 8, 3)
        assert 0.0 <= ds.train[0].image.min() <= ds.train[0].image.max() <= 1.0

    def test_named_class_dirs_get_enumerated_labels(self, tmp_path):
        rng = np.random.default_rng(1)
        for cls in ("cat", "dog"):
            d = tmp_path / "train" / cls
            d.mkdir(parents=True)
            _write_png(d / "a.png", rng)
        ds = load_image_folder(tmp_path)
        assert ds.class_ids == (0, 1)

    def test_missing_tree_errors(self, tmp_path):
        with pytest.raises(DataError):
            load_image_folder(tmp_path / "nope")
        (tmp_path / "train").mkdir()
        with pytest.raises(DataError):
            load_image_folder(tmp_path)


class TestManifestIngestion:
    def test_manifest_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        records = []
        for i in range(4):
            name = f"img{i}.png"
            _write_png(tmp_path / name, rng)
            records.append(
                {"path": name, "label": i % 2, "split": "train" if i < 3 else "test"}
            )
        manifest = tmp_path / "manifest.jsonl"
        manifest.write_text("\n".join(json.dumps(r) for r in records) + "\n")
        ds = load_manifest(manifest)
        assert len(ds.train) == 3 and len(ds.test) == 1
        assert {s.label for s in ds.train} == {0, 1}

    def test_bad_records_report_line_numbers(self, tmp_path):
        manifest = tmp_path / "m.jsonl"
        manifest.write_text('{"path": "x.png", "label": 0}\n')
        with pytest.raises(DataError) as err:
            load_manifest(manifest)
        assert ":1:" in str(err.value)

        manifest.write_text('{"path": "x.png", "label": 0, "split": "vali"}\n')
        with pytest.raises(DataError):
            load_manifest(manifest)

    def test_missing_manifest_errors(self, tmp_path):
        with pytest.raises(DataError):
            load_manifest(tmp_path / "none.jsonl")
