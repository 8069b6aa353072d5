"""Dataset ingestion from image folders and line-delimited manifests."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from fscil_tricks.errors import DataError
from fscil_tricks.protocol import Dataset, LabeledSample

_SPLITS = ("train", "test")


def _read_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return arr


def load_manifest(manifest_path: str | Path) -> Dataset:
    """Load samples listed in a JSONL manifest.

    Each line is an object with keys ``path`` (relative to the manifest
    file or absolute), ``label`` (int), and ``split`` (train|test).
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DataError(f"manifest not found: {manifest_path}")
    root = manifest_path.parent
    buckets: dict[str, list[LabeledSample]] = {s: [] for s in _SPLITS}
    for lineno, line in enumerate(manifest_path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            path, label, split = rec["path"], int(rec["label"]), rec["split"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{manifest_path}:{lineno}: bad manifest record ({exc})") from exc
        if split not in _SPLITS:
            raise DataError(f"{manifest_path}:{lineno}: split must be train|test, got {split!r}")
        img_path = Path(path)
        if not img_path.is_absolute():
            img_path = root / img_path
        buckets[split].append(LabeledSample(_read_image(img_path), label, str(path)))
    if not buckets["train"]:
        raise DataError(f"manifest {manifest_path} lists no training samples")
    return Dataset(tuple(buckets["train"]), tuple(buckets["test"]))


def load_image_folder(root: str | Path) -> Dataset:
    """Load a directory-per-class tree: ``root/{train,test}/<class>/*.png``.

    Class directory names that parse as integers become the labels;
    otherwise labels are assigned by sorted directory name.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset folder not found: {root}")
    class_dirs = sorted(
        {
            p.name
            for split in _SPLITS
            if (root / split).is_dir()
            for p in (root / split).iterdir()
            if p.is_dir()
        }
    )
    if not class_dirs:
        raise DataError(f"{root} has no train/<class> directories")
    if all(name.lstrip("-").isdigit() for name in class_dirs):
        label_of = {name: int(name) for name in class_dirs}
    else:
        label_of = {name: i for i, name in enumerate(class_dirs)}

    buckets: dict[str, list[LabeledSample]] = {s: [] for s in _SPLITS}
    for split in _SPLITS:
        split_dir = root / split
        if not split_dir.is_dir():
            continue
        for class_dir in sorted(p for p in split_dir.iterdir() if p.is_dir()):
            for img_path in sorted(class_dir.glob("*")):
                if img_path.is_dir():
                    continue
                sample_id = str(img_path.relative_to(root))
                buckets[split].append(
                    LabeledSample(_read_image(img_path), label_of[class_dir.name], sample_id)
                )
    if not buckets["train"]:
        raise DataError(f"{root}/train contains no images")
    return Dataset(tuple(buckets["train"]), tuple(buckets["test"]))
