"""Session protocol: base + N-way K-shot incremental sessions.

A task stream carves a labeled dataset into a base session with all
available samples for its classes, followed by incremental sessions with
disjoint label spaces and exactly K training shots per class. Test sets are
cumulative: after session t the model is evaluated on every class seen in
sessions 0..t.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from fscil_tricks.errors import (
    DataError,
    InsufficientClassesError,
    InsufficientShotsError,
)
from fscil_tricks.seeding import numpy_rng

# Sentinel for the base session: use every available training sample.
ALL_SHOTS = None


@dataclass(frozen=True)
class LabeledSample:
    """One image with its global class label and a unique sample id."""

    image: np.ndarray  # H x W x C, float in [0, 1]
    label: int
    sample_id: str


@dataclass(frozen=True)
class SessionSpec:
    """Label space and shot budget of one session."""

    session_index: int
    class_ids: tuple[int, ...]
    shots_per_class: int | None  # ALL_SHOTS for the base session

    @property
    def ways(self) -> int:
        return len(self.class_ids)


@dataclass(frozen=True)
class Dataset:
    """A labeled sample collection with a train/test split."""

    train: tuple[LabeledSample, ...]
    test: tuple[LabeledSample, ...]

    @property
    def class_ids(self) -> tuple[int, ...]:
        return tuple(sorted({s.label for s in self.train}))

    def train_by_class(self) -> dict[int, list[LabeledSample]]:
        out: dict[int, list[LabeledSample]] = {}
        for s in self.train:
            out.setdefault(s.label, []).append(s)
        return out

    def test_by_class(self) -> dict[int, list[LabeledSample]]:
        out: dict[int, list[LabeledSample]] = {}
        for s in self.test:
            out.setdefault(s.label, []).append(s)
        return out


@dataclass(frozen=True)
class TaskStream:
    """Realized session splits.

    ``train_sets[t]`` holds the training samples of session t only;
    ``test_sets[t]`` is cumulative over sessions 0..t.
    """

    sessions: tuple[SessionSpec, ...]
    train_sets: tuple[tuple[LabeledSample, ...], ...]
    test_sets: tuple[tuple[LabeledSample, ...], ...]

    def __post_init__(self):
        seen: set[int] = set()
        for spec in self.sessions:
            overlap = seen.intersection(spec.class_ids)
            if overlap:
                raise DataError(f"session label spaces overlap on classes {sorted(overlap)}")
            seen.update(spec.class_ids)
        for t, spec in enumerate(self.sessions):
            train_labels = {s.label for s in self.train_sets[t]}
            if not train_labels.issubset(spec.class_ids):
                raise DataError(f"session {t} train labels outside its class set")
            allowed = set().union(*(s.class_ids for s in self.sessions[: t + 1]))
            test_labels = {s.label for s in self.test_sets[t]}
            if not test_labels.issubset(allowed):
                raise DataError(f"session {t} test set contains unseen classes")

    @property
    def n_sessions(self) -> int:
        return len(self.sessions)

    def seen_class_ids(self, t: int) -> tuple[int, ...]:
        return tuple(sorted(set().union(*(s.class_ids for s in self.sessions[: t + 1]))))

    @property
    def base_class_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.sessions[0].class_ids))


def build_task_stream(
    dataset: Dataset,
    base_classes: int,
    ways: int,
    shots: int,
    n_sessions: int,
    seed: int = 0,
    shuffle_classes: bool = False,
) -> TaskStream:
    """Split a dataset into a base session plus incremental sessions.

    Classes are sorted by label id and assigned contiguously (the base
    session takes the first block); ``shuffle_classes`` permutes the class
    order under the seed first. Incremental shots are drawn uniformly
    without replacement, deterministically under the seed. The result is a
    pure function of (dataset contents, parameters, seed): candidate
    samples are ordered by sample_id before drawing.
    """
    if base_classes < 1:
        raise DataError("base_classes must be >= 1")
    if n_sessions > 0 and (ways < 1 or shots < 1):
        raise DataError("ways and shots must be >= 1 for incremental sessions")

    all_classes = list(dataset.class_ids)
    needed = base_classes + ways * n_sessions
    if needed > len(all_classes):
        raise InsufficientClassesError(
            f"need {needed} classes ({base_classes} base + {ways}x{n_sessions} "
            f"incremental) but dataset has {len(all_classes)}"
        )
    if shuffle_classes:
        order = numpy_rng(seed, "class-order").permutation(len(all_classes))
        all_classes = [all_classes[i] for i in order]

    specs = [
        SessionSpec(0, tuple(all_classes[:base_classes]), ALL_SHOTS)
    ]
    for t in range(1, n_sessions + 1):
        lo = base_classes + (t - 1) * ways
        specs.append(SessionSpec(t, tuple(all_classes[lo : lo + ways]), shots))

    train_by_class = dataset.train_by_class()
    test_by_class = dataset.test_by_class()

    train_sets: list[tuple[LabeledSample, ...]] = []
    for spec in specs:
        session_train: list[LabeledSample] = []
        for cid in spec.class_ids:
            candidates = sorted(train_by_class.get(cid, []), key=lambda s: s.sample_id)
            if spec.shots_per_class is ALL_SHOTS:
                session_train.extend(candidates)
                continue
            if len(candidates) < spec.shots_per_class:
                raise InsufficientShotsError(cid, len(candidates), spec.shots_per_class)
            rng = numpy_rng(seed, "shots", spec.session_index, cid)
            picked = rng.choice(len(candidates), size=spec.shots_per_class, replace=False)
            session_train.extend(candidates[i] for i in sorted(picked))
        train_sets.append(tuple(session_train))

    test_sets: list[tuple[LabeledSample, ...]] = []
    cumulative: list[LabeledSample] = []
    for spec in specs:
        for cid in spec.class_ids:
            cumulative.extend(sorted(test_by_class.get(cid, []), key=lambda s: s.sample_id))
        test_sets.append(tuple(cumulative))

    return TaskStream(tuple(specs), tuple(train_sets), tuple(test_sets))


def cumulative_test_set(stream: TaskStream, t: int) -> tuple[LabeledSample, ...]:
    """Test samples of every class encountered in sessions 0..t."""
    if not 0 <= t < stream.n_sessions:
        raise DataError(f"session index {t} out of range [0, {stream.n_sessions})")
    return stream.test_sets[t]


# -- split export / replay ----------------------------------------------


def export_split(stream: TaskStream, path: str | Path) -> None:
    """Write the realized split (per-session class ids and train sample ids)."""
    payload = {
        "sessions": [
            {
                "session_index": spec.session_index,
                "class_ids": list(spec.class_ids),
                "shots_per_class": spec.shots_per_class,
                "train_sample_ids": [s.sample_id for s in stream.train_sets[t]],
            }
            for t, spec in enumerate(stream.sessions)
        ]
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def replay_split(dataset: Dataset, path: str | Path) -> TaskStream:
    """Rebuild the exact TaskStream recorded by :func:`export_split`."""
    payload = json.loads(Path(path).read_text())
    by_id = {s.sample_id: s for s in dataset.train}
    test_by_class = dataset.test_by_class()

    specs: list[SessionSpec] = []
    train_sets: list[tuple[LabeledSample, ...]] = []
    test_sets: list[tuple[LabeledSample, ...]] = []
    cumulative: list[LabeledSample] = []
    for entry in payload["sessions"]:
        spec = SessionSpec(
            entry["session_index"], tuple(entry["class_ids"]), entry["shots_per_class"]
        )
        specs.append(spec)
        try:
            train_sets.append(tuple(by_id[sid] for sid in entry["train_sample_ids"]))
        except KeyError as exc:
            raise DataError(f"split references unknown sample id {exc.args[0]!r}") from exc
        for cid in spec.class_ids:
            cumulative.extend(sorted(test_by_class.get(cid, []), key=lambda s: s.sample_id))
        test_sets.append(tuple(cumulative))
    return TaskStream(tuple(specs), tuple(train_sets), tuple(test_sets))
