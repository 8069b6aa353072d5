"""Accuracy reporting and embedding-geometry diagnostics.

Distances are cosine-based: 1 - cos(u, v), so values live in [0, 2].
Class separation compares the average same-class distance to the average
distance over all pairs (self-pairs included in both, matching the
normalization by n_c^2 and n_c * n_d).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from fscil_tricks.errors import DataError, UndefinedSeparationError
from fscil_tricks.geometry import PrototypeClassifier, classify_batch
from fscil_tricks.protocol import LabeledSample

CDF_GRID = np.linspace(0.0, 2.0, 201)


def _unit_rows(mat: np.ndarray, what: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DataError(f"zero vector in {what}")
    return mat / norms


def inter_class_distance(w_i: np.ndarray, w_j: np.ndarray) -> float:
    """1 - cosine similarity between two class prototypes."""
    pair = _unit_rows(np.stack([w_i, w_j]), "prototypes")
    return float(1.0 - pair[0] @ pair[1])


def intra_class_distance(samples: np.ndarray, w_k: np.ndarray) -> float:
    """Mean 1 - cosine from a class prototype to that class's embeddings."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise DataError("intra-class distance needs a non-empty sample matrix")
    z = _unit_rows(samples, "embeddings")
    w = _unit_rows(w_k[None], "prototype")[0]
    return float(np.mean(1.0 - z @ w))


def class_separation(embeddings: np.ndarray, labels: Sequence[int]) -> float:
    """1 - (average same-class distance / average all-pairs distance).

    Both averages weight classes equally: the same-class term averages the
    per-class pair-mean over classes, the total term averages the block
    pair-mean over all ordered class pairs. Self-pairs (distance 0) are
    included, matching the per-class n^2 pair counts.
    """
    y = np.asarray(labels)
    z = np.asarray(embeddings, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2 or y.shape[0] != z.shape[0]:
        raise DataError("class separation needs >= 2 labeled embeddings")
    u = _unit_rows(z, "embeddings")
    dist = 1.0 - u @ u.T
    classes = np.unique(y)
    idx = {c: np.flatnonzero(y == c) for c in classes}

    within = float(np.mean([dist[np.ix_(idx[c], idx[c])].mean() for c in classes]))
    total = float(
        np.mean([dist[np.ix_(idx[c], idx[d])].mean() for c in classes for d in classes])
    )
    if abs(total) < 1e-12:
        raise UndefinedSeparationError("all embeddings coincide; separation is undefined")
    return 1.0 - within / total


def cumulative_distance_distribution(
    values: Sequence[float], grid: np.ndarray | None = None
) -> list[tuple[float, float]]:
    """Empirical CDF of distances sampled on a fixed threshold grid."""
    vals = np.sort(np.asarray(values, dtype=np.float64))
    if vals.size == 0:
        raise DataError("cannot build a distance CDF from no values")
    thresholds = CDF_GRID if grid is None else np.asarray(grid, dtype=np.float64)
    counts = np.searchsorted(vals, thresholds, side="right")
    return [(float(t), float(c) / vals.size) for t, c in zip(thresholds, counts)]


@dataclass
class SessionResult:
    """Accuracy summary of one cumulative evaluation."""

    session_index: int
    total_accuracy: float
    base_accuracy: float
    novel_accuracy: float | None
    per_class_accuracy: dict[int, float]
    class_order: tuple[int, ...]
    confusion: np.ndarray  # rows true, cols predicted, over class_order

    def to_dict(self) -> dict:
        return {
            "session_index": self.session_index,
            "total_accuracy": self.total_accuracy,
            "base_accuracy": self.base_accuracy,
            "novel_accuracy": self.novel_accuracy,
            "per_class_accuracy": {str(k): v for k, v in self.per_class_accuracy.items()},
            "class_order": list(self.class_order),
            "confusion": self.confusion.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SessionResult":
        return cls(
            session_index=int(d["session_index"]),
            total_accuracy=float(d["total_accuracy"]),
            base_accuracy=float(d["base_accuracy"]),
            novel_accuracy=None if d["novel_accuracy"] is None else float(d["novel_accuracy"]),
            per_class_accuracy={int(k): float(v) for k, v in d["per_class_accuracy"].items()},
            class_order=tuple(int(c) for c in d["class_order"]),
            confusion=np.asarray(d["confusion"], dtype=np.int64),
        )


def session_result_from_predictions(
    y_true: Sequence[int],
    y_pred: Sequence[int],
    seen_class_ids: Sequence[int],
    base_class_ids: Sequence[int],
    session_index: int,
) -> SessionResult:
    """Confusion counts and total/base/novel accuracy from fixed predictions."""
    order = tuple(sorted(seen_class_ids))
    col = {c: i for i, c in enumerate(order)}
    uncovered = sorted(set(y_true) - set(order))
    if uncovered:
        raise DataError(f"test labels {uncovered} are not covered by the classifier")
    confusion = np.zeros((len(order), len(order)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        confusion[col[t], col[p]] += 1

    row_sums = confusion.sum(axis=1)
    diag = np.diag(confusion)
    per_class = {
        c: float(diag[i] / row_sums[i]) for i, c in enumerate(order) if row_sums[i] > 0
    }
    total = float(diag.sum() / confusion.sum())

    base_set = set(base_class_ids)
    base_rows = [i for i, c in enumerate(order) if c in base_set]
    novel_rows = [i for i, c in enumerate(order) if c not in base_set]

    def _weighted(rows: list[int]) -> float | None:
        if not rows or row_sums[rows].sum() == 0:
            return None
        return float(diag[rows].sum() / row_sums[rows].sum())

    base_acc = _weighted(base_rows)
    if base_acc is None:
        raise DataError("no base-class samples in the evaluation set")
    return SessionResult(
        session_index=session_index,
        total_accuracy=total,
        base_accuracy=base_acc,
        novel_accuracy=_weighted(novel_rows),
        per_class_accuracy=per_class,
        class_order=order,
        confusion=confusion,
    )


def evaluate_session(
    classifier: PrototypeClassifier,
    encode: Callable[[np.ndarray], np.ndarray],
    test_samples: Sequence[LabeledSample],
    base_class_ids: Sequence[int],
    session_index: int,
    batch_size: int = 256,
) -> tuple[SessionResult, np.ndarray]:
    """Classify a cumulative test set; returns the result and the embeddings."""
    if not test_samples:
        raise DataError("cannot evaluate an empty test set")
    chunks = []
    for lo in range(0, len(test_samples), batch_size):
        imgs = np.stack([s.image for s in test_samples[lo : lo + batch_size]])
        chunks.append(np.asarray(encode(imgs), dtype=np.float64))
    embeddings = np.concatenate(chunks)
    preds = classify_batch(classifier, embeddings)
    result = session_result_from_predictions(
        [s.label for s in test_samples],
        preds.tolist(),
        classifier.class_ids,
        base_class_ids,
        session_index,
    )
    return result, embeddings


@dataclass
class GeometryReport:
    """Prototype distances and separation degrees of one embedding set."""

    session_index: int
    inter_class: dict[tuple[int, int], float]  # keys (i, j) with i < j
    intra_class: dict[int, float]
    separation: dict[str, float | None] = field(default_factory=dict)

    def inter_values(self) -> list[float]:
        return list(self.inter_class.values())

    def intra_values(self) -> list[float]:
        return list(self.intra_class.values())

    def to_dict(self) -> dict:
        return {
            "session_index": self.session_index,
            "inter_class": [[i, j, v] for (i, j), v in sorted(self.inter_class.items())],
            "intra_class": {str(k): v for k, v in self.intra_class.items()},
            "separation": self.separation,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GeometryReport":
        return cls(
            session_index=int(d["session_index"]),
            inter_class={(int(i), int(j)): float(v) for i, j, v in d["inter_class"]},
            intra_class={int(k): float(v) for k, v in d["intra_class"].items()},
            separation={k: (None if v is None else float(v)) for k, v in d["separation"].items()},
        )


def geometry_report(
    embeddings: np.ndarray,
    labels: Sequence[int],
    base_class_ids: Sequence[int],
    session_index: int,
) -> GeometryReport:
    """Inter/intra distances and separation from labeled embeddings.

    Prototypes are the per-class embedding means of the given set, so the
    report reflects the geometry of exactly what was evaluated.
    """
    y = np.asarray(labels)
    z = np.asarray(embeddings, dtype=np.float64)
    classes = sorted(int(c) for c in np.unique(y))
    protos = {c: z[y == c].mean(axis=0) for c in classes}

    inter = {
        (a, b): inter_class_distance(protos[a], protos[b])
        for i, a in enumerate(classes)
        for b in classes[i + 1 :]
    }
    intra = {c: intra_class_distance(z[y == c], protos[c]) for c in classes}

    base_set = set(base_class_ids)
    separation: dict[str, float | None] = {"all": class_separation(z, y)}
    for name, keep in (("base", base_set), ("novel", set(classes) - base_set)):
        mask = np.isin(y, sorted(keep))
        if mask.sum() >= 2 and len(set(y[mask].tolist())) >= 1:
            separation[name] = class_separation(z[mask], y[mask])
        else:
            separation[name] = None
    return GeometryReport(session_index, inter, intra, separation)
