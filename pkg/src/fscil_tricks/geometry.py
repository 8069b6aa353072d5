"""Prototype and frame geometry.

Class prototypes are embedding means; the expanding classifier predicts by
cosine similarity against one prototype per seen class. A simplex frame of
K unit vectors with pairwise inner products -1/(K-1) provides maximally
separated targets that base-class prototypes can be aligned to.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from fscil_tricks.errors import DataError


@dataclass(frozen=True)
class Prototype:
    """Mean embedding of one class."""

    class_id: int
    vector: np.ndarray
    support_count: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.vector)):
            raise DataError(f"prototype for class {self.class_id} is not finite")

    def unit(self) -> np.ndarray:
        norm = float(np.linalg.norm(self.vector))
        if norm == 0.0:
            raise DataError(f"prototype for class {self.class_id} is the zero vector")
        return self.vector / norm


def compute_prototype(embeddings: Sequence[np.ndarray] | np.ndarray, class_id: int) -> Prototype:
    """Arithmetic mean of a class's embeddings."""
    try:
        mat = np.asarray(embeddings, dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"embedding dimensions disagree: {exc}") from exc
    if mat.ndim != 2 or mat.shape[0] == 0:
        raise DataError("compute_prototype needs a non-empty list of equal-length vectors")
    return Prototype(class_id, mat.mean(axis=0), mat.shape[0])


@dataclass(frozen=True)
class ETFFrame:
    """K unit vectors in R^d with pairwise inner products -1/(K-1)."""

    K: int
    d: int
    vectors: np.ndarray  # K x d

    def __post_init__(self):
        if self.vectors.shape != (self.K, self.d):
            raise ValueError("frame shape mismatch")

    def max_deviation(self) -> tuple[float, float]:
        """(worst norm error, worst pairwise inner-product error)."""
        gram = self.vectors @ self.vectors.T
        norm_err = float(np.max(np.abs(np.diag(gram) - 1.0)))
        off = gram[~np.eye(self.K, dtype=bool)]
        ip_err = float(np.max(np.abs(off + 1.0 / (self.K - 1)))) if self.K > 1 else 0.0
        return norm_err, ip_err


def make_etf_frame(K: int, d: int, seed: int = 0) -> ETFFrame:
    """Construct a simplex frame of K unit vectors in R^d.

    The K x K centering construction sqrt(K/(K-1)) (I - 11^T/K) is reduced
    to its (K-1)-dimensional row space and lifted into R^d by a seeded
    orthonormal basis. Requires d >= K-1.
    """
    if K < 2:
        raise ValueError(f"need K >= 2 vectors, got {K}")
    if d < K - 1:
        raise ValueError(f"a simplex frame of {K} vectors needs d >= {K - 1}, got d={d}")

    center = np.sqrt(K / (K - 1)) * (np.eye(K) - np.ones((K, K)) / K)
    # Rows span the (K-1)-dim subspace orthogonal to the all-ones vector.
    _, _, vt = np.linalg.svd(center)
    coords = center @ vt[: K - 1].T  # K x (K-1), exact simplex coordinates

    rng = np.random.default_rng(seed)
    gauss = rng.standard_normal((d, K - 1))
    q, r = np.linalg.qr(gauss)
    q = q * np.sign(np.diag(r))  # fix QR sign convention
    return ETFFrame(K, d, coords @ q.T)


def assign_etf_prototypes(
    frame: ETFFrame, learned_prototypes: Sequence[Prototype]
) -> dict[int, int]:
    """Optimal one-to-one map class_id -> frame row maximizing total cosine.

    Solved as a linear assignment on the cosine matrix, so no two classes
    receive the same frame vector even when greedy alignment would collide.
    """
    if len(learned_prototypes) > frame.K:
        raise DataError(
            f"{len(learned_prototypes)} prototypes but frame has only {frame.K} vectors"
        )
    units = np.stack([p.unit() for p in learned_prototypes])
    cosine = units @ frame.vectors.T
    rows, cols = linear_sum_assignment(-cosine)
    return {learned_prototypes[r].class_id: int(c) for r, c in zip(rows, cols)}


@dataclass(frozen=True)
class PrototypeClassifier:
    """Cosine-similarity classifier over one prototype per seen class."""

    prototypes: tuple[Prototype, ...] = ()

    @property
    def class_ids(self) -> tuple[int, ...]:
        return tuple(p.class_id for p in self.prototypes)

    def weight_matrix(self) -> np.ndarray:
        return np.stack([p.unit() for p in self.prototypes])


def classify(classifier: PrototypeClassifier, embedding: np.ndarray) -> tuple[int, np.ndarray]:
    """Cosine argmax over seen classes; ties go to the lowest class id."""
    if not classifier.prototypes:
        raise DataError("classifier has no prototypes")
    emb = np.asarray(embedding, dtype=np.float64)
    norm = np.linalg.norm(emb)
    if norm == 0.0:
        raise DataError("cannot classify the zero embedding")
    scores = classifier.weight_matrix() @ (emb / norm)
    best = np.flatnonzero(scores == scores.max())
    ids = classifier.class_ids
    winner = min(ids[i] for i in best)
    return winner, scores


def classify_batch(classifier: PrototypeClassifier, embeddings: np.ndarray) -> np.ndarray:
    """Predicted class ids for a B x d embedding matrix."""
    if not classifier.prototypes:
        raise DataError("classifier has no prototypes")
    emb = np.asarray(embeddings, dtype=np.float64)
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DataError("cannot classify zero embeddings")
    scores = (emb / norms) @ classifier.weight_matrix().T
    ids = np.asarray(classifier.class_ids)
    # Argmax with lowest-class-id tie break: scan prototypes in class-id order.
    order = np.argsort(ids, kind="stable")
    ordered = scores[:, order]
    return ids[order][np.argmax(ordered, axis=1)]


def expand_classifier(
    classifier: PrototypeClassifier, new_prototypes: Sequence[Prototype]
) -> PrototypeClassifier:
    """Append prototypes for unseen classes; existing entries are untouched."""
    existing = set(classifier.class_ids)
    incoming = [p.class_id for p in new_prototypes]
    dupes = existing.intersection(incoming)
    if dupes or len(set(incoming)) != len(incoming):
        raise DataError(f"duplicate class ids in classifier expansion: {sorted(dupes) or incoming}")
    return PrototypeClassifier(classifier.prototypes + tuple(new_prototypes))


# -- serialization --------------------------------------------------------


def save_frame(frame: ETFFrame, path: str | Path) -> None:
    np.savez(path, K=frame.K, d=frame.d, vectors=frame.vectors)


def load_frame(path: str | Path) -> ETFFrame:
    with np.load(path) as z:
        return ETFFrame(int(z["K"]), int(z["d"]), z["vectors"])


def save_classifier(classifier: PrototypeClassifier, path: str | Path) -> None:
    np.savez(
        path,
        class_ids=np.asarray(classifier.class_ids, dtype=np.int64),
        vectors=np.stack([p.vector for p in classifier.prototypes])
        if classifier.prototypes
        else np.zeros((0, 0)),
        support=np.asarray([p.support_count for p in classifier.prototypes], dtype=np.int64),
    )


def load_classifier(path: str | Path) -> PrototypeClassifier:
    with np.load(path) as z:
        protos = tuple(
            Prototype(int(c), v, int(n))
            for c, v, n in zip(z["class_ids"], z["vectors"], z["support"])
        )
    return PrototypeClassifier(protos)
