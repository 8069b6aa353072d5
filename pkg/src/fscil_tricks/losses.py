"""Training objectives.

All losses are differentiable torch expressions; gradients w.r.t. their
inputs come from autograd. Contrastive similarities are plain dot products,
so callers normalize embeddings before building a batch (the convention
for every cosine-based quantity in this package).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from fscil_tricks.errors import ConfigError, DataError
from fscil_tricks.geometry import ETFFrame

# Loose enough for float32 rounding and finite-difference probes.
_NORM_TOL = 1e-4

WEIGHT_KEYS = ("supcon", "etf", "rotation", "cross_entropy", "selfsup")


@dataclass
class EmbeddingBatch:
    """Normalized embeddings with labels and/or augmentation-view pairing.

    ``view_index`` maps each row to its paired augmented view; the pairing
    must be an involution without fixed points.
    """

    embeddings: torch.Tensor  # B x d, rows ~unit norm
    labels: torch.Tensor | None = None  # B ints
    view_index: torch.Tensor | None = None  # B ints, kappa(kappa(i)) == i

    def __post_init__(self):
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] == 0:
            raise DataError("embeddings must be a non-empty B x d matrix")
        n = self.embeddings.shape[0]
        with torch.no_grad():
            norms = self.embeddings.norm(dim=1)
            worst = (norms - 1.0).abs().max().item()
        if worst > _NORM_TOL:
            raise DataError(f"embeddings are not unit-normalized (max deviation {worst:.2e})")
        if self.labels is not None and self.labels.shape != (n,):
            raise DataError("labels shape must match batch size")
        if self.view_index is not None:
            k = self.view_index
            if k.shape != (n,):
                raise DataError("view_index shape must match batch size")
            idx = torch.arange(n, device=k.device)
            if torch.any(k == idx) or not torch.equal(k[k], idx):
                raise DataError("view pairing must be an involution with no fixed points")

    def __len__(self) -> int:
        return self.embeddings.shape[0]


@dataclass
class LossConfig:
    """Temperature and per-part weights of the composite objective."""

    temperature: float = 0.07
    weights: dict[str, float] = field(default_factory=lambda: {"supcon": 1.0})

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        unknown = set(self.weights) - set(WEIGHT_KEYS)
        if unknown:
            raise ConfigError(f"unknown loss weights: {sorted(unknown)}")
        if any(w < 0 for w in self.weights.values()):
            raise ConfigError("loss weights must be non-negative")
        if not any(w > 0 for w in self.weights.values()):
            raise ConfigError("at least one loss weight must be positive")


def _masked_log_denominator(sim: torch.Tensor) -> torch.Tensor:
    """Row-wise log sum_{k != i} exp(sim[i, k])."""
    eye = torch.eye(sim.shape[0], dtype=torch.bool, device=sim.device)
    return torch.logsumexp(sim.masked_fill(eye, float("-inf")), dim=1)


def supcon_loss(batch: EmbeddingBatch, tau: float) -> torch.Tensor:
    """Label-supervised contrastive loss.

    Each anchor averages -log softmax similarity over its positives (same
    label, other rows); the softmax denominator runs over every other row.
    Anchors without positives contribute nothing and are excluded from the
    anchor average; a batch with no positive pairs scores 0.
    """
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if len(batch) < 2:
        raise DataError("supcon needs a batch of at least 2")
    if batch.labels is None:
        raise DataError("supcon needs labels")
    z, y = batch.embeddings, batch.labels
    sim = (z @ z.T) / tau
    log_prob = sim - _masked_log_denominator(sim).unsqueeze(1)

    eye = torch.eye(len(batch), dtype=torch.bool, device=z.device)
    pos = (y.unsqueeze(0) == y.unsqueeze(1)) & ~eye
    pos_counts = pos.sum(dim=1)
    anchors = pos_counts > 0
    if not torch.any(anchors):
        return z.sum() * 0.0
    per_anchor = torch.where(pos, log_prob, torch.zeros_like(log_prob)).sum(dim=1)
    per_anchor = per_anchor[anchors] / pos_counts[anchors].to(z.dtype)
    return -per_anchor.mean()


def selfsup_contrastive_loss(batch: EmbeddingBatch, tau: float) -> torch.Tensor:
    """Unsupervised contrastive loss over augmentation-view pairs.

    Every row is an anchor whose single positive is its paired view; the
    denominator runs over all other rows; the mean is over all 2b rows.
    """
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if batch.view_index is None:
        raise DataError("self-supervised contrastive loss needs view pairing")
    z = batch.embeddings
    sim = (z @ z.T) / tau
    log_denom = _masked_log_denominator(sim)
    positive = sim[torch.arange(len(batch), device=z.device), batch.view_index]
    return -(positive - log_denom).mean()


def etf_alignment_loss(learned: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean squared Euclidean distance between learned and assigned prototypes."""
    if learned.ndim != 2 or learned.shape != targets.shape or learned.shape[0] == 0:
        raise DataError("learned and target prototypes must be matching non-empty C x d")
    return ((learned - targets) ** 2).sum(dim=1).mean()


def etf_targets(
    frame: ETFFrame,
    assignment: Mapping[int, int],
    class_ids: Sequence[int],
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Stack assigned frame rows for the given classes, in the given order."""
    missing = [c for c in class_ids if c not in assignment]
    if missing:
        raise DataError(f"no frame assignment for classes {missing}")
    rows = np.stack([frame.vectors[assignment[c]] for c in class_ids])
    return torch.from_numpy(rows).to(dtype)


def rotation_loss(logits: torch.Tensor, rotation_labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy of the four-way rotation prediction."""
    if logits.ndim != 2 or logits.shape[1] != 4:
        raise DataError(f"rotation logits must be B x 4, got {tuple(logits.shape)}")
    if rotation_labels.numel() and (rotation_labels.min() < 0 or rotation_labels.max() > 3):
        raise DataError("rotation labels must lie in {0, 1, 2, 3}")
    return F.cross_entropy(logits, rotation_labels)


def composite_loss(parts: Mapping[str, torch.Tensor], config: LossConfig) -> torch.Tensor:
    """Weighted sum of computed loss parts.

    Zero-weight entries are skipped entirely, so a single part at weight
    1.0 reproduces that part bit for bit.
    """
    total: torch.Tensor | None = None
    for name in sorted(config.weights):
        weight = config.weights[name]
        if weight == 0.0:
            continue
        if name not in parts:
            raise ConfigError(f"loss part {name!r} has weight {weight} but was not computed")
        term = parts[name] if weight == 1.0 else weight * parts[name]
        total = term if total is None else total + term
    assert total is not None  # LossConfig guarantees a positive weight
    return total
