"""Three-stage training pipeline: pre-training, base session, incremental sessions.

Technique groups are independently toggleable. Self-supervised contrastive
pre-training runs only before the base session; frame alignment and
pseudo-classes act only during base training; masked subnetwork tuning acts
only during incremental sessions; the supervised contrastive loss is used
in both base and incremental training when enabled.

All randomness is drawn from per-purpose generators derived from
(seed, stage, session, epoch, ...), so sessions are independent RNG-wise:
checkpoint/resume and cross-implementation comparisons are bit-exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from fscil_tricks import data as data_io
from fscil_tricks import toydata
from fscil_tricks.augment import (
    AugmentRecipe,
    apply_pseudo_transform,
    augment_view,
    make_pseudo_scheme,
    make_rotation_example,
    pseudo_label,
)
from fscil_tricks.config import DatasetConfig, ExperimentConfig
from fscil_tricks.encoder import (
    default_frozen_prefixes,
    images_to_tensor,
    make_encoder,
    make_linear_head,
)
from fscil_tricks.errors import ConfigError, DataError, DivergenceError
from fscil_tricks.geometry import (
    ETFFrame,
    Prototype,
    PrototypeClassifier,
    assign_etf_prototypes,
    compute_prototype,
    expand_classifier,
    make_etf_frame,
)
from fscil_tricks.losses import (
    EmbeddingBatch,
    LossConfig,
    composite_loss,
    etf_alignment_loss,
    etf_targets,
    selfsup_contrastive_loss,
    supcon_loss,
)
from fscil_tricks.metrics import (
    GeometryReport,
    SessionResult,
    evaluate_session,
    geometry_report,
)
from fscil_tricks.protocol import Dataset, LabeledSample, TaskStream, build_task_stream
from fscil_tricks.seeding import derive_seed, numpy_rng
from fscil_tricks.subnet import (
    SubnetMask,
    TuningPolicy,
    extract_subnet_mask,
    incremental_tune,
    subnet_gap,
)

# -- shared primitives (also used by the standalone frozen baseline) -------


def load_dataset(cfg: DatasetConfig) -> Dataset:
    if cfg.kind == "toy":
        return toydata.make_toy_dataset(
            n_classes=cfg.classes,
            train_per_class=cfg.train_per_class,
            test_per_class=cfg.test_per_class,
            image_size=cfg.image_size,
            noise=cfg.noise,
            seed=0,  # dataset identity is fixed; the run seed drives the split
        )
    if cfg.kind == "folder":
        return data_io.load_image_folder(cfg.path)
    return data_io.load_manifest(cfg.path)


def build_stream(config: ExperimentConfig, dataset: Dataset) -> TaskStream:
    s = config.stream
    return build_task_stream(
        dataset,
        base_classes=s.base_classes,
        ways=s.ways,
        shots=s.shots,
        n_sessions=s.n_sessions,
        seed=config.seed,
        shuffle_classes=s.shuffle_classes,
    )


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    if total_epochs <= 1:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


def set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def batch_indices(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[lo : lo + batch_size] for lo in range(0, n, batch_size)]


def check_finite(loss: torch.Tensor, where: str) -> None:
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite loss in {where}")


def encode_fn(encoder: nn.Module) -> Callable[[np.ndarray], np.ndarray]:
    """Numpy-in, normalized-numpy-out embedding function for evaluation."""

    def encode(images: np.ndarray) -> np.ndarray:
        was_training = encoder.training
        encoder.eval()
        with torch.no_grad():
            z = F.normalize(encoder(images_to_tensor(images)), dim=1)
        if was_training:
            encoder.train()
        return z.numpy().astype(np.float64)

    return encode


def prototypes_from_samples(
    encoder: nn.Module, samples: Sequence[LabeledSample]
) -> list[Prototype]:
    """Per-class normalized-embedding means, classes in ascending id order."""
    encode = encode_fn(encoder)
    by_class: dict[int, list[np.ndarray]] = {}
    for s in samples:
        by_class.setdefault(s.label, []).append(s.image)
    protos = []
    for cid in sorted(by_class):
        embs = encode(np.stack(by_class[cid]))
        protos.append(compute_prototype(embs, cid))
    return protos


# -- stage loss resolution --------------------------------------------------


def base_stage_weights(config: ExperimentConfig) -> dict[str, float]:
    """Active loss weights for base training given the toggles."""
    t, w = config.toggles, config.losses
    weights: dict[str, float] = {}
    if t.supcon and w.supcon > 0:
        weights["supcon"] = w.supcon
    ce = w.cross_entropy
    if not t.supcon and ce == 0.0:
        ce = 1.0  # cross-entropy baseline when the contrastive loss is off
    if ce > 0:
        weights["cross_entropy"] = ce
    if t.etf and w.etf > 0:
        weights["etf"] = w.etf
    if t.rotation and w.rotation > 0:
        weights["rotation"] = w.rotation
    if not weights:
        raise ConfigError("base stage has no active loss under the current toggles")
    return weights


def incremental_uses_supcon(config: ExperimentConfig) -> bool:
    return config.toggles.supcon and config.losses.supcon > 0


# -- training items ----------------------------------------------------------


@dataclass
class TrainItem:
    image: np.ndarray
    label: int  # compact label within the stage's training label space


def base_training_items(
    config: ExperimentConfig, stream: TaskStream
) -> tuple[list[TrainItem], dict[int, int], int]:
    """Base-session items with compact labels, pseudo-expanded when enabled.

    Returns (items, global->compact map for real classes, label space size).
    """
    base_ids = sorted(stream.sessions[0].class_ids)
    compact = {cid: i for i, cid in enumerate(base_ids)}
    items = [TrainItem(s.image, compact[s.label]) for s in stream.train_sets[0]]
    n_labels = len(base_ids)
    if config.toggles.pseudo and config.pseudo.multiplier > 1:
        scheme = make_pseudo_scheme(len(base_ids), config.pseudo.multiplier)
        expanded = list(items)
        for m in range(1, scheme.M):
            expanded.extend(
                TrainItem(
                    apply_pseudo_transform(scheme, item.image, m),
                    pseudo_label(scheme, item.label, m),
                )
                for item in items
            )
        items = expanded
        n_labels = scheme.n_labels
    return items, compact, n_labels


def _two_view_batch(
    images: Sequence[np.ndarray],
    labels: Sequence[int],
    rng: np.random.Generator,
    recipe: AugmentRecipe,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Augment each image twice; rows [a_0..a_B, b_0..b_B], paired i <-> i+B."""
    views_a, views_b = [], []
    for img in images:
        views_a.append(augment_view(img, rng, recipe))
        views_b.append(augment_view(img, rng, recipe))
    x = images_to_tensor(np.stack(views_a + views_b))
    n = len(images)
    kappa = torch.cat([torch.arange(n) + n, torch.arange(n)])
    y = torch.as_tensor(list(labels) + list(labels), dtype=torch.long)
    return x, y, kappa


# -- stages ------------------------------------------------------------------


def run_pretraining(config: ExperimentConfig, stream: TaskStream, encoder: nn.Module) -> dict:
    """Self-supervised contrastive pre-training on base-session images.

    With the toggle off this is a documented no-op: the encoder keeps its
    initialization.
    """
    info = {"ran": False, "epochs": 0, "losses": [], "loss_curve": []}
    if not config.toggles.pretraining or config.pretrain.epochs == 0:
        return info
    images = [s.image for s in stream.train_sets[0]]
    opt = torch.optim.SGD(encoder.parameters(), lr=config.pretrain.lr, momentum=config.momentum)
    tau = config.losses.temperature
    curve = []
    encoder.train()
    for epoch in range(config.pretrain.epochs):
        set_lr(opt, cosine_lr(config.pretrain.lr, epoch, config.pretrain.epochs))
        shuffle = numpy_rng(config.seed, "pretrain", "shuffle", epoch)
        epoch_losses = []
        for bi, idx in enumerate(batch_indices(len(images), config.pretrain.batch_size, shuffle)):
            rng = numpy_rng(config.seed, "pretrain", "aug", epoch, bi)
            x, _, kappa = _two_view_batch([images[i] for i in idx], [0] * len(idx), rng, _recipe(config))
            z = F.normalize(encoder(x), dim=1)
            loss = selfsup_contrastive_loss(EmbeddingBatch(z, view_index=kappa), tau)
            check_finite(loss, f"pretraining epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(loss.detach().item())
        curve.append(float(np.mean(epoch_losses)))
    return {"ran": True, "epochs": config.pretrain.epochs, "losses": ["selfsup"], "loss_curve": curve}


def _recipe(config: ExperimentConfig) -> AugmentRecipe:
    a = config.augment
    return AugmentRecipe(crop_scale=tuple(a.crop_scale), flip_prob=a.flip_prob, jitter=a.jitter)


@dataclass
class BaseArtifacts:
    encoder: nn.Module
    classifier: PrototypeClassifier
    prototypes: list[Prototype]
    info: dict
    items: list[TrainItem]
    compact: dict[int, int]
    n_labels: int
    ce_head: nn.Linear | None


def run_base_session(
    config: ExperimentConfig, stream: TaskStream, encoder: nn.Module
) -> BaseArtifacts:
    """Train the encoder on the base session with the enabled objectives.

    When frame alignment is enabled, the maximally separated frame is
    assigned to the naturally formed class prototypes after
    ceil(epoch_factor * epochs) epochs and the alignment term joins the
    composite loss from then on. Pseudo-classes only enlarge the training
    label space; the evaluation classifier is built from real-class
    prototypes alone.
    """
    base_ids = sorted(stream.sessions[0].class_ids)
    C0 = len(base_ids)
    d = config.encoder.embedding_dim
    if config.toggles.etf and C0 > d + 1:
        raise ConfigError(
            f"no simplex frame of {C0} vectors exists in dimension {d}; need C0 <= d + 1"
        )

    weights = base_stage_weights(config)
    items, compact, n_labels = base_training_items(config, stream)
    tau = config.losses.temperature
    recipe = _recipe(config)
    epochs = config.base.epochs

    ce_head = None
    if "cross_entropy" in weights:
        ce_head = make_linear_head(d, n_labels, config.seed, "ce")
    rot_head = None
    if "rotation" in weights:
        rot_head = make_linear_head(d, 4, config.seed, "rot")

    params = list(encoder.parameters())
    if ce_head is not None:
        params += list(ce_head.parameters())
    if rot_head is not None:
        params += list(rot_head.parameters())
    opt = torch.optim.SGD(params, lr=config.base.lr, momentum=config.momentum)

    frame: ETFFrame | None = None
    assignment: dict[int, int] | None = None
    assign_at = None
    if config.toggles.etf and "etf" in weights and epochs > 0:
        assign_at = min(math.ceil(config.etf.epoch_factor * epochs), epochs - 1)

    real_samples = list(stream.train_sets[0])
    curve: list[float] = []
    encoder.train()
    for epoch in range(epochs):
        if assign_at is not None and epoch == assign_at and assignment is None:
            frame = make_etf_frame(C0, d, seed=derive_seed(config.seed, "etf-frame"))
            learned = prototypes_from_samples(encoder, real_samples)
            learned = [Prototype(compact[p.class_id], p.vector, p.support_count) for p in learned]
            assignment = assign_etf_prototypes(frame, learned)
        set_lr(opt, cosine_lr(config.base.lr, epoch, epochs))
        shuffle = numpy_rng(config.seed, "base", "shuffle", epoch)
        epoch_losses = []
        for bi, idx in enumerate(batch_indices(len(items), config.base.batch_size, shuffle)):
            images = [items[i].image for i in idx]
            labels = [items[i].label for i in idx]
            parts: dict[str, torch.Tensor] = {}
            active = dict(weights)
            emb_for_etf: torch.Tensor | None = None
            labels_for_etf: torch.Tensor | None = None

            if "supcon" in weights:
                rng = numpy_rng(config.seed, "base", "aug", epoch, bi)
                x, y2, kappa = _two_view_batch(images, labels, rng, recipe)
                z = F.normalize(encoder(x), dim=1)
                parts["supcon"] = supcon_loss(EmbeddingBatch(z, y2, kappa), tau)
                emb_for_etf, labels_for_etf = z, y2
            if "cross_entropy" in weights:
                x0 = images_to_tensor(np.stack(images))
                raw = encoder(x0)
                y = torch.as_tensor(labels, dtype=torch.long)
                parts["cross_entropy"] = F.cross_entropy(ce_head(raw), y)
                if emb_for_etf is None:
                    emb_for_etf, labels_for_etf = F.normalize(raw, dim=1), y
            if "rotation" in weights:
                rng_rot = numpy_rng(config.seed, "base", "rot", epoch, bi)
                rotated, rot_labels = [], []
                for img in images:
                    rimg, rlab = make_rotation_example(img, rng=rng_rot)
                    rotated.append(rimg)
                    rot_labels.append(rlab)
                logits = rot_head(encoder(images_to_tensor(np.stack(rotated))))
                parts["rotation"] = F.cross_entropy(
                    logits, torch.as_tensor(rot_labels, dtype=torch.long)
                )
            if "etf" in weights:
                if assignment is None:
                    active.pop("etf")  # alignment joins after the assignment epoch
                else:
                    present = sorted({int(l) for l in labels_for_etf.tolist() if l < C0})
                    if present:
                        means = torch.stack(
                            [emb_for_etf[labels_for_etf == c].mean(dim=0) for c in present]
                        )
                        targets = etf_targets(frame, assignment, present, dtype=means.dtype)
                        parts["etf"] = etf_alignment_loss(means, targets)
                    else:
                        active.pop("etf")

            loss = composite_loss(parts, LossConfig(tau, active))
            check_finite(loss, f"base epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(loss.detach().item())
        curve.append(float(np.mean(epoch_losses)) if epoch_losses else float("nan"))

    prototypes = prototypes_from_samples(encoder, real_samples)
    classifier = expand_classifier(PrototypeClassifier(), prototypes)
    info = {
        "losses": sorted(weights),
        "label_space": n_labels,
        "etf_assigned_epoch": assign_at,
        "loss_curve": curve,
    }
    return BaseArtifacts(encoder, classifier, prototypes, info, items, compact, n_labels, ce_head)


def _supervised_batch_loss(config: ExperimentConfig, ce_head: nn.Linear | None):
    """Base-objective closure for mask search: contrastive or cross-entropy."""
    tau = config.losses.temperature
    if incremental_uses_supcon(config):

        def loss_fn(fwd, batch):
            x, y2, kappa = batch
            z = F.normalize(fwd(x), dim=1)
            return supcon_loss(EmbeddingBatch(z, y2, kappa), tau)

        return loss_fn

    if ce_head is None:
        raise ConfigError("mask search needs either the contrastive loss or a CE head")

    def loss_fn(fwd, batch):
        x, y = batch
        return F.cross_entropy(ce_head(fwd(x)), y)

    return loss_fn


def _mask_search_batches(
    config: ExperimentConfig, items: Sequence[TrainItem]
) -> list[tuple]:
    """One epoch worth of base batches, materialized for cyclic reuse."""
    recipe = _recipe(config)
    shuffle = numpy_rng(config.seed, "mask", "shuffle")
    batches = []
    for bi, idx in enumerate(batch_indices(len(items), config.base.batch_size, shuffle)):
        images = [items[i].image for i in idx]
        labels = [items[i].label for i in idx]
        if incremental_uses_supcon(config):
            rng = numpy_rng(config.seed, "mask", "aug", bi)
            batches.append(_two_view_batch(images, labels, rng, recipe))
        else:
            batches.append(
                (images_to_tensor(np.stack(images)), torch.as_tensor(labels, dtype=torch.long))
            )
    return batches


def extract_base_mask(config: ExperimentConfig, base: BaseArtifacts) -> tuple[SubnetMask, dict]:
    """Extract the retain-mask on the base objective after base training."""
    batches = _mask_search_batches(config, base.items)
    loss_fn = _supervised_batch_loss(config, base.ce_head)
    mask = extract_subnet_mask(
        base.encoder,
        batches,
        loss_fn,
        retain_fraction=config.subnet.retain_fraction,
        steps=config.subnet.steps,
        score_lr=config.subnet.lr,
        method=config.subnet.method,
    )
    gap = subnet_gap(base.encoder, mask, batches, loss_fn)
    info = {
        "retain_fraction": config.subnet.retain_fraction,
        "ones_fraction": mask.ones_fraction(),
        "gap": gap,
        "method": config.subnet.method,
    }
    return mask, info


def tuning_policy(config: ExperimentConfig, encoder: nn.Module) -> TuningPolicy:
    prefixes = config.tuning.frozen_prefixes
    if prefixes is None:
        prefixes = default_frozen_prefixes(encoder)
    return TuningPolicy(
        frozen_layer_prefixes=tuple(prefixes),
        incremental_lr=config.incremental_lr,
        epochs_per_session=config.incremental.epochs_per_session,
    )


class _EncoderWithHead(nn.Module):
    def __init__(self, encoder: nn.Module, head: nn.Linear):
        super().__init__()
        self.encoder = encoder
        self.head = head


def _tune_on_session(
    config: ExperimentConfig,
    encoder: nn.Module,
    mask: SubnetMask,
    session_samples: Sequence[LabeledSample],
    t: int,
) -> dict:
    """Fine-tune unmasked deep parameters on one incremental session."""
    policy = tuning_policy(config, encoder)
    if policy.epochs_per_session == 0:
        return {"steps": 0, "final_loss": float("nan")}
    recipe = _recipe(config)
    images = [s.image for s in session_samples]
    class_ids = sorted({s.label for s in session_samples})
    compact = {cid: i for i, cid in enumerate(class_ids)}
    labels = [compact[s.label] for s in session_samples]
    tau = config.losses.temperature

    if incremental_uses_supcon(config):

        def epoch_batches(epoch: int):
            rng = numpy_rng(config.seed, "inc", t, "aug", epoch)
            yield _two_view_batch(images, labels, rng, recipe)

        def batch_loss(module: nn.Module, batch):
            x, y2, kappa = batch
            z = F.normalize(module(x), dim=1)
            return supcon_loss(EmbeddingBatch(z, y2, kappa), tau)

        return incremental_tune(
            encoder, mask, policy, epoch_batches, batch_loss, momentum=config.momentum
        )

    # Cross-entropy tuning: prototype-initialized session head over the new
    # classes, trained jointly, discarded afterwards.
    protos = prototypes_from_samples(encoder, session_samples)
    head = nn.Linear(config.encoder.embedding_dim, len(class_ids))
    with torch.no_grad():
        head.weight.copy_(
            torch.stack([torch.from_numpy(p.unit()).to(torch.float32) for p in protos])
        )
        head.bias.zero_()
    wrapper = _EncoderWithHead(encoder, head)
    wrapped_mask = SubnetMask(
        masks={
            **{f"encoder.{k}": v for k, v in mask.masks.items()},
            **{
                f"head.{k}": torch.zeros_like(v, dtype=torch.bool)
                for k, v in head.named_parameters()
            },
        },
        retain_fraction=mask.retain_fraction,
    )
    policy = TuningPolicy(
        frozen_layer_prefixes=tuple(f"encoder.{p}" for p in policy.frozen_layer_prefixes),
        incremental_lr=policy.incremental_lr,
        epochs_per_session=policy.epochs_per_session,
    )

    def epoch_batches(epoch: int):
        rng = numpy_rng(config.seed, "inc", t, "aug", epoch)
        views = [augment_view(img, rng, recipe) for img in images]
        yield (images_to_tensor(np.stack(views)), torch.as_tensor(labels, dtype=torch.long))

    def batch_loss(module: _EncoderWithHead, batch):
        x, y = batch
        return F.cross_entropy(module.head(module.encoder(x)), y)

    return incremental_tune(
        wrapper, wrapped_mask, policy, epoch_batches, batch_loss, momentum=config.momentum
    )


def session_geometry(
    config: ExperimentConfig,
    encoder: nn.Module,
    stream: TaskStream,
    t: int,
    test_embeddings: np.ndarray,
) -> GeometryReport:
    """Distance/separation report for session t.

    Defaults to the cumulative test embeddings already computed for
    evaluation; ``geometry_source: train`` recomputes from the cumulative
    training samples instead.
    """
    if config.geometry_source == "train":
        samples = [s for u in range(t + 1) for s in stream.train_sets[u]]
        encode = encode_fn(encoder)
        embeddings = np.concatenate(
            [
                encode(np.stack([s.image for s in samples[lo : lo + 256]]))
                for lo in range(0, len(samples), 256)
            ]
        )
        labels = [s.label for s in samples]
    else:
        embeddings = test_embeddings
        labels = [s.label for s in stream.test_sets[t]]
    return geometry_report(embeddings, labels, stream.base_class_ids, t)


def run_incremental_session(
    config: ExperimentConfig,
    encoder: nn.Module,
    classifier: PrototypeClassifier,
    mask: SubnetMask | None,
    stream: TaskStream,
    t: int,
) -> tuple[PrototypeClassifier, SessionResult, GeometryReport, dict]:
    """One incremental session: optional tuning, prototype expansion, evaluation."""
    spec = stream.sessions[t]
    session_samples = stream.train_sets[t]
    overlap = set(spec.class_ids).intersection(classifier.class_ids)
    if overlap:
        raise DataError(f"session {t} classes {sorted(overlap)} already seen")

    tune_info = {"tuned": False}
    if config.toggles.subnet_tuning:
        if mask is None:
            raise ConfigError("subnet tuning enabled but no mask was extracted")
        stats = _tune_on_session(config, encoder, mask, session_samples, t)
        tune_info = {"tuned": True, **stats}

    new_protos = prototypes_from_samples(encoder, session_samples)
    classifier = expand_classifier(classifier, new_protos)
    result, embeddings = evaluate_session(
        classifier, encode_fn(encoder), stream.test_sets[t], stream.base_class_ids, t
    )
    geometry = session_geometry(config, encoder, stream, t, embeddings)
    return classifier, result, geometry, tune_info
