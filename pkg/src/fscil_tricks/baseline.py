"""Standalone incremental-frozen baseline.

A deliberately plain implementation: train the encoder on the base session
with cross-entropy only, freeze it, then extend a prototype classifier
session by session. No toggles, no stages, no checkpointing. Under a shared
seed the full pipeline with every technique disabled must reproduce these
per-session accuracies exactly; this module is the reference it is checked
against.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from fscil_tricks.config import ExperimentConfig
from fscil_tricks.encoder import images_to_tensor, make_encoder, make_linear_head
from fscil_tricks.errors import DivergenceError
from fscil_tricks.metrics import SessionResult, evaluate_session
from fscil_tricks.pipeline import (
    batch_indices,
    cosine_lr,
    encode_fn,
    prototypes_from_samples,
    set_lr,
)
from fscil_tricks.geometry import PrototypeClassifier, expand_classifier
from fscil_tricks.protocol import TaskStream
from fscil_tricks.seeding import numpy_rng


def run_frozen_baseline(config: ExperimentConfig, stream: TaskStream) -> list[SessionResult]:
    """Cross-entropy base training, frozen encoder, prototype expansion."""
    if config.threads > 0:
        torch.set_num_threads(config.threads)

    base_ids = sorted(stream.sessions[0].class_ids)
    compact = {cid: i for i, cid in enumerate(base_ids)}
    samples = list(stream.train_sets[0])
    images = [s.image for s in samples]
    labels = [compact[s.label] for s in samples]

    encoder = make_encoder(config.encoder.arch, config.encoder.embedding_dim, config.seed)
    head = make_linear_head(config.encoder.embedding_dim, len(base_ids), config.seed, "ce")
    params = list(encoder.parameters()) + list(head.parameters())
    opt = torch.optim.SGD(params, lr=config.base.lr, momentum=config.momentum)

    encoder.train()
    for epoch in range(config.base.epochs):
        set_lr(opt, cosine_lr(config.base.lr, epoch, config.base.epochs))
        shuffle = numpy_rng(config.seed, "base", "shuffle", epoch)
        for idx in batch_indices(len(images), config.base.batch_size, shuffle):
            x = images_to_tensor(np.stack([images[i] for i in idx]))
            y = torch.as_tensor([labels[i] for i in idx], dtype=torch.long)
            loss = F.cross_entropy(head(encoder(x)), y)
            if not torch.isfinite(loss):
                raise DivergenceError(f"baseline loss non-finite in epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()

    classifier = expand_classifier(
        PrototypeClassifier(), prototypes_from_samples(encoder, samples)
    )
    results = []
    for t in range(stream.n_sessions):
        if t > 0:
            classifier = expand_classifier(
                classifier, prototypes_from_samples(encoder, stream.train_sets[t])
            )
        result, _ = evaluate_session(
            classifier, encode_fn(encoder), stream.test_sets[t], stream.base_class_ids, t
        )
        results.append(result)
    return results
