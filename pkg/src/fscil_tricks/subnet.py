"""Subnetwork masks and incremental fine-tuning.

After base training, a binary per-parameter mask is extracted so that the
masked encoder's base loss stays close to the full encoder's. During
incremental sessions the masked parameters and all shallow layers stay
bit-frozen; only the remaining deep parameters receive small-LR updates.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import torch
from torch import nn
from torch.func import functional_call

from fscil_tricks.errors import ConfigError, DataError, DivergenceError

# batch_loss(forward_fn, batch): evaluate the training objective using the
# provided forward callable, so masked parameter sets can be substituted.
ForwardFn = Callable[[torch.Tensor], torch.Tensor]
BatchLoss = Callable[[ForwardFn, object], torch.Tensor]


@dataclass
class SubnetMask:
    """Binary retain-mask per encoder parameter tensor."""

    masks: dict[str, torch.Tensor]  # bool, same shapes as named_parameters
    retain_fraction: float

    def ones_fraction(self) -> float:
        total = sum(m.numel() for m in self.masks.values())
        ones = sum(int(m.sum()) for m in self.masks.values())
        return ones / total if total else 0.0

    def validate_against(self, encoder: nn.Module) -> None:
        params = dict(encoder.named_parameters())
        if set(params) != set(self.masks):
            raise DataError("mask layer names do not match encoder parameters")
        for name, p in params.items():
            if self.masks[name].shape != p.shape:
                raise DataError(f"mask shape mismatch for {name}")


@dataclass(frozen=True)
class TuningPolicy:
    """What stays frozen and how the rest is tuned in incremental sessions."""

    frozen_layer_prefixes: tuple[str, ...]
    incremental_lr: float
    epochs_per_session: int

    def __post_init__(self):
        if self.incremental_lr <= 0:
            raise ConfigError("incremental_lr must be positive")
        if self.epochs_per_session < 0:
            raise ConfigError("epochs_per_session must be >= 0")


def _masked_params(
    encoder: nn.Module, factors: Mapping[str, torch.Tensor]
) -> dict[str, torch.Tensor]:
    return {name: p * factors[name] for name, p in encoder.named_parameters()}


def apply_mask_forward(encoder: nn.Module, mask: SubnetMask, x: torch.Tensor) -> torch.Tensor:
    """Forward pass with parameters elementwise-multiplied by the mask."""
    mask.validate_against(encoder)
    factors = {name: m.to(next(encoder.parameters()).dtype) for name, m in mask.masks.items()}
    return functional_call(encoder, _masked_params(encoder, factors), (x,))


def _threshold_for(flat_scores: torch.Tensor, retain_fraction: float) -> torch.Tensor:
    k = max(1, round(retain_fraction * flat_scores.numel()))
    return torch.kthvalue(flat_scores, flat_scores.numel() - k + 1).values


def extract_subnet_mask(
    encoder: nn.Module,
    batches: Sequence[object],
    batch_loss: BatchLoss,
    retain_fraction: float,
    steps: int = 100,
    score_lr: float = 0.1,
    method: str = "score",
) -> SubnetMask:
    """Find a retain-mask whose masked base loss tracks the full network's.

    ``score`` mode optimizes per-parameter importance scores (initialized
    at the weight magnitudes) against the base objective, with hard
    top-fraction binarization in the forward pass and a straight-through
    gradient. ``magnitude`` mode skips the search and keeps the globally
    largest weights. Deterministic given the batch order.
    """
    if not 0 < retain_fraction <= 1:
        raise ConfigError(f"retain_fraction must be in (0, 1], got {retain_fraction}")
    if not batches:
        raise DataError("mask extraction needs at least one batch")
    if method not in ("score", "magnitude"):
        raise ConfigError(f"unknown mask search method {method!r}")

    params = {name: p.detach() for name, p in encoder.named_parameters()}
    if retain_fraction == 1.0:
        masks = {name: torch.ones_like(p, dtype=torch.bool) for name, p in params.items()}
        return SubnetMask(masks, retain_fraction)

    scores = {name: p.abs().clone() for name, p in params.items()}
    if method == "score":
        for s in scores.values():
            s.requires_grad_(True)
        opt = torch.optim.SGD(list(scores.values()), lr=score_lr, momentum=0.9)
        for step in range(steps):
            flat = torch.cat([s.detach().flatten() for s in scores.values()])
            thr = _threshold_for(flat, retain_fraction)
            factors = {}
            for name, s in scores.items():
                hard = (s.detach() >= thr).to(params[name].dtype)
                factors[name] = hard + s - s.detach()  # forward hard, backward identity
            masked = {name: params[name] * factors[name] for name in params}
            fwd = lambda x: functional_call(encoder, masked, (x,))
            loss = batch_loss(fwd, batches[step % len(batches)])
            if not torch.isfinite(loss):
                raise DivergenceError(f"mask search loss became non-finite at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()

    flat = torch.cat([s.detach().flatten() for s in scores.values()])
    thr = _threshold_for(flat, retain_fraction)
    masks = {name: (s.detach() >= thr) for name, s in scores.items()}
    return SubnetMask(masks, retain_fraction)


class MaskedEncoder(nn.Module):
    """Encoder view whose forward pass applies a fixed retain-mask."""

    def __init__(self, encoder: nn.Module, mask: SubnetMask):
        super().__init__()
        mask.validate_against(encoder)
        self.encoder = encoder
        self.mask = mask
        self.embedding_dim = getattr(encoder, "embedding_dim", None)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return apply_mask_forward(self.encoder, self.mask, x)


def subnet_gap(
    encoder: nn.Module, mask: SubnetMask, batches: Sequence[object], batch_loss: BatchLoss
) -> float:
    """Mean over batches of (masked loss - full loss) for the base objective."""
    mask.validate_against(encoder)
    factors = {name: m.to(next(encoder.parameters()).dtype) for name, m in mask.masks.items()}
    masked = _masked_params(encoder, factors)
    gaps = []
    with torch.no_grad():
        for batch in batches:
            full = batch_loss(lambda x: encoder(x), batch)
            part = batch_loss(lambda x: functional_call(encoder, masked, (x,)), batch)
            gaps.append(float(part) - float(full))
    return float(np.mean(gaps))


def frozen_parameter_names(
    encoder: nn.Module, mask: SubnetMask | None, prefixes: Sequence[str]
) -> set[str]:
    """Names of parameters fully frozen by prefix (mask freezing is elementwise)."""
    names = [name for name, _ in encoder.named_parameters()]
    for prefix in prefixes:
        if not any(n.startswith(prefix) for n in names):
            raise ConfigError(f"frozen prefix {prefix!r} matches no encoder parameter")
    return {n for n in names if any(n.startswith(p) for p in prefixes)}


def incremental_tune(
    encoder: nn.Module,
    mask: SubnetMask,
    policy: TuningPolicy,
    epoch_batches: Callable[[int], Iterable[object]],
    batch_loss: Callable[[nn.Module, object], torch.Tensor],
    momentum: float = 0.9,
) -> dict:
    """Small-LR fine-tuning of the unmasked deep parameters.

    Parameters retained by the mask or under a frozen prefix are
    bit-identical before and after. Gradients of masked entries are zeroed
    every step and a snapshot restore enforces the contract exactly.
    """
    mask.validate_against(encoder)
    frozen = frozen_parameter_names(encoder, mask, policy.frozen_layer_prefixes)
    params = dict(encoder.named_parameters())
    snapshot = {name: p.detach().clone() for name, p in params.items()}

    prior_grad_state = {name: p.requires_grad for name, p in params.items()}
    for name, p in params.items():
        p.requires_grad_(name not in frozen)
    tunable = [p for name, p in params.items() if name not in frozen]
    opt = torch.optim.SGD(tunable, lr=policy.incremental_lr, momentum=momentum)

    steps = 0
    last_loss = float("nan")
    try:
        for epoch in range(policy.epochs_per_session):
            for batch in epoch_batches(epoch):
                loss = batch_loss(encoder, batch)
                if not torch.isfinite(loss):
                    raise DivergenceError(f"incremental tuning loss non-finite at step {steps}")
                opt.zero_grad()
                loss.backward()
                for name, p in params.items():
                    if name in frozen or p.grad is None:
                        continue
                    p.grad.masked_fill_(mask.masks[name], 0.0)
                opt.step()
                steps += 1
                last_loss = loss.detach().item()
    finally:
        for name, p in params.items():
            p.requires_grad_(prior_grad_state[name])

    with torch.no_grad():
        for name, p in params.items():
            keep = mask.masks[name]
            if name in frozen:
                p.copy_(snapshot[name])
            elif keep.any():
                p[keep] = snapshot[name][keep]
    return {"steps": steps, "final_loss": last_loss}


# -- serialization --------------------------------------------------------


def save_mask(mask: SubnetMask, path: str | Path) -> None:
    arrays: dict[str, np.ndarray] = {"__retain_fraction__": np.asarray(mask.retain_fraction)}
    for name, m in mask.masks.items():
        flat = m.detach().cpu().numpy().astype(np.uint8).reshape(-1)
        arrays[f"{name}::bits"] = np.packbits(flat)
        arrays[f"{name}::shape"] = np.asarray(m.shape, dtype=np.int64)
    np.savez(path, **arrays)


def load_mask(path: str | Path) -> SubnetMask:
    masks: dict[str, torch.Tensor] = {}
    with np.load(path) as z:
        retain = float(z["__retain_fraction__"])
        names = sorted(k[: -len("::bits")] for k in z.files if k.endswith("::bits"))
        for name in names:
            shape = tuple(int(v) for v in z[f"{name}::shape"])
            count = int(np.prod(shape)) if shape else 1
            bits = np.unpackbits(z[f"{name}::bits"], count=count).astype(bool)
            masks[name] = torch.from_numpy(bits.reshape(shape))
    return SubnetMask(masks, retain)
