"""Deterministic seed derivation.

Every source of randomness in a run (parameter init, batch order,
augmentation, mask search, ...) draws from its own generator derived from
the run seed plus a purpose key. Stages and sessions therefore never share
RNG state, which is what makes checkpoint/resume and the frozen-baseline
equivalence bit-exact.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def derive_seed(*parts: object) -> int:
    """Hash a tuple of labels (ints/strings) into a 63-bit seed."""
    key = "/".join(repr(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def numpy_rng(*parts: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))


def torch_generator(*parts: object) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(derive_seed(*parts))
    return gen
