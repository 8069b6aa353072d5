import numpy as np
import pytest
import torch

from fscil_tricks.config import default_config
from fscil_tricks.protocol import Dataset, LabeledSample


def tiny_dataset(
    n_classes: int = 10, train_per_class: int = 12, test_per_class: int = 4, seed: int = 0
) -> Dataset:
    """Label structure without meaningful pixels, for protocol-level tests."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for split, count, sink in (("train", train_per_class, train), ("test", test_per_class, test)):
        for label in range(n_classes):
            for i in range(count):
                img = rng.uniform(size=(2, 2, 1)).astype(np.float32)
                sink.append(LabeledSample(img, label, f"{split}-{label}-{i}"))
    return Dataset(tuple(train), tuple(test))


@pytest.fixture(scope="session")
def small_config():
    """Short-epoch config for fast pipeline-level tests."""
    return default_config(
        dataset={"noise": 0.18, "train_per_class": 24, "test_per_class": 8},
        pretrain={"epochs": 2, "lr": 0.05, "batch_size": 64},
        base={"epochs": 4, "lr": 0.05, "batch_size": 64},
        incremental={"epochs_per_session": 2},
        subnet={"steps": 8, "retain_fraction": 0.8, "lr": 0.1, "method": "score"},
    )


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
