"""Sweep incremental-tuning knobs for the 9b directional criterion (dev helper)."""

import itertools
import sys

from fscil_tricks.config import default_config
from fscil_tricks.runner import run_experiment

BASE = dict(
    dataset={"noise": 0.18},
    base={"epochs": 50, "lr": 0.05, "batch_size": 64},
    pretrain={"epochs": 0, "lr": 0.05, "batch_size": 64},
)
SEEDS = [0, 1, 2]


def final(cfg):
    rec = run_experiment(cfg)
    f = rec.sessions[-1]
    return f.total_accuracy, f.base_accuracy, f.novel_accuracy


def main():
    stab = {}
    for seed in SEEDS:
        cfg = default_config(**BASE).with_seed(seed).with_toggles(
            subnet_tuning=False, pretraining=False, rotation=False
        )
        stab[seed] = final(cfg)
        print(f"stab seed {seed}: total {stab[seed][0]:.3f} base {stab[seed][1]:.3f} novel {stab[seed][2]:.3f}", flush=True)

    grid = itertools.product([0.001, 0.002, 0.003], [10, 20, 30], [0.9])
    for lr, epochs, retain in grid:
        rows = []
        for seed in SEEDS:
            cfg = default_config(
                **BASE,
                incremental={"epochs_per_session": epochs, "lr": lr},
                subnet={"steps": 100, "retain_fraction": retain, "lr": 0.1, "method": "score"},
            ).with_seed(seed).with_toggles(pretraining=False, rotation=False)
            rows.append(final(cfg))
        d_novel = sum(r[2] - stab[s][2] for s, r in zip(SEEDS, rows)) / len(SEEDS)
        d_base = sum(r[1] - stab[s][1] for s, r in zip(SEEDS, rows)) / len(SEEDS)
        mean_total = sum(r[0] for r in rows) / len(SEEDS)
        print(
            f"lr={lr} epochs={epochs} retain={retain}: total {mean_total:.3f} "
            f"d_novel {d_novel:+.4f} d_base {d_base:+.4f}",
            flush=True,
        )


if __name__ == "__main__":
    main()
