"""Directional calibration at acceptance scale (dev helper, not shipped API)."""

import json
import sys
import time

from fscil_tricks.config import default_config
from fscil_tricks.runner import run_experiment

CONFIGS = {
    "all_off": dict(supcon=False, etf=False, pseudo=False, subnet_tuning=False, pretraining=False, rotation=False),
    "supcon_only": dict(supcon=True, etf=False, pseudo=False, subnet_tuning=False, pretraining=False, rotation=False),
    "stability": dict(supcon=True, etf=True, pseudo=True, subnet_tuning=False, pretraining=False, rotation=False),
    "stab_adapt": dict(supcon=True, etf=True, pseudo=True, subnet_tuning=True, pretraining=False, rotation=False),
    "adapt_only": dict(supcon=False, etf=False, pseudo=False, subnet_tuning=True, pretraining=False, rotation=False),
    "train_only": dict(supcon=False, etf=False, pseudo=False, subnet_tuning=False, pretraining=True, rotation=True),
    "stab_train": dict(supcon=True, etf=True, pseudo=True, subnet_tuning=False, pretraining=True, rotation=True),
    "adapt_train": dict(supcon=False, etf=False, pseudo=False, subnet_tuning=True, pretraining=True, rotation=True),
    "full": {},
}

def main():
    seeds = [0, 1, 2]
    overrides = json.loads(sys.argv[1]) if len(sys.argv) > 1 else {}
    cfg = default_config(**overrides)
    out = {}
    for name, flags in CONFIGS.items():
        rows = []
        for seed in seeds:
            c = cfg.with_seed(seed)
            c = c.with_toggles(**flags) if flags else c
            t0 = time.time()
            rec = run_experiment(c)
            f = rec.sessions[-1]
            rows.append({
                "seed": seed,
                "total": f.total_accuracy,
                "base": f.base_accuracy,
                "novel": f.novel_accuracy,
                "sep_all": rec.geometry[-1].separation["all"],
                "sep_base": rec.geometry[-1].separation["base"],
                "sep_novel": rec.geometry[-1].separation["novel"],
                "secs": round(time.time() - t0, 1),
            })
        mean = lambda k: sum(r[k] for r in rows) / len(rows)
        out[name] = {
            "total": mean("total"), "base": mean("base"), "novel": mean("novel"),
            "sep_all": mean("sep_all"), "rows": rows,
        }
        print(f"{name:12s} total {mean('total'):.4f} base {mean('base'):.4f} "
              f"novel {mean('novel'):.4f} sep {mean('sep_all'):.4f} "
              f"({sum(r['secs'] for r in rows):.0f}s)", flush=True)
    print(json.dumps(out, indent=1))

if __name__ == "__main__":
    main()
