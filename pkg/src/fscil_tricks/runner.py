"""End-to-end experiment execution with checkpointing, resume, and grids."""

from __future__ import annotations

import json
import platform
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch

from fscil_tricks import pipeline
from fscil_tricks.config import ExperimentConfig, save_config
from fscil_tricks.errors import ConfigError, DataError
from fscil_tricks.geometry import (
    PrototypeClassifier,
    load_classifier,
    save_classifier,
)
from fscil_tricks.metrics import GeometryReport, SessionResult, evaluate_session
from fscil_tricks.protocol import TaskStream, export_split
from fscil_tricks.records import ExperimentRecord, write_record
from fscil_tricks.subnet import SubnetMask, load_mask, save_mask

STATE_FILE = "state.json"
SPLIT_FILE = "split.json"
CONFIG_FILE = "config.yaml"
CKPT_DIR = "checkpoints"
SESSIONS_FILE = "sessions.jsonl"
GEOMETRY_FILE = "geometry.jsonl"


def run_id_for(config: ExperimentConfig) -> str:
    return f"{config.config_hash()[:10]}-seed{config.seed}"


@dataclass
class _RunDir:
    """Run-directory layout and incremental persistence."""

    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    @property
    def ckpt(self) -> Path:
        return self.root / CKPT_DIR

    def init(self, config: ExperimentConfig, stream: TaskStream) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        self.ckpt.mkdir(exist_ok=True)
        save_config(config, self.root / CONFIG_FILE)
        export_split(stream, self.root / SPLIT_FILE)

    def write_state(self, config: ExperimentConfig, completed_session: int) -> None:
        payload = {
            "config_hash": config.config_hash(),
            "completed_session": completed_session,
        }
        (self.root / STATE_FILE).write_text(json.dumps(payload, indent=2) + "\n")

    def read_state(self) -> dict | None:
        path = self.root / STATE_FILE
        if not path.is_file():
            return None
        return json.loads(path.read_text())

    def save_checkpoint(
        self,
        encoder: torch.nn.Module,
        classifier: PrototypeClassifier,
        mask: SubnetMask | None,
        stage_info: dict,
    ) -> None:
        torch.save(encoder.state_dict(), self.ckpt / "encoder.pt")
        save_classifier(classifier, self.ckpt / "classifier.npz")
        if mask is not None:
            save_mask(mask, self.ckpt / "mask.npz")
        (self.ckpt / "stage_info.json").write_text(json.dumps(stage_info, indent=2) + "\n")

    def load_checkpoint(self, encoder: torch.nn.Module) -> tuple[PrototypeClassifier, SubnetMask | None, dict]:
        encoder.load_state_dict(torch.load(self.ckpt / "encoder.pt", weights_only=True))
        classifier = load_classifier(self.ckpt / "classifier.npz")
        mask_path = self.ckpt / "mask.npz"
        mask = load_mask(mask_path) if mask_path.is_file() else None
        stage_info = json.loads((self.ckpt / "stage_info.json").read_text())
        return classifier, mask, stage_info

    def append_session(self, result: SessionResult, geometry: GeometryReport) -> None:
        with (self.root / SESSIONS_FILE).open("a") as fh:
            fh.write(json.dumps(result.to_dict(), sort_keys=True) + "\n")
        with (self.root / GEOMETRY_FILE).open("a") as fh:
            fh.write(json.dumps(geometry.to_dict(), sort_keys=True) + "\n")

    def append_log(self, line: str) -> None:
        with (self.root / "log.txt").open("a") as fh:
            fh.write(line + "\n")

    def load_sessions(self, upto: int) -> tuple[list[SessionResult], list[GeometryReport]]:
        results = [
            SessionResult.from_dict(json.loads(line))
            for line in (self.root / SESSIONS_FILE).read_text().splitlines()
            if line.strip()
        ]
        geoms = [
            GeometryReport.from_dict(json.loads(line))
            for line in (self.root / GEOMETRY_FILE).read_text().splitlines()
            if line.strip()
        ]
        return results[: upto + 1], geoms[: upto + 1]


def run_experiment(
    config: ExperimentConfig,
    out_dir: str | Path | None = None,
    resume: bool = False,
    stop_after_session: int | None = None,
) -> ExperimentRecord:
    """Run the full pipeline; optionally persist and resume session-by-session.

    ``stop_after_session`` ends the run early with checkpoints in place
    (used to exercise resume). Resuming re-derives all remaining randomness
    from (seed, session), so an interrupted-and-resumed run reproduces the
    uninterrupted run's records exactly.
    """
    started = time.time()
    if config.threads > 0:
        torch.set_num_threads(config.threads)

    dataset = pipeline.load_dataset(config.dataset)
    stream = pipeline.build_stream(config, dataset)
    rdir = _RunDir(Path(out_dir)) if out_dir is not None else None

    start_session = 0
    results: list[SessionResult] = []
    geometry: list[GeometryReport] = []
    encoder = pipeline.make_encoder(
        config.encoder.arch, config.encoder.embedding_dim, config.seed
    )
    classifier: PrototypeClassifier | None = None
    mask: SubnetMask | None = None
    stage_info: dict = {}

    state = rdir.read_state() if (rdir and resume) else None
    if state is not None:
        if state["config_hash"] != config.config_hash():
            raise ConfigError(
                "cannot resume: config hash mismatch "
                f"(saved {state['config_hash'][:10]}, current {config.config_hash()[:10]})"
            )
        classifier, mask, stage_info = rdir.load_checkpoint(encoder)
        start_session = state["completed_session"] + 1
        results, geometry = rdir.load_sessions(state["completed_session"])
    else:
        if rdir is not None:
            rdir.init(config, stream)
            for stale in (SESSIONS_FILE, GEOMETRY_FILE, "log.txt"):
                path = rdir.root / stale
                if path.exists():
                    path.unlink()

    def log(line: str) -> None:
        if rdir is not None:
            rdir.append_log(line)

    if state is not None:
        log(f"resumed after session {state['completed_session']}")

    if start_session == 0:
        log(f"run {run_id_for(config)} seed {config.seed}")
        stage_info = {"pretrain": pipeline.run_pretraining(config, stream, encoder)}
        if stage_info["pretrain"]["ran"]:
            curve = stage_info["pretrain"]["loss_curve"]
            log(f"pretrain: {len(curve)} epochs, loss {curve[0]:.4f} -> {curve[-1]:.4f}")
        else:
            log("pretrain: skipped")
        base = pipeline.run_base_session(config, stream, encoder)
        classifier = base.classifier
        stage_info["base"] = base.info
        log(
            f"base: losses {base.info['losses']} label_space {base.info['label_space']} "
            f"etf_assigned_epoch {base.info['etf_assigned_epoch']}"
        )

        if config.toggles.subnet_tuning:
            mask, mask_info = pipeline.extract_base_mask(config, base)
            stage_info["mask"] = mask_info
            log(
                f"mask: retain {mask_info['retain_fraction']} "
                f"ones {mask_info['ones_fraction']:.4f} gap {mask_info['gap']:.6f}"
            )
        else:
            stage_info["mask"] = None
        stage_info["incremental"] = {
            "losses": ["supcon"] if pipeline.incremental_uses_supcon(config) else ["cross_entropy"],
            "tuned": config.toggles.subnet_tuning,
            "lr": config.incremental_lr,
            "epochs_per_session": config.incremental.epochs_per_session,
            "sessions": {},
        }

        result, embeddings = evaluate_session(
            classifier,
            pipeline.encode_fn(encoder),
            stream.test_sets[0],
            stream.base_class_ids,
            0,
        )
        geom = pipeline.session_geometry(config, encoder, stream, 0, embeddings)
        results, geometry = [result], [geom]
        log(f"session 0: total {result.total_accuracy:.4f} base {result.base_accuracy:.4f}")
        if rdir is not None:
            rdir.append_session(result, geom)
            rdir.save_checkpoint(encoder, classifier, mask, stage_info)
            rdir.write_state(config, completed_session=0)
        start_session = 1

    for t in range(start_session, stream.n_sessions):
        if stop_after_session is not None and t > stop_after_session:
            break
        classifier, result, geom, tune_info = pipeline.run_incremental_session(
            config, encoder, classifier, mask, stream, t
        )
        stage_info["incremental"]["sessions"][str(t)] = tune_info
        results.append(result)
        geometry.append(geom)
        novel = "-" if result.novel_accuracy is None else f"{result.novel_accuracy:.4f}"
        log(
            f"session {t}: total {result.total_accuracy:.4f} "
            f"base {result.base_accuracy:.4f} novel {novel}"
        )
        if rdir is not None:
            rdir.append_session(result, geom)
            rdir.save_checkpoint(encoder, classifier, mask, stage_info)
            rdir.write_state(config, completed_session=t)

    record = ExperimentRecord(
        run_id=run_id_for(config),
        config_hash=config.config_hash(),
        seed=config.seed,
        toggles=config.toggles.as_dict(),
        stage_info=stage_info,
        sessions=results,
        geometry=geometry,
    )
    if rdir is not None and (stop_after_session is None or stop_after_session >= stream.n_sessions - 1):
        write_record(record, rdir.root)
        runtime = {
            "started_at": started,
            "finished_at": time.time(),
            "duration_s": time.time() - started,
            "host": platform.node(),
        }
        (rdir.root / "runtime.json").write_text(json.dumps(runtime, indent=2) + "\n")
    return record


# -- grids -------------------------------------------------------------------

CATEGORY_TOGGLES = {
    "stability": ("supcon", "etf", "pseudo"),
    "adaptability": ("subnet_tuning",),
    "training": ("pretraining", "rotation"),
}


def category_config(config: ExperimentConfig, stability: bool, adaptability: bool, training: bool) -> ExperimentConfig:
    flags: dict[str, bool] = {}
    for category, on in (
        ("stability", stability),
        ("adaptability", adaptability),
        ("training", training),
    ):
        for name in CATEGORY_TOGGLES[category]:
            flags[name] = on
    return config.with_toggles(**flags)


def run_ablation_grid(
    config: ExperimentConfig,
    toggle_subsets: Sequence[dict[str, bool]],
    out_root: str | Path | None = None,
) -> list[dict]:
    """One full pipeline run per toggle subset, shared seed and data."""
    rows = []
    for i, subset in enumerate(toggle_subsets):
        cfg = config.with_toggles(**subset)
        out = Path(out_root) / f"cell_{i:02d}" if out_root is not None else None
        record = run_experiment(cfg, out_dir=out)
        rows.append(
            {
                "toggles": cfg.toggles.as_dict(),
                "final_accuracy": record.final_accuracy,
                "session_accuracies": record.session_accuracies(),
                "run_id": record.run_id,
            }
        )
    return rows


def category_grid() -> list[tuple[bool, bool, bool]]:
    """The 8 stability/adaptability/training combinations, all-on first."""
    return [
        (True, True, True),
        (True, True, False),
        (True, False, True),
        (False, True, True),
        (True, False, False),
        (False, True, False),
        (False, False, True),
        (False, False, False),
    ]


def run_category_ablation(
    config: ExperimentConfig,
    seeds: Sequence[int],
    out_root: str | Path | None = None,
) -> list[dict]:
    """Category-level 8-cell ablation averaged over seeds."""
    rows = []
    for stab, adap, train in category_grid():
        cell_accs = []
        for seed in seeds:
            cfg = category_config(config.with_seed(seed), stab, adap, train)
            out = (
                Path(out_root) / f"s{int(stab)}a{int(adap)}t{int(train)}_seed{seed}"
                if out_root is not None
                else None
            )
            record = run_experiment(cfg, out_dir=out)
            cell_accs.append(record.final_accuracy)
        rows.append(
            {
                "stability": stab,
                "adaptability": adap,
                "training": train,
                "seed_accuracies": cell_accs,
                "mean_final_accuracy": sum(cell_accs) / len(cell_accs),
            }
        )
    return rows
