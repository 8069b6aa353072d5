"""Command-line interface: run, report, sweep, ablate, eval."""

from __future__ import annotations

import functools
import itertools
import json
import os
import sys
from pathlib import Path

import click

from fscil_tricks.config import load_config
from fscil_tricks.errors import FsciTricksError
from fscil_tricks.records import load_record
from fscil_tricks.reports import accuracy_table, format_table, write_report
from fscil_tricks.runner import (
    _RunDir,
    run_category_ablation,
    run_experiment,
    run_id_for,
)

RUN_ROOT_ENV = "FSCIL_RUN_ROOT"


def _run_root() -> Path:
    return Path(os.environ.get(RUN_ROOT_ENV, "runs"))


def _exit_on_error(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except FsciTricksError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)

    return wrapper


@click.group()
def main():
    """Few-shot class-incremental learning experiments."""


_config_opt = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
    help="YAML experiment config (defaults used when omitted).",
)
_override_opt = click.option(
    "--override", "overrides", multiple=True, metavar="KEY.PATH=VALUE",
    help="Config override, repeatable (e.g. --override base.lr=0.01).",
)


@main.command()
@_config_opt
@_override_opt
@click.option("--seed", type=int, default=None, help="Override the run seed.")
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help=f"Run directory (default: ${RUN_ROOT_ENV}/<run_id>).")
@click.option("--resume", is_flag=True, help="Resume from this run directory's checkpoints.")
@_exit_on_error
def run(config_path, overrides, seed, out, resume):
    """Run one experiment end to end and persist its record."""
    ov = list(overrides)
    if seed is not None:
        ov.append(f"seed={seed}")
    config = load_config(config_path, ov)
    out_dir = Path(out) if out else _run_root() / run_id_for(config)
    record = run_experiment(config, out_dir=out_dir, resume=resume)
    click.echo(f"run {record.run_id} -> {out_dir}")
    for s in record.sessions:
        novel = "-" if s.novel_accuracy is None else f"{s.novel_accuracy:.4f}"
        click.echo(
            f"  session {s.session_index}: total {s.total_accuracy:.4f} "
            f"base {s.base_accuracy:.4f} novel {novel}"
        )


@main.command()
@click.argument("run_dirs", nargs=-1, type=click.Path(exists=True, file_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Report output directory (default: <first run dir>/report).")
@_exit_on_error
def report(run_dirs, out):
    """Emit tables and figures for one or more completed runs."""
    if not run_dirs:
        raise click.UsageError("report needs at least one run directory")
    records = [load_record(d) for d in run_dirs]
    out_dir = Path(out) if out else Path(run_dirs[0]) / "report"
    written = write_report(records, out_dir)
    click.echo(format_table(*accuracy_table(records)))
    click.echo(f"wrote {len(written)} files to {out_dir}")


@main.command()
@_config_opt
@_override_opt
@click.option("--grid", "grids", multiple=True, required=True, metavar="KEY.PATH=V1,V2,...",
              help="Sweep axis, repeatable; axes combine as a cartesian product.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
@_exit_on_error
def sweep(config_path, overrides, grids, out):
    """Run a config grid and rank cells by final accuracy."""
    axes: list[tuple[str, list[str]]] = []
    for spec in grids:
        if "=" not in spec:
            raise click.UsageError(f"--grid {spec!r} must look like key.path=v1,v2")
        key, raw = spec.split("=", 1)
        axes.append((key.strip(), [v.strip() for v in raw.split(",") if v.strip()]))
    out_root = Path(out) if out else _run_root() / "sweep"

    rows = []
    for i, combo in enumerate(itertools.product(*(vals for _, vals in axes))):
        cell = [f"{key}={val}" for (key, _), val in zip(axes, combo)]
        config = load_config(config_path, list(overrides) + cell)
        record = run_experiment(config, out_dir=out_root / f"cell_{i:03d}")
        rows.append({"cell": ", ".join(cell), "final_accuracy": record.final_accuracy,
                     "run_id": record.run_id, "dir": f"cell_{i:03d}"})
    rows.sort(key=lambda r: -r["final_accuracy"])
    (out_root / "sweep_summary.json").write_text(json.dumps(rows, indent=2) + "\n")
    header = ["rank", "cell", "final", "run_id"]
    table = [[i + 1, r["cell"], f"{r['final_accuracy']:.4f}", r["run_id"]] for i, r in enumerate(rows)]
    click.echo(format_table(header, table))
    click.echo(f"summary -> {out_root / 'sweep_summary.json'}")


@main.command()
@_config_opt
@_override_opt
@click.option("--seeds", default="0", help="Comma-separated seeds to average over.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
@_exit_on_error
def ablate(config_path, overrides, seeds, out):
    """Run the 8-cell stability/adaptability/training ablation grid."""
    config = load_config(config_path, list(overrides))
    seed_list = [int(s) for s in seeds.split(",") if s.strip()]
    out_root = Path(out) if out else _run_root() / "ablation"
    rows = run_category_ablation(config, seed_list, out_root=out_root)
    (Path(out_root) / "ablation_grid.json").write_text(json.dumps(rows, indent=2) + "\n")
    header = ["stab", "adap", "train", "mean_final"]
    table = [
        [("y" if r["stability"] else "n"), ("y" if r["adaptability"] else "n"),
         ("y" if r["training"] else "n"), f"{r['mean_final_accuracy']:.4f}"]
        for r in rows
    ]
    click.echo(format_table(header, table))
    click.echo(f"grid -> {Path(out_root) / 'ablation_grid.json'}")


@main.command(name="eval")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@_exit_on_error
def eval_cmd(run_dir):
    """Re-evaluate a run's final checkpoint on its cumulative test set."""
    from fscil_tricks import pipeline
    from fscil_tricks.metrics import evaluate_session
    from fscil_tricks.protocol import replay_split

    run_dir = Path(run_dir)
    config = load_config(run_dir / "config.yaml")
    dataset = pipeline.load_dataset(config.dataset)
    stream = replay_split(dataset, run_dir / "split.json")
    encoder = pipeline.make_encoder(config.encoder.arch, config.encoder.embedding_dim, config.seed)
    rdir = _RunDir(run_dir)
    classifier, _, _ = rdir.load_checkpoint(encoder)
    t = stream.n_sessions - 1
    result, _ = evaluate_session(
        classifier, pipeline.encode_fn(encoder), stream.test_sets[t], stream.base_class_ids, t
    )
    novel = "-" if result.novel_accuracy is None else f"{result.novel_accuracy:.4f}"
    click.echo(
        f"session {t}: total {result.total_accuracy:.4f} "
        f"base {result.base_accuracy:.4f} novel {novel}"
    )


if __name__ == "__main__":
    main()
