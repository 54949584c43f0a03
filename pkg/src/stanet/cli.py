"""Command-line runner: synth, decompose, run, sweep and inspect."""
from __future__ import annotations

import csv
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import click
import numpy as np

from .config import ExperimentConfig, load_config
from .ica import group_decompose
from .rsnreg import spatial_regression, synth_template
from .seeding import derive_seed
from .synthgen import generate_cohort, load_cohort, save_cohort

SWEEP_AXES = ("n_ics", "sampler", "ablation")
GRID_COLUMNS = ("acc", "f1", "recall", "auc")


def _fail(message: str, code: int = 1):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _build_config(config, **flags) -> ExperimentConfig:
    try:
        cfg = load_config(config) if config else ExperimentConfig()
        sampler = flags.pop("sampler", None)
        if sampler is not None:
            flags["sampler.strategy"] = sampler
        return cfg.with_overrides(**flags)
    except (ValueError, TypeError, OSError) as err:
        _fail(f"config: {err}", 2)


def _cohort(cfg: ExperimentConfig, cohort_path: str | None):
    path = cohort_path or cfg.cohort_path
    try:
        if path:
            scans, _ = load_cohort(path)
        else:
            scans, _ = generate_cohort(cfg.cohort)
    except (ValueError, OSError) as err:
        _fail(f"cohort: {err}")
    return scans


def _run(cfg: ExperimentConfig, scans, out: Path | None, workers: int | None):
    from .eval import report_json, report_table, run_experiment

    try:
        result = run_experiment(scans, cfg, workers=workers)
    except Exception as err:
        _fail(f"run: {err}")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _atomic_write(out / "report.json", report_json(result.report))
        _atomic_write(out / "report.txt", report_table(result.report, result.timing))
        _atomic_write(out / "timing.json", json.dumps(result.timing, indent=2, sort_keys=True) + "\n")
    return result


def _common(f):
    options = [
        click.option("--config", "config", type=click.Path(exists=True, dir_okay=False), help="YAML or JSON config."),
        click.option("--seed", type=int, default=None, help="Top-level seed."),
        click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory."),
    ]
    for opt in reversed(options):
        f = opt(f)
    return f


def _experiment_flags(f):
    options = [
        click.option("--cohort", "cohort_path", type=click.Path(exists=True, file_okay=False), default=None,
                     help="Existing cohort directory (default: generate from the config)."),
        click.option("--n-ics", type=int, default=None),
        click.option("--sampler", type=str, default=None),
        click.option("--ablation", type=str, default=None),
        click.option("--classifier", type=str, default=None),
        click.option("--folds", type=int, default=None),
        click.option("--epochs", type=int, default=None, help="Training epochs per fold."),
        click.option("--workers", type=int, default=None, help="Folds evaluated in parallel."),
    ]
    for opt in reversed(options):
        f = opt(f)
    return f


@click.group()
def main():
    """Cross-validated depression classification pipeline on synthetic or stored cohorts."""


@main.command()
@_common
def synth(config, seed, out):
    """Generate a synthetic cohort directory."""
    cfg = _build_config(config, seed=seed)
    if out is None:
        _fail("--out is required", 2)
    try:
        scans, _ = generate_cohort(cfg.cohort)
        path = save_cohort(out, scans, cfg.cohort)
    except (ValueError, OSError) as err:
        _fail(f"synth: {err}")
    click.echo(f"{len(scans)} subjects written to {path}")


@main.command()
@_common
@click.option("--cohort", "cohort_path", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--n-ics", type=int, default=None)
def decompose(config, seed, out, cohort_path, n_ics):
    """Group ICA plus template regression; writes the decomposition and similarity matrices."""
    cfg = _build_config(config, seed=seed, n_ics=n_ics)
    if out is None:
        _fail("--out is required", 2)
    scans = _cohort(cfg, cohort_path)
    out = Path(out)
    try:
        dec = group_decompose(scans, cfg.n_ics, seed=derive_seed(cfg.seed, "ica"), allow_unconverged=True)
        dec.save(out / "decomposition")
        template = synth_template(cfg.n_regions, scans[0].data.shape[1], seed=derive_seed(cfg.seed, "template"))
        template.save(out / "template")
        sim = np.array([spatial_regression(m, template) for m in dec.subject_maps])
        np.save(out / "similarity.npy", sim)
    except Exception as err:
        _fail(f"decompose: {err}")
    state = "converged" if dec.converged else f"not converged (delta {dec.final_delta:.2e})"
    click.echo(f"{cfg.n_ics} components, ICA {state}; written to {out}")


@main.command()
@_common
@_experiment_flags
def run(config, seed, out, cohort_path, n_ics, sampler, ablation, classifier, folds, epochs, workers):
    """Cross-validate one configuration and write report.json / report.txt."""
    cfg = _build_config(config, seed=seed, n_ics=n_ics, sampler=sampler, ablation=ablation,
                        classifier=classifier, folds=folds, workers=workers, out=out,
                        **{"train.epochs": epochs})
    scans = _cohort(cfg, cohort_path)
    result = _run(cfg, scans, Path(cfg.out) if cfg.out else None, None)
    from .eval import report_table

    click.echo(report_table(result.report, result.timing), nl=False)
    if not result.ok:
        sys.exit(1)


def _parse_values(axis: str, values: str) -> list:
    items = [v.strip() for v in values.split(",") if v.strip()]
    if not items:
        _fail("--values must list at least one value", 2)
    if axis == "n_ics":
        try:
            return [int(v) for v in items]
        except ValueError:
            _fail("n_ics values must be integers", 2)
    return items


@main.command()
@_common
@_experiment_flags
@click.option("--axis", type=click.Choice(SWEEP_AXES), required=True)
@click.option("--values", "values", required=True, help="Comma-separated values for the axis.")
def sweep(config, seed, out, cohort_path, n_ics, sampler, ablation, classifier, folds, epochs, workers,
          axis, values):
    """One run per axis value with a shared seed; writes grid.csv."""
    cfg = _build_config(config, seed=seed, n_ics=n_ics, sampler=sampler, ablation=ablation,
                        classifier=classifier, folds=folds, workers=workers, out=out,
                        **{"train.epochs": epochs})
    vals = _parse_values(axis, values)
    scans = _cohort(cfg, cohort_path)
    from .eval import report_json, report_table, run_experiment

    root = Path(cfg.out) if cfg.out else None
    rows = []
    for v in vals:
        override = {"sampler.strategy" if axis == "sampler" else axis: v}
        row = {"axis": axis, "value": str(v)}
        try:
            cell = cfg.with_overrides(**override)
            result = run_experiment(scans, cell)
        except Exception as err:
            click.echo(f"cell {axis}={v} failed: {err}", err=True)
            row.update({k: "FAILED" for k in GRID_COLUMNS}, status="FAILED", config_hash="")
            rows.append(row)
            continue
        agg = result.report["aggregate"]
        if result.ok:
            row.update({k: _cell(agg[k]) for k in GRID_COLUMNS}, status="ok")
        else:
            row.update({k: "FAILED" for k in GRID_COLUMNS}, status="FAILED")
        row["config_hash"] = result.report["config_hash"]
        rows.append(row)
        if root is not None:
            cell_dir = root / f"{axis}={v}"
            cell_dir.mkdir(parents=True, exist_ok=True)
            _atomic_write(cell_dir / "report.json", report_json(result.report))
            _atomic_write(cell_dir / "report.txt", report_table(result.report, result.timing))
        click.echo(f"{axis}={v}: " + " ".join(f"{k}={row[k]}" for k in GRID_COLUMNS))
    text = grid_csv(rows)
    if root is not None:
        _atomic_write(root / "grid.csv", text)
    click.echo(text, nl=False)
    if any(r["status"] != "ok" for r in rows):
        sys.exit(1)


def _cell(v) -> str:
    return "" if v is None else f"{v:.6f}"


def grid_csv(rows: list) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["axis", "value", *GRID_COLUMNS, "status", "config_hash"],
                            lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


@main.command()
@click.argument("path", type=click.Path(exists=True))
def inspect(path):
    """Print the table of a report.json (or a directory holding one)."""
    from .eval import report_table

    p = Path(path)
    if p.is_dir():
        p = p / "report.json"
    try:
        report = json.loads(p.read_text())
        timing_path = p.with_name("timing.json")
        timing = json.loads(timing_path.read_text()) if timing_path.exists() else None
        click.echo(report_table(report, timing), nl=False)
    except (OSError, ValueError, KeyError) as err:
        _fail(f"inspect: {err}")


if __name__ == "__main__":
    main()
