"""Command-line interface: synthesize data, run experiments and baselines, explain checkpoints."""

import json
import logging
import sys
import traceback
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Optional, Tuple

import click

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import MODALITIES, ConfigManager, RunConfig, SynthConfig, resolved_config
from .data import (
    MultiOmicsDataset,
    SyntheticTruth,
    generate_synthetic,
    load_multiomics,
    write_labels_csv,
    write_omics_csv,
)
from .error_handling import ConfigurationError, TreeGraphError, create_error_response, setup_logging
from .experiment import assemble_baseline_report, assemble_report, best_repeat, run_baseline_repeats, run_repeats
from .graph import write_edge_list
from .interpret import feature_importance, rank_biomarkers, relative_graph_importance, write_rankings_csv
from .report import write_json, write_report

logger = logging.getLogger(__name__)


def _fail(message: str, code: str, details: Optional[dict] = None) -> None:
    click.echo(json.dumps(create_error_response(message, code, details), default=str), err=True)
    sys.exit(1)


def reported(func: Callable[..., Any]) -> Callable[..., Any]:
    """Turn any failure into one JSON diagnostic line on stderr and exit status 1."""

    @wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except TreeGraphError as e:
            logger.debug(f"{type(e).__name__}: {e}")
            _fail(str(e), e.error_code or "GENERAL_ERROR", e.details)
        except (OSError, ValueError) as e:
            _fail(str(e), type(e).__name__.upper())
        except (click.ClickException, click.exceptions.Exit, click.Abort):
            raise
        except Exception as e:
            logger.debug(f"Traceback: {traceback.format_exc()}")
            _fail(f"Unexpected error in {func.__name__}: {e}", "UNEXPECTED_ERROR",
                  {"function": func.__name__, "error_type": type(e).__name__, "original_error": str(e)})

    return wrapper


def _start_logging(ctx: click.Context, config: Optional[RunConfig] = None) -> None:
    level = ctx.obj.get("log_level") or (config.log_level if config else "INFO")
    setup_logging(level, ctx.obj.get("log_file"))


def _load_config(path: Optional[Path], **overrides: Any) -> RunConfig:
    manager = ConfigManager(path)
    manager.load_config()
    return manager.update_config(**overrides)


def _load_dataset(config: RunConfig) -> Tuple[MultiOmicsDataset, Optional[SyntheticTruth]]:
    if config.synth is not None:
        return generate_synthetic(config.synth, config.synth.seed)
    paths = config.data_paths()
    return load_multiomics(paths["methylation_path"], paths["mrna_path"], paths["mirna_path"],
                           paths["labels_path"]), None


@click.group()
@click.version_option(__version__, prog_name="treegraph")
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
                                               case_sensitive=False),
              default=None, help="Overrides log_level from the config file")
@click.option("--log-file", type=click.Path(dir_okay=False), default=None, help="Also log (at DEBUG) to this file")
@click.pass_context
def cli(ctx: click.Context, log_level: Optional[str], log_file: Optional[str]) -> None:
    """Tree-ensemble feature graphs feeding a graph-masked multi-omics classifier."""
    ctx.ensure_object(dict)
    ctx.obj["log_level"] = log_level
    ctx.obj["log_file"] = log_file


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Run config with a synth block; defaults are used without one")
@click.option("--seed", type=int, default=None, help="Generator seed (overrides synth.seed)")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.pass_context
@reported
def synth(ctx: click.Context, config_path: Optional[Path], seed: Optional[int], out_dir: Path) -> None:
    """Write a planted-signal dataset: three omics CSVs, labels.csv and truth.json."""
    synth_config = SynthConfig()
    if config_path is not None:
        config = _load_config(config_path)
        if config.synth is None:
            raise ConfigurationError(f"{config_path} has no synth block", error_code="INVALID_CONFIG",
                                     details={"errors": ["synth: block required for the synth command"]})
        synth_config = config.synth
        _start_logging(ctx, config)
    else:
        _start_logging(ctx)
    seed = synth_config.seed if seed is None else seed
    dataset, truth = generate_synthetic(synth_config, seed)

    out_dir.mkdir(parents=True, exist_ok=True)
    for name, matrix in zip(dataset.modality_names, dataset.modalities):
        write_omics_csv(matrix, out_dir / f"{name}.csv")
    write_labels_csv(dataset.sample_ids, dataset.labels, out_dir / "labels.csv")
    write_json(out_dir / "truth.json", {"seed": seed, "informative": truth.as_dict()})
    click.echo(f"Wrote synthetic dataset (n={dataset.n_samples}, seed={seed}) to {out_dir}")


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--seed", type=int, default=0, show_default=True, help="First split seed")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True, help="Repeats run in parallel")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Overrides output_dir")
@click.option("--top-k", type=click.IntRange(min=1), default=None, help="Overrides top_k")
@click.pass_context
@reported
def experiment(ctx: click.Context, config_path: Path, seed: int, jobs: int, out_dir: Optional[Path],
               top_k: Optional[int]) -> None:
    """Repeated-split experiment: report.json, rankings.csv, the best repeat's checkpoint and graphs."""
    config = _load_config(config_path, output_dir=out_dir, top_k=top_k)
    _start_logging(ctx, config)
    dataset, _ = _load_dataset(config)

    results = run_repeats(dataset, config.n_repeats, config.gbt, config.train, base_seed=seed, jobs=jobs)
    provenance = {**resolved_config(config), "base_seed": seed}
    report = assemble_report(results, dataset, config.top_k, config.biomarker_mode, provenance)

    out = config.output_dir
    write_report(report, out / "report.json")
    rankings = {m: [(b.feature, b.score) for b in entries] for m, entries in (report.biomarkers or {}).items()}
    write_rankings_csv(rankings, out / "rankings.csv")

    best = best_repeat(results)
    save_checkpoint(best.model, out / "model.npz", dataset.modality_names, config.train.model_dump(mode="json"))
    for name, graph in zip(dataset.modality_names, best.graphs):
        write_edge_list(graph, out / "graphs" / f"{name}_edges.csv", out / "graphs" / f"{name}_nodes.csv")

    agg = report.aggregate
    click.echo(" ".join(f"{m}={agg[m].mean:.3f}±{agg[m].sd:.3f} [{agg[m].ci_low:.3f}, {agg[m].ci_high:.3f}]"
                        for m in ("accuracy", "auc", "f1")))


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--which", type=click.Choice(["gbt", "dfn"]), required=True, help="Baseline model")
@click.option("--seed", type=int, default=0, show_default=True, help="First split seed")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.pass_context
@reported
def baseline(ctx: click.Context, config_path: Path, which: str, seed: int, jobs: int,
             out_dir: Optional[Path]) -> None:
    """Concatenated-feature baseline on the same split seeds as ``experiment``."""
    config = _load_config(config_path, output_dir=out_dir)
    _start_logging(ctx, config)
    dataset, _ = _load_dataset(config)
    results = run_baseline_repeats(dataset, which, config.n_repeats, config.gbt, config.train,
                                   base_seed=seed, jobs=jobs)
    report = assemble_baseline_report(results, which, {**resolved_config(config), "base_seed": seed})
    write_report(report, config.output_dir / "baseline_report.json")
    auc = report.aggregate["auc"]
    click.echo(f"{which}: auc={auc.mean:.3f}±{auc.sd:.3f} f1={report.aggregate['f1'].mean:.3f}")


@cli.command()
@click.argument("checkpoint", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--top-k", type=click.IntRange(min=1), default=30, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.pass_context
@reported
def explain(ctx: click.Context, checkpoint: Path, top_k: int, out_dir: Path) -> None:
    """Feature rankings and relative graph importance from a saved model, without retraining."""
    _start_logging(ctx)
    model, manifest = load_checkpoint(checkpoint)
    names = manifest.get("modality_names") or list(MODALITIES)
    rankings = {
        name: rank_biomarkers(feature_importance(branch, graph), top_k)
        for name, branch, graph in zip(names, model.branches, model.graphs)
    }
    rig = relative_graph_importance(model.fusion, model.embedding_widths)
    write_rankings_csv(rankings, out_dir / "rankings.csv")
    write_json(out_dir / "rig.json", {"modalities": names, "rig": rig.as_list()})
    click.echo(" ".join(f"{n}={v:.3f}" for n, v in zip(names, rig.values)))


def main() -> None:
    """Main entry point for the treegraph CLI."""
    cli(obj={})


if __name__ == "__main__":
    main()
