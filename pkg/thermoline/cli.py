import json
import logging
import time
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Final

import click
import numpy as np
import pandas as pd

from thermoline import artifacts
from thermoline.bounds import bound_report
from thermoline.config import Command, ConfigError, ExperimentConfig, load_config
from thermoline.inference import smoothed_jeffreys_prior
from thermoline.pool import set_thread_count
from thermoline.simulate import posterior_snapshots, run_adaptive, run_ensemble, run_trajectory

log = logging.getLogger(__name__)

EXIT_OK: Final = 0
EXIT_CONFIG_ERROR: Final = 2
EXIT_RUNTIME_ERROR: Final = 3


def library_version() -> str:
    try:
        return version("thermoline")
    except PackageNotFoundError:
        return "0+unknown"


def _prior(config: ExperimentConfig):
    return smoothed_jeffreys_prior(config.prior, config.model, config.grid_size)


def _render(config: ExperimentConfig) -> dict[Path, str]:
    """Artifact contents by target path, all computed before anything is written."""
    out = config.output_path
    digest = config.config_hash

    def csv(frame: pd.DataFrame) -> str:
        return artifacts.frame_to_csv(frame, digest)

    match config.command:
        case Command.GEOMETRY:
            low, high, points = config.geometry_ratios
            frame = artifacts.geometry_frame(np.linspace(low, high, points), config.model.gap)
            return {out / "geometry.csv": csv(frame)}
        case Command.PRIOR:
            priors = [
                smoothed_jeffreys_prior(config.prior, model, config.grid_size)
                for model in config.prior_models
            ]
            return {out / "prior.csv": csv(artifacts.prior_frame(priors))}
        case Command.TRAJECTORY:
            prior = _prior(config)
            record = run_trajectory(
                prior, config.measurement, config.nu, config.true_theta, config.seed
            )
            snapshots = posterior_snapshots(
                prior, config.measurement, record.outcomes, config.snapshot_steps
            )
            return {
                out / "trajectory.csv": csv(
                    record.to_frame(probe_gap=config.measurement.probe_gap)
                ),
                out / "trajectory_posterior.csv": csv(snapshots),
            }
        case Command.ENSEMBLE:
            summary = run_ensemble(
                _prior(config),
                config.measurement,
                config.nu_grid,
                config.n_traj,
                config.seed,
                reference=config.reference,
            )
            return {out / "ensemble.csv": csv(summary.to_frame())}
        case Command.BOUNDS:
            prior = _prior(config)
            reports = [
                bound_report(
                    prior,
                    config.measurement,
                    nu,
                    reference=config.reference,
                    n_mc=config.n_mc or None,
                    seed=config.seed,
                )
                for nu in config.nu_grid
            ]
            document = {"reports": [r.as_dict() for r in reports]}
            return {
                out / "bounds.csv": csv(artifacts.bounds_frame(reports)),
                out / "bounds.json": artifacts.to_json(document, digest),
            }
        case Command.ADAPTIVE:
            summary = run_adaptive(
                _prior(config),
                config.policy,
                config.nu,
                config.n_traj,
                config.seed,
                nu_grid=config.nu_grid,
            )
            return {
                out / "adaptive.csv": csv(summary.to_frame()),
                out / "adaptive_trajectory.csv": csv(summary.trajectories[0].to_frame()),
            }


def run(config: ExperimentConfig) -> dict[str, Any]:
    """Run the configured command, write its artifacts and return the run manifest."""
    log.info(f"Running {config.command} ({config.command.label()}), seed {config.seed}")
    start = time.perf_counter()
    paths = artifacts.write_artifacts(_render(config))
    wall_time = time.perf_counter() - start
    log.info(f"Wrote {len(paths)} artifact(s) to {config.output_path} in {wall_time:.2f}s")
    return {
        "command": str(config.command),
        "config_hash": config.config_hash,
        "seed": config.seed,
        "version": library_version(),
        "wall_time": wall_time,
        "artifacts": [str(p) for p in paths],
    }


@click.command(context_settings={"help_option_names": ["-h", "--help"]})
@click.option(
    "--config",
    "config_path",
    required=True,
    type=click.Path(dir_okay=False, path_type=Path),
    help="JSON experiment config.",
)
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), help="Override the config seed.")
@click.option(
    "--output",
    "output_path",
    type=click.Path(file_okay=False, path_type=Path),
    help="Artifact directory, overrides the config `output`.",
)
@click.option(
    "--threads",
    type=click.IntRange(min=1),
    envvar="THERMOLINE_THREADS",
    help="Worker threads for trajectories and Monte Carlo draws.",
)
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
@click.version_option(package_name="thermoline")
@click.pass_context
def main(
    ctx: click.Context,
    config_path: Path,
    seed: int | None,
    output_path: Path | None,
    threads: int | None,
    verbose: bool,
):
    """Bayesian thermometry experiments driven by a JSON config."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(config_path, seed, output_path)
    except ConfigError as e:
        click.echo(f"Config error in {config_path}: {e}", err=True)
        ctx.exit(EXIT_CONFIG_ERROR)

    set_thread_count(threads)
    try:
        manifest = run(config)
    except Exception as e:
        log.error(f"{config.command} run failed: {e}", exc_info=True)
        ctx.exit(EXIT_RUNTIME_ERROR)
    finally:
        set_thread_count(None)
    click.echo(json.dumps(manifest))
    ctx.exit(EXIT_OK)
