"""Command-line entry point.

Exit codes: 0 pass, 1 acceptance failure, 2 configuration error,
3 runtime error.  The POLYKIN_OUT environment variable overrides the
configured output directory.
"""

from __future__ import annotations

import os
import sys

import click

from .harness import EXPERIMENTS, ConfigError, RunConfig
from .harness import run as run_experiment


@click.group()
def main():
    """Semiflexible-polymer kinetics: experiments and verification."""


@main.command("list-experiments")
def list_experiments():
    """Print the available experiment names."""
    for name in sorted(EXPERIMENTS):
        click.echo(name)


def _load(config_path, experiment, out, seed):
    cfg = RunConfig.from_toml(config_path)
    if experiment:
        cfg.experiment = experiment
    if out:
        cfg.output_dir = out
    env_out = os.environ.get("POLYKIN_OUT")
    if env_out:
        cfg.output_dir = env_out
    if seed is not None:
        cfg.seed = seed
    return cfg


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--experiment", default=None, help="override experiment.name")
@click.option("--out", default=None, help="override the output directory")
@click.option("--seed", default=None, type=int)
@click.option("--threads", default=None, type=int,
              help="numba thread count (results are thread-count invariant)")
def run(config_path, experiment, out, seed, threads):
    """Run one experiment from a TOML config and report pass/fail."""
    try:
        cfg = _load(config_path, experiment, out, seed)
        cfg.validate()
    except (ConfigError, OSError, ValueError) as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(2)
    if threads:
        try:
            import numba
            numba.set_num_threads(threads)
        except ImportError:
            pass
    try:
        report = run_experiment(cfg)
    except (ConfigError,) as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(2)
    except Exception as err:  # noqa: BLE001 - surfaced with context
        click.echo(f"runtime error in {cfg.experiment}: {err}", err=True)
        sys.exit(3)
    click.echo(report.to_json())
    status = "PASS" if report.passed else "FAIL"
    click.echo(f"{cfg.experiment}: {status}", err=True)
    sys.exit(0 if report.passed else 1)


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
def validate(config_path):
    """Validate a config without running anything."""
    try:
        cfg = RunConfig.from_toml(config_path)
        cfg.validate()
    except (ConfigError, OSError, ValueError) as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(2)
    click.echo(f"ok: experiment {cfg.experiment!r} "
               f"(hash {cfg.content_hash()[:12]})")
    sys.exit(0)


if __name__ == "__main__":
    main()
