import functools
import logging
from pathlib import Path
from typing import Optional

import click
from pydantic import ValidationError

from ..config import settings
from ..core.exceptions import TransformerClassifierError
from ..models.experiment import ExperimentConfig

logger = logging.getLogger(__name__)


def handle_errors(command):
    """
    Turn domain and validation errors into click errors (exit code 1)
    """
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except TransformerClassifierError as e:
            logger.error(f"{type(e).__name__}: {e.detail}")
            raise click.ClickException(e.detail)
        except ValidationError as e:
            raise click.ClickException(f"Invalid configuration: {e}")
    return wrapper


def config_option(required: bool = True):
    return click.option(
        "--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
        required=required, help="Experiment configuration (JSON)",
    )


def out_option(command):
    return click.option(
        "--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=None,
        help=f"Output directory (default: the config's output_dir or {settings.OUTPUT_DIR})",
    )(command)


def seed_option(command):
    return click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Master seed")(command)


def mode_option(command):
    return click.option(
        "--mode", type=click.Choice(["full", "outer-only"]), default=None, help="Train all weights or w only",
    )(command)


def threads_option(command):
    return click.option("--threads", type=click.IntRange(min=1), default=None, help="Worker threads")(command)


def load_experiment_config(
    path: Path, seed: Optional[int] = None, mode: Optional[str] = None, threads: Optional[int] = None,
    out_dir: Optional[Path] = None,
) -> ExperimentConfig:
    """
    Read and validate an experiment config, then apply the command-line overrides
    """
    config = ExperimentConfig.model_validate_json(Path(path).read_text())
    updates = {}
    if seed is not None:
        updates["master_seed"] = seed
    if threads is not None:
        updates["threads"] = threads
    if out_dir is not None:
        updates["output_dir"] = str(out_dir)
    if mode is not None:
        updates["train"] = config.train.model_copy(update={"mode": mode.replace("-", "_")})
    if updates:
        config = config.model_copy(update=updates)
    logger.info(f"Loaded config {path} (seed={config.master_seed}, mode={config.train.mode})")
    return config


def output_dir(out_dir: Optional[Path], config: Optional[ExperimentConfig] = None) -> Path:
    if out_dir is not None:
        return out_dir
    return Path(config.output_dir if config is not None else settings.OUTPUT_DIR)
