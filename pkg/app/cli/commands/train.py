import logging
from pathlib import Path
from typing import Optional

import click
import pandas as pd

from ..dependencies import (
    config_option, handle_errors, load_experiment_config, mode_option, out_option, output_dir, seed_option,
)
from ...core.rng import RandomStreams, StreamRole
from ...services.experiment_service import generate_dataset
from ...services.optimizer_service import train
from ...storage.repositories import ModelRepository, ReportRepository

logger = logging.getLogger(__name__)


@click.command("train")
@config_option()
@out_option
@seed_option
@mode_option
@click.option("--n", "n", type=click.IntRange(min=1), default=None, help="Sample size (default: first n_grid entry)")
@handle_errors
def train_command(config_path: Path, out_dir: Optional[Path], seed: Optional[int], mode: Optional[str], n: Optional[int]):
    """
    Train one mixture on synthetic data and write model.json and loss_trace.csv
    """
    config = load_experiment_config(config_path, seed=seed, mode=mode, out_dir=out_dir)
    n = n or config.n_grid[0]
    streams = RandomStreams(config.master_seed)
    cfg = config.model_for(n)
    data = generate_dataset(
        config.target, n, config.A, streams.derive_seed(StreamRole.DATA, n, 0),
        cfg.d, cfg.l, config.regime, config.margin,
    )
    train_seed = streams.derive_seed(StreamRole.TRAINING, n, 0)
    model = train(data, cfg, config.init_for(n, train_seed), config.train.model_copy(update={"n": n}), seed=train_seed)

    target = output_dir(out_dir, config)
    ModelRepository(target).save_trained(model)
    trace = pd.DataFrame({"step": range(len(model.loss_trace)), "empirical_loss": model.loss_trace})
    ReportRepository(target).write_frame("loss_trace.csv", trace)
    click.echo(f"t_hat={model.t_hat} empirical_loss={model.loss_trace[model.t_hat]:.6f} -> {target}")
