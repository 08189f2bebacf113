import logging
from pathlib import Path
from typing import Optional

import click

from ..dependencies import config_option, handle_errors, load_experiment_config, out_option, output_dir, seed_option
from ...core.rng import RandomStreams, StreamRole
from ...models.experiment import UniformSampler
from ...services.experiment_service import BallThetaSampler, estimate_rademacher
from ...services.initialization_service import init_network
from ...storage.repositories import ReportRepository

logger = logging.getLogger(__name__)


@click.command("rademacher")
@config_option()
@out_option
@seed_option
@click.option("--n", "n", type=click.IntRange(min=1), default=None, help="Sample size (default: first n_grid entry)")
@click.option("--n-signs", type=click.IntRange(min=1), default=100, show_default=True)
@click.option("--n-thetas", type=click.IntRange(min=1), default=20, show_default=True)
@handle_errors
def rademacher_command(
    config_path: Path, out_dir: Optional[Path], seed: Optional[int], n: Optional[int], n_signs: int, n_thetas: int,
):
    """
    Estimate the empirical Rademacher complexity over the ball around the initialization
    """
    config = load_experiment_config(config_path, seed=seed, out_dir=out_dir)
    n = n or config.n_grid[0]
    cfg = config.model_for(n)
    streams = RandomStreams(config.master_seed)
    inputs = UniformSampler(d=cfg.d, l=cfg.l, A=config.A).sample(n, streams.generator(StreamRole.DATA, n))
    icfg = config.init_for(n, streams.derive_seed(StreamRole.TRAINING, n, 0))
    theta0, mask = init_network(cfg, icfg, RandomStreams(icfg.seed).child(0))
    sampler = BallThetaSampler(theta0, mask, config.train.c6)
    report = estimate_rademacher(
        inputs, sampler, n_signs, n_thetas, streams.derive_seed(StreamRole.SIGNS, n), cfg, radius=config.train.c6,
    )
    ReportRepository(output_dir(out_dir, config)).write_json("rademacher.json", report)
    click.echo(f"estimate={report.estimate:.6g} ({report.kind})")
