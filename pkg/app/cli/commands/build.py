import logging
from pathlib import Path
from typing import Optional

import click

from ..dependencies import config_option, handle_errors, load_experiment_config, out_option, output_dir
from ...models.initialization import SparsityMask
from ...services.approximator_service import assemble_classifier_network, build_hierarchical_approximator
from ...storage.repositories import ModelRepository, ReportRepository

logger = logging.getLogger(__name__)


@click.command("build")
@config_option()
@out_option
@click.option(
    "--kind", type=click.Choice(["classifier", "approximator"]), default="classifier", show_default=True,
    help="Logit classifier (approximator plus logit head) or the approximator of m alone",
)
@click.option("--kgrid", type=click.IntRange(min=6), default=6, show_default=True, help="Logit head grid size")
@click.option("--h", "h", type=click.IntRange(min=2), default=None, help="Term budget (default: the model's h)")
@handle_errors
def build_command(config_path: Path, out_dir: Optional[Path], kind: str, kgrid: int, h: Optional[int]):
    """
    Build constructive weights for the config's target and write network.json and certificate.json
    """
    config = load_experiment_config(config_path, out_dir=out_dir)
    cfg = config.model
    if kind == "classifier":
        params, certificate = assemble_classifier_network(config.target, cfg, kgrid, h=h)
    else:
        params, certificate = build_hierarchical_approximator(config.target, h or cfg.h, cfg)

    target = output_dir(out_dir, config)
    ModelRepository(target).save_network(cfg, params, SparsityMask.nonzero_pattern(params))
    ReportRepository(target).write_json("certificate.json", certificate)
    click.echo(f"Built {kind}: measured sup error {certificate.measured_sup_error:.3g} -> {target}")
