import logging
from pathlib import Path
from typing import Optional

import click

from ..dependencies import handle_errors, out_option, output_dir, seed_option
from ...config import settings
from ...core.exceptions import PreconditionError
from ...models.experiment import PerturbationRow
from ...services.experiment_service import run_perturbation_study
from ...storage.repositories import ModelRepository, ReportRepository

logger = logging.getLogger(__name__)

DEFAULT_EPS_GRID = "1e-3,1e-4,1e-5"


@click.command("perturb")
@click.option(
    "--model", "model_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True,
    help="network.json from build or model.json from train",
)
@click.option("--eps", "eps_grid", default=DEFAULT_EPS_GRID, show_default=True, help="Comma-separated, descending")
@click.option("--n-inputs", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--input-bound", "A", type=click.FloatRange(min=0, min_open=True), default=1.0, show_default=True)
@out_option
@seed_option
@handle_errors
def perturb_command(
    model_path: Path, eps_grid: str, n_inputs: int, A: float, out_dir: Optional[Path], seed: Optional[int],
):
    """
    Measure output deviations under uniform weight perturbations and write perturbation.csv
    """
    try:
        eps = [float(e) for e in eps_grid.split(",") if e.strip()]
    except ValueError:
        raise PreconditionError(f"Cannot parse eps grid '{eps_grid}'")
    cfg, params, mask = ModelRepository(model_path.parent).load_single(model_path.name)
    rows = run_perturbation_study(
        params, mask, cfg, eps, n_inputs, settings.MASTER_SEED if seed is None else seed, A=A,
    )
    ReportRepository(output_dir(out_dir)).write_rows("perturbation.csv", rows, PerturbationRow)
    for row in rows:
        click.echo(f"eps={row.eps:g} max_deviation={row.max_deviation:.6g} ratio={row.ratio}")
