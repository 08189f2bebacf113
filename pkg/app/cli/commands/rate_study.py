import logging
from pathlib import Path
from typing import Optional

import click

from ..dependencies import (
    config_option, handle_errors, load_experiment_config, mode_option, out_option, output_dir,
    seed_option, threads_option,
)
from ...models.experiment import RateReportRow
from ...services.experiment_service import run_rate_study
from ...storage.repositories import ReportRepository

logger = logging.getLogger(__name__)


@click.command("rate-study")
@config_option()
@out_option
@seed_option
@mode_option
@threads_option
@handle_errors
def rate_study_command(
    config_path: Path, out_dir: Optional[Path], seed: Optional[int], mode: Optional[str], threads: Optional[int],
):
    """
    Run the excess-risk rate study and write rate_report.csv and rate_summary.json
    """
    config = load_experiment_config(config_path, seed=seed, mode=mode, threads=threads, out_dir=out_dir)
    rows, summary = run_rate_study(config)

    reports = ReportRepository(output_dir(out_dir, config))
    reports.write_rows("rate_report.csv", rows, RateReportRow)
    reports.write_json("rate_summary.json", summary)
    slope = "null" if summary.slope is None else f"{summary.slope:.4f}"
    click.echo(f"{len(rows)} rows, {summary.failures} failed, slope={slope}")
