import logging
from pathlib import Path
from typing import Optional

import click

from ..dependencies import handle_errors, out_option, output_dir, seed_option
from ...services.verification_service import SUITES, VERIFY_SEED, verify_constructions
from ...storage.repositories import ReportRepository

logger = logging.getLogger(__name__)


@click.command("verify")
@click.option(
    "--suites", default="all", show_default=True,
    help=f"Comma-separated subset of {', '.join(SUITES)}; an empty string selects none",
)
@out_option
@seed_option
@click.pass_context
@handle_errors
def verify_command(ctx: click.Context, suites: str, out_dir: Optional[Path], seed: Optional[int]):
    """
    Run the construction and diagnostic checks; exits with status 1 when any check fails
    """
    selected = None if suites.strip() == "all" else [s.strip() for s in suites.split(",") if s.strip()]
    report = verify_constructions(selected, seed=VERIFY_SEED if seed is None else seed)
    ReportRepository(output_dir(out_dir)).write_json("verification.json", report)
    for check in report.checks:
        click.echo(f"[{'PASS' if check.passed else 'FAIL'}] {check.suite}/{check.name}")
    if not report.passed:
        ctx.exit(1)
