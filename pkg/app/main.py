import logging

import click

from .config import settings
from .cli.commands import commands

# Configure logging
logging.basicConfig(
    level=settings.LOG_LEVEL.upper() if settings.LOG_LEVEL else (logging.INFO if settings.DEBUG else logging.WARNING),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(__name__)


@click.group(name="hardmax-classifier", help=settings.PROJECT_NAME)
@click.version_option("1.0.0", prog_name=settings.PROJECT_NAME)
def cli():
    logger.info(f"Starting {settings.PROJECT_NAME}")


for command in commands:
    cli.add_command(command)


if __name__ == "__main__":
    cli()
