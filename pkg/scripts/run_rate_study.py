"""
Script to manually run the desk-scale rate study from a config file
"""
import os
import sys
import logging
import traceback

# Add the project root to the path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

# Import necessary modules
from app.models.experiment import ExperimentConfig, RateReportRow
from app.services.experiment_service import run_rate_study
from app.storage.repositories import ReportRepository

DEFAULT_CONFIG = os.path.join(os.path.dirname(__file__), '..', 'configs', 'rate_study.json')


def run(config_path: str):
    """Run the rate study and write its reports"""
    logger.info(f"Loading config {config_path}")
    with open(config_path) as f:
        config = ExperimentConfig.model_validate_json(f.read())

    try:
        rows, summary = run_rate_study(config)
        reports = ReportRepository(config.output_dir)
        reports.write_rows("rate_report.csv", rows, RateReportRow)
        reports.write_json("rate_summary.json", summary)
        logger.info(f"Rate study completed: slope {summary.slope}, CI [{summary.ci_low}, {summary.ci_high}]")
        logger.info(f"Theoretical exponent: -{summary.theoretical_exponent}")
        for row in rows:
            if row.error:
                logger.warning(f"n={row.n} repetition={row.repetition} failed: {row.error}")
    except Exception as e:
        logger.error(f"Error running rate study: {e}")
        logger.error(traceback.format_exc())


if __name__ == "__main__":
    run(sys.argv[1] if len(sys.argv) > 1 else DEFAULT_CONFIG)
