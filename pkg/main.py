import argparse
import asyncio
import json
import logging
import sys
from typing import List, Optional

from config import Config
from calculus.errors import CalculusError, ConfigError, InfeasibleError, ToleranceError
from database.database import db_manager, run_history
from experiments.report import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_PASS, EXIT_TOLERANCE
from experiments.settings import ExperimentConfig
from experiments.studies import ExperimentRunner

# Set up logging
logging.basicConfig(
    level=getattr(logging, Config.LOG_LEVEL, logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=Config.APP_NAME, description="Antiwick quantization and time-sliced propagator studies")
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help="Run an experiment config and write its run directory")
    run.add_argument('config', help="Path to a JSON experiment config")
    run.add_argument('--output-dir', help="Override the run directory")
    run.add_argument('--no-history', action='store_true', help="Do not record the run in the history database")

    validate = sub.add_parser('validate', help="Parse a config and check feasibility without computing")
    validate.add_argument('config')

    sub.add_parser('version', help="Print the version")

    history = sub.add_parser('history', help="List recorded runs")
    history.add_argument('--experiment', help="Only runs of this experiment kind")
    history.add_argument('--limit', type=int, default=20)
    return parser


async def record(manifest, output_dir: str, rows) -> Optional[int]:
    try:
        await db_manager.initialize_database()
        return await run_history.record_run(manifest, output_dir, rows)
    except Exception as e:
        logger.error(f"Could not record run history: {e}")
        return None
    finally:
        await db_manager.close_all_connections()


async def list_history(experiment: Optional[str], limit: int) -> List[dict]:
    try:
        await db_manager.initialize_database()
        runs = await run_history.get_runs(experiment, limit)
        return [r.to_dict() for r in runs]
    finally:
        await db_manager.close_all_connections()


def command_run(args) -> int:
    settings = ExperimentConfig.load(args.config)
    if args.output_dir:
        settings.output_dir = args.output_dir
    runner = ExperimentRunner(settings)
    manifest = asyncio.run(runner.run())

    if Config.RECORD_HISTORY and not args.no_history:
        propagator = runner.results.get('propagator')
        rows = propagator.rows() if propagator is not None else None
        asyncio.run(record(manifest, runner.writer.output_dir, rows))

    for check in manifest.failures():
        logger.error(f"Check {check.name} failed: {check.value!r} {check.relation} {check.limit!r}")
    manifest.raise_for_failures()
    logger.info(f"Run {settings.name} passed; output in {runner.writer.output_dir}")
    return EXIT_PASS


def command_validate(args) -> int:
    settings = ExperimentConfig.load(args.config)
    settings.check_feasibility()
    print(f"{args.config}: {settings.kind} config is valid "
          f"(basis dimension {settings.mode_config.dimension}, output {settings.resolved_output_dir()})")
    return EXIT_PASS


def command_history(args) -> int:
    runs = asyncio.run(list_history(args.experiment, args.limit))
    for run in runs:
        print(json.dumps(run, sort_keys=True))
    return EXIT_PASS


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    # Validate configuration
    try:
        Config.validate()
    except ValueError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG

    if args.command == 'version':
        print(f"{Config.APP_NAME} {Config.APP_VERSION}")
        return EXIT_PASS

    commands = {'run': command_run, 'validate': command_validate, 'history': command_history}
    try:
        return commands[args.command](args)
    except ToleranceError as e:
        logger.error(f"Tolerance failure: {e}")
        return EXIT_TOLERANCE
    except InfeasibleError as e:
        logger.error(f"Infeasible: {e}")
        return EXIT_INFEASIBLE
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except CalculusError as e:
        logger.error(f"Run failed: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main(sys.argv[1:]))
