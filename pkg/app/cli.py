"""
Línea de comandos: run, validate, stability-report
"""
import argparse
import json
import logging
import sys
from typing import List, Optional

from app.config import settings
from app.schemas.config import ExperimentKind
from app.services.experiment_service import ExperimentService
from app.services.stability_service import StabilityService
from app.utils.exceptions import BucyLabError
from app.utils.exports import to_jsonable
from app.utils.logging import setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_BLOW_UP = 3
EXIT_CHECK_FAILED = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bucy-lab", description=settings.APP_NAME)
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="ejecutar un experimento")
    run.add_argument("config", help="documento YAML o JSON")
    run.add_argument("--output-dir", default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--check", action="store_true", help="exit 4 si falla una verificación")
    run.add_argument("--workers", type=int, default=None)
    run.add_argument("--no-registry", action="store_true", help="no indexar en la base de datos")

    validate = sub.add_parser("validate", help="diagnosticar un documento sin ejecutar")
    validate.add_argument("config")

    report = sub.add_parser("stability-report", help="razones y condiciones de estabilidad")
    report.add_argument("config")
    return parser


def _run(args) -> int:
    config = ExperimentService.load_config(args.config)
    for violation in ExperimentService.validate(config):
        logger.warning("%s", violation.message)
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        logger.error("seed must be in [0, 2^64)")
        return EXIT_CONFIG

    db = None
    if not args.no_registry:
        from app.database import SessionLocal, init_db
        init_db()
        db = SessionLocal()
    try:
        manifest = ExperimentService.run(config, output_dir=args.output_dir, seed=args.seed,
                                         check=args.check, workers=args.workers, db=db)
    finally:
        if db is not None:
            db.close()

    print(json.dumps({"output_dir": manifest.output_dir, "status": manifest.status,
                      "files": manifest.output_files}, indent=2))
    if manifest.blow_up:
        return EXIT_BLOW_UP
    if args.check and not manifest.checks_passed:
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _validate(args) -> int:
    raw = ExperimentService.load_document(args.config)
    violations = ExperimentService.validate(raw)
    for violation in violations:
        print(f"{violation.level}: {violation.message}")
    if any(v.level == "error" for v in violations):
        return EXIT_CONFIG
    if not violations:
        print("ok")
    return EXIT_OK


def _stability_report(args) -> int:
    raw = ExperimentService.load_document(args.config)
    if isinstance(raw, dict):
        raw = {**raw, "experiment": ExperimentKind.STABILITY_REPORT.value}
        raw.setdefault("seed", 0)
    config = ExperimentService.parse_config(raw)
    report = StabilityService.compute_report(ExperimentService.build_problem(config))
    print(json.dumps(to_jsonable(report.model_dump()), indent=2, sort_keys=True))
    print(StabilityService.report_table(report), end="")
    return EXIT_OK


COMMANDS = {
    "run": _run,
    "validate": _validate,
    "stability-report": _stability_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except BucyLabError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        logger.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
