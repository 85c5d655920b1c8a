"""
Command-line entry point: frugal-bench run | validate | plugin-test | serve
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from config import RESULTS_CSV, settings
from services.bench import config_digest, format_summary, load_config, run_experiment, select_models
from services.errors import ConfigError, FrugalBenchError
from services.plugin_client import run_plugin_roundtrip

logger = logging.getLogger(__name__)


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"✅ {args.config} is valid")
    print(f"   name: {cfg.name}, mode: {cfg.mode}, iterations: {cfg.iterations}, models: {len(cfg.models)}")
    print(f"   digest: {config_digest(cfg)}")
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"master_seed": args.seed})
    if args.models:
        cfg = select_models(cfg, [m.strip() for m in args.models.split(",") if m.strip()])

    output_dir = Path(args.out) if args.out else None
    print(f"🚀 Running {cfg.name}: {cfg.iterations} iterations, models {', '.join(m.name for m in cfg.models)}")
    table = run_experiment(cfg, workers=args.workers, output_dir=output_dir)
    out = table.metadata.get("output_dir")
    print(f"📊 {len(table)} result rows written to {Path(out) / RESULTS_CSV}")
    print(format_summary(table, cfg))

    if args.record:
        from database import DatabaseManager, init_database

        init_database()
        with DatabaseManager() as db_manager:
            run = db_manager.create_run(cfg.name, cfg.mode, config_digest(cfg), cfg.model_dump(mode="json"), out)
            db_manager.add_results(run.id, table)
            db_manager.mark_finished(run.id, table.metadata.get("wall_clock_seconds"), out)
        print(f"💾 Recorded as run {run.id}")

    errors = int((table.frame["error"] != "").sum())
    if errors:
        print(f"⚠️  {errors} jobs failed; see the error column")
    return 0


def cmd_plugin_test(args) -> int:
    command = args.command
    if command and command[0] == "--":
        command = command[1:]
    transcript = run_plugin_roundtrip(command, timeout=args.timeout)
    sys.stdout.write(transcript)
    print("✅ plugin completed the protocol round trip")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("main:app", host=args.host, port=args.port, reload=settings.DEBUG)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="frugal-bench", description="Generalizability benchmarks under domain shift")
    sub = parser.add_subparsers(dest="command_name", required=True)

    run = sub.add_parser("run", help="Run an experiment config")
    run.add_argument("config", help="Experiment config (JSON)")
    run.add_argument("--out", help="Output directory (default: config output_dir)")
    run.add_argument("--seed", type=int, help="Override the master seed")
    run.add_argument("--workers", type=int, default=settings.WORKERS,
                     help=f"Bootstrap worker processes (default: {settings.WORKERS})")
    run.add_argument("--models", help="Comma-separated model names to run")
    run.add_argument("--record", action="store_true", help="Store the run in the run database")
    run.set_defaults(handler=cmd_run)

    validate = sub.add_parser("validate", help="Validate an experiment config")
    validate.add_argument("config", help="Experiment config (JSON)")
    validate.set_defaults(handler=cmd_validate)

    plugin = sub.add_parser("plugin-test", help="Run the protocol round trip against a plugin command")
    plugin.add_argument("--timeout", type=float, default=settings.PLUGIN_TIMEOUT, help="Per-message timeout (s)")
    plugin.add_argument("command", nargs=argparse.REMAINDER, help="Plugin command line")
    plugin.set_defaults(handler=cmd_plugin_test)

    serve = sub.add_parser("serve", help="Start the HTTP API")
    serve.add_argument("--host", default=settings.API_HOST)
    serve.add_argument("--port", type=int, default=settings.API_PORT)
    serve.set_defaults(handler=cmd_serve)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command_name == "plugin-test" and not args.command:
        parser.error("plugin-test needs a command")
    if getattr(args, "workers", 1) is not None and getattr(args, "workers", 1) < 1:
        parser.error("--workers must be at least 1")

    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"❌ {e}")
        return 1
    except FrugalBenchError as e:
        print(f"❌ {type(e).__name__}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
