"""Run, validate or compare continual-learning sweeps.

    python src/run_experiment.py validate --config configs/strategy_comparison.yaml
    python src/run_experiment.py run --config configs/strategy_comparison.yaml --workers 4
    python src/run_experiment.py compare --output-dir output/experiments/strategy_comparison

Exit codes: 0 ok, 1 invalid config, 2 runtime failure.
"""

import argparse
import logging
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from continual.config import settings
from continual.exceptions import ConfigValidationError, ContinualError
from continual.services.runner import compare_runs, load_config, run_experiment

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILURE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="ARR continual-learning experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run every cell of a sweep")
    run.add_argument("--config", type=Path, required=True, help="Experiment YAML file")
    run.add_argument("--output-dir", type=Path, default=None, help="Overrides output_dir from the config")
    run.add_argument("--workers", type=int, default=None, help=f"Parallel cells (default {settings.workers})")
    run.add_argument("--seed", type=int, default=None, help="Run a single seed instead of the sweep seeds")

    validate = sub.add_parser("validate", help="Check a config and print every problem found")
    validate.add_argument("--config", type=Path, required=True)

    compare = sub.add_parser("compare", help="Rank finished cells of a result directory")
    compare.add_argument("--output-dir", type=Path, required=True, help="Directory holding the cell folders")
    return parser


def _print_errors(exc: ConfigValidationError):
    print(f"❌ Config has {len(exc.errors)} problem(s):")
    for error in exc.errors:
        print(f"   - {error}")


def cmd_validate(args) -> int:
    config = load_config(args.config)
    train = config.train
    print(f"✅ {args.config} is valid: {config.sweep.size(train)} cell(s)")
    print(f"   rm_size={train.rm_size} lam={train.lam} alpha={train.alpha} mb_size={train.mb_size}")
    return EXIT_OK


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.workers is not None and args.workers < 1:
        print("❌ --workers must be at least 1")
        return EXIT_INVALID
    print(f"🚀 Running '{config.name}'...")
    results = run_experiment(config, output_dir=args.output_dir, workers=args.workers, seed_override=args.seed)

    failed = [r for r in results if r.status == "failed"]
    print(f"✅ {len(results) - len(failed)}/{len(results)} cells finished")
    for result in failed:
        print(f"⚠️  {result.cell.name}: {result.error}")
    root = Path(args.output_dir or config.output_dir) / config.name
    comparison = root / "comparison.txt"
    if comparison.exists():
        print(f"\n📊 Ranking ({comparison}):")
        print(comparison.read_text())
    return EXIT_FAILURE if failed else EXIT_OK


def cmd_compare(args) -> int:
    table = compare_runs(args.output_dir)
    print(f"📊 {len(table)} configuration(s) ranked by final fixed-test accuracy:\n")
    print(table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "validate": cmd_validate, "compare": cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigValidationError as exc:
        _print_errors(exc)
        return EXIT_INVALID
    except (ContinualError, OSError) as exc:
        print(f"❌ {exc}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
