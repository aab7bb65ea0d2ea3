import argparse
import logging
import sys

from pydantic import ValidationError

from core.errors import ConfigurationError, DemandResponseError, NumericError
from db.runs import init_db, record_run, registry_url
from workflow import pipeline
from workflow.run_config import config_help, resolve_config

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; usage errors exit with 1 here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def run_synth(config, args):
    print("--- Generating Synthetic Dataset ---")
    return pipeline.cmd_synth(config, args.out)


def run_ingest(config, args):
    print(f"--- Ingesting {args.input} ---")
    return pipeline.cmd_ingest(config, args.input)


def run_forecast_train(config, args):
    print("--- Training Forecasters ---")
    return pipeline.cmd_forecast_train(config)


def run_agent_train(config, args):
    print("--- Training DDQN Policy ---")
    return pipeline.cmd_agent_train(config)


def run_evaluate(config, args):
    print(f"--- Evaluating {args.policy} Policy ---")
    return pipeline.cmd_evaluate(config, args.day, args.all_test_days, args.policy)


def run_compare(config, args):
    print("--- Comparing No DR, EBLR and DDQN ---")
    return pipeline.cmd_compare(config, args.day)


def run_sweep_rho(config, args):
    print("--- Sweeping End-User Weight ---")
    return pipeline.cmd_sweep_rho(config, args.rhos, args.episodes)


def _positive_int(value):
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return number


def _rho_list(value):
    try:
        rhos = [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}")
    if not rhos or any(not 0.0 <= r <= 1.0 for r in rhos):
        raise argparse.ArgumentTypeError(f"rho values must lie in [0, 1], got {value!r}")
    return rhos


def build_parser():
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="YAML config file.")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one config key, e.g. --set agent.episodes=500 (repeatable).",
    )
    common.add_argument(
        "--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Logging level."
    )

    parser = ArgumentParser(
        description="Capacity-constrained incentive demand response simulator",
        epilog=config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=ArgumentParser)

    def add(name, handler, help_text):
        p = sub.add_parser(
            name,
            parents=[common],
            help=help_text,
            description=help_text,
            epilog=config_help(),
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        p.set_defaults(handler=handler)
        return p

    p = add("synth", run_synth, "Generate a synthetic hourly dataset.")
    p.add_argument("--seed", type=int, help="Seed (default: config seed).")
    p.add_argument("--days", type=_positive_int, help="Number of days (default: data.days).")
    p.add_argument("--households", type=_positive_int, help="Number of households (default: data.households).")
    p.add_argument("--noise", type=float, help="Relative noise (default: data.noise).")
    p.add_argument("--out", type=str, help="Output CSV (default: paths.data_dir/paths.dataset).")

    p = add("ingest", run_ingest, "Validate a CSV and store it as the dataset.")
    p.add_argument("input", type=str, help="CSV with timestamp, load_<id>... and price columns.")

    add("forecast-train", run_forecast_train, "Train the price and load forecasters.")
    add("agent-train", run_agent_train, "Train the DDQN service-provider policy.")

    p = add("evaluate", run_evaluate, "Run the trained policy greedily on test days.")
    p.add_argument("--day", type=str, help="Test day, YYYY-MM-DD (default: data.eval_day).")
    p.add_argument("--all-test-days", action="store_true", help="Evaluate every test day and average.")
    p.add_argument(
        "--policy", choices=["ddqn", "zero"], default="ddqn", help="'zero' never pays an incentive (no DR)."
    )

    p = add("compare", run_compare, "Compare no DR, EBLR and the DDQN policy on one day.")
    p.add_argument("--day", type=str, help="Test day, YYYY-MM-DD (default: data.eval_day).")

    p = add("sweep-rho", run_sweep_rho, "Retrain and evaluate for several end-user weights.")
    p.add_argument("--rhos", type=_rho_list, help="Comma-separated weights (default: sweep.rhos).")
    p.add_argument("--episodes", type=_positive_int, help="Episodes per weight (default: sweep.episodes).")
    return parser


def _flag_overrides(args):
    """Explicit synth flags become config overrides so they are recorded with the run."""
    flags = {"seed": "seed", "days": "data.days", "households": "data.households", "noise": "data.noise"}
    return [f"{key}={getattr(args, name)}" for name, key in flags.items() if getattr(args, name, None) is not None]


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE

    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args.config, [*args.overrides, *_flag_overrides(args)])
        result = args.handler(config, args)
        session_factory = init_db(registry_url(config.paths.output_dir))
        record_run(
            session_factory, result.command, config.seed, config.model_dump(mode="json"), result.summary, result.artifacts
        )
    except (ConfigurationError, ValidationError) as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"Numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except DemandResponseError as e:
        print(f"Data error: {e}", file=sys.stderr)
        return EXIT_DATA

    for key, value in result.summary.items():
        print(f"  {key}: {value}")
    for path in result.artifacts:
        print(f"Wrote {path}")
    print(f"--- {result.command} Complete ---")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
