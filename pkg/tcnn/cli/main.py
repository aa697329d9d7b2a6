# tcnn/cli/main.py
"""
Command-line entry point.
Builds the argument parser, loads settings and dispatches to the command handlers.
"""
import argparse
import sys
from typing import Dict, List, Optional

from tcnn import __version__
from tcnn.cli import commands
from tcnn.core.config import Settings, load_settings
from tcnn.core.exceptions import EXIT_FAILURE, EXIT_USAGE, TCNNError, UsageError
from tcnn.tensor.tensor import set_default_dtype
from tcnn.utils.logging import configure_logging, logger


def _common_options() -> argparse.ArgumentParser:
    """Options accepted by every subcommand."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat KEY=value settings file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one setting (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--dtype", choices=("f32", "f64"))
    common.add_argument("--log-level", dest="log_level")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(prog="tcnn", description="Transformed CNN toolkit: GPSA layers, "
                                     "conv -> attention surgery and desk-scale experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("train", parents=[common], help="train a CNN (or a hybrid) from scratch")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--hybrid", action="store_true", help="transform the last stage before training")
    p.add_argument("--metrics", help="metrics CSV path")
    p.set_defaults(handler=commands.cmd_train)

    p = sub.add_parser("transform", parents=[common], help="reparametrize the last stage as GPSA")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("paper", "strict"), default="paper")
    p.add_argument("--report", help="report path without extension")
    p.set_defaults(handler=commands.cmd_transform)

    p = sub.add_parser("finetune", parents=[common], help="fine-tune a transformed checkpoint")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--res", type=int, help="training and test resolution")
    p.add_argument("--max-lr", dest="max_lr", type=float)
    p.add_argument("--gating-lr", dest="gating_lr", type=float)
    p.add_argument("--dr", type=float, help="stochastic depth rate")
    p.add_argument("--metrics")
    p.set_defaults(handler=commands.cmd_finetune)

    p = sub.add_parser("verify", parents=[common], help="check functional equivalence on random probes")
    p.add_argument("--model", required=True)
    p.add_argument("--against", help="second checkpoint (default: strict transform of --model)")
    p.add_argument("--tol", type=float)
    p.add_argument("--probes", type=int)
    p.add_argument("--res", type=int)
    p.add_argument("--report")
    p.set_defaults(handler=commands.cmd_verify)

    p = sub.add_parser("inspect", parents=[common], help="export attention maps and head statistics")
    p.add_argument("--model", required=True)
    p.add_argument("--image", type=int, default=0, help="test-set index")
    p.add_argument("--query", help="row,col on each layer's grid (default: center)")
    p.add_argument("--res", type=int)
    p.add_argument("--out", help="output directory")
    p.set_defaults(handler=commands.cmd_inspect)

    p = sub.add_parser("eval", parents=[common], help="test loss and accuracy")
    p.add_argument("--model", required=True)
    p.add_argument("--res", type=int)
    p.set_defaults(handler=commands.cmd_eval)

    p = sub.add_parser("experiment", parents=[common], help="reparametrization-timing table")
    p.add_argument("--t1", required=True, help="epoch or comma list of epochs")
    p.add_argument("--t2", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--same-optimizer", dest="same_optimizer", action="store_true")
    p.add_argument("--finetune-epochs", dest="finetune_epochs", type=int)
    p.add_argument("--finetune-res", dest="finetune_res", type=int)
    p.add_argument("--out", help="table CSV path")
    p.set_defaults(handler=commands.cmd_experiment)

    p = sub.add_parser("lr-sweep", parents=[common], help="fine-tune under several maximal learning rates")
    p.add_argument("--model", required=True)
    p.add_argument("--lrs", required=True, help="comma list")
    p.add_argument("--epochs", type=int)
    p.add_argument("--out")
    p.set_defaults(handler=commands.cmd_lr_sweep)

    p = sub.add_parser("epoch-sweep", parents=[common], help="fine-tune for several epoch counts")
    p.add_argument("--model", required=True)
    p.add_argument("--epochs-list", dest="epochs_list", required=True, help="comma list")
    p.add_argument("--out")
    p.set_defaults(handler=commands.cmd_epoch_sweep)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks (f64)")
    p.add_argument("--layer-only", dest="layer_only", action="store_true")
    p.set_defaults(handler=commands.cmd_gradcheck)
    return parser


def parse_overrides(pairs: List[str]) -> Dict[str, str]:
    overrides = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise UsageError("Overrides must look like KEY=VALUE", detail=pair)
        overrides[key.strip()] = value.strip()
    return overrides


def settings_for(args) -> Settings:
    """Effective settings: defaults < environment < --config < --set < dedicated flags."""
    overrides = parse_overrides(args.overrides)
    overrides.update({"SEED": args.seed, "DTYPE": args.dtype, "LOG_LEVEL": args.log_level})
    return load_settings(args.config, overrides)


def handle_error(exc: TCNNError) -> int:
    """
    Global handler for TCNNError.
    Logs the error with its detail and converts it to the process exit code.
    """
    logger.error(
        f"Command error: {exc.message}",
        extra={
            "exit_code": exc.exit_code,
            "detail": exc.detail,
            "error": type(exc).__name__,
        }
    )
    print(f"error: {exc}", file=sys.stderr)
    return exc.exit_code


def cli_dispatch(argv: Optional[List[str]] = None) -> int:
    """
    Run one command.

    Args:
        argv (Optional[List[str]]): Arguments without the program name (default: sys.argv[1:])

    Returns:
        int: 0 on success, 2 for usage errors, 1 for every other failure
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 0 for --help/--version and 2 after printing usage
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    if getattr(args, "handler", None) is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        settings = settings_for(args)
        configure_logging(settings.LOG_LEVEL, settings.LOG_FILE)
        set_default_dtype(settings.DTYPE)
        return args.handler(args, settings)
    except TCNNError as exc:
        return handle_error(exc)
    except OSError as exc:
        return handle_error(TCNNError("File system error", EXIT_FAILURE, detail=str(exc)))
    except Exception as exc:
        logger.exception(f"Unexpected error: {type(exc).__name__}: {exc}")
        return handle_error(TCNNError("Unexpected error", EXIT_FAILURE, detail=f"{type(exc).__name__}: {exc}"))


def main() -> None:
    sys.exit(cli_dispatch())
