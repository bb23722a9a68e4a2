"""Command line entry point: ``simulate``, ``tune`` and ``report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

from bspsa.config import (
    ConfigError,
    ConfigModel,
    OracleModel,
    experiment_configs,
    load_config,
    parse_config,
    resolved_dict,
    tuner_from_config,
)
from bspsa.harness import (
    ExperimentError,
    format_table,
    read_json,
    run_grid,
    write_csv,
    write_json,
)
from bspsa.optimizers import Method, marginal_spreads
from bspsa.oracle import (
    EXIT_CONFIG,
    EXIT_FAILURE,
    EXIT_OK,
    EXIT_ORACLE,
    EXIT_PROTOCOL,
    CheckpointError,
    OracleError,
    ProtocolError,
    run_tuning_session,
)

logger = logging.getLogger("bspsa")

REPORT_NAME = "report.json"
RUNS_NAME = "runs.csv"


def _version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


def _with_overrides(cfg: ConfigModel, seed: int | None, repeats: int | None) -> ConfigModel:
    data = cfg.model_dump(mode="json", exclude_unset=False)
    if seed is not None:
        data["experiment"]["seed"] = seed
    if repeats is not None:
        data["experiment"]["repeats"] = repeats
    return parse_config(data, "command line")


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _with_overrides(load_config(args.config), args.seed, args.repeats)
    configs = experiment_configs(cfg)
    echo = resolved_dict(cfg)
    report = run_grid(configs, echo)
    print(format_table(report))
    print(f"wall time: {report.wall_time:.1f} s")
    out_dir = args.out if args.out is not None else cfg.output.dir
    if out_dir is not None:
        out = Path(out_dir)
        if "json" in cfg.output.formats:
            write_json(report, out / REPORT_NAME)
            logger.info("wrote %s", out / REPORT_NAME)
        if "csv" in cfg.output.formats:
            write_csv(report, out / RUNS_NAME)
            logger.info("wrote %s", out / RUNS_NAME)
    return EXIT_OK


def cmd_tune(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    oracle_cfg = cfg.oracle or OracleModel()
    command = args.oracle_cmd if args.oracle_cmd is not None else oracle_cfg.command
    if not command:
        msg = "oracle.command: give --oracle-cmd or set it in the config"
        raise ConfigError(msg)
    tuner = tuner_from_config(cfg)
    checkpoint = args.checkpoint or oracle_cfg.checkpoint_path
    n = tuner.schedule.n_iterations

    def progress(state) -> None:
        if (state.k - 1) % oracle_cfg.checkpoint_every == 0:
            logger.info("iteration %d/%d theta=%s", state.k - 1, n, tuner.emit(state.theta))

    state = run_tuning_session(
        tuner,
        cfg.experiment.seed,
        command,
        checkpoint,
        resume=args.resume,
        checkpoint_every=oracle_cfg.checkpoint_every,
        timeout=oracle_cfg.timeout,
        on_update=progress,
    )
    result = {"iterations": state.k - 1, "theta": tuner.emit(state.theta), "raw_theta": state.theta.tolist()}
    if state.method is not Method.SPSA:
        result["spreads"] = marginal_spreads(state).tolist()
    print(json.dumps(result, indent=2))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.input)
    if path.is_dir():
        path = path / REPORT_NAME
    try:
        report = read_json(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        msg = f"cannot read report {path}: {exc}"
        raise ConfigError(msg) from exc
    print(format_table(report))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bspsa", description="SPSA and Bayesian SPSA tuners for match-scored parameters.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run tuners on the simulated Elo landscape")
    p.add_argument("--config", required=True, help="YAML config, or a report.json to re-run")
    p.add_argument("--seed", type=int, default=None, help="override experiment.seed")
    p.add_argument("--repeats", type=int, default=None, help="override experiment.repeats")
    p.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tune", help="tune against an external match oracle")
    p.add_argument("--config", required=True)
    p.add_argument("--oracle-cmd", default=None, help="oracle command line (overrides oracle.command)")
    p.add_argument("--checkpoint", default=None, help="checkpoint path (overrides oracle.checkpoint_path)")
    p.add_argument("--resume", action="store_true", help="continue from the existing checkpoint")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("report", help="print the table of a stored report")
    p.add_argument("--in", dest="input", required=True, help="report.json or the directory holding it")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except OracleError as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except (CheckpointError, ExperimentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
