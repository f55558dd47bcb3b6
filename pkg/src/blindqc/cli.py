"""Command line: ``blindqc run | sweep | report``.

Exit status: 0 when the client accepts, 2 when it rejects, 1 on errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys

from . import harness
from .harness import ConfigError, RunConfig

log = logging.getLogger("blindqc")

EXIT_ACCEPT, EXIT_ERROR, EXIT_REJECT = 0, 1, 2

# flag -> RunConfig/flat-config key
_FLAGS = {
    "scenario": "scenario",
    "n_rounds": "n_rounds",
    "eta": "eta",
    "seed": "seed",
    "mode": "mode",
    "werner_p": "werner_p",
    "alice_offset_deg": "alice_offset_deg",
    "bob_offset_deg": "bob_offset_deg",
    "alice_strategy": "alice_strategy",
    "bob_strategy": "bob_strategy",
    "chunk_size": "chunk_size",
    "transcript": "transcript_path",
    "report": "report_path",
    "csv": "csv_path",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat TOML file with RunConfig keys")
    p.add_argument("--scenario", choices=sorted(harness.SCENARIOS) + ["custom"])
    p.add_argument("--n-rounds", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=harness.MODES)
    p.add_argument("--werner-p", type=float)
    p.add_argument("--alice-offset-deg", type=float, help="Bloch-sphere degrees")
    p.add_argument("--bob-offset-deg", type=float, help="Bloch-sphere degrees")
    p.add_argument("--alice-strategy", help="custom scenario, e.g. flip-first-report")
    p.add_argument("--bob-strategy", help="custom scenario, e.g. angle-offset:0.349")
    p.add_argument("--chunk-size", type=int)
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--csv", help="write the CSV table here")


def _config(args) -> RunConfig:
    overrides = {}
    for flag, key in _FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if args.config:
        file_values = {}
        cfg = RunConfig.from_file(args.config)
        for k, v in cfg.to_dict().items():
            if k != "noise" and v is not None:
                file_values[k] = v
        file_values.update(
            werner_p=cfg.noise.werner_p,
            alice_angle_offset=cfg.noise.alice_angle_offset,
            bob_angle_offset=cfg.noise.bob_angle_offset,
        )
        for who in ("alice", "bob"):
            if f"{who}_offset_deg" in overrides:
                file_values.pop(f"{who}_angle_offset")
        file_values.update(overrides)
        return RunConfig.from_mapping(file_values)
    return RunConfig.from_mapping(overrides)


def _emit(report, cfg: RunConfig) -> None:
    if cfg.report_path:
        harness.emit_report(report, cfg.report_path, "structured-text")
    if cfg.csv_path:
        harness.emit_report(report, cfg.csv_path, "comma-separated")


def cmd_run(args) -> int:
    cfg = _config(args)
    table = harness.run_table(cfg)
    report = harness.aggregate(table, cfg.mode, cfg.strategies, cfg.to_dict())
    if cfg.transcript_path:
        harness.write_transcripts(table, cfg.transcript_path)
    _emit(report, cfg)
    if not args.quiet:
        sys.stdout.write(harness.summary(report))
    return EXIT_ACCEPT if report.accepted else EXIT_REJECT


def cmd_report(args) -> int:
    cfg = _config(args)
    table = harness.read_transcripts(args.transcripts)
    report = harness.aggregate(table, cfg.mode, cfg.strategies, {"transcripts": args.transcripts, **cfg.to_dict()})
    _emit(report, cfg)
    if not args.quiet:
        sys.stdout.write(harness.summary(report))
    return EXIT_ACCEPT if report.accepted else EXIT_REJECT


def _grid(text: str, parameter: str) -> list:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"grid must be comma-separated numbers, got {text!r}") from None
    if parameter == "offset":
        return [math.radians(v) for v in values]
    if parameter == "n_rounds":
        return [int(v) if v == int(v) else v for v in values]
    return values


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def cmd_sweep(args) -> int:
    base = _config(args)
    grid = _grid(args.grid, args.param)
    results = harness.sweep(args.param, grid, base)
    rows = harness.sweep_rows(results)
    if args.param == "offset":
        for row in rows:
            row["value"] = math.degrees(row["value"])
    if base.csv_path:
        harness.write_csv(rows, base.csv_path, harness.SWEEP_FIELDS)
    if base.report_path:
        with open(base.report_path, "w") as fh:
            json.dump([{"value": v, "report": r.to_dict()} for v, r in results], fh, sort_keys=True, indent=2)
    if not args.quiet:
        for row in rows:
            rates = " ".join(_fmt(row[k]) for k in harness.SWEEP_FIELDS[6:10])
            sys.stdout.write(
                f"{args.param}={row['value']:g}: chsh={_fmt(row['chsh_win_rate'])} eps={_fmt(row['epsilon'])} "
                f"tomography={rates} -> {row['verdict']}\n"
            )
    return EXIT_ACCEPT


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1 so that 2 stays reserved for a rejection."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", help="no summary on stdout")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="blindqc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", parents=[common], help="run one experiment")
    _add_config_flags(run)
    run.add_argument("--transcript", help="write one JSON line per round here")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", parents=[common], help="run one experiment per grid value")
    _add_config_flags(sw)
    sw.add_argument("--param", required=True, choices=harness.SWEEP_PARAMETERS)
    sw.add_argument("--grid", required=True, help="comma-separated values; offset in Bloch degrees")
    sw.set_defaults(func=cmd_sweep)

    rep = sub.add_parser("report", parents=[common], help="rebuild a report from saved transcripts")
    _add_config_flags(rep)
    rep.add_argument("transcripts")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
