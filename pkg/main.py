import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from config_loader import load_run_file, parse_params
from errors import ConfigError, LabError
from ledger import RECORD_RUNS, RunLedger, get_ledger
from reports import CSV_COLUMNS, emit_csv, emit_json, render_json, series_rows
from runner import COMMANDS, TOOL_VERSION, run
from schemas import RunConfig

load_dotenv()

logger = logging.getLogger(__name__)

LOG_LEVEL = os.getenv("DEGENLAB_LOG_LEVEL", "WARNING")

# Config keys holding paths; relative ones in a run file resolve against that file
PATH_KEYS = ("family", "f", "h", "matrix", "against", "candidate")


def _common(parser: argparse.ArgumentParser) -> None:
    # unset flags stay out of the namespace so file values and RunConfig defaults apply
    def add(*names, **kw):
        parser.add_argument(*names, default=argparse.SUPPRESS, **kw)

    add("--config", help="run file (.cfg/.ini/.conf/.json) with the same keys as the flags")
    add("--params", help="extra key=value pairs, comma separated")
    add("--json", help="write the JSON report here instead of stdout")
    add("--csv", help="write the tabular series here")
    add("--threads", type=int)
    add("--seed", type=int)
    add("--log-level", dest="log_level")
    add("--record", action="store_true", help="persist the report in the run ledger")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="degenlab",
        description="Numerical and symbolic checks of hypoellipticity criteria for degenerate Grushin-type operators",
    )
    parser.add_argument("--version", action="version", version=f"degenlab {TOOL_VERSION}")
    _common(parser)
    sub = parser.add_subparsers(dest="command")

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        _common(p)
        return p

    def opt(p: argparse.ArgumentParser, *names, **kw) -> None:
        p.add_argument(*names, default=argparse.SUPPRESS, **kw)

    p = command("classify", "Koike-type criterion on a degeneracy family")
    opt(p, "--family")
    opt(p, "--form", choices=("sum-product", "max-min", "both"))

    p = command("koike-scan", "decay quantity mu(|x|, h) ln f(x) of a profile pair")
    opt(p, "--f")
    opt(p, "--h")

    p = command("matrix-check", "comparability, subordinate, quasiconformal and differential estimates")
    opt(p, "--matrix")
    opt(p, "--against")
    opt(p, "--cap", type=float)
    opt(p, "--a", type=float)
    opt(p, "--grid-n", dest="grid_n", type=int)
    opt(p, "--require-diag-comparability", dest="require_diag_comparability", action="store_true")

    p = command("sos-verify", "verify a sum-of-squares decomposition candidate")
    opt(p, "--matrix")
    opt(p, "--candidate")
    opt(p, "--delta", type=float)
    opt(p, "--a", type=float)
    opt(p, "--grid-n", dest="grid_n", type=int)

    p = command("parametrix", "parametrix chain and residual decay of a scalar symbol")
    opt(p, "--symbol")
    opt(p, "--order", type=int)

    p = command("sharpness", "lambda0(a, eta) sweep, growth fit and Hoshiro ratios")
    opt(p, "--f")
    opt(p, "--h")
    opt(p, "--etas")
    opt(p, "--k", type=int)
    opt(p, "--delta", dest="hoshiro_delta", type=float)
    opt(p, "--q-max", dest="q_max", type=float)
    opt(p, "--a", type=float)
    opt(p, "--grid-n", dest="grid_n", type=int)

    p = command("inequality-suite", "Hardy, bound_aux, delta(tau) and Malgrange checks on seeded bumps")
    opt(p, "--family")
    opt(p, "--bumps", type=int)
    opt(p, "--taus")
    opt(p, "--grid-n", dest="grid_n", type=int)

    p = command("lowerbound", "lambda0(a, tau) >= w(tau)^2 / C for the h = 1 problem")
    opt(p, "--f")
    opt(p, "--taus")
    opt(p, "--a", type=float)
    opt(p, "--grid-n", dest="grid_n", type=int)

    p = sub.add_parser("history", help="list runs recorded in the ledger")
    p.add_argument("--limit", type=int, default=20)
    p.add_argument("--filter", dest="filter_command", choices=sorted(COMMANDS))
    p.add_argument("--database-url", dest="database_url")
    p.add_argument("--log-level", dest="log_level", default=argparse.SUPPRESS)
    return parser


def _resolve_paths(values: Dict[str, Any], base: str) -> Dict[str, Any]:
    for key in PATH_KEYS:
        if isinstance(values.get(key), str) and not os.path.isabs(values[key]):
            values[key] = os.path.join(base, values[key])
    return values


def build_config(args: Dict[str, Any]) -> RunConfig:
    """File values, then --params, then flags; the later source wins"""
    values: Dict[str, Any] = {}
    config_path = args.pop("config", None)
    if config_path:
        values.update(_resolve_paths(load_run_file(config_path), os.path.dirname(os.path.abspath(config_path))))
    params = args.pop("params", None)
    if params:
        values.update(parse_params(params))
    for key in ("log_level", "filter_command", "limit", "database_url"):
        args.pop(key, None)
    values.update({k: v for k, v in args.items() if v is not None})
    if not values.get("command"):
        raise ConfigError("No command given on the command line or in the run file", key="command")
    try:
        return RunConfig(**values)
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(part) for part in first["loc"])
        raise ConfigError(f"Invalid configuration: {first['msg']}", key=key)


def _configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def show_history(args: Dict[str, Any], ledger: Optional[RunLedger] = None) -> int:
    if args.get("database_url"):
        ledger = RunLedger(args["database_url"])
    ledger = ledger or get_ledger()
    if not ledger.is_available():
        raise ConfigError("Run ledger is unavailable", key="DEGENLAB_DATABASE_URL")
    for row in ledger.history(args["limit"], args.get("filter_command")):
        print(f"{row.id}\t{row.created_at:%Y-%m-%d %H:%M:%S}\t{row.command}\texit={row.exit_code}"
              f"\tviolations={row.violation_count}\t{row.determinism_hash[:12]}")
    return 0


def execute(config: RunConfig, ledger: Optional[RunLedger] = None) -> int:
    if config.csv_path and config.command not in CSV_COLUMNS:
        raise ConfigError(f"Command '{config.command}' has no tabular series", key="csv")
    report = run(config)
    if config.json_path:
        emit_json(report, config.json_path)
    else:
        sys.stdout.write(render_json(report))
    if config.csv_path:
        emit_csv(series_rows(report.results, config.command), CSV_COLUMNS[config.command], config.csv_path)
    if config.record or RECORD_RUNS:
        (ledger or get_ledger()).record(report)
    for violation in report.violations:
        print(f"violation: {violation}", file=sys.stderr)
    return report.exit_code


def main(argv: Optional[List[str]] = None, ledger: Optional[RunLedger] = None) -> int:
    args = vars(build_parser().parse_args(argv))
    _configure_logging(args.get("log_level") or LOG_LEVEL)
    try:
        if args.get("command") == "history":
            return show_history(args, ledger)
        return execute(build_config(args), ledger)
    except LabError as e:
        logger.debug("Run failed", exc_info=True)
        print(f"error: {e.detail}", file=sys.stderr)
        return e.exit_code
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
