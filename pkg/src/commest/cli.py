"""Command-line experiment runner: ``risk``, ``sweep``, ``worst``, ``audit`` and ``rates``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import rates
from .core import PROTOCOLS, ProtocolConfig, SharedRandomness, make_instance, sample
from .harness import (
    CSV_HEADER,
    DEFAULT_FAMILIES,
    DEFAULT_TRIALS,
    Sweep,
    budget_audit,
    estimate_risk,
    fit_to_csv,
    reports_to_csv,
    run_manifest,
    run_protocol,
    scaling_slope,
    worst_case_risk,
)

logger = logging.getLogger(__name__)

DEFAULTS = {
    "m": 256,
    "n": 1,
    "k": 8,
    "l": 3,
    "p": 2.0,
    "protocol": "ar",
    "family": "uniform",
    "families": ",".join(DEFAULT_FAMILIES),
    "trials": DEFAULT_TRIALS,
    "seed": 0,
    "const_scale": 1.0,
    "workers": 1,
    "out": None,
    "param": "m",
    "grid": None,
    "check_regime": True,
}


def _parse_l(text) -> float:
    if isinstance(text, (int, float)):
        return text
    if str(text).strip().lower() in ("inf", "infinity", "none"):
        return math.inf
    return int(text)


def _parse_grid(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(text)
    return tuple(float(v) if "." in v or "e" in v.lower() else int(v) for v in str(text).split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML file with default values; flags override it")
    common.add_argument("--m", type=int, help="number of encoders")
    common.add_argument("--n", type=int, help="samples per encoder")
    common.add_argument("--k", type=int, help="alphabet size")
    common.add_argument("--l", type=_parse_l, help="bits per encoder ('inf' allowed for rates)")
    common.add_argument("--p", type=float, help="loss exponent")
    common.add_argument("--protocol", choices=PROTOCOLS)
    common.add_argument("--family", help="instance family, e.g. uniform, zipf(1), sparse(2)")
    common.add_argument("--trials", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--const-scale", dest="const_scale", type=float)
    common.add_argument("--workers", type=int)
    common.add_argument("--out", type=Path, help="CSV path; the manifest goes next to it as .json")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="commest", description="Distributed distribution estimation under bit budgets.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("risk", parents=[common], help="Monte Carlo risk on one instance")
    sweep = sub.add_parser("sweep", parents=[common], help="log-log scaling fit over a parameter grid")
    sweep.add_argument("--param", choices=("m", "n", "k", "l"))
    sweep.add_argument("--grid", type=_parse_grid, help="comma-separated values")
    sweep.add_argument("--no-regime-check", dest="check_regime", action="store_false", default=None)
    worst = sub.add_parser("worst", parents=[common], help="worst case over an instance family")
    worst.add_argument("--families", help="comma-separated family list")
    sub.add_parser("audit", parents=[common], help="run one trial and audit its transcript")
    sub.add_parser("rates", parents=[common], help="predicted regime, rates and lower bound")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge built-in defaults, the TOML file and explicit flags, in that order."""
    values = dict(DEFAULTS)
    if args.config is not None:
        with open(args.config, "rb") as fh:
            data = tomllib.load(fh)
        for key, value in data.items():
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise SystemExit(f"unknown key {key!r} in {args.config}")
            values[key] = value
    for key, value in vars(args).items():
        if key in DEFAULTS and value is not None:
            values[key] = value
    values["l"] = _parse_l(values["l"])
    if values["grid"] is not None:
        values["grid"] = _parse_grid(values["grid"])
    if isinstance(values["families"], str):
        values["families"] = [f.strip() for f in values["families"].split(",") if f.strip()]
    return values


def _config(values: dict) -> ProtocolConfig:
    if values["l"] == math.inf:
        raise SystemExit("l=inf is only meaningful for the rates subcommand")
    return ProtocolConfig(
        values["m"], values["n"], values["k"], values["l"], values["p"], values["seed"], values["const_scale"], values["protocol"]
    )


def _emit(csv_text: str, manifest: dict, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(csv_text)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(csv_text)
    out.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    logger.info("wrote %s and %s", out, out.with_suffix(".json"))


def cmd_risk(values: dict) -> int:
    config = _config(values)
    instance = make_instance(values["family"], config.k, config.seed)
    report = estimate_risk(None, instance, config, values["trials"], config.seed, values["workers"], label=values["family"])
    manifest = run_manifest(config, config.seed, {"command": "risk", "family": values["family"], "trials": values["trials"]})
    _emit(reports_to_csv([config.m], [report]), manifest, values["out"])
    return 0 if report.audit_passed else 1


def cmd_sweep(values: dict) -> int:
    config = _config(values)
    if not values["grid"]:
        raise SystemExit("sweep needs --grid")
    sweep = Sweep(values["param"], values["grid"])
    fit = scaling_slope(
        None, config, sweep, values["trials"], config.seed, values["family"], values["workers"], values["check_regime"]
    )
    print(f"slope {fit.slope:.4f} +/- {fit.slope_se:.4f}", file=sys.stderr)
    extra = {
        "command": "sweep",
        "family": values["family"],
        "param": values["param"],
        "grid": list(values["grid"]),
        "trials": values["trials"],
    }
    results = {"slope": fit.slope, "slope_se": fit.slope_se}
    _emit(fit_to_csv(fit), run_manifest(config, config.seed, extra, results), values["out"])
    return 0


def cmd_worst(values: dict) -> int:
    config = _config(values)
    name, worst, reports = worst_case_risk(None, values["families"], config, values["trials"], config.seed, values["workers"])
    pred = rates.classify_regime(config.m, config.n, config.k, config.l, config.p)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("instance",) + CSV_HEADER[1:])
    for rep in reports:
        writer.writerow((rep.instance, repr(rep.mean_loss), repr(rep.std_error), repr(pred.upper_rate), pred.regime))
    print(f"worst instance: {name}", file=sys.stderr)
    extra = {"command": "worst", "families": values["families"], "trials": values["trials"]}
    _emit(buf.getvalue(), run_manifest(config, config.seed, extra, {"worst": name}), values["out"])
    return 0


def cmd_audit(values: dict) -> int:
    config = _config(values)
    root = SharedRandomness(config.seed)
    instance = make_instance(values["family"], config.k, config.seed)
    samples = sample(instance, config.m, config.n, root.stream("samples"))
    _, transcript = run_protocol(config, samples, root.derive("protocol"))
    result = budget_audit(transcript, config)
    print(f"{'PASS' if result else 'FAIL'}: {len(transcript.messages)} messages, {result.total_bits} bits")
    for line in result.violations:
        print(f"  {line}")
    return 0 if result else 1


def cmd_rates(values: dict) -> int:
    m, n, k, l, p = (values[key] for key in ("m", "n", "k", "l", "p"))
    pred = rates.classify_regime(m, n, k, l, p)
    print(f"regime: {pred.regime}")
    print(f"upper rate: {pred.upper_rate:.6g}")
    print(f"lower rate: {pred.lower_rate:.6g}")
    print(f"lower bound: {rates.lower_bound(m, n, k, l, p):.6g}")
    if pred.notes:
        print(f"notes: {pred.notes}")
    return 0


COMMANDS = {"risk": cmd_risk, "sweep": cmd_sweep, "worst": cmd_worst, "audit": cmd_audit, "rates": cmd_rates}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    values = resolve(args)
    return COMMANDS[args.command](values)


if __name__ == "__main__":
    sys.exit(main())
