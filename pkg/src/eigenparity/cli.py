"""Command-line front end: estimate, backtest, simulate, riskdecomp."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .backtest import BacktestConfig, BacktestError, eigenrisk_experiment, run_backtest
from .data import DataError, ReturnsPanel, SyntheticSpec, generate_synthetic, load_csv, save_csv
from .estimators import EstimationError, RIEConfig, empirical_correlation, rie_clean
from .matlib import NotSymmetricError, SPDError
from .report import bar_chart_svg, write_correlation, write_json, write_report, write_riskmodes

logger = logging.getLogger("eigenparity")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_json(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{p}: invalid JSON ({exc})") from exc


def _require_input(path: str | None) -> Path:
    if not path:
        raise UsageError("--input is required")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"input file not found: {p}")
    return p


def cmd_estimate(args) -> int:
    panel = load_csv(_require_input(args.input))
    if args.window:
        panel = ReturnsPanel(panel.dates[-args.window:], panel.assets, panel.returns[-args.window:])
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    emp = empirical_correlation(panel)
    t, n = emp.sample_shape
    cfg = RIEConfig()
    if t <= n:
        logger.warning("T = %d <= N = %d: sample correlation is singular; RIE uses an eigenvalue floor", t, n)
        cfg = RIEConfig(floor=1e-8)
    rie = rie_clean(emp, cfg)
    echo = {"input": str(args.input), "window": args.window, "command": "estimate"}
    write_correlation(emp, panel.assets, out / "empirical.csv", {"config": echo})
    write_correlation(rie, panel.assets, out / "rie.csv", {"config": echo})
    lam = emp.decomposition.eigenvalues
    xi = rie.meta["cleaned_eigenvalues"]
    lam_rie = rie.decomposition.eigenvalues
    with (out / "spectra.csv").open("w") as fh:
        fh.write("mode,empirical,rie_cleaned,rie_final\n")
        for a in range(n):
            fh.write(f"{a + 1},{float(lam[a])!r},{float(xi[a])!r},{float(lam_rie[a])!r}\n")
    logger.info("wrote correlation estimates to %s", out)
    return EXIT_OK


def _backtest_config(raw: dict, args) -> tuple[BacktestConfig, dict | None]:
    if "backtest" in raw or "synthetic" in raw:
        extra = set(raw) - {"backtest", "synthetic"}
        if extra:
            raise DataError(f"unknown top-level config keys: {sorted(extra)}")
        bt, syn = dict(raw.get("backtest", {})), raw.get("synthetic")
    else:
        bt, syn = dict(raw), None
    if args.methods:
        bt["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    for flag, key in (("phi", "phi"), ("lookback", "lookback"), ("window", "estimation_window"),
                      ("vol_target", "vol_target"), ("seed", "seed")):
        v = getattr(args, flag)
        if v is not None:
            bt[key] = v
    try:
        cfg = BacktestConfig.from_dict(bt)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad backtest configuration: {exc}") from exc
    if syn is not None:
        syn = dict(syn)
        if args.seed is not None:
            syn["seed"] = args.seed
    return cfg, syn


def cmd_backtest(args) -> int:
    raw = _read_json(args.config)
    cfg, syn = _backtest_config(raw, args)
    if args.input:
        panel = load_csv(_require_input(args.input))
        source = {"input": str(args.input)}
    elif syn is not None:
        spec = SyntheticSpec.from_json(syn)
        panel, _ = generate_synthetic(spec)
        source = {"synthetic": json.loads(spec.to_json())}
    else:
        raise UsageError("backtest needs --input or a config with a 'synthetic' section")
    report = run_backtest(panel, cfg)
    write_report(report, args.output_dir, {"source": source})
    logger.info("backtest over %d days written to %s", len(report.dates), args.output_dir)
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec_path = args.spec or args.config
    if not spec_path:
        raise UsageError("simulate needs a spec JSON (positional or --config)")
    raw = _read_json(spec_path)
    if args.seed is not None:
        raw["seed"] = args.seed
    spec = SyntheticSpec.from_json(raw)
    panel, truth = generate_synthetic(spec)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(panel, out / "returns.csv")
    write_correlation(truth, panel.assets, out / "truth.csv", {"config": json.loads(spec.to_json())})
    (out / "spec.json").write_text(spec.to_json() + "\n")
    logger.info("simulated %d x %d panel in %s", *panel.shape, out)
    return EXIT_OK


def cmd_riskdecomp(args) -> int:
    raw = _read_json(args.config)
    params = {"n": 20, "draws": 50_000, "condition": 100.0, "seed": 0}
    unknown = set(raw) - set(params)
    if unknown:
        raise UsageError(f"unknown riskdecomp config keys: {sorted(unknown)}")
    params.update(raw)
    for key in ("n", "draws", "condition", "seed"):
        v = getattr(args, key)
        if v is not None:
            params[key] = v
    profiles, c_true = eigenrisk_experiment(int(params["n"]), int(params["draws"]),
                                            float(params["condition"]), int(params["seed"]))
    out = Path(args.output_dir)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    write_riskmodes(profiles, out / "riskmodes.csv")
    (out / "plots" / "riskmodes.svg").write_text(
        bar_chart_svg({k: v.per_mode_risk for k, v in profiles.items()},
                      "Realized risk per eigenmode (indicator covariance = I)")
    )
    lam = c_true.decomposition.eigenvalues
    shapes = {
        "arp_flatness": float(np.max(np.abs(profiles["arp"].normalized() - 1.0))),
        "markowitz_times_lambda_flatness": float(np.max(np.abs(profiles["markowitz"].normalized() * lam - 1.0))),
        "equal_over_lambda_flatness": float(np.max(np.abs(profiles["equal"].normalized() / lam - 1.0))),
        "dispersion": {k: v.dispersion() for k, v in profiles.items()},
    }
    write_json({"config": params, "shapes": shapes}, out / "summary.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output-dir", default="out", help="directory for results (created if absent)")
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="override the random seed")
    common.add_argument("--quiet", action="store_true", help="only report errors")

    parser = _Parser(prog="eigenparity", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", parents=[common], help="empirical and RIE correlation from a CSV panel")
    p.add_argument("--input", help="returns CSV (date,ASSET1,ASSET2,...)")
    p.add_argument("--window", type=int, help="use only the last WINDOW rows")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("backtest", parents=[common], help="rolling trend-following backtest")
    p.add_argument("--input", help="returns CSV; omit to simulate from the config's 'synthetic' section")
    p.add_argument("--methods", help="comma list of equal, markowitz_raw, markowitz_rie, arp, erp[:phi]")
    p.add_argument("--phi", type=float, help="shrinkage weight for erp")
    p.add_argument("--lookback", type=int, help="trend lookback in days")
    p.add_argument("--window", type=int, help="correlation estimation window in days")
    p.add_argument("--vol-target", dest="vol_target", type=float, help="annualized volatility of reported P&L")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("simulate", parents=[common], help="synthetic factor-model panel plus ground truth")
    p.add_argument("spec", nargs="?", help="SyntheticSpec JSON")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("riskdecomp", parents=[common], help="per-eigenmode risk of equal, Markowitz and ARP")
    p.add_argument("--n", type=int, help="number of assets")
    p.add_argument("--draws", type=int, help="number of indicator draws")
    p.add_argument("--condition", type=float, help="condition number of the planted correlation")
    p.set_defaults(func=cmd_riskdecomp)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"eigenparity: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SPDError, NotSymmetricError, ArithmeticError, BacktestError) as exc:
        print(f"eigenparity: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, EstimationError, OSError) as exc:
        print(f"eigenparity: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"eigenparity: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
