"""Command-line entry points: simulate, fit, estimate, print-config.

Exit codes: 0 success, 2 usage / config / input errors, 3 runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .bench import BenchConfig, BenchError, ConfigError, format_config, load_config, run_bench
from .data import DataError, generate_dgp, load_csv, write_csv
from .estimators import (diagnostics, estimate_aipw, estimate_att, estimate_dm, estimate_ipw)
from .fit import (FitError, FittedCorrection, Nuisances, crossfit_nuisances, fit_correction,
                  fit_outcome, make_folds, nuisances_from, zero_outcome)
from .models import DimensionError

log = logging.getLogger("bregman_ate")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


def _config(args) -> BenchConfig:
    cfg = load_config(args.config) if args.config else BenchConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, master_seed=args.seed, fit=replace(cfg.fit, seed=args.seed))
    if getattr(args, "threads", None) is not None:
        cfg = replace(cfg, threads=args.threads)
    if getattr(args, "crossfit", None) is not None:
        cfg = replace(cfg, crossfit=args.crossfit)
    if getattr(args, "out", None) is not None and args.command == "simulate":
        cfg = replace(cfg, output=args.out)
    return replace(cfg, grid=tuple(str(c) for c in cfg.grid))


def cmd_simulate(args) -> int:
    cfg = _config(args)
    if args.dataset:
        data, _ = generate_dgp(replace(cfg.dgp, seed=cfg.master_seed))
        write_csv(data, args.dataset)
        print(f"wrote {data.n} rows to {args.dataset}")
        return EXIT_OK
    result = run_bench(cfg)
    out = Path(cfg.output)
    result.write_csv(out)
    result.write_sidecar(out.with_suffix(".json"))
    for c in result.cells:
        print(f"{c.method:<14} {c.estimator:<14} mse={c.mse:.5g} bias={c.bias:.5g} "
              f"mc_se={c.mc_se:.3g}")
    print(f"wrote {out} ({result.runtime_seconds:.1f}s)")
    return EXIT_OK


def cmd_fit(args) -> int:
    if not args.data or not args.out:
        raise UsageError("fit needs --data and --out")
    cfg = _config(args)
    data = load_csv(args.data)
    corr = fit_correction(data, cfg.fit)
    corr.save(args.out)
    balance = diagnostics(data, corr)
    bal_path = Path(args.out).with_suffix(".balance.json")
    bal_path.write_text(json.dumps(asdict(balance), indent=2) + "\n")
    status = "converged" if corr.converged else "not converged"
    print(f"{corr.generator}/{corr.model.family}: {status} after {corr.iterations} iterations, "
          f"final loss {corr.loss_trace[-1]:.10g}, grad sup-norm {corr.grad_norm:.3g}")
    print(f"treated weight mean {balance.treated_weight_mean:.6g}, "
          f"control weight mean {balance.control_weight_mean:.6g}")
    return EXIT_OK


def _outcome(args, cfg, data):
    if args.mu == "zero":
        return zero_outcome
    return fit_outcome(data, cfg.outcome)


def cmd_estimate(args) -> int:
    if not args.data:
        raise UsageError("estimate needs --data")
    cfg = _config(args)
    data = load_csv(args.data)
    corr = FittedCorrection.load(args.correction) if args.correction else None
    if corr is not None and corr.model.k != data.k:
        raise DimensionError(f"correction expects {corr.model.k} covariates, data has {data.k}")
    table = Nuisances.from_csv(args.nuisances) if args.nuisances else None
    if table is not None and table.h.shape[0] != data.n:
        raise UsageError(f"nuisance table has {table.h.shape[0]} rows, data has {data.n}")
    if corr is None and table is None and args.method != "dm":
        raise UsageError(f"method {args.method} needs --correction or --nuisances")

    if args.estimand == "att":
        if args.method == "dm":
            raise UsageError("ATT supports ipw and aipw")
        if corr is None:
            raise UsageError("ATT needs --correction")
        mu = None
        if args.method == "aipw":
            mu = _outcome(args, cfg, data)
        report = estimate_att(data, corr.w, mu, method=args.method)
    elif args.method == "dm":
        report = estimate_dm(data, _outcome(args, cfg, data))
    elif args.method == "ipw":
        report = estimate_ipw(data, table.h if corr is None else corr)
    else:
        if table is not None:
            nuis = table
        elif cfg.crossfit:
            fc = replace(cfg.fit, generator=corr.generator, family=corr.model.family)
            folds = make_folds(data.n, data.d, cfg.crossfit, seed=cfg.fit.seed)
            nuis = crossfit_nuisances(data, fc, cfg.outcome, folds)
        else:
            nuis = nuisances_from(data, corr.h, _outcome(args, cfg, data))
        report = estimate_aipw(data, nuis)
    print(report.to_json(indent=2))
    return EXIT_OK


def cmd_print_config(args) -> int:
    sys.stdout.write(format_config(_config(args)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bregman-ate",
                                     description="Treatment effects via Bregman-fitted corrections.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file (see print-config)")
        p.add_argument("--seed", type=int, help="override the master / fit seed")
        return p

    p = common(sub.add_parser("simulate", help="run the replication benchmark"))
    p.add_argument("--out", help="benchmark CSV path; the JSON sidecar sits next to it")
    p.add_argument("--threads", type=int)
    p.add_argument("--crossfit", type=int, metavar="K")
    p.add_argument("--dataset", metavar="CSV", help="write one synthetic draw instead")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("fit", help="fit a correction term on a CSV dataset"))
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="correction JSON path")
    p.set_defaults(func=cmd_fit)

    p = common(sub.add_parser("estimate", help="estimate ATE / ATT and print a JSON report"))
    p.add_argument("--data", required=True)
    p.add_argument("--correction", help="fitted correction JSON")
    p.add_argument("--nuisances", help="CSV with columns h, mu1, mu0")
    p.add_argument("--method", choices=("dm", "ipw", "aipw"), default="aipw")
    p.add_argument("--estimand", choices=("ate", "att"), default="ate")
    p.add_argument("--mu", choices=("zero", "fit"), default="fit")
    p.add_argument("--crossfit", type=int, metavar="K")
    p.set_defaults(func=cmd_estimate)

    p = common(sub.add_parser("print-config", help="print the effective config"))
    p.set_defaults(func=cmd_print_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, DataError, DimensionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FitError, BenchError, RuntimeError, FloatingPointError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
