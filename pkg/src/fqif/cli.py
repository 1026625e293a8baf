"""Command line entry point: ``fqif simulate | fit | fpca``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .estimator import FunctionalQIFRegressor, estimate_eigensystem, fit_result_summary
from .fpca import select_kappa
from .funcdata import DataFormatError, dump_csv, load_csv
from .kernelsmooth import DEFAULT_GRID_SIZE
from .qif import ols_initial
from .simgen import Scenario, gen_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EMPTY_METHOD = 3

SCENARIO_CODES = ("bm", "lp1", "lp2", "lp3", "ou1", "ou3", "pe1", "pe2", "pe5", "rq1", "rq2", "rq5")


class ConfigError(Exception):
    pass


def _bandwidth(text: str):
    if text == "gcv":
        return "gcv"
    try:
        h = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("bandwidth must be a number or 'gcv'") from None
    if not h > 0:
        raise argparse.ArgumentTypeError("bandwidth must be positive")
    return h


def _kappa(text: str):
    if text == "auto":
        return "auto"
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("kappa must be a positive integer or 'auto'") from None
    if k < 1:
        raise argparse.ArgumentTypeError("kappa must be >= 1")
    return k


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fqif", description="QIF estimation with FPCA-based working correlation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="Monte-Carlo study on a simulated scenario")
    sim.add_argument("--scenario", required=True, help="one of " + ", ".join(SCENARIO_CODES))
    sim.add_argument("--n", type=int, default=100)
    sim.add_argument("--m", type=int, default=100)
    sim.add_argument("--reps", type=int, default=100)
    sim.add_argument("--methods", default="init,ldaCS,ldaAR,fda-1,fda-2,fda-3,fda-4,fda-5")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--grid", type=int, default=DEFAULT_GRID_SIZE)
    sim.add_argument("--bandwidth", type=_bandwidth, default="gcv")
    sim.add_argument("--fve", type=float, default=0.95, help="threshold for fda-auto")
    sim.add_argument("--out", default="-", help="report path ('-' for stdout)")
    sim.add_argument("--emit-data", metavar="DIR", help="also write each replication as CSV")
    sim.add_argument("--format", choices=("csv", "md"), default="csv")
    sim.add_argument("--workers", type=int, default=None)
    sim.add_argument("--unsafe-params", action="store_true")

    fit = sub.add_parser("fit", help="fit a CSV dataset")
    fit.add_argument("--data", required=True)
    fit.add_argument("--method", choices=("fda", "cs", "ar1", "init"), default="fda")
    fit.add_argument("--kappa", type=_kappa, default=3)
    fit.add_argument("--fve", type=float, default=0.95)
    fit.add_argument("--bandwidth", type=_bandwidth, default="gcv")
    fit.add_argument("--grid", type=int, default=DEFAULT_GRID_SIZE)
    fit.add_argument("--out", default="-")
    fit.add_argument("--dump-sandwich", action="store_true", help="include A-hat and B-hat in the JSON sidecar")

    fp = sub.add_parser("fpca", help="eigen decomposition of the smoothed residual covariance")
    fp.add_argument("--data", required=True)
    fp.add_argument("--bandwidth", type=_bandwidth, default="gcv")
    fp.add_argument("--grid", type=int, default=DEFAULT_GRID_SIZE)
    fp.add_argument("--out", default="-")
    fp.add_argument("--scree", action="store_true", help="emit k,lambda,fve only")
    return parser


def _write(path: str, data: bytes | str):
    if isinstance(data, str):
        data = data.encode()
    if path == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(path).write_bytes(data)


def cmd_simulate(args) -> int:
    if args.scenario not in SCENARIO_CODES and not args.unsafe_params:
        raise ConfigError(f"unknown scenario {args.scenario!r}")
    try:
        scenario = Scenario.from_code(args.scenario, unsafe_params=args.unsafe_params)
        methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
        config = harness.StudyConfig(
            scenario,
            n=args.n,
            m=args.m,
            replications=args.reps,
            methods=methods,
            seed=args.seed,
            bandwidth=args.bandwidth,
            grid_size=args.grid,
            fve_threshold=args.fve,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    if args.emit_data:
        outdir = Path(args.emit_data)
        outdir.mkdir(parents=True, exist_ok=True)
        for b in range(config.replications):
            ds, _ = gen_dataset(scenario, config.n, config.m, config.beta, config.seed, b)
            (outdir / f"rep_{b:04d}.csv").write_text(dump_csv(ds), encoding="utf-8")

    report = harness.run_study(config, workers=args.workers)
    _write(args.out, harness.emit_report(report, args.format))
    if report.failed_methods:
        logging.error("no successful replications for: %s", ", ".join(report.failed_methods))
        return EXIT_EMPTY_METHOD
    return EXIT_OK


def _sidecar_path(out: str) -> Path | None:
    return None if out == "-" else Path(out).with_suffix(Path(out).suffix + ".json")


def cmd_fit(args) -> int:
    try:
        dataset = load_csv(args.data)
    except (OSError, DataFormatError) as exc:
        raise ConfigError(str(exc)) from exc
    kappa = args.kappa
    est = FunctionalQIFRegressor(
        method=args.method,
        n_components=kappa,
        fve_threshold=args.fve,
        bandwidth=args.bandwidth,
        grid_size=args.grid,
    ).fit_dataset(dataset)

    lines = ["coefficient,estimate,std_error"]
    for name, b, se in zip(dataset.covariate_names, est.coef_, est.stderr_):
        lines.append(f"{name},{float(b)!r},{float(se)!r}")
    _write(args.out, "\n".join(lines) + "\n")

    diag = {
        "method": args.method,
        "n_subjects": dataset.n,
        "p": dataset.p,
        "init_estimate": [float(v) for v in est.init_coef_],
        "std_error_kind": "sandwich" if args.method == "fda" else "analogue",
        "time_scaling": dataset.time_scaling,
        "bandwidth": est.bandwidth_,
        "kappa": est.n_components_,
        "fve": est.fve_,
        **fit_result_summary(est.fit_result_),
    }
    if args.dump_sandwich:
        diag["a_hat"] = est.sandwich_.a_hat.tolist()
        diag["b_hat"] = est.sandwich_.b_hat.tolist()
        diag["sigma"] = est.sandwich_.sigma.tolist()
    side = _sidecar_path(args.out)
    text = json.dumps(diag, indent=2)
    if side is None:
        sys.stderr.write(text + "\n")
    else:
        side.write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_fpca(args) -> int:
    try:
        dataset = load_csv(args.data)
    except (OSError, DataFormatError) as exc:
        raise ConfigError(str(exc)) from exc
    est = estimate_eigensystem(dataset, ols_initial(dataset), args.bandwidth, args.grid)
    if args.scree:
        _write(args.out, harness.emit_fve_scree(est.eigsys))
    else:
        _write(args.out, est.eigsys.to_csv())
    logging.info("bandwidth %.4g, kappa(95%% FVE) = %d", est.bandwidth, select_kappa(est.eigsys, fve=0.95))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    handlers = {"simulate": cmd_simulate, "fit": cmd_fit, "fpca": cmd_fpca}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        sys.stderr.write(f"fqif {args.command}: {exc}\n")
        return EXIT_CONFIG
    except (ValueError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"fqif {args.command}: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
