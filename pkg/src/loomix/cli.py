"""Command-line interface: ``loomix {leverage,simulate,estimate,experiment}``."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import DESIGNS, MODELS, load_config, parse_prior
from .errors import ConfigError, LoomixError
from .experiments import ResultTable, estimate_file, gen_synthetic, run_experiment, run_fig1

EXIT_OK = 0


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI file with [section] headers")
    common.add_argument("--seed", metavar="U64", help="overrides the LOOMIX_SEED environment variable")
    common.add_argument("--method", metavar="LIST", help="comma-separated estimators")
    common.add_argument("--model", choices=MODELS)
    common.add_argument("--data", metavar="PATH", help="CSV with a leading 'y' column")
    common.add_argument("--standardize", action="store_true", default=None)
    common.add_argument("--out", metavar="PATH", help="output file (default: stdout)")
    common.add_argument("--format", choices=("json", "csv"))
    common.add_argument("--threads", metavar="N", type=int)
    common.add_argument(
        "--set",
        metavar="KEY=VALUE",
        action="append",
        default=[],
        help="override any config key (repeatable)",
    )

    ap = argparse.ArgumentParser(prog="loomix", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("leverage", parents=[common], help="Bayesian leverages of a CSV, or the leverage census")
    sub.add_parser("simulate", parents=[common], help="write a synthetic Gaussian-linear dataset as CSV")
    sub.add_parser("estimate", parents=[common], help="LOO estimates for a CSV dataset")
    exp = sub.add_parser("experiment", parents=[common], help="run a configured design")
    exp.add_argument("--design", choices=DESIGNS)
    return ap


def _overrides(args) -> dict:
    ov = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        ov[k.strip()] = v
    named = {
        "seed": args.seed,
        "methods": args.method,
        "model": args.model,
        "data": args.data,
        "standardize": None if args.standardize is None else "true",
        "out": args.out,
        "format": args.format,
        "threads": None if args.threads is None else str(args.threads),
        "design": getattr(args, "design", None),
    }
    ov.update({k: v for k, v in named.items() if v is not None})
    return ov


def _emit(text: str, path) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _leverage(cfg) -> ResultTable:
    if not cfg.data:
        return run_fig1(cfg.replace(design="fig1-leverage"))
    from .conjugate import bayesian_leverages
    from .data import read_csv

    data = read_csv(cfg.data, standardize=cfg.standardize)
    h = bayesian_leverages(data.X, cfg.sigma2, parse_prior(cfg.prior, data.p))
    table = ResultTable()
    for i, v in enumerate(h):
        table.add(f"obs={i}", "leverage", "H_ii", float(v))
    return table


def _simulate(cfg) -> str:
    from .data import write_csv
    from .experiments import task_rng

    n, p = cfg.n[0], cfg.p_grid(cfg.n[0])[0]
    _, data = gen_synthetic(n, p, cfg.sigma2, cfg.prior, task_rng(cfg.seed, 0))
    if cfg.out:
        write_csv(data, cfg.out)
        return ""
    import io

    buf = io.StringIO()
    write_csv(data, buf)
    return buf.getvalue()


def main(argv=None, env=None) -> int:
    ap = _parser()
    args = ap.parse_args(argv)
    env = os.environ if env is None else env
    try:
        ov = _overrides(args)
        cmd = args.command
        if cmd == "estimate":
            ov.setdefault("design", "estimate-file")
        cfg = load_config(args.config, ov, env)
        if cmd == "simulate":
            text = _simulate(cfg)
            if text:
                sys.stdout.write(text)
            return EXIT_OK
        if cmd == "leverage":
            table = _leverage(cfg)
        elif cmd == "estimate":
            table = estimate_file(cfg)
        else:
            table = run_experiment(cfg)
        _emit(table.render(cfg), cfg.out)
        return EXIT_OK
    except LoomixError as exc:
        print(f"loomix: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"loomix: numerical error: {exc}", file=sys.stderr)
        return 4
    except np.linalg.LinAlgError as exc:
        print(f"loomix: numerical error: {exc}", file=sys.stderr)
        return 4


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
