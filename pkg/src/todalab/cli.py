"""Command line entry point: ``todalab <experiment> [flags]``."""
from __future__ import annotations

import argparse
import json
import sys

from .experiments import (ExperimentConfig, HorizonError, run_compare, run_deflate, run_gapdist, run_halt, run_hist,
                          run_khat, run_prop_error, run_table1)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--ensemble", help="GOE, GUE, BOE, BUE, FactorizedGaussianBeta, FIXED_SWAP or FIXED_DIAG")
    p.add_argument("--n", type=int)
    p.add_argument("--beta", type=float, help="factorized model only")
    p.add_argument("--m", type=int, help="Rademacher summands per entry for BOE/BUE")
    p.add_argument("--eps", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--half-width", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--p", type=float)
    p.add_argument("--s", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.add_argument("--ns", help="comma separated sizes (table1, prop-error)")
    p.add_argument("--ensembles", help="comma separated ensembles (table1)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="todalab", description="Toda halting-time Monte Carlo experiments")
    sub = ap.add_subparsers(dest="experiment", required=True)
    for name, helptext in [
        ("halt", "per-trial halting times, one CSV row per trial"),
        ("deflate", "all deflation times per trial"),
        ("gapdist", "ECDF of the top-gap statistic"),
        ("table1", "mean/std ratio of the halting time over sizes and ensembles"),
        ("khat", "frequency of the first deflating split"),
        ("hist", "histogram of a halting statistic"),
        ("prop-error", "error of the top-eigenvalue estimate at the halting time"),
    ]:
        p = sub.add_parser(name, help=helptext)
        _common(p)
        if name == "hist":
            p.add_argument("--stat", help="record column or t1_normalized (default t_tilde)")
    p = sub.add_parser("compare", help="KS distance between two CSV columns")
    p.add_argument("--a", required=True, metavar="FILE:COLUMN")
    p.add_argument("--b", required=True, metavar="FILE:COLUMN")
    p.add_argument("--bound", type=float)
    p.add_argument("--at-least", action="store_true", help="pass when KS >= bound instead of <=")
    p.add_argument("--out")
    return ap


def _split(spec: str):
    path, sep, col = spec.rpartition(":")
    if not sep:
        raise SystemExit(f"expected FILE:COLUMN, got {spec!r}")
    return path, col


def config_from_args(args) -> ExperimentConfig:
    keys = ["ensemble", "n", "beta", "m", "eps", "trials", "seed", "gamma", "half_width", "sigma", "p", "s",
            "workers", "out", "ns", "ensembles", "stat"]
    over = {k: getattr(args, k, None) for k in keys}
    over["experiment"] = args.experiment
    if args.config:
        return ExperimentConfig.from_file(args.config, over)
    return ExperimentConfig.from_mapping(over)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.experiment == "compare":
        rep = run_compare(_split(args.a), _split(args.b), args.bound, "min" if args.at_least else "max")
        text = rep.text()
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        sys.stdout.write(text)
        return 0 if rep.passed in (None, True) else 1

    cfg = config_from_args(args)
    try:
        if cfg.experiment == "halt":
            run = run_halt(cfg)
            print(f"trials={len(run.records)} degenerate_rate={run.degenerate_rate!r}")
        elif cfg.experiment == "table1":
            kinds = cfg.ensembles or [cfg.ensemble]
            print("n,margin," + ",".join(kinds))
            for row in run_table1(cfg):
                print(f"{row.n},{row.margin:.3f}," + ",".join(f"{row.ratios[k]:.4f}" for k in kinds))
        elif cfg.experiment == "khat":
            run = run_khat(cfg)
            for k in sorted((k for k in run.freq if k is not None)):
                print(f"{k},{run.freq[k]:.4f}")
            if None in run.freq:
                print(f"none,{run.freq[None]:.4f}")
        elif cfg.experiment == "deflate":
            res = run_deflate(cfg)
            for i, r in enumerate(res):
                print(f"{i},{r.k_hat},{r.t_min}")
        elif cfg.experiment == "gapdist":
            run = run_gapdist(cfg)
            print(f"samples={run.stats.size} zero_gap_trials={run.zero_gaps}")
        elif cfg.experiment == "hist":
            h = run_hist(cfg)
            print(f"bins={h.masses.size}")
        elif cfg.experiment == "prop-error":
            rep = run_prop_error(cfg)
            print(json.dumps({"n": rep.n, "frac_scaled_err_le_0.1": rep.frac_scaled_err_le,
                              "scaled_err_quantiles": rep.scaled_err_quantiles,
                              "second_median": rep.second_median}, indent=1))
    except HorizonError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
