"""Seeded Monte Carlo experiments over the samplers, halting times and deflation times.

Trial ``i`` of a run with master seed ``s`` draws everything from
``trial_stream(s, i)``. Trials are mapped over an optional process pool and
collected by trial index, so output does not depend on the worker count.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .ensembles import EnsembleSpec, Kind, sample_factorized_top, sample_spectral, sample_wigner, spectral_from_matrix, trial_stream
from .flow import DeflationResult, deflation_times, default_t_cap, horizon_ok
from .halting import HaltingRecord, NoCrossingError, gap_statistic, halting_record, scaling_region
from .linalg import eigh
from .stats import (Ecdf, check_gap_condition, check_rigidity, ecdf, histogram, ks_distance, normalized,
                    quantile_gamma, semicircle, summarize, write_ecdf_csv, write_histogram_csv)

FIXED_KINDS = ("FIXED_SWAP", "FIXED_DIAG")
SEED_RULE = "trial i uses numpy Generator(Philox(SeedSequence([seed, i])))"
EXPERIMENTS = ("halt", "deflate", "gapdist", "table1", "khat", "compare", "hist", "prop-error")


class HorizonError(RuntimeError):
    """Requested deflation parameters lie beyond the double-precision horizon."""


# --- configuration -----------------------------------------------------------------------------

def _parse_list(text, conv):
    if isinstance(text, (list, tuple)):
        return [conv(v) for v in text]
    return [conv(v) for v in str(text).replace(",", " ").split()]


@dataclass
class ExperimentConfig:
    experiment: str = "halt"
    ensemble: str = "GUE"
    n: int = 100
    beta: float = 0
    eps: float = 1e-8
    trials: int = 100
    seed: int = 0
    gamma: float = 0.0
    half_width: float = 2.0 * math.sqrt(2.0)
    sigma: float = 0.5
    p: Optional[float] = None
    s: Optional[float] = None
    m: int = 1
    workers: int = 1
    out: Optional[str] = None
    ns: list = field(default_factory=list)
    ensembles: list = field(default_factory=list)
    stat: str = "t_tilde"

    _CONV = {"n": int, "beta": float, "eps": float, "trials": int, "seed": int, "gamma": float,
             "half_width": float, "sigma": float, "p": float, "s": float, "m": int, "workers": int}

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        self.ns = _parse_list(self.ns, int)
        self.ensembles = _parse_list(self.ensembles, str)

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        kw = {}
        for key, val in values.items():
            key = key.replace("-", "_")
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            if val is None:
                continue
            conv = cls._CONV.get(key)
            kw[key] = conv(val) if conv and isinstance(val, str) else val
        return cls(**kw)

    @classmethod
    def from_file(cls, path, overrides: Optional[dict] = None) -> "ExperimentConfig":
        values = read_config(path)
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(values)

    def override(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def ensemble_spec(self, kind: Optional[str] = None, n: Optional[int] = None) -> EnsembleSpec:
        return EnsembleSpec(kind or self.ensemble, n or self.n, beta=self.beta, half_width=self.half_width,
                            bernoulli_summands=self.m, seed=self.seed)

    @property
    def c_v(self) -> float:
        return semicircle(self.half_width).c_V

    def echo(self) -> list[str]:
        out = []
        for k, v in asdict(self).items():
            if k in ("workers", "out"):
                continue  # do not affect results
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            out.append(f"{k}={'' if v is None else v}")
        return out


def read_config(path) -> dict:
    """key=value lines; '#' starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            values[k.strip()] = v.strip()
    return values


@dataclass
class RunManifest:
    command: str
    config: ExperimentConfig
    started: float = field(default_factory=time.time)
    finished: Optional[float] = None

    def header_lines(self) -> list[str]:
        # wall times live in the sidecar so reruns are byte-identical
        return [f"todalab {__version__} {self.command}", f"numpy {np.__version__}",
                f"seed={self.config.seed}", f"seed_rule: {SEED_RULE}", *self.config.echo()]

    def finish(self) -> "RunManifest":
        self.finished = time.time()
        return self

    def write_sidecar(self, out_path) -> None:
        info = {"command": self.command, "version": __version__, "config": self.config.echo(),
                "start_wall": self.started, "end_wall": self.finished}
        with open(f"{out_path}.run.json", "w", encoding="utf-8") as fh:
            json.dump(info, fh, indent=1)


def _write_csv(path, manifest: RunManifest, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in manifest.header_lines():
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    manifest.finish().write_sidecar(path)


# --- parallel map --------------------------------------------------------------------------------

def map_trials(fn: Callable, cfg: ExperimentConfig, trials: Sequence[int], workers: Optional[int] = None) -> list:
    """[fn(cfg, chunk)...] flattened and sorted by trial; each item is (trial, value)."""
    trials = list(trials)
    workers = cfg.workers if workers is None else workers
    if workers <= 1 or len(trials) < 2:
        out = fn(cfg, trials)
    else:
        size = max(1, math.ceil(len(trials) / (4 * workers)))
        chunks = [trials[i:i + size] for i in range(0, len(trials), size)]
        out = []
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(fn, [cfg] * len(chunks), chunks):
                out.extend(part)
    out.sort(key=lambda item: item[0])
    return out


# --- per-trial sampling ------------------------------------------------------------------------

def trial_matrix(cfg: ExperimentConfig, trial: int, kind: Optional[str] = None, n: Optional[int] = None):
    """Matrix for one trial, or None for the factorized model (which has no matrix)."""
    kind = kind or cfg.ensemble
    n = n or cfg.n
    if kind == "FIXED_SWAP":
        return np.array([[0.0, 1.0], [1.0, 0.0]])
    if kind == "FIXED_DIAG":
        return np.diag(np.arange(n, 0, -1, dtype=float))
    spec = cfg.ensemble_spec(kind, n)
    if spec.kind is Kind.FACTORIZED:
        return None
    return sample_wigner(spec, trial_stream(cfg.seed, trial))


def trial_spectral(cfg: ExperimentConfig, trial: int, kind: Optional[str] = None, n: Optional[int] = None) -> SpectralData:
    kind = kind or cfg.ensemble
    H = trial_matrix(cfg, trial, kind, n)
    if H is not None:
        return spectral_from_matrix(H)
    return sample_spectral(cfg.ensemble_spec(kind, n), trial_stream(cfg.seed, trial))


def _beta_of(cfg: ExperimentConfig, kind: str) -> float:
    if kind in FIXED_KINDS:
        return 1
    return cfg.ensemble_spec(kind, max(cfg.n, 2)).beta


def _record(cfg: ExperimentConfig, trial: int, kind: str, n: int) -> HaltingRecord:
    sd = trial_spectral(cfg, trial, kind, n)
    beta = _beta_of(cfg, kind)
    try:
        return halting_record(sd, cfg.eps, trial=trial, kind=kind, beta=beta, gamma=cfg.gamma,
                              c_v=cfg.c_v, sigma=cfg.sigma)
    except NoCrossingError:
        # kept and flagged so degeneracy rates stay honest
        return HaltingRecord(trial=trial, kind=kind, n=n, beta=beta, eps=cfg.eps,
                             alpha=2.0 * math.log(1.0 / cfg.eps) / math.log(n), t1=math.nan,
                             err_top=math.nan, lambda_top=float(sd.lambdas[-1]), top_gap=sd.top_gap,
                             in_scaling_region=scaling_region(cfg.eps, n, cfg.sigma), degenerate_flag=True)


def _halt_chunk(cfg: ExperimentConfig, trials) -> list:
    n = 2 if cfg.ensemble == "FIXED_SWAP" else cfg.n
    return [(t, _record(cfg, t, cfg.ensemble, n)) for t in trials]


# --- runners -----------------------------------------------------------------------------------

@dataclass
class HaltRun:
    records: list
    degenerate_rate: float

    def column(self, name: str) -> np.ndarray:
        vals = [getattr(r, name) for r in self.records]
        return np.array([math.nan if v is None else v for v in vals], dtype=float)


def run_halt(cfg: ExperimentConfig) -> HaltRun:
    recs = [r for _, r in map_trials(_halt_chunk, cfg, range(cfg.trials))]
    rate = sum(r.degenerate_flag for r in recs) / len(recs)
    if cfg.out:
        _write_csv(cfg.out, RunManifest("halt", cfg), HaltingRecord.CSV_FIELDS, [r.csv_row() for r in recs])
    return HaltRun(recs, rate)


@dataclass
class Table1Row:
    n: int
    margin: float
    ratios: dict


def run_table1(cfg: ExperimentConfig) -> list[Table1Row]:
    """Mean/std ratio of T1 for each (n, ensemble) cell; cell seeds are offset by the cell index."""
    ns = cfg.ns or [cfg.n]
    kinds = cfg.ensembles or [cfg.ensemble]
    rows = []
    for i, n in enumerate(ns):
        ratios = {}
        for j, kind in enumerate(kinds):
            sub = cfg.override(ensemble=kind, n=n, seed=cfg.seed + 1000 * i + j, out=None)
            ratios[kind] = summarize(run_halt(sub).column("t1")).ratio
        rows.append(Table1Row(n, math.log(1.0 / cfg.eps) / math.log(n) - 5.0 / 3.0, ratios))
    if cfg.out:
        body = [[r.n, repr(r.margin), *[repr(r.ratios[k]) for k in kinds]] for r in rows]
        _write_csv(cfg.out, RunManifest("table1", cfg), ["n", "margin", *kinds], body)
    return rows


def _deflate_chunk(cfg: ExperimentConfig, trials, only_min: bool = False) -> list:
    out = []
    for t in trials:
        H = trial_matrix(cfg, t)
        if H is None:
            raise ValueError("deflation needs a matrix ensemble")
        es = eigh(H, method="lapack")
        out.append((t, deflation_times(es, H, cfg.eps, default_t_cap(es), only_min=only_min, qr_method="lapack")))
    return out


def _khat_chunk(cfg: ExperimentConfig, trials) -> list:
    return _deflate_chunk(cfg, trials, only_min=True)


def _check_horizon(cfg: ExperimentConfig) -> None:
    if cfg.ensemble in FIXED_KINDS:
        return
    ok, why = horizon_ok(cfg.n, cfg.eps, cfg.half_width, cfg.c_v)
    if not ok:
        raise HorizonError(why)


def run_deflate(cfg: ExperimentConfig) -> list[DeflationResult]:
    _check_horizon(cfg)
    res = [r for _, r in map_trials(_deflate_chunk, cfg, range(cfg.trials))]
    if cfg.out:
        man = RunManifest("deflate", cfg)
        _write_csv(cfg.out, man, ["trial", "n", "eps", "k_hat", "t_min"],
                   [[i, r.n, repr(r.eps), "" if r.k_hat is None else r.k_hat,
                     "" if r.t_min is None else repr(r.t_min)] for i, r in enumerate(res)])
        long_rows = [[i, k, "" if v is None else repr(v)] for i, r in enumerate(res) for k, v in enumerate(r.t_k, start=1)]
        _write_csv(_companion(cfg.out, "tk"), man, ["trial", "k", "t_k"], long_rows)
    return res


def _companion(path: str, tag: str) -> str:
    root, ext = os.path.splitext(path)
    return f"{root}.{tag}{ext or '.csv'}"


@dataclass
class KhatRun:
    k_hat: list
    freq: dict  # k -> fraction of trials; None collects trials with no crossing
    n: int

    def top_two(self) -> list:
        ranked = sorted(((f, k) for k, f in self.freq.items() if k is not None), key=lambda x: (-x[0], x[1]))
        return [k for _, k in ranked[:2]]


def run_khat(cfg: ExperimentConfig) -> KhatRun:
    _check_horizon(cfg)
    n = 2 if cfg.ensemble == "FIXED_SWAP" else cfg.n
    khat = [r.k_hat for _, r in map_trials(_khat_chunk, cfg, range(cfg.trials))]
    freq = {}
    for k in khat:
        freq[k] = freq.get(k, 0) + 1
    freq = {k: c / len(khat) for k, c in freq.items()}
    if cfg.out:
        keys = sorted(k for k in freq if k is not None)
        rows = [[k, repr(freq[k])] for k in keys]
        if None in freq:
            rows.append(["none", repr(freq[None])])
        _write_csv(cfg.out, RunManifest("khat", cfg), ["k_hat", "frequency"], rows)
    return KhatRun(khat, freq, n)


@dataclass
class GapRun:
    stats: np.ndarray  # gap statistic per nonzero-gap trial, trial order
    zero_gaps: int

    def ecdf(self) -> Ecdf:
        return ecdf(self.stats)


def _gap_chunk(cfg: ExperimentConfig, trials) -> list:
    out = []
    for t in trials:
        sd = trial_spectral(cfg, t)
        out.append((t, sd.top_gap))
    return out


def gap_samples(cfg: ExperimentConfig) -> np.ndarray:
    """Top gap lambda_N - lambda_{N-1} per trial."""
    spec = None if cfg.ensemble in FIXED_KINDS else cfg.ensemble_spec()
    if spec is not None and spec.kind is Kind.FACTORIZED:
        top = sample_factorized_top(spec, cfg.seed, range(cfg.trials), k=2)
        return top[:, 0] - top[:, 1]
    return np.array([g for _, g in map_trials(_gap_chunk, cfg, range(cfg.trials))])


def run_gapdist(cfg: ExperimentConfig) -> GapRun:
    gaps = gap_samples(cfg)
    n = cfg.n
    keep = gaps > 0
    stats = np.array([gap_statistic(g, n, cfg.c_v) for g in gaps[keep]])
    run = GapRun(stats, int((~keep).sum()))
    if cfg.out:
        man = RunManifest("gapdist", cfg)
        write_ecdf_csv(cfg.out, run.ecdf(), man.header_lines() + [f"zero_gap_trials={run.zero_gaps}"])
        man.finish().write_sidecar(cfg.out)
    return run


@dataclass
class CompareReport:
    ks: float
    n_a: int
    n_b: int
    bound: Optional[float]
    passed: Optional[bool]

    def text(self) -> str:
        return (f"ks={self.ks!r}\nn_a={self.n_a}\nn_b={self.n_b}\nbound={'' if self.bound is None else self.bound}\n"
                f"pass={'' if self.passed is None else str(self.passed).lower()}\n")


def read_column(path: str, column: str) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(rows, None)
        if header is None or column not in header:
            raise ValueError(f"{path}: no column {column!r}")
        j = header.index(column)
        vals = [r[j] for r in rows if r and r[j] != ""]
    x = np.array(vals, dtype=float)
    x = x[~np.isnan(x)]
    if x.size == 0:
        raise ValueError(f"{path}: column {column!r} is empty")
    return x


def run_compare(a, b, bound: Optional[float] = None, mode: str = "max") -> CompareReport:
    """KS distance between two samples (arrays, or (path, column) pairs).

    ``mode="max"`` passes when KS <= bound, ``mode="min"`` when KS >= bound.
    """
    xa = read_column(*a) if isinstance(a, tuple) else np.asarray(a, dtype=float)
    xb = read_column(*b) if isinstance(b, tuple) else np.asarray(b, dtype=float)
    ks = ks_distance(ecdf(xa), ecdf(xb))
    passed = None
    if bound is not None:
        passed = ks <= bound if mode == "max" else ks >= bound
    return CompareReport(ks, xa.size, xb.size, bound, passed)


@dataclass
class PropErrorReport:
    n: int
    frac_scaled_err_le: float  # fraction of trials with err_top / eps <= 0.1
    scaled_err_quantiles: dict
    second_median: dict  # n -> median of n^{2/3+r} |lambda_{N-1} - X11(T1)|


def run_prop_error(cfg: ExperimentConfig, r: float = 0.1, threshold: float = 0.1,
                   qs=(0.5, 0.9, 0.95, 0.99)) -> PropErrorReport:
    ns = cfg.ns or [cfg.n]
    second = {}
    base = None
    for i, n in enumerate(ns):
        sub = cfg.override(n=n, seed=cfg.seed + 1000 * i, out=None)
        recs = run_halt(sub).records
        sec = np.array([rec.err_second for rec in recs], dtype=float)
        second[n] = float(np.nanmedian(n ** (2.0 / 3.0 + r) * sec))
        if n == cfg.n or base is None:
            scaled = np.array([rec.err_top for rec in recs], dtype=float) / cfg.eps
            base = (n, scaled)
    n0, scaled = base
    rep = PropErrorReport(n0, float(np.mean(scaled <= threshold)),
                          {q: float(np.quantile(scaled, q)) for q in qs}, second)
    if cfg.out:
        rows = [["frac_scaled_err_le_%g" % threshold, n0, repr(rep.frac_scaled_err_le)]]
        rows += [[f"scaled_err_q{q}", n0, repr(v)] for q, v in rep.scaled_err_quantiles.items()]
        rows += [[f"second_median_r{r}", n, repr(v)] for n, v in second.items()]
        _write_csv(cfg.out, RunManifest("prop-error", cfg), ["statistic", "n", "value"], rows)
    return rep


def run_hist(cfg: ExperimentConfig, bins=None):
    """Histogram of a halting statistic: any record column, or ``t1_normalized``."""
    run = run_halt(cfg.override(out=None))
    if cfg.stat == "t1_normalized":
        x = normalized(run.column("t1"))
    else:
        x = run.column(cfg.stat)
        x = x[~np.isnan(x)]
    h = histogram(x, bins)
    if cfg.out:
        man = RunManifest("hist", cfg)
        write_histogram_csv(cfg.out, h, man.header_lines())
        man.finish().write_sidecar(cfg.out)
    return h


# --- condition frequencies -----------------------------------------------------------------------

def _cond_chunk(cfg: ExperimentConfig, trials) -> list:
    meas = semicircle(cfg.half_width)
    gammas = quantile_gamma(meas, np.arange(1, cfg.n + 1), cfg.n)
    out = []
    for t in trials:
        sd = trial_spectral(cfg, t)
        rig = check_rigidity(sd, cfg.s, meas, gammas) if cfg.s is not None else None
        gap = check_gap_condition(sd, cfg.p) if cfg.p is not None else None
        out.append((t, (rig, gap)))
    return out


def condition_frequencies(cfg: ExperimentConfig) -> dict:
    """Fraction of trials meeting the rigidity and gap conditions, plus rigidity failure counts by clause."""
    res = [v for _, v in map_trials(_cond_chunk, cfg, range(cfg.trials))]
    out = {"trials": len(res)}
    if cfg.s is not None:
        out["rigidity"] = float(np.mean([r.ok for r, _ in res]))
        out["failed_clause"] = {c: sum(r.failed_clause == c for r, _ in res) for c in (1, 2, 3, 4)}
    if cfg.p is not None:
        out["gap"] = float(np.mean([g for _, g in res]))
    return out
