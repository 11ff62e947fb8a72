"""Random matrix samplers: Wigner ensembles and the factorized Gaussian beta model.

Every sampler takes an explicit ``numpy.random.Generator``. Use
:func:`trial_stream` to get the Philox (counter-based) stream keyed by
``(seed, trial)``; draws inside a trial consume the counter in a fixed order,
so a (spec, seed, trial) triple always reproduces the same sample.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

from .halting import SpectralData
from .linalg import SymTridiagonal, check_hermitian, eigh, top_eigs_tridiag_batch

DEFAULT_HALF_WIDTH = 2.0 * math.sqrt(2.0)


class Kind(str, Enum):
    GOE = "GOE"
    GUE = "GUE"
    BOE = "BOE"
    BUE = "BUE"
    FACTORIZED = "FactorizedGaussianBeta"


_WIGNER_BETA = {Kind.GOE: 1, Kind.BOE: 1, Kind.GUE: 2, Kind.BUE: 2}


@dataclass(frozen=True)
class EnsembleSpec:
    kind: Kind
    n: int
    beta: float = 0
    half_width: float = DEFAULT_HALF_WIDTH
    bernoulli_summands: int = 1
    seed: int = 0
    vector_beta: Optional[int] = None  # factorized only; defaults to beta when beta is 1 or 2

    def __post_init__(self):
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        beta = self.beta
        if kind in _WIGNER_BETA:
            if beta == 0:
                beta = _WIGNER_BETA[kind]
            if beta != _WIGNER_BETA[kind]:
                raise ValueError(f"{kind.value} requires beta={_WIGNER_BETA[kind]}, got {beta}")
        else:
            if beta == 0:
                beta = 2
            if beta < 1:
                raise ValueError("factorized ensemble needs beta >= 1")
            vb = self.vector_beta if self.vector_beta is not None else (int(beta) if beta in (1, 2) else None)
            if vb not in (1, 2):
                raise ValueError("vector_beta must be 1 or 2 (set it explicitly when beta is not 1 or 2)")
            object.__setattr__(self, "vector_beta", vb)
        object.__setattr__(self, "beta", beta)
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")
        if self.bernoulli_summands < 1:
            raise ValueError("bernoulli_summands must be >= 1")

    @property
    def offdiag_variance(self) -> float:
        """Off-diagonal entry variance giving limiting support [-half_width, half_width]."""
        return (self.half_width / (2.0 * math.sqrt(2.0))) ** 2 * 2.0 / self.n

    @property
    def is_complex(self) -> bool:
        if self.kind is Kind.FACTORIZED:
            return self.vector_beta == 2
        return _WIGNER_BETA[self.kind] == 2

    def with_seed(self, seed: int) -> "EnsembleSpec":
        return replace(self, seed=seed)


def trial_stream(seed: int, trial: int) -> np.random.Generator:
    """Independent Philox stream for one trial of a run with master ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**64 - 1), int(trial)])))


def _rademacher_sum(rng: np.random.Generator, m: int, size) -> np.ndarray:
    """Sum of m independent +-1 variables, scaled to unit variance."""
    return (2.0 * rng.binomial(m, 0.5, size=size) - m) / math.sqrt(m)


def sample_wigner(spec: EnsembleSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw one GOE/GUE/BOE/BUE matrix.

    Independent upper-triangle entries with off-diagonal variance
    ``offdiag_variance``; the lower triangle is the exact conjugate mirror.
    GOE doubles the diagonal variance, BOE keeps the entries iid. Complex
    entries split their variance equally between real and imaginary parts.
    """
    if spec.kind not in _WIGNER_BETA:
        raise ValueError(f"sample_wigner does not handle {spec.kind.value}")
    n, s = spec.n, math.sqrt(spec.offdiag_variance)
    iu = np.triu_indices(n, 1)
    m = len(iu[0])
    kind = spec.kind
    if kind is Kind.GOE:
        off = rng.standard_normal(m) * s
        diag = rng.standard_normal(n) * s * math.sqrt(2.0)
    elif kind is Kind.BOE:
        off = _rademacher_sum(rng, 1, m) * s
        diag = _rademacher_sum(rng, 1, n) * s
    elif kind is Kind.GUE:
        off = (rng.standard_normal(m) + 1j * rng.standard_normal(m)) * (s / math.sqrt(2.0))
        diag = rng.standard_normal(n) * s
    else:
        k = spec.bernoulli_summands
        re = _rademacher_sum(rng, k, m)
        im = _rademacher_sum(rng, k, m)
        off = (re + 1j * im) * (s / math.sqrt(2.0))
        diag = _rademacher_sum(rng, k, n) * s
    H = np.zeros((n, n), dtype=off.dtype)
    H[iu] = off
    H = H + H.conj().T
    H[np.diag_indices(n)] = diag
    return H


def spectral_from_matrix(H, eigensolver: str = "lapack") -> SpectralData:
    H = check_hermitian(H)
    es = eigh(H, method=eigensolver)
    betas = np.abs(es.vectors[0, :])
    # unit row norm holds to rounding; renormalize so downstream sums are exact
    betas = betas / np.sqrt(np.sum(betas ** 2))
    return SpectralData(es.lambdas, betas)


def _beta_hermite_tridiagonal(spec: EnsembleSpec, rng: np.random.Generator) -> SymTridiagonal:
    """Tridiagonal model whose eigenvalues have the Gaussian beta-ensemble law.

    Gaussian diagonal and chi off-diagonals with beta*(n-1), ..., beta degrees
    of freedom, rescaled onto the support [-half_width, half_width].
    """
    n, beta = spec.n, spec.beta
    scale = math.sqrt(spec.offdiag_variance) * math.sqrt(2.0 / beta)
    diag = rng.standard_normal(n)
    dof = beta * np.arange(n - 1, 0, -1, dtype=float)
    off = np.sqrt(rng.chisquare(dof)) / math.sqrt(2.0)
    return SymTridiagonal(diag * scale, off * scale)


def _haar_first_row(n: int, vector_beta: int, rng: np.random.Generator) -> np.ndarray:
    if vector_beta == 1:
        g = np.abs(rng.standard_normal(n))
    else:
        g = np.abs(rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return g / np.sqrt(np.sum(g ** 2))


def sample_factorized(spec: EnsembleSpec, rng: np.random.Generator) -> SpectralData:
    """Eigenvalues from the beta-Hermite tridiagonal model, first row of a Haar matrix.

    Only the quadratic potential is supported.
    """
    if spec.kind is not Kind.FACTORIZED:
        raise ValueError("sample_factorized needs kind=FactorizedGaussianBeta")
    T = _beta_hermite_tridiagonal(spec, rng)
    betas = _haar_first_row(spec.n, spec.vector_beta, rng)
    lambdas = eigvalsh_tridiagonal(T.diag, T.offdiag)
    return SpectralData(np.sort(lambdas), betas)


def sample_factorized_top(spec: EnsembleSpec, seed: int, trials, k: int = 2) -> np.ndarray:
    """Top ``k`` eigenvalues (descending) of the tridiagonal model, one row per trial.

    Trial ``i`` uses ``trial_stream(seed, i)`` and draws the same tridiagonal as
    :func:`sample_factorized` would, so the two paths agree on every trial.
    """
    trials = list(trials)
    diags = np.empty((len(trials), spec.n))
    offs = np.empty((len(trials), spec.n - 1))
    for row, t in enumerate(trials):
        T = _beta_hermite_tridiagonal(spec, trial_stream(seed, t))
        diags[row], offs[row] = T.diag, T.offdiag
    out = np.empty((len(trials), k))
    for lo in range(0, len(trials), 1024):
        out[lo:lo + 1024] = top_eigs_tridiag_batch(diags[lo:lo + 1024], offs[lo:lo + 1024], k)
    return out


def sample_spectral(spec: EnsembleSpec, rng: np.random.Generator, eigensolver: str = "lapack") -> SpectralData:
    if spec.kind is Kind.FACTORIZED:
        return sample_factorized(spec, rng)
    return spectral_from_matrix(sample_wigner(spec, rng), eigensolver)


# --- variance profiles ------------------------------------------------------------------

@dataclass(frozen=True)
class VarianceProfile:
    sigma2: np.ndarray


@dataclass(frozen=True)
class ProfileReport:
    ok: bool
    C1: float
    C2: float
    failures: tuple[str, ...] = ()


def variance_profile(spec: EnsembleSpec, normalized: bool = True) -> VarianceProfile:
    """Per-entry variances of ``sample_wigner(spec)``.

    With ``normalized=True`` the profile is rescaled so every column sums to 1,
    the generalized-Wigner normalization.
    """
    n = spec.n
    v = spec.offdiag_variance
    s2 = np.full((n, n), v)
    if spec.kind is Kind.GOE:
        np.fill_diagonal(s2, 2.0 * v)
    if normalized:
        s2 = s2 / s2.sum(axis=0)[None, :]
    return VarianceProfile(s2)


def validate_profile(p: VarianceProfile, atol: float = 1e-12) -> ProfileReport:
    s2 = np.asarray(p.sigma2, dtype=float)
    n = s2.shape[0]
    failures = []
    if s2.shape != (n, n):
        return ProfileReport(False, float("nan"), float("nan"), ("profile is not square",))
    if np.max(np.abs(s2 - s2.T)) > atol:
        failures.append("profile is not symmetric")
    colsum = s2.sum(axis=0)
    bad = np.flatnonzero(np.abs(colsum - 1.0) > atol)
    if bad.size:
        failures.append(f"column {int(bad[0])} sums to {colsum[bad[0]]!r}, not 1")
    c1, c2 = float(n * s2.min()), float(n * s2.max())
    if c1 <= 0:
        failures.append("some variance is zero: no positive lower bound C1")
    return ProfileReport(not failures, c1, c2, tuple(failures))


# --- CSV export ----------------------------------------------------------------------------

def write_matrix_csv(path, H: np.ndarray, spec: EnsembleSpec, trial: int = 0) -> None:
    """Row-major matrix dump; complex entries are written as ``re+imj``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# kind={spec.kind.value} n={spec.n} seed={spec.seed} trial={trial}\n")
        w = csv.writer(fh)
        w.writerow([f"c{j}" for j in range(H.shape[1])])
        for row in H:
            w.writerow([repr(complex(x)) if np.iscomplexobj(H) else repr(float(x)) for x in row])


def write_spectral_csv(path, sd: SpectralData, spec: EnsembleSpec, trial: int = 0) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# kind={spec.kind.value} n={spec.n} seed={spec.seed} trial={trial}\n")
        w = csv.writer(fh)
        w.writerow(["index", "lambda", "beta"])
        for i, (lam, b) in enumerate(zip(sd.lambdas, sd.betas), start=1):
            w.writerow([i, repr(float(lam)), repr(float(b))])
