"""Semicircle equilibrium measures, spectral condition checks and sample statistics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .halting import SpectralData


# --- equilibrium measure -------------------------------------------------------------------

@dataclass(frozen=True)
class EquilibriumMeasure:
    """Semicircle law on [-r, r]."""
    a_V: float
    b_V: float

    @property
    def r(self) -> float:
        return 0.5 * (self.b_V - self.a_V)

    @property
    def center(self) -> float:
        return 0.5 * (self.b_V + self.a_V)

    @property
    def c_V(self) -> float:
        """Edge constant: density ~ (2^{3/4} c_V / pi) sqrt(b_V - x) near b_V."""
        return 2.0 ** -0.75 * (self.r / 2.0) ** -1.5

    def density(self, x):
        r = self.r
        y = np.asarray(x, dtype=float) - self.center
        return 2.0 / (math.pi * r * r) * np.sqrt(np.clip(r * r - y * y, 0.0, None))

    def cdf(self, x):
        u = np.clip((np.asarray(x, dtype=float) - self.center) / self.r, -1.0, 1.0)
        return 0.5 + (u * np.sqrt(1.0 - u * u) + np.arcsin(u)) / math.pi


def semicircle(half_width: float) -> EquilibriumMeasure:
    if half_width <= 0:
        raise ValueError("half_width must be positive")
    return EquilibriumMeasure(-float(half_width), float(half_width))


def edge_fit_c_v(measure: EquilibriumMeasure, width: Optional[float] = None, points: int = 200) -> float:
    """Least-squares fit of rho(x) = A sqrt(b - x) on a thin strip below the edge; returns c_V = pi A / 2^{3/4}.

    The strip defaults to the last 0.25% of the support.
    """
    b = measure.b_V
    if width is None:
        width = 0.0025 * (b - measure.a_V)
    x = np.linspace(b - width, b, points)
    s = np.sqrt(b - x)
    A = float(np.dot(s, measure.density(x)) / np.dot(s, s))
    return math.pi * A / 2.0 ** 0.75


def quantile_gamma(measure: EquilibriumMeasure, n, N: int, tol: float = 1e-12):
    """Smallest t with mu((-inf, t]) = n/N, by bisection on the closed-form cdf."""
    q = np.asarray(n, dtype=float) / N
    if np.any(q < 0) or np.any(q > 1):
        raise ValueError("need 0 <= n <= N")
    lo = np.full(q.shape, measure.a_V)
    hi = np.full(q.shape, measure.b_V)
    iters = int(math.ceil(math.log2((measure.b_V - measure.a_V) / tol))) + 2
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = measure.cdf(mid) < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    out = np.where(q >= 1.0, measure.b_V, hi)
    return float(out) if out.ndim == 0 else out


# --- spectral conditions ----------------------------------------------------------------------

def check_gap_condition(sd: SpectralData, p: float) -> bool:
    """lambda_{N-1} - lambda_{N-2} >= p (lambda_N - lambda_{N-1})."""
    lam = sd.lambdas
    if lam.size < 3:
        raise ValueError("gap condition needs N >= 3")
    return bool(lam[-2] - lam[-3] >= p * (lam[-1] - lam[-2]))


@dataclass(frozen=True)
class RigidityReport:
    ok: bool
    failed_clause: Optional[int]


def check_rigidity(sd: SpectralData, s: float, measure: EquilibriumMeasure, gammas=None) -> RigidityReport:
    """Delocalization, top-vector mass, top-gap size and quantile rigidity, checked in that order.

    Clause 3 is read as bounds on the two top gaps lambda_N - lambda_{N-1} and
    lambda_N - lambda_{N-2}. ``gammas`` may pass precomputed quantiles.
    """
    if s <= 0:
        raise ValueError("s must be positive")
    lam, b = sd.lambdas, sd.betas
    N = lam.size
    if np.any(b > N ** (-0.5 + s / 2)):
        return RigidityReport(False, 1)
    if np.any(b[-2:] < N ** (-0.5 - s / 2)):
        return RigidityReport(False, 2)
    gaps = lam[-1] - lam[-3:-1]
    if np.any(gaps < N ** (-2.0 / 3.0 - s)) or np.any(gaps > N ** (-2.0 / 3.0 + s)):
        return RigidityReport(False, 3)
    idx = np.arange(1, N + 1)
    if gammas is None:
        gammas = quantile_gamma(measure, idx, N)
    bound = N ** (-2.0 / 3.0 + s) * np.minimum(idx, N - idx + 1) ** (-1.0 / 3.0)
    if np.any(np.abs(lam - gammas) > bound):
        return RigidityReport(False, 4)
    return RigidityReport(True, None)


# --- distributions ------------------------------------------------------------------------------

class Ecdf:
    """Right-continuous empirical distribution function."""

    def __init__(self, samples):
        x = np.sort(np.asarray(samples, dtype=float).ravel())
        if x.size == 0:
            raise ValueError("empty sample")
        if np.any(np.isnan(x)):
            raise ValueError("NaN in sample")
        self.x = x
        self.x.setflags(write=False)

    def __len__(self):
        return self.x.size

    def __call__(self, t):
        return np.searchsorted(self.x, t, side="right") / self.x.size


def ecdf(samples) -> Ecdf:
    return Ecdf(samples)


def ks_distance(a: Ecdf, b: Ecdf) -> float:
    """sup |F_a - F_b|, evaluated at every jump point of either function."""
    pts = np.concatenate([a.x, b.x])
    return float(np.max(np.abs(a(pts) - b(pts))))


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    masses: np.ndarray  # fraction of samples per bin, sums to 1

    @property
    def densities(self) -> np.ndarray:
        return self.masses / np.diff(self.edges)


def histogram(samples, bins=None) -> Histogram:
    """Histogram with Freedman-Diaconis bins unless ``bins`` is given."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty sample")
    counts, edges = np.histogram(x, bins="fd" if bins is None else bins)
    return Histogram(edges, counts / x.size)


def write_histogram_csv(path, h: Histogram, header_lines=()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["left_edge", "mass", "density"])
        for e, m, d in zip(h.edges[:-1], h.masses, h.densities):
            w.writerow([repr(float(e)), repr(float(m)), repr(float(d))])


def write_ecdf_csv(path, e: Ecdf, header_lines=()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["value", "probability"])
        n = len(e)
        for i, v in enumerate(e.x, start=1):
            w.writerow([repr(float(v)), repr(i / n)])


@dataclass(frozen=True)
class SummaryStats:
    count: int
    mean: float
    std: float  # unbiased
    ratio: Optional[float]


def summarize(samples) -> SummaryStats:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    mean = float(np.mean(x))
    std = float(np.std(x, ddof=1))
    return SummaryStats(int(x.size), mean, std, mean / std if std > 0 else None)


def normalized(samples) -> np.ndarray:
    """(T - mean) / std with the unbiased std."""
    x = np.asarray(samples, dtype=float).ravel()
    st = summarize(x)
    if st.std == 0:
        raise ValueError("zero sample variance; cannot normalize")
    return (x - st.mean) / st.std
