"""Halting-time analysis of the Toda flow from spectral data alone.

Along the flow started at H, the first row of X(t) depends only on the
eigenvalues of H and the moduli of the first eigenvector components. With
p_j(t) proportional to beta_j**2 * exp(2 lambda_j t), X_11(t) is the p-mean of
the eigenvalues and E(t) = sum_{k>=1} |X_1k(t)|**2 is their p-variance.
Everything below evaluates those sums in log space relative to the top
eigenvalue, so nothing overflows and the tails underflow cleanly to zero.

Logarithms are natural throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

BETA_FLOOR = 1e-150
EXP_FLOOR = 1e-300
LOG_EXP_FLOOR = math.log(EXP_FLOOR)
C_V_DEFAULT = 2.0 ** -1.5


class DegenerateSpectrumError(ValueError):
    pass


class NoCrossingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SpectralData:
    """Ascending eigenvalues and first-component moduli ``beta_j = |U_1j|``."""

    lambdas: np.ndarray
    betas: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        b = np.asarray(self.betas, dtype=float)
        if lam.ndim != 1 or lam.shape != b.shape:
            raise ValueError("lambdas and betas must be 1-d arrays of equal length")
        if np.any(np.diff(lam) < 0):
            raise ValueError("lambdas must be nondecreasing")
        if np.any(b < 0) or np.any(b > 1 + 1e-12):
            raise ValueError("betas must lie in [0, 1]")
        if abs(np.sum(b ** 2) - 1.0) > max(len(b), 1) * 1e-10:
            raise ValueError(f"sum of beta**2 is {np.sum(b ** 2)!r}, expected 1")
        lam.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "betas", b)

    @property
    def n(self) -> int:
        return len(self.lambdas)

    @property
    def top_gap(self) -> float:
        return float(self.lambdas[-1] - self.lambdas[-2])

    @property
    def degenerate(self) -> bool:
        """True when the gap quantities (delta, nu) are undefined."""
        return gap_quantities(self) is None


@dataclass(frozen=True)
class GapQuantities:
    delta: np.ndarray  # 2 (lambda_N - lambda_n), n < N
    nu: np.ndarray  # beta_n**2 / beta_N**2, n < N


def gap_quantities(sd: SpectralData) -> Optional[GapQuantities]:
    if sd.betas[-1] <= BETA_FLOOR:
        return None
    delta = 2.0 * (sd.lambdas[-1] - sd.lambdas[:-1])
    nu = (sd.betas[:-1] / sd.betas[-1]) ** 2
    return GapQuantities(delta, nu)


def _log_betas2(sd: SpectralData) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return 2.0 * np.log(sd.betas)


def _effective_top(sd: SpectralData) -> int:
    """Index of the largest eigenvalue that carries first-component weight."""
    nz = np.flatnonzero(sd.betas > 0)
    if nz.size == 0:
        raise DegenerateSpectrumError("all first components vanish")
    return int(nz[-1]) if sd.betas[-1] <= BETA_FLOOR else sd.n - 1


def _clamped_exp(x):
    x = np.asarray(x, dtype=float)
    return np.where(x < LOG_EXP_FLOOR, 0.0, np.exp(np.maximum(x, LOG_EXP_FLOOR)))


def _weights(sd: SpectralData, t):
    """Probabilities p_j(t) for times ``t`` (scalar or 1-d), shape (len(t), N).

    Returned together with the index m used as the reference top.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    m = _effective_top(sd)
    lb = _log_betas2(sd)
    logw = (lb - lb[m])[None, :] - 2.0 * (sd.lambdas[m] - sd.lambdas)[None, :] * t[:, None]
    logz = logsumexp(logw, axis=1, keepdims=True)
    return _clamped_exp(logw - logz), m


def energy_parts(sd: SpectralData, t):
    """Split E(t) into the top-gap part E0 and the lower-block variance E1.

    With weights w_n = nu_n exp(-delta_n t) and W = sum w_n,
    E0 = (1/4) sum delta_n**2 w_n / (1 + W)**2 and
    E1 = (W / (1 + W))**2 * Var_w(lambda_1..lambda_{N-1}).
    The variance is accumulated around its weighted mean. When beta_N
    vanishes the largest eigenvalue with nonzero weight plays the role of
    lambda_N. Accepts scalar or array ``t``.
    """
    scalar = np.ndim(t) == 0
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be nonnegative")
    p, m = _weights(sd, t)
    lam = sd.lambdas
    p_top = p[:, m]
    rest = np.ones(sd.n, dtype=bool)
    rest[m] = False
    p_rest = p[:, rest]
    lam_rest = lam[rest]
    delta = 2.0 * (lam[m] - lam_rest)
    # p_n = w_n / (1 + W), p_top = 1 / (1 + W)
    e0 = 0.25 * np.sum(delta[None, :] ** 2 * p_rest, axis=1) * p_top
    mass = np.sum(p_rest, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.sum(p_rest * lam_rest[None, :], axis=1) / mass
        var = np.sum(p_rest * (lam_rest[None, :] - mean[:, None]) ** 2, axis=1) / mass
    e1 = np.where(mass > 0, mass ** 2 * np.nan_to_num(var), 0.0)
    e1 = np.maximum(e1, 0.0)
    if scalar:
        return float(e0[0]), float(e1[0])
    return e0, e1


def energy(sd: SpectralData, t):
    e0, e1 = energy_parts(sd, t)
    return e0 + e1


def err_top(sd: SpectralData, t):
    """True error ``lambda_N - X_11(t) = sum_j (lambda_N - lambda_j) p_j(t)``."""
    scalar = np.ndim(t) == 0
    p, _ = _weights(sd, t)
    err = np.sum((sd.lambdas[-1] - sd.lambdas)[None, :] * p, axis=1)
    return float(err[0]) if scalar else err


def x11(sd: SpectralData, t):
    """Top-left entry of X(t); computed as ``lambda_N - err_top`` to avoid cancellation."""
    return sd.lambdas[-1] - err_top(sd, t)


# --- first-crossing search ---------------------------------------------------------------

def _decay_rate(sd: SpectralData) -> float:
    """delta_{N-1}, or the first nonzero weighted gap below the effective top."""
    m = _effective_top(sd)
    below = np.flatnonzero((sd.betas[:m] > 0) & (sd.lambdas[:m] < sd.lambdas[m]))
    if below.size == 0:
        return 0.0
    return 2.0 * float(sd.lambdas[m] - sd.lambdas[below[-1]])


def _first_crossing(f, step: float, t_cap: float, rtol: float, chunk: int = 64) -> float:
    """Smallest t on the grid scan where ``f(t) <= 0``, refined inside its bracket.

    ``f`` takes an array of times. The scan runs on the grid k*step; a crossing
    narrower than one step can be missed.
    """
    if f(np.array([0.0]))[0] <= 0:
        return 0.0
    start = 0
    while start * step <= t_cap:
        grid = (start + np.arange(1, chunk + 1)) * step
        vals = f(grid)
        hit = np.flatnonzero(vals <= 0)
        if hit.size:
            i = hit[0]
            hi = grid[i]
            lo = grid[i - 1] if i > 0 else start * step
            if vals[i] == 0:
                return float(hi)
            g = lambda s: float(f(np.array([s]))[0])
            return float(brentq(g, lo, hi, xtol=1e-300, rtol=rtol, maxiter=500))
        start += chunk
    raise NoCrossingError(f"no crossing before t_cap={t_cap:.3e}")


def halting_time(sd: SpectralData, eps: float) -> float:
    """T1 = inf{t : E(t) <= eps**2}.

    Grid scan with step 1/delta_{N-1} from t = 0, then root refinement of
    log E - 2 log eps inside the first bracket to relative tolerance 1e-9.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    log_target = 2.0 * math.log(eps)
    if energy(sd, 0.0) <= eps * eps:
        return 0.0
    rate = _decay_rate(sd)
    if rate <= 0:
        raise NoCrossingError("E(t) does not decay: no weighted gap below the top eigenvalue")

    def f(ts):
        return np.log(np.maximum(energy(sd, ts), EXP_FLOOR)) - log_target

    t_cap = 1e4 * max(math.log(1.0 / eps), 1.0) / rate
    return _first_crossing(f, 1.0 / rate, t_cap, rtol=1e-10)


def ode_halting(sd: SpectralData, eps: float) -> float:
    """T_ODE for the linear flow x' = Hx, x(0) = e_1.

    First t with ``|log(||x(t+1)|| / ||x(t)||) - lambda_N| <= eps``, using
    ``||x(t)||**2 = sum beta_j**2 exp(2 lambda_j t)`` in shifted form.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if sd.betas[-1] <= 0:
        raise DegenerateSpectrumError("beta_N = 0: the power flow never sees lambda_N")
    lb = _log_betas2(sd)
    shifted = sd.lambdas - sd.lambdas[-1]

    def gap(ts):
        ts = np.atleast_1d(ts)
        a = logsumexp(lb[None, :] + 2.0 * shifted[None, :] * (ts[:, None] + 1.0), axis=1)
        b = logsumexp(lb[None, :] + 2.0 * shifted[None, :] * ts[:, None], axis=1)
        return np.abs(0.5 * (a - b)) - eps

    rate = _decay_rate(sd)
    if gap(0.0)[0] <= 0:
        return 0.0
    if rate <= 0:
        raise NoCrossingError("no weighted gap below the top eigenvalue")
    t_cap = 1e4 * max(math.log(1.0 / eps), 1.0) / rate
    return _first_crossing(gap, 1.0 / rate, t_cap, rtol=1e-10)


# --- closed-form approximations -------------------------------------------------------

def alpha_of(eps: float, n: int) -> float:
    """The exponent with ``eps = n**(-alpha/2)``."""
    return 2.0 * math.log(1.0 / eps) / math.log(n)


def t_star(sd: SpectralData, eps: float, n: Optional[int] = None) -> Optional[float]:
    """Time at which the leading term of E0 equals eps**2; None when undefined."""
    n = sd.n if n is None else n
    gq = gap_quantities(sd)
    if gq is None:
        return None
    d, nu = gq.delta[-1], gq.nu[-1]
    if d <= 0 or nu <= 0:
        return None
    a = alpha_of(eps, n)
    return (a * math.log(n) + 2.0 * math.log(d) + math.log(nu) - 2.0 * math.log(2.0)) / d


def t1_minus_tstar(sd: SpectralData, eps: float, t1: Optional[float] = None) -> Optional[float]:
    """T1 - T* without cancellation; None when T* is undefined.

    Write E(t) = L(t) f(t) with L(t) = (1/4) delta**2 nu exp(-delta t) for the
    top gap delta = delta_{N-1}, nu = nu_{N-1}. Since L(T*) = E(T1) = eps**2,
    T1 - T* = log f(T1) / delta, and f - 1 is a sum of small terms that can be
    formed directly. The plain difference of the two times is pure rounding
    noise once f - 1 drops below about 1e-16.
    """
    gq = gap_quantities(sd)
    if gq is None or gq.delta[-1] <= 0 or gq.nu[-1] <= 0:
        return None
    if t1 is None:
        t1 = halting_time(sd, eps)
    ts = t_star(sd, eps)
    if t1 == 0.0:
        return t1 - ts
    d, nu = gq.delta[-1], gq.nu[-1]
    dl, nl = gq.delta[:-1], gq.nu[:-1]
    with np.errstate(divide="ignore"):
        log_rel = np.log(nl) - math.log(nu) - (dl - d) * t1  # w_n / w_{N-1}, n <= N-2
        log_dl = np.log(dl)
    a = float(np.exp(logsumexp(log_rel + 2.0 * log_dl - 2.0 * math.log(d)))) if dl.size else 0.0
    rel = np.append(np.exp(log_rel), 1.0)  # weights on lambda_1..lambda_{N-1}
    w_over_top = float(np.sum(rel))  # W / w_{N-1}
    w = w_over_top * nu * math.exp(-d * t1)
    pts = sd.lambdas[:-1]
    mean = float(np.sum(rel * pts) / np.sum(rel))
    var = float(np.sum(rel * (pts - mean) ** 2) / np.sum(rel))
    e1_over_lead = 4.0 * w_over_top * w * var / ((1.0 + w) ** 2 * d * d)
    fm1 = (a - 2.0 * w - w * w) / (1.0 + w) ** 2 + e1_over_lead
    return math.log1p(fm1) / d


def t_hat(sd: SpectralData, eps: float, n: Optional[int] = None) -> Optional[float]:
    n = sd.n if n is None else n
    d = 2.0 * sd.top_gap
    if sd.betas[-1] <= BETA_FLOOR or d <= 0:
        return None
    return (alpha_of(eps, n) - 4.0 / 3.0) * math.log(n) / d


def _edge_scale(n: int, c_v: float) -> float:
    return c_v ** (2.0 / 3.0) * 2.0 ** (-2.0 / 3.0) * n ** (2.0 / 3.0)


def rescale_tilde(t1: float, n: int, eps: float, gamma: float = 0.0, c_v: float = C_V_DEFAULT) -> float:
    """T1 / (c_V^(2/3) 2^(-2/3) n^(2/3) (log 1/eps - (2/3) log n + gamma))."""
    shift = math.log(1.0 / eps) - (2.0 / 3.0) * math.log(n) + gamma
    if shift <= 0:
        raise ValueError(f"log(1/eps) - (2/3) log n + gamma = {shift:.4g} <= 0; outside the scaling regime")
    return t1 / (_edge_scale(n, c_v) * shift)


def scaling_region(eps: float, n: int, sigma: float = 0.5) -> bool:
    if not 0 < sigma < 1:
        raise ValueError("sigma must lie in (0, 1)")
    return math.log(1.0 / eps) / math.log(n) >= 5.0 / 3.0 + sigma / 2.0


def gap_statistic(sd_or_gap, n: Optional[int] = None, c_v: float = C_V_DEFAULT) -> Optional[float]:
    """1 / (c_V^(2/3) 2^(-2/3) n^(2/3) (lambda_N - lambda_{N-1})); None for a zero gap.

    Accepts SpectralData or the top gap itself (then ``n`` is required).
    """
    if isinstance(sd_or_gap, SpectralData):
        gap = sd_or_gap.top_gap
        n = sd_or_gap.n if n is None else n
    else:
        gap = float(sd_or_gap)
        if n is None:
            raise ValueError("n is required when passing a bare gap")
    if gap <= 0:
        return None
    return 1.0 / (_edge_scale(n, c_v) * gap)


@dataclass(frozen=True)
class GammaEstimate:
    value: float
    stderr: float
    n_gap: int
    n_cauchy: int


def gamma_constant(beta: int, c_v: float, gap_samples, cauchy_samples) -> GammaEstimate:
    """Monte Carlo estimate of the centring constant gamma_beta.

    gamma = -E log(c_V^(2/3) 2^(-2/3) xi) + (1/2) E log|zeta|, with xi drawn
    from the gap-statistic law and zeta standard Cauchy. The 2^(-2/3) factor
    makes gamma the mean of log(n^(2/3) (lambda_N - lambda_{N-1})) +
    (1/2) log nu_{N-1}, which is what centres T* - T_hat_gamma.
    """
    if beta not in (1, 2):
        raise ValueError("beta must be 1 or 2")
    xi = np.asarray(gap_samples, dtype=float)
    zeta = np.asarray(cauchy_samples, dtype=float)
    if xi.size == 0 or zeta.size == 0:
        raise ValueError("gamma_constant needs nonempty samples")
    a = -np.log(c_v ** (2.0 / 3.0) * 2.0 ** (-2.0 / 3.0) * xi)
    b = 0.5 * np.log(np.abs(zeta))
    value = float(a.mean() + b.mean())
    se = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size) if min(a.size, b.size) > 1 else float("nan")
    return GammaEstimate(value, se, xi.size, zeta.size)


def toda_bracket(sd: SpectralData, eps: float, s: float) -> tuple[float, float]:
    """Interval that must contain T1 under the rigidity condition with parameter s."""
    n = sd.n
    a = alpha_of(eps, n)
    d = 2.0 * sd.top_gap
    return ((a - 4.0 / 3.0 - 5.0 * s) * math.log(n) / d, (a - 4.0 / 3.0 + 7.0 * s) * math.log(n) / d)


# --- per-trial record --------------------------------------------------------------------

@dataclass
class HaltingRecord:
    trial: int
    kind: str
    n: int
    beta: float
    eps: float
    alpha: float
    t1: float
    t_star: Optional[float] = None
    t_hat: Optional[float] = None
    t_tilde: Optional[float] = None
    gap_stat: Optional[float] = None
    err_top: float = 0.0
    lambda_top: float = 0.0
    top_gap: float = 0.0
    in_scaling_region: bool = False
    degenerate_flag: bool = False
    err_second: Optional[float] = field(default=None, repr=False)

    CSV_FIELDS = (
        "trial", "kind", "n", "beta", "eps", "alpha", "t1", "t_star", "t_hat", "t_tilde",
        "gap_stat", "err_top", "lambda_top", "top_gap", "in_scaling_region", "degenerate_flag",
    )

    def csv_row(self) -> list[str]:
        return [_fmt(getattr(self, name)) for name in self.CSV_FIELDS]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def halting_record(
    sd: SpectralData,
    eps: float,
    *,
    trial: int = 0,
    kind: str = "",
    beta: float = 1,
    gamma: float = 0.0,
    c_v: float = C_V_DEFAULT,
    sigma: float = 0.5,
) -> HaltingRecord:
    """All per-trial halting quantities for one spectral sample."""
    n = sd.n
    t1 = halting_time(sd, eps)
    degenerate = sd.degenerate or sd.top_gap <= 0
    try:
        t_tilde = rescale_tilde(t1, n, eps, gamma, c_v)
    except ValueError:
        t_tilde = None
    x = x11(sd, t1)
    return HaltingRecord(
        trial=trial,
        kind=kind,
        n=n,
        beta=beta,
        eps=eps,
        alpha=alpha_of(eps, n),
        t1=t1,
        t_star=t_star(sd, eps, n),
        t_hat=t_hat(sd, eps, n),
        t_tilde=t_tilde,
        gap_stat=gap_statistic(sd, n, c_v),
        err_top=err_top(sd, t1),
        lambda_top=float(sd.lambdas[-1]),
        top_gap=sd.top_gap,
        in_scaling_region=scaling_region(eps, n, sigma),
        degenerate_flag=bool(degenerate),
        err_second=abs(float(sd.lambdas[-2]) - x),
    )


__all__ = [
    "SpectralData", "GapQuantities", "HaltingRecord", "GammaEstimate", "DegenerateSpectrumError",
    "NoCrossingError", "gap_quantities", "energy_parts", "energy", "err_top", "x11", "halting_time",
    "ode_halting", "alpha_of", "t_star", "t1_minus_tstar", "t_hat", "rescale_tilde", "scaling_region", "gap_statistic",
    "gamma_constant", "toda_bracket", "halting_record", "C_V_DEFAULT",
]
