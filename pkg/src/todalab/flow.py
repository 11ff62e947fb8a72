"""Full-matrix Toda evolution and deflation times.

``flow_at`` gives X(t) from the QR factorization of the propagator;
``rk4_flow`` integrates the Lax equation directly and serves as its oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .linalg import EigenSystem, SingularMatrixError, check_hermitian, frobenius, qr_pos

# exp(-HORIZON) is still a normal double, with margin
HORIZON = 690.0


class PrecisionHorizonError(ValueError):
    """The propagator is no longer resolvable in double precision at this t."""


def _hermitize(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.conj().T)


def flow_at(es: EigenSystem, H, t: float, shift: Optional[float] = None,
            qr_method: str = "householder", graded: bool = True) -> np.ndarray:
    """X(t) = Q* H Q where e^{t(H - shift)} = QR with R positive on the diagonal.

    The shift defaults to the top eigenvalue; any shift >= lambda_max gives the
    same Q since the scalar factor is absorbed into R.

    With ``graded=True`` (default) the propagator is never formed. Writing it as
    U (D U*) with D = diag(e^{t(lambda_j - shift)}), only the row-graded factor
    D U* is factorized, rows ordered by decreasing weight; then Q = U Q' and
    X = Q'* diag(lambda) Q'. Householder QR is row-wise accurate on such a
    matrix, so block norms stay accurate far below machine epsilon relative to
    the leading ones. ``graded=False`` factorizes the dense propagator as is;
    it agrees while all weights are well above 1e-16 and then loses the small
    blocks.
    """
    H = np.asarray(H)
    if t < 0:
        raise ValueError("t must be nonnegative")
    lam = es.lambdas
    if shift is None:
        shift = float(lam[-1])
    if shift < lam[-1]:
        raise ValueError("shift must be >= the largest eigenvalue")
    if t == 0:
        return H.copy()
    U = es.vectors
    w = t * (lam - shift)
    if w.min() < -HORIZON:
        raise PrecisionHorizonError(
            f"t={t!r} is past the double-precision horizon t*(lambda_max-lambda_min) <= {HORIZON}; "
            "use the spectral halting-time path instead"
        )
    try:
        if graded:
            order = np.argsort(-lam, kind="stable")
            G = np.exp(w[order])[:, None] * U.conj().T[order, :]
            Qg, _ = qr_pos(G, method=qr_method)
            X = (Qg.conj().T * lam[order][None, :]) @ Qg
        else:
            M = (U * np.exp(w)[None, :]) @ U.conj().T
            Q, _ = qr_pos(M, method=qr_method)
            X = Q.conj().T @ H @ Q
    except SingularMatrixError as exc:
        raise PrecisionHorizonError(
            f"propagator numerically singular at t={t!r} ({exc}); use the spectral halting-time path instead"
        ) from exc
    return _hermitize(X)


def _lax_rhs(X: np.ndarray) -> np.ndarray:
    L = np.tril(X, -1)
    B = L - L.conj().T
    return X @ B - B @ X


def rk4_flow(H, t: float, dt: float) -> np.ndarray:
    """Classical RK4 on dX/dt = [X, B(X)], B(X) = X_- - (X_-)*, from X(0) = H.

    The step is shrunk so an integer number of steps lands exactly on t.
    """
    X = check_hermitian(H).astype(np.complex128 if np.iscomplexobj(H) else np.float64)
    if t < 0:
        raise ValueError("t must be nonnegative")
    nrm = frobenius(X)
    if nrm > 0 and dt > 0.01 / nrm * (1 + 1e-12):
        raise ValueError(f"dt={dt!r} exceeds the stability bound 0.01/||H||_F = {0.01 / nrm!r}")
    if t == 0:
        return X
    steps = max(1, math.ceil(t / dt - 1e-9))
    h = t / steps
    for _ in range(steps):
        k1 = _lax_rhs(X)
        k2 = _lax_rhs(X + 0.5 * h * k1)
        k3 = _lax_rhs(X + 0.5 * h * k2)
        k4 = _lax_rhs(X + h * k3)
        X = _hermitize(X + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
    return X


def offdiag_block_norm(X, k: int) -> float:
    """Frobenius norm of the top-right k x (n-k) block."""
    X = np.asarray(X)
    n = X.shape[0]
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must satisfy 1 <= k <= n-1={n - 1}, got {k}")
    return frobenius(X[:k, k:])


def block_norms(X) -> np.ndarray:
    """All n-1 split norms at once: entry k-1 is ``offdiag_block_norm(X, k)``."""
    A = np.triu(np.abs(np.asarray(X)) ** 2, 1)
    tail = np.cumsum(A[:, ::-1], axis=1)[:, ::-1]  # tail[i, k] = sum_{j>=k} A[i, j]
    C = np.cumsum(tail, axis=0)
    n = A.shape[0]
    k = np.arange(1, n)
    return np.sqrt(C[k - 1, k])


def energy_from_matrix(X) -> float:
    X = np.asarray(X)
    return float(np.sum(np.abs(X[0, 1:]) ** 2))


@dataclass(frozen=True)
class DeflationResult:
    t_k: tuple  # T^(k) for k = 1..n-1, None where no crossing before t_cap
    t_min: Optional[float]
    k_hat: Optional[int]
    eps: float

    @property
    def n(self) -> int:
        return len(self.t_k) + 1


def default_t_cap(es: EigenSystem) -> float:
    """Largest t at which every propagator weight is still a normal double."""
    spread = float(es.lambdas[-1] - es.lambdas[0])
    return HORIZON / spread if spread > 0 else math.inf


def _grid_step(es: EigenSystem, H) -> float:
    lam = es.lambdas
    rates = [2.0 * (lam[-1] - lam[-2]), 2.0 * (lam[1] - lam[0])]
    rate = max(rates)
    if rate > 0:
        return 1.0 / rate
    nrm = frobenius(H)
    return 1.0 / (2.0 * nrm) if nrm > 0 else 1.0


def deflation_times(es: EigenSystem, H, eps: float, t_cap: Optional[float] = None,
                    only_min: bool = False, rtol: float = 1e-6,
                    qr_method: str = "householder") -> DeflationResult:
    """First times each split block norm of X(t) drops to ``eps``.

    A shared grid is scanned (one flow evaluation per grid time serves every k),
    then each crossing is bisected to relative tolerance ``rtol``. With
    ``only_min=True`` only the earliest crossing is refined: the bracket is
    bisected on the minimum over k, which is enough for T(H) and k_hat; the
    other entries of ``t_k`` are then left as None.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    H = np.asarray(H)
    n = H.shape[0]
    if t_cap is None:
        t_cap = default_t_cap(es)

    def norms(t):
        return block_norms(flow_at(es, H, t, qr_method=qr_method))

    crossed = np.full(n - 1, np.nan)
    prev_t = 0.0
    cur = norms(0.0)
    hit = cur <= eps
    crossed[hit] = 0.0
    brackets = {}
    step = _grid_step(es, H)
    t = 0.0
    while not (only_min and hit.any()) and not hit.all() and t < t_cap:
        prev_t, t = t, min(t + step, t_cap)
        try:
            cur = norms(t)
        except PrecisionHorizonError:
            break
        new = (cur <= eps) & ~hit
        for k in np.flatnonzero(new):
            brackets[int(k)] = (prev_t, t)
        hit |= new

    def bisect(lo, hi, pred):
        while hi - lo > rtol * hi:
            mid = 0.5 * (lo + hi)
            if pred(mid):
                hi = mid
            else:
                lo = mid
        return hi

    if only_min:
        if brackets:
            lo, hi = next(iter(brackets.values()))
            t_hit = bisect(lo, hi, lambda s: norms(s).min() <= eps)
            k_hat = int(np.flatnonzero(norms(t_hit) <= eps)[0]) + 1
            t_k = [None] * (n - 1)
            t_k[k_hat - 1] = t_hit
            return DeflationResult(tuple(t_k), t_hit, k_hat, eps)
        if hit.any():
            k_hat = int(np.flatnonzero(hit)[0]) + 1
            t_k = [None] * (n - 1)
            t_k[k_hat - 1] = 0.0
            return DeflationResult(tuple(t_k), 0.0, k_hat, eps)
        return DeflationResult(tuple([None] * (n - 1)), None, None, eps)

    for k, (lo, hi) in brackets.items():
        crossed[k] = bisect(lo, hi, lambda s, k=k: norms(s)[k] <= eps)
    t_k = tuple(None if math.isnan(v) else float(v) for v in crossed)
    done = [v for v in t_k if v is not None]
    if not done:
        return DeflationResult(t_k, None, None, eps)
    t_min = min(done)
    k_hat = next(i for i, v in enumerate(t_k) if v == t_min) + 1
    return DeflationResult(t_k, t_min, k_hat, eps)


def horizon_ok(n: int, eps: float, half_width: float, c_v: float, safety: float = 2.0) -> tuple[bool, str]:
    """A priori check that typical deflation times lie inside the precision horizon.

    The typical top gap is the edge scale 1/(c_V^{2/3} 2^{-2/3} n^{2/3}); a block
    at that gap needs about log(1/eps)/gap time units, during which the
    propagator weights spread by (2*half_width) per unit time.
    """
    gap = 1.0 / (c_v ** (2.0 / 3.0) * 2.0 ** (-2.0 / 3.0) * n ** (2.0 / 3.0))
    t_typ = math.log(1.0 / eps) / gap
    need = safety * t_typ * 2.0 * half_width
    if need <= HORIZON:
        return True, f"typical crossing t~{t_typ:.3g}, weight spread {need:.3g} <= {HORIZON}"
    return False, (
        f"typical crossing t~{t_typ:.3g} needs weight spread {need:.3g} > {HORIZON} "
        f"(double-precision horizon); reduce n or raise eps"
    )
