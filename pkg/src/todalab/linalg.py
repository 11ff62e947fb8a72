"""Dense self-adjoint linear algebra kernels.

Everything here is a pure function of its inputs. Matrices are plain numpy
arrays; ``check_hermitian`` enforces the self-adjointness invariant at the
boundaries where it matters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HERMITIAN_ATOL = 1e-12
SINGULAR_FLOOR = 1e-300
EXP_OVERFLOW = 700.0


class NotHermitianError(ValueError):
    pass


class SingularMatrixError(ValueError):
    """Raised by :func:`qr_pos` when a Householder column collapses."""

    def __init__(self, column: int, norm: float):
        self.column = column
        self.norm = norm
        super().__init__(
            f"matrix numerically singular at column {column} (residual norm {norm:.3e}); "
            "for a matrix propagator this means t is too large, shift by the top eigenvalue "
            "or use the spectral formulas instead"
        )


@dataclass(frozen=True)
class EigenSystem:
    """Ascending eigenvalues with the matching unitary eigenvector matrix."""

    lambdas: np.ndarray
    vectors: np.ndarray

    @property
    def n(self) -> int:
        return len(self.lambdas)


@dataclass(frozen=True)
class SymTridiagonal:
    diag: np.ndarray
    offdiag: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.diag, dtype=float)
        e = np.abs(np.asarray(self.offdiag, dtype=float))
        if e.shape != (max(len(d) - 1, 0),):
            raise ValueError(f"offdiag must have length {len(d) - 1}, got {e.shape}")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(e))):
            raise ValueError("tridiagonal entries must be finite")
        object.__setattr__(self, "diag", d)
        object.__setattr__(self, "offdiag", e)

    @property
    def n(self) -> int:
        return len(self.diag)

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1)


def check_hermitian(H, atol: float = HERMITIAN_ATOL) -> np.ndarray:
    """Return ``H`` as an array, raising NotHermitianError if it is not self-adjoint."""
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise NotHermitianError(f"expected a square matrix, got shape {H.shape}")
    asym = np.max(np.abs(H - H.conj().T)) if H.size else 0.0
    if asym > atol:
        raise NotHermitianError(f"matrix is not Hermitian: max |H - H*| = {asym:.3e} > {atol:.1e}")
    if np.iscomplexobj(H) and H.size:
        imag_diag = np.max(np.abs(np.diag(H).imag))
        if imag_diag > atol:
            raise NotHermitianError(f"diagonal has imaginary part {imag_diag:.3e}")
    return H


def frobenius(M) -> float:
    M = np.asarray(M)
    return float(np.sqrt(np.sum(np.abs(M) ** 2)))


def _jacobi_rotation(app: float, aqq: float, apq: complex):
    """2x2 unitary G with G* [[app, apq], [conj(apq), aqq]] G diagonal."""
    absb = abs(apq)
    phase = apq / absb
    theta = (aqq - app) / (2.0 * absb)
    t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.hypot(theta, 1.0))
    c = 1.0 / np.hypot(t, 1.0)
    s = t * c
    # diag(1, conj(phase)) maps the block to a real symmetric one
    return np.array([[c, s], [-s * np.conj(phase), c * np.conj(phase)]])


def _eigh_jacobi(H: np.ndarray, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    n = H.shape[0]
    dtype = np.complex128 if np.iscomplexobj(H) else np.float64
    A = np.array(H, dtype=dtype)
    A = 0.5 * (A + A.conj().T)
    V = np.eye(n, dtype=dtype)
    tol = n * n * 1e-14 * frobenius(A)
    for _ in range(max_sweeps):
        off = frobenius(A - np.diag(np.diag(A)))
        if off <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= SINGULAR_FLOOR:
                    continue
                G = _jacobi_rotation(A[p, p].real, A[q, q].real, apq)
                idx = [p, q]
                A[:, idx] = A[:, idx] @ G
                A[idx, :] = G.conj().T @ A[idx, :]
                A[p, q] = A[q, p] = 0.0
                A[p, p] = A[p, p].real
                A[q, q] = A[q, q].real
                V[:, idx] = V[:, idx] @ G
    else:
        off = frobenius(A - np.diag(np.diag(A)))
        if off > tol:
            raise RuntimeError(f"Jacobi did not converge in {max_sweeps} sweeps (off={off:.3e})")
    return np.diag(A).real.copy(), V


def eigh(H, method: str = "jacobi") -> EigenSystem:
    """Eigendecomposition of a real symmetric or complex Hermitian matrix.

    ``method="jacobi"`` runs cyclic Jacobi sweeps (complex rotations for
    complex input) until the off-diagonal Frobenius mass is below
    ``n**2 * 1e-14 * ||H||_F``. ``method="lapack"`` delegates to
    ``numpy.linalg.eigh`` and is what the Monte Carlo drivers use for N in the
    hundreds. Eigenvalues come back ascending, ties kept in stable order.
    """
    H = check_hermitian(H)
    n = H.shape[0]
    if n == 0:
        return EigenSystem(np.zeros(0), np.zeros((0, 0)))
    if method == "jacobi":
        lam, V = _eigh_jacobi(H)
    elif method == "lapack":
        lam, V = np.linalg.eigh(H)
    else:
        raise ValueError(f"unknown eigensolver {method!r}")
    order = np.argsort(lam, kind="stable")
    return EigenSystem(np.asarray(lam[order], dtype=float), V[:, order])


def _norm2(x: np.ndarray) -> float:
    """Euclidean norm scaled by the largest modulus, so tiny entries do not underflow when squared."""
    a = np.abs(x)
    s = a.max() if a.size else 0.0
    if s == 0.0 or not np.isfinite(s):
        return float(s)
    return float(s * np.sqrt(np.sum((a / s) ** 2)))


def _householder_qr(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = M.shape[0]
    R = np.array(M, dtype=np.complex128 if np.iscomplexobj(M) else np.float64)
    vs = []
    for j in range(n - 1):
        x = R[j:, j]
        normx = _norm2(x)
        if normx <= SINGULAR_FLOOR:
            raise SingularMatrixError(j, normx)
        x0 = x[0]
        phase = x0 / abs(x0) if x0 != 0 else 1.0
        v = x.copy()
        v[0] += phase * normx
        v /= _norm2(v)
        R[j:, j:] -= 2.0 * np.outer(v, v.conj() @ R[j:, j:])
        R[j + 1:, j] = 0.0
        vs.append(v)
    if n and abs(R[n - 1, n - 1]) <= SINGULAR_FLOOR:
        raise SingularMatrixError(n - 1, abs(R[n - 1, n - 1]))
    Q = np.eye(n, dtype=R.dtype)
    for j in range(len(vs) - 1, -1, -1):
        v = vs[j]
        Q[j:, :] -= 2.0 * np.outer(v, v.conj() @ Q[j:, :])
    return Q, R


def qr_pos(M, method: str = "householder") -> tuple[np.ndarray, np.ndarray]:
    """QR factorization of a square matrix with ``R[i, i] > 0``.

    Householder reflections, then column ``i`` of Q and row ``i`` of R are
    multiplied by the phase of ``R[i, i]`` (its sign for real input). With a
    positive diagonal the factorization of a nonsingular matrix is unique.
    ``method="lapack"`` swaps in ``numpy.linalg.qr`` (also Householder) for the
    reflection stage; the normalization is shared.
    """
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"qr_pos expects a square matrix, got {M.shape}")
    if method == "householder":
        Q, R = _householder_qr(M)
    elif method == "lapack":
        Q, R = np.linalg.qr(M)
        d = np.abs(np.diag(R))
        bad = np.flatnonzero(d <= SINGULAR_FLOOR)
        if bad.size:
            raise SingularMatrixError(int(bad[0]), float(d[bad[0]]))
    else:
        raise ValueError(f"unknown QR method {method!r}")
    diag = np.diag(R)
    phase = diag / np.abs(diag)
    Q = Q * phase[None, :]
    R = phase.conj()[:, None] * R
    # diagonal is real positive by construction; drop rounding residue
    R[np.diag_indices_from(R)] = np.abs(np.diag(R))
    return Q, np.triu(R)


def spectral_exp(es: EigenSystem, t: float, shift: float) -> np.ndarray:
    """``U diag(exp(t (lambda - shift))) U*``; keep ``shift >= lambda_max`` for large t."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    expo = t * (es.lambdas - shift)
    if expo.size and expo.max() > EXP_OVERFLOW:
        raise OverflowError(
            f"exp(t(lambda - shift)) overflows (max exponent {expo.max():.1f}); "
            f"use shift = lambda_max = {es.lambdas[-1]!r}"
        )
    U = es.vectors
    return (U * np.exp(expo)[None, :]) @ U.conj().T


# --- tridiagonal eigenvalues by Sturm counts -------------------------------------------

def _sturm_counts(d: np.ndarray, e2: np.ndarray, x: np.ndarray, pivmin: np.ndarray) -> np.ndarray:
    """Number of eigenvalues strictly below ``x`` for a batch of tridiagonals.

    ``d`` has shape (n, B), ``e2`` (n-1, B) holds squared off-diagonals, ``x``
    and ``pivmin`` have shape (B,). Counts negative pivots of the LDL^T
    recurrence, with tiny pivots pushed to ``-pivmin``.
    """
    n = d.shape[0]
    q = d[0] - x
    q = np.where(np.abs(q) < pivmin, -pivmin, q)
    count = (q < 0).astype(np.int64)
    for i in range(1, n):
        q = d[i] - x - e2[i - 1] / q
        q = np.where(np.abs(q) < pivmin, -pivmin, q)
        count += q < 0
    return count


def top_eigs_tridiag_batch(diags, offdiags, k: int, rtol: float = 1e-13) -> np.ndarray:
    """Largest ``k`` eigenvalues (descending) of many symmetric tridiagonals at once.

    ``diags`` is (B, n), ``offdiags`` (B, n-1). Bisection on Sturm counts,
    vectorized across the batch and across the k targets; each row is
    independent of the others, so results do not depend on batching.
    """
    d = np.atleast_2d(np.asarray(diags, dtype=float))
    e = np.abs(np.atleast_2d(np.asarray(offdiags, dtype=float)))
    B, n = d.shape
    if not 1 <= k <= n:
        raise ValueError(f"k must satisfy 1 <= k <= n={n}, got {k}")
    if n == 1:
        return d[:, :1].copy()
    scale = np.max(np.abs(d), axis=1) + 2.0 * np.max(e, axis=1)
    scale = np.where(scale > 0, scale, 1.0)
    rad = np.zeros((B, n))
    rad[:, :-1] += e
    rad[:, 1:] += e
    lo0 = np.min(d - rad, axis=1) - 1e-3 * scale
    hi0 = np.max(d + rad, axis=1) + 1e-3 * scale

    # rows: (batch, target) flattened
    targets = np.tile(np.arange(n - 1, n - 1 - k, -1), B)
    rep = np.repeat(np.arange(B), k)
    dT = np.ascontiguousarray(d[rep].T)
    e2T = np.ascontiguousarray((e[rep] ** 2).T)
    lo = lo0[rep].copy()
    hi = hi0[rep].copy()
    tol = rtol * scale[rep]
    pivmin = np.maximum(np.finfo(float).tiny, 1e-300) * np.maximum(1.0, np.max(e, axis=1)[rep] ** 2)
    iters = int(np.ceil(np.log2(np.max((hi - lo) / tol)))) + 1
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = _sturm_counts(dT, e2T, mid, pivmin)
        go_left = below > targets
        hi = np.where(go_left, mid, hi)
        lo = np.where(go_left, lo, mid)
    return (0.5 * (lo + hi)).reshape(B, k)


def top_eigs_tridiag(T: SymTridiagonal, k: int) -> np.ndarray:
    """The ``k`` largest eigenvalues of ``T`` in descending order (Sturm bisection)."""
    if not 1 <= k <= T.n:
        raise ValueError(f"k must satisfy 1 <= k <= n={T.n}, got {k}")
    return top_eigs_tridiag_batch(T.diag[None, :], T.offdiag[None, :], k)[0]
