"""Dense matrix kernels: eigendecomposition, matrix exponential, Kronecker
products and checked linear solves.

Matrices are plain :class:`numpy.ndarray` objects (float64 or complex128).
Every function here is pure.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, NumericFailure, SingularMatrixError

MAX_ORDER = 500
#: Eigenvector matrices at or above this condition number are treated as
#: (near-)defective.
DEFECTIVE_CONDITION = 1e8
ILL_CONDITIONED = 1e8
_MAX_KRON_ENTRIES = 50_000_000


class IllConditionedWarning(RuntimeWarning):
    pass


def as_matrix(x, name="M", square=False) -> np.ndarray:
    """Coerce ``x`` to a 2-D float (or complex) array and validate it."""
    a = np.asarray(x)
    if a.dtype.kind not in "fc":
        a = a.astype(float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionError(f"{name} must be a non-empty 2-D matrix, got shape {a.shape}")
    if square and a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericFailure(f"{name} has non-finite entries")
    return a


def real_if_close(a, tol=1e-12):
    """Drop a negligible imaginary part (relative to the magnitude of ``a``)."""
    a = np.asarray(a)
    if a.dtype.kind != "c":
        return a
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if np.all(np.abs(a.imag) <= tol * scale):
        return a.real.copy()
    return a


def nilpotent(n: int) -> np.ndarray:
    """Canonical nilpotent shift: ones on the first superdiagonal."""
    return np.eye(n, k=1)


def jordan_block(lam, n: int) -> np.ndarray:
    dtype = complex if isinstance(lam, complex) and lam.imag != 0 else float
    return lam * np.eye(n, dtype=dtype) + nilpotent(n)


def spectral_norm(M) -> float:
    return float(np.linalg.norm(M, 2))


# --------------------------------------------------------------------------
# eigendecomposition

@dataclass(frozen=True)
class EigenDecomp:
    values: np.ndarray
    right_vectors: np.ndarray
    left_vectors: np.ndarray
    vector_condition: float

    @property
    def defective(self) -> bool:
        return not self.vector_condition < DEFECTIVE_CONDITION

    def reconstruct(self) -> np.ndarray:
        V = self.right_vectors
        return V @ np.diag(self.values) @ self.left_vectors


def _ordering(values: np.ndarray, descending: bool) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(values)))) if values.size else 1.0
    q = 1e-10 * scale
    re = np.round(values.real / q)
    im = values.imag
    sign = -1.0 if descending else 1.0
    # lexsort: last key is primary
    return np.lexsort((sign * im, sign * re))


def sort_eigenvalues(values, descending=True) -> np.ndarray:
    """Deterministic ordering by real part, ties broken by imaginary part."""
    values = np.asarray(values, dtype=complex)
    return values[_ordering(values, descending)]


def _snap_defective_clusters(M, values):
    """Find clusters of computed eigenvalues that belong to one defective
    eigenvalue. Returns (values with clusters snapped to their mean, found)."""
    n = M.shape[0]
    scale = max(1.0, float(np.linalg.norm(M, 2)))
    cluster_tol = 1e-4 * scale
    rank_tol = 1e-8 * scale
    values = values.copy()
    used = np.zeros(n, dtype=bool)
    found = False
    for i in range(n):
        if used[i]:
            continue
        members = [i]
        used[i] = True
        grew = True
        while grew:
            grew = False
            for j in range(n):
                if not used[j] and any(abs(values[j] - values[k]) <= cluster_tol for k in members):
                    members.append(j)
                    used[j] = True
                    grew = True
        if len(members) < 2:
            continue
        mu = values[members].mean()
        sv = np.linalg.svd(M - mu * np.eye(n), compute_uv=False)
        geometric = int(np.sum(sv <= rank_tol))
        if geometric < len(members):
            found = True
            if np.isrealobj(M) and abs(mu.imag) <= cluster_tol:
                mu = complex(mu.real, 0.0)
            values[members] = mu
    return values, found


def eig(M) -> EigenDecomp:
    """Eigenpairs of a square matrix, sorted by descending real part then
    descending imaginary part.

    Near-defective inputs are not repaired: their eigenvector matrix is
    returned as computed, the clustered eigenvalues are snapped to their
    common value and ``vector_condition`` is set to ``inf``.
    """
    M = as_matrix(M, square=True)
    n = M.shape[0]
    if n > MAX_ORDER:
        raise DimensionError(f"order {n} exceeds supported maximum {MAX_ORDER}")
    try:
        values, V = np.linalg.eig(M)
    except np.linalg.LinAlgError as exc:
        raise NumericFailure(f"eigenvalue iteration failed: {exc}", residual=float("nan")) from exc
    values = values.astype(complex)
    V = V.astype(complex)
    order = _ordering(values, descending=True)
    values, V = values[order], V[:, order]

    resid = np.linalg.norm(M @ V - V * values, axis=0)
    bound = 1e-8 * max(1.0, float(np.linalg.norm(M, 2)))
    if np.any(resid > bound):
        raise NumericFailure("eigenpair residual too large", residual=float(resid.max()))

    cond = float(np.linalg.cond(V))
    if not np.isfinite(cond) or cond >= DEFECTIVE_CONDITION:
        values, defective = _snap_defective_clusters(M, values)
        if defective or not np.isfinite(cond):
            cond = math.inf
        left = np.linalg.pinv(V)
    else:
        left = np.linalg.inv(V)
    return EigenDecomp(values=values, right_vectors=V, left_vectors=left, vector_condition=cond)


# --------------------------------------------------------------------------
# matrix exponential (Higham 2005 scaling and squaring, Pade 13)

_THETA = {3: 1.495585217958292e-2, 5: 2.539398330063230e-1, 7: 9.504178996162932e-1,
          9: 2.097847961257068e0, 13: 5.371920351148152e0}

_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
         960960.0, 16380.0, 182.0, 1.0),
}


def _pade_uv(A, m):
    b = _PADE[m]
    ident = np.eye(A.shape[0], dtype=A.dtype)
    A2 = A @ A
    if m == 13:
        A4 = A2 @ A2
        A6 = A4 @ A2
        U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
                 + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
        V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
             + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
        return U, V
    powers = [ident, A2]
    for _ in range(2, (m + 1) // 2):
        powers.append(powers[-1] @ A2)
    U = sum(b[2 * k + 1] * powers[k] for k in range(len(powers)))
    V = sum(b[2 * k] * powers[k] for k in range(len(powers)))
    return A @ U, V


def expm(M, t=1.0) -> np.ndarray:
    """``exp(M t)`` by scaling and squaring with a diagonal Pade approximant."""
    M = as_matrix(M, square=True)
    t = float(t)
    if not math.isfinite(t):
        raise NumericFailure("time argument must be finite")
    A = M * t
    norm = float(np.linalg.norm(A, 1))
    if not math.isfinite(norm):
        raise NumericFailure("overflow forming M*t")
    if norm == 0.0:
        return np.eye(A.shape[0], dtype=A.dtype)
    s = 0
    for m in (3, 5, 7, 9):
        if norm <= _THETA[m]:
            U, V = _pade_uv(A, m)
            break
    else:
        m = 13
        s = max(0, int(math.ceil(math.log2(norm / _THETA[13]))))
        U, V = _pade_uv(A / 2.0 ** s, 13)
    try:
        R = np.linalg.solve(V - U, V + U)
    except np.linalg.LinAlgError as exc:
        raise NumericFailure("Pade denominator is singular") from exc
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(s):
            R = R @ R
    if not np.all(np.isfinite(R)):
        raise NumericFailure(f"matrix exponential overflowed (|M t|_1 = {norm:.3g})")
    return R


# --------------------------------------------------------------------------
# Kronecker products and solves

def kron(A, B) -> np.ndarray:
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    entries = A.size * B.size
    if entries > _MAX_KRON_ENTRIES:
        raise DimensionError(f"Kronecker product would have {entries} entries")
    return np.kron(A, B)


def condition_number(M) -> float:
    M = as_matrix(M, square=True)
    return float(np.linalg.cond(M))


def solve(M, rhs, *, full_output=False):
    """Solve ``M X = rhs``.

    Raises :class:`SingularMatrixError` when ``M`` is singular to working
    precision; warns with :class:`IllConditionedWarning` above a condition
    number of 1e8. One step of iterative refinement is applied when the
    residual exceeds ``1e-10 * |rhs|``.
    With ``full_output`` returns ``(X, condition, residual)``.
    """
    M = as_matrix(M, square=True)
    rhs_arr = np.asarray(rhs)
    vector = rhs_arr.ndim == 1
    b = as_matrix(rhs_arr, "rhs")
    if b.shape[0] != M.shape[0]:
        raise DimensionError(f"rhs has {b.shape[0]} rows, matrix has order {M.shape[0]}")
    n = M.shape[0]
    cond = float(np.linalg.cond(M))
    if not cond < 1.0 / (n * np.finfo(float).eps):
        raise SingularMatrixError(f"matrix is singular to working precision (cond={cond:.3g})",
                                  condition=cond)
    X = np.linalg.solve(M, b)
    bnorm = max(float(np.linalg.norm(b)), np.finfo(float).tiny)
    residual = float(np.linalg.norm(M @ X - b))
    if residual > 1e-10 * bnorm:
        X = X + np.linalg.solve(M, b - M @ X)
        residual = float(np.linalg.norm(M @ X - b))
    if cond > ILL_CONDITIONED:
        warnings.warn(f"ill-conditioned solve (cond={cond:.3g}, residual={residual:.3g})",
                      IllConditionedWarning, stacklevel=2)
    if vector:
        X = X[:, 0]
    if full_output:
        return X, cond, residual
    return X


def inverse(M) -> np.ndarray:
    M = as_matrix(M, square=True)
    return solve(M, np.eye(M.shape[0], dtype=M.dtype))


class HurwitzResult(NamedTuple):
    stable: bool
    abscissa: float


def spectral_abscissa(M) -> float:
    M = as_matrix(M, square=True)
    try:
        return float(np.max(np.linalg.eigvals(M).real))
    except np.linalg.LinAlgError as exc:
        raise NumericFailure(f"eigenvalue iteration failed: {exc}") from exc


def hurwitz_check(M) -> HurwitzResult:
    a = spectral_abscissa(M)
    return HurwitzResult(a < 0.0, a)


def is_hurwitz(M) -> bool:
    return hurwitz_check(M).stable
