"""Modal decomposition of the agent model and design/checking of the
diagonal consensus gain.

The closed loop in compensator error coordinates ``z_i = w_i - eta_i`` is
``z_i' = A z_i + Phi sum_j alpha_ij (z_j - z_i)``. With ``z_i = Q x_i`` and
``Phi = Q diag(gamma) Q^-1`` every modal coordinate decouples into
``x^q' = (lambda_q I - gamma_q L) x^q``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import numkit
from .errors import (DefectiveMatrixError, DimensionError, InfeasibleGainError,
                     ModalFormError, NotApplicableError)
from .netgraph import LaplacianMatrix, is_connected, spectral_summary

#: Eigenvalues with real part above this count as unstable (closed right half).
UNSTABLE_REAL_PART = -1e-12
DEFAULT_MARGIN = 0.25
MODAL_TOL = 1e-8
_CONNECTIVITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class AgentModel:
    A: np.ndarray
    B: np.ndarray
    C: Optional[np.ndarray] = None

    def __post_init__(self):
        A = numkit.as_matrix(self.A, "A", square=True)
        B = numkit.as_matrix(self.B, "B")
        if B.shape[0] != A.shape[0]:
            raise DimensionError(f"B has {B.shape[0]} rows, A has order {A.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if self.C is not None:
            C = numkit.as_matrix(self.C, "C")
            if C.shape[1] != A.shape[0]:
                raise DimensionError(f"C has {C.shape[1]} columns, A has order {A.shape[0]}")
            object.__setattr__(self, "C", C)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_B(self) -> int:
        return self.B.shape[1]

    def _pbh(self, other, rows: bool) -> bool:
        n = self.n
        for lam in np.linalg.eigvals(self.A):
            if lam.real < UNSTABLE_REAL_PART:
                continue
            shifted = self.A - lam * np.eye(n)
            M = np.vstack([shifted, other]) if rows else np.hstack([shifted, other])
            if np.linalg.matrix_rank(M, tol=1e-9 * max(1.0, np.linalg.norm(M, 2))) < n:
                return False
        return True

    def is_stabilizable(self) -> bool:
        """PBH test on the closed right half plane."""
        return self._pbh(self.B, rows=False)

    def is_detectable(self) -> bool:
        if self.C is None:
            raise NotApplicableError("model has no output matrix C")
        return self._pbh(self.C, rows=True)


@dataclass(frozen=True, eq=False)
class ModalForm:
    """``Q^-1 A Q = S`` with eigenvalues ordered by descending real part.

    ``S_diag`` holds the diagonal of ``S``; ``jordan_blocks`` lists
    ``(eigenvalue, size)`` in order when any block is larger than 1.
    """
    Q: np.ndarray
    Q_inv: np.ndarray
    S: np.ndarray
    S_diag: np.ndarray
    r: int
    jordan_blocks: Optional[tuple] = None

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def diagonal(self) -> bool:
        return self.jordan_blocks is None

    @property
    def block_sizes(self) -> tuple:
        if self.jordan_blocks is None:
            return (1,) * self.n
        return tuple(size for _, size in self.jordan_blocks)

    def block_slices(self):
        start = 0
        for size in self.block_sizes:
            yield slice(start, start + size)
            start += size

    @property
    def block_constant_S(self) -> np.ndarray:
        """The diagonal matrix the gains are designed from (Jordan couplings dropped)."""
        return np.diag(self.S_diag)

    @classmethod
    def from_jordan(cls, blocks: Sequence) -> "ModalForm":
        """Modal form already in (block) diagonal coordinates, Q = I."""
        n = sum(size for _, size in blocks)
        S = np.zeros((n, n), dtype=complex)
        i = 0
        for lam, size in blocks:
            S[i:i + size, i:i + size] = numkit.jordan_block(complex(lam), size)
            i += size
        S = numkit.real_if_close(S)
        return _finish(np.eye(n), np.eye(n), S, [(complex(lam), size) for lam, size in blocks])


def _parse_structure(S, tol):
    """Validate S as block-diagonal Jordan form; return [(eigenvalue, size)]."""
    n = S.shape[0]
    scale = max(1.0, float(np.abs(S).max()))
    mask = np.ones((n, n), dtype=bool)
    mask[np.diag_indices(n)] = False
    sup = np.arange(n - 1)
    mask[sup, sup + 1] = False
    if np.abs(S[mask]).max(initial=0.0) > tol * scale:
        raise ModalFormError("Q^-1 A Q has entries outside the diagonal and first superdiagonal")
    blocks = []
    size = 1
    for i in range(n - 1):
        s = S[i, i + 1]
        if abs(s - 1.0) <= tol * scale:
            if abs(S[i, i] - S[i + 1, i + 1]) > tol * scale:
                raise ModalFormError(f"Jordan coupling at ({i},{i + 1}) joins unequal eigenvalues")
            size += 1
        elif abs(s) <= tol * scale:
            blocks.append((complex(S[i - size + 1, i - size + 1]), size))
            size = 1
        else:
            raise ModalFormError(f"superdiagonal entry {s} at ({i},{i + 1}) is neither 0 nor 1")
    blocks.append((complex(S[n - size, n - size]), size))
    return blocks


def _finish(Q, Q_inv, S, blocks=None):
    diag = np.diag(S).astype(complex)
    r = int(np.sum(diag.real > UNSTABLE_REAL_PART))
    if blocks is None:
        blocks = _parse_structure(S, MODAL_TOL)
    if blocks is not None and all(size == 1 for _, size in blocks):
        blocks = None
    return ModalForm(Q=Q, Q_inv=Q_inv, S=S, S_diag=diag, r=r,
                     jordan_blocks=None if blocks is None else tuple(blocks))


def modal_decompose(model: AgentModel, user_Q=None) -> ModalForm:
    """Diagonalise (or Jordan-reduce with a supplied ``user_Q``) the agent matrix.

    Without ``user_Q`` the eigenvector basis is used and a defective ``A`` is
    rejected. With ``user_Q`` the product ``Q^-1 A Q`` must be diagonal or
    block-Jordan within 1e-8; its blocks are reordered by descending real part.
    """
    A = model.A
    n = model.n
    if user_Q is None:
        dec = numkit.eig(A)
        if dec.defective:
            raise DefectiveMatrixError(
                "A is not diagonalizable; supply a transformation Q reducing it to Jordan form")
        V = dec.right_vectors / np.linalg.norm(dec.right_vectors, axis=0)
        V = numkit.real_if_close(V)
        Q_inv = numkit.inverse(V)
        S = np.diag(dec.values)
        return _finish(V, Q_inv, numkit.real_if_close(S))

    Q = numkit.as_matrix(user_Q, "Q", square=True)
    if Q.shape[0] != n:
        raise DimensionError(f"Q has order {Q.shape[0]}, A has order {n}")
    Q_inv = numkit.inverse(Q)
    S = Q_inv @ A @ Q
    blocks = _parse_structure(S, MODAL_TOL)

    # stable reorder of whole blocks by descending real part (then imaginary)
    keys = [(-round(lam.real, 12), -round(lam.imag, 12)) for lam, _ in blocks]
    order = sorted(range(len(blocks)), key=lambda k: keys[k])
    if order != list(range(len(blocks))):
        starts = np.cumsum([0] + [s for _, s in blocks])
        perm = np.concatenate([np.arange(starts[k], starts[k + 1]) for k in order])
        Q = Q[:, perm]
        Q_inv = Q_inv[perm, :]
        S = Q_inv @ A @ Q
        blocks = [blocks[k] for k in order]
    # clean round-off: keep exact structure
    clean = np.diag([lam for lam, size in blocks for _ in range(size)])
    i = 0
    for _, size in blocks:
        clean[i:i + size, i:i + size] += numkit.nilpotent(size)
        i += size
    clean = numkit.real_if_close(clean)
    return _finish(Q, Q_inv, clean, blocks)


# --------------------------------------------------------------------------
# gain design

@dataclass(frozen=True, eq=False)
class GainDesign:
    gamma: np.ndarray
    Phi: np.ndarray
    K: Optional[np.ndarray] = None
    H: Optional[np.ndarray] = None
    margin: float = DEFAULT_MARGIN

    @classmethod
    def from_gammas(cls, mf: ModalForm, gamma, K=None, H=None, margin=DEFAULT_MARGIN):
        gamma = np.asarray(gamma, dtype=float)
        return cls(gamma=gamma, Phi=phi_from_gamma(mf.Q, gamma),
                   K=None if K is None else numkit.as_matrix(K, "K"),
                   H=None if H is None else numkit.as_matrix(H, "H"), margin=margin)


def _lambda2(lap: LaplacianMatrix) -> float:
    lam2 = spectral_summary(lap).algebraic_connectivity
    if not is_connected(lap.source) or not lam2 > _CONNECTIVITY_TOL:
        label = f" '{lap.name}'" if lap.name else ""
        raise InfeasibleGainError(f"graph{label} is not connected (Re lambda2 = {lam2:.3g}); "
                                  "no finite gain achieves consensus")
    return lam2


def family_lambda2(family: Sequence[LaplacianMatrix]) -> float:
    """Smallest algebraic connectivity over a nonempty family."""
    if len(family) == 0:
        raise ValueError("graph family is empty")
    return min(_lambda2(lap) for lap in family)


def _raised(ratio: float, margin: float) -> float:
    return max(ratio, 0.0) * (1.0 + margin) + margin


def design_gamma_fixed(mf: ModalForm, lap: LaplacianMatrix, margin=DEFAULT_MARGIN) -> np.ndarray:
    """Per-mode gains strictly above ``Re(lambda_A^i) / Re(lambda2)`` on the
    unstable modes; the stable tail gets gain 1."""
    if not margin > 0:
        raise ValueError("margin must be positive")
    lam2 = _lambda2(lap)
    gamma = np.ones(mf.n)
    for i in range(mf.r):
        gamma[i] = _raised(mf.S_diag[i].real / lam2, margin)
    return gamma


def design_gamma_uniform(mf: ModalForm, family: Sequence[LaplacianMatrix],
                         margin=DEFAULT_MARGIN) -> np.ndarray:
    """One shared gain on the unstable modes, sized by the worst family member."""
    if not margin > 0:
        raise ValueError("margin must be positive")
    lam2 = family_lambda2(family)
    gamma = np.ones(mf.n)
    if mf.r:
        gamma[:mf.r] = _raised(mf.S_diag[0].real / lam2, margin)
    return gamma


@dataclass(frozen=True)
class ModeCheck:
    index: int
    eigenvalue: complex
    gamma: float
    threshold: float
    slack: float
    passed: bool


@dataclass(frozen=True)
class ConditionReport:
    modes: tuple
    lambda2: float
    strict: bool
    jordan_uniform: bool
    notes: tuple = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(m.passed for m in self.modes) and (self.jordan_uniform or not self.strict)

    def __bool__(self):
        return self.passed


def _jordan_uniform(mf: ModalForm, gamma) -> bool:
    return all(np.all(gamma[sl] == gamma[sl][0]) for sl in mf.block_slices())


def check_condition_fixed(gamma, mf: ModalForm, lap: LaplacianMatrix, strict=True) -> ConditionReport:
    """Per-mode fixed-graph consensus condition ``gamma_i > Re(lambda_i)/Re(lambda2)``.

    In strict mode a Jordan block must additionally carry a single gain.
    """
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (mf.n,):
        raise DimensionError(f"expected {mf.n} gains, got shape {gamma.shape}")
    lam2 = spectral_summary(lap).algebraic_connectivity
    connected = is_connected(lap.source) and lam2 > _CONNECTIVITY_TOL
    modes = []
    for i, lam in enumerate(mf.S_diag):
        re = lam.real
        if connected:
            threshold = re / lam2
            ok = bool(gamma[i] > threshold)
        else:
            threshold = np.inf if re >= 0 else -np.inf
            ok = re < 0
        modes.append(ModeCheck(i, complex(lam), float(gamma[i]), float(threshold),
                               float(re - gamma[i] * lam2), ok))
    uniform = _jordan_uniform(mf, gamma)
    notes = []
    if not connected:
        notes.append("graph is not connected")
    if not uniform:
        notes.append("gains differ inside a Jordan block" + (" (rejected in strict mode)" if strict else ""))
    return ConditionReport(tuple(modes), float(lam2), strict, uniform, tuple(notes))


@dataclass(frozen=True)
class SwitchingCheck:
    passed: bool
    slack: float
    threshold: float
    lambda2_omega: float
    vacuous: bool = False

    def __bool__(self):
        return self.passed


def check_condition_switching(gamma1: float, mf: ModalForm,
                              family: Sequence[LaplacianMatrix]) -> SwitchingCheck:
    """Undirected switching condition ``Re(lambda_A^1) - gamma1 * lambda2_Omega < 0``."""
    if len(family) == 0:
        raise ValueError("graph family is empty")
    if not all(lap.undirected for lap in family):
        raise NotApplicableError("switching condition requires undirected family members; "
                                 "use verify.contraction_directed for directed graphs")
    lam2 = min(spectral_summary(lap).algebraic_connectivity for lap in family)
    lamA = float(mf.S_diag[0].real)
    slack = lamA - gamma1 * lam2
    if mf.r == 0:
        return SwitchingCheck(True, slack, -np.inf, lam2, vacuous=True)
    if not lam2 > _CONNECTIVITY_TOL:
        return SwitchingCheck(False, slack, np.inf, lam2)
    threshold = lamA / lam2
    return SwitchingCheck(bool(gamma1 > threshold), slack, threshold, lam2)


def phi_from_gamma(Q, gamma) -> np.ndarray:
    """``Phi = Q diag(gamma) Q^-1``, real whenever the gains respect conjugate pairs."""
    Q = numkit.as_matrix(Q, "Q", square=True)
    gamma = np.asarray(gamma)
    if gamma.shape != (Q.shape[0],):
        raise DimensionError(f"expected {Q.shape[0]} gains, got shape {gamma.shape}")
    QG = Q * gamma
    # Phi Q = Q G  <=>  Q^T Phi^T = (Q G)^T
    Phi = numkit.solve(Q.T, QG.T).T
    return numkit.real_if_close(Phi, tol=1e-10)


# --------------------------------------------------------------------------
# K / H validation and helpers

def _check_shape(M, shape, name):
    M = numkit.as_matrix(M, name)
    if M.shape != shape:
        raise DimensionError(f"{name} must have shape {shape}, got {M.shape}")
    return M


def validate_K(model: AgentModel, K) -> numkit.HurwitzResult:
    K = _check_shape(K, (model.n_B, model.n), "K")
    return numkit.hurwitz_check(model.A + model.B @ K)


def validate_H(model: AgentModel, H) -> numkit.HurwitzResult:
    if model.C is None:
        raise NotApplicableError("model has no output matrix C")
    H = _check_shape(H, (model.n, model.C.shape[0]), "H")
    return numkit.hurwitz_check(model.A + H @ model.C)


def place_single_input(A, b, poles) -> np.ndarray:
    """Ackermann placement: returns the row ``K`` with ``spec(A + b K) = poles``."""
    A = numkit.as_matrix(A, "A", square=True)
    b = numkit.as_matrix(b, "b")
    n = A.shape[0]
    if b.shape != (n, 1):
        raise DimensionError("Ackermann placement needs a single input column")
    poles = np.asarray(poles)
    if poles.shape != (n,):
        raise DimensionError(f"need {n} poles")
    ctrb = np.hstack([np.linalg.matrix_power(A, k) @ b for k in range(n)])
    coeffs = np.real(np.poly(poles))
    phiA = sum(c * np.linalg.matrix_power(A, n - k) for k, c in enumerate(coeffs))
    e_last = np.zeros((1, n))
    e_last[0, -1] = 1.0
    try:
        k = e_last @ numkit.solve(ctrb, phiA)
    except numkit.SingularMatrixError as exc:
        raise NotApplicableError("(A, b) is not controllable") from exc
    return -k


def place_observer_single_output(A, c, poles) -> np.ndarray:
    """Observer gain ``H`` with ``spec(A + H c) = poles`` by duality."""
    c = numkit.as_matrix(c, "c")
    return place_single_input(np.asarray(A).T, c.T, poles).T


def static_gain_controller(model: AgentModel, Phi) -> np.ndarray:
    """Coefficients ``B'(BB')^-1 Phi`` of the static diffusive feedback,
    available only when ``B`` has full row rank."""
    B = model.B
    Phi = _check_shape(Phi, (model.n, model.n), "Phi")
    if np.linalg.matrix_rank(B) < model.n:
        raise NotApplicableError("static feedback needs B with full row rank "
                                 f"(rank {np.linalg.matrix_rank(B)} < n={model.n})")
    return B.T @ numkit.solve(B @ B.T, Phi)
