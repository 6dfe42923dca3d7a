"""Dense double-precision linear algebra used by every structured layer.

Matrices are plain 2-D ``float64`` numpy arrays. Factorizations are returned
as frozen dataclasses holding read-only arrays, with a deterministic sign
gauge so that repeated calls are bitwise identical.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DecompositionError

EPS = 2.0**-52


def as_matrix(a, name="matrix") -> np.ndarray:
    """Validate and convert to a finite 2-D float64 array (copy-free when possible)."""
    x = np.asarray(a, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {x.shape}")
    if x.shape[0] < 1 or x.shape[1] < 1:
        raise ContractError(f"{name} must have at least one row and column, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ContractError(f"{name} has non-finite entries")
    return x


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SvdFactors:
    """Full SVD ``X = U S V^T`` with ``U`` m x m, ``S`` m x n, ``V`` n x n."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    @property
    def s(self) -> np.ndarray:
        """Singular values as a vector (length n, nonincreasing)."""
        return np.diag(self.S).copy()

    @property
    def shape(self):
        return self.S.shape

    def reconstruct(self) -> np.ndarray:
        return self.U @ self.S @ self.V.T


@dataclass(frozen=True)
class EigFactors:
    """Symmetric eigendecomposition ``Z = U Q U^T`` with nonincreasing diagonal ``Q``."""

    U: np.ndarray
    Q: np.ndarray

    @property
    def q(self) -> np.ndarray:
        return np.diag(self.Q).copy()

    def reconstruct(self) -> np.ndarray:
        return self.U @ self.Q @ self.U.T


def _fix_gauge(cols: np.ndarray) -> np.ndarray:
    """Sign per column making its largest-magnitude entry nonnegative (first index wins ties)."""
    idx = np.argmax(np.abs(cols), axis=0)
    signs = np.sign(cols[idx, np.arange(cols.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def svd_full(X) -> SvdFactors:
    X = as_matrix(X, "X")
    m, n = X.shape
    if m < n:
        raise ContractError(f"svd_full needs rows >= cols, got {X.shape}")
    try:
        U, s, Vt = np.linalg.svd(X, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"SVD did not converge: {exc}") from exc
    V = Vt.T.copy()
    sv = _fix_gauge(V)
    V *= sv
    U[:, :n] *= sv
    if m > n:
        U[:, n:] *= _fix_gauge(U[:, n:])
    S = np.zeros((m, n))
    S[np.arange(n), np.arange(n)] = s

    orth = max(np.linalg.norm(U.T @ U - np.eye(m)) / m, np.linalg.norm(V.T @ V - np.eye(n)) / n)
    recon = np.linalg.norm(U @ S @ V.T - X) / (1.0 + np.linalg.norm(X))
    if orth > 1e-10 or recon > 1e-9:
        raise DecompositionError("SVD residual above bound", max(orth, recon))
    return SvdFactors(_frozen(U), _frozen(S), _frozen(V))


def asymmetry(Z: np.ndarray) -> float:
    return float(np.linalg.norm(Z - Z.T))


def eig_sym(Z) -> EigFactors:
    Z = as_matrix(Z, "Z")
    m = Z.shape[0]
    if Z.shape != (m, m):
        raise ContractError(f"eig_sym needs a square matrix, got {Z.shape}")
    norm = np.linalg.norm(Z)
    if asymmetry(Z) > 1e-8 * (1.0 + norm):
        raise ContractError(f"eig_sym input is not symmetric (||Z - Z^T|| = {asymmetry(Z):.3e})")
    Zs = 0.5 * (Z + Z.T)
    try:
        q, U = np.linalg.eigh(Zs)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"eigendecomposition did not converge: {exc}") from exc
    q = q[::-1].copy()
    U = U[:, ::-1].copy()
    U *= _fix_gauge(U)
    Q = np.diag(q)

    orth = np.linalg.norm(U.T @ U - np.eye(m)) / m
    recon = np.linalg.norm(U @ Q @ U.T - Zs) / (1.0 + norm)
    if orth > 1e-10 or recon > 1e-9:
        raise DecompositionError("eigendecomposition residual above bound", max(orth, recon))
    return EigFactors(_frozen(U), _frozen(Q))


def pinv_cutoff(s: np.ndarray, shape) -> float:
    smax = float(s.max()) if s.size else 0.0
    return max(shape) * smax * EPS


def _pinv_parts(A):
    A = as_matrix(A, "A")
    transposed = A.shape[0] < A.shape[1]
    f = svd_full(A.T if transposed else A)
    s = f.s
    tau = pinv_cutoff(s, A.shape)
    keep = s > tau
    n = s.size
    inv = np.zeros(n)
    inv[keep] = 1.0 / s[keep]
    # thin pseudoinverse of the (tall) factored matrix: V diag(1/s) U_1^T
    P = (f.V * inv) @ f.U[:, :n].T
    return (P.T if transposed else P), int(keep.sum())


def pinv(A) -> np.ndarray:
    """Moore-Penrose inverse; singular values <= max(m,n)*s_max*2^-52 count as zero."""
    return _pinv_parts(A)[0]


def numerical_rank(A) -> int:
    return _pinv_parts(A)[1]


def pinv_and_rank(A):
    return _pinv_parts(A)


# -- small algebraic operators -------------------------------------------------


def sym(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ContractError(f"sym needs a square matrix, got shape {A.shape}")
    return 0.5 * (A.T + A)


def diag_part(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ContractError(f"diag_part needs a 2-D array, got shape {A.shape}")
    out = np.zeros_like(A)
    k = min(A.shape)
    out[np.arange(k), np.arange(k)] = A[np.arange(k), np.arange(k)]
    return out


def _same_shape(A, B, op):
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise ContractError(f"{op}: shape mismatch {A.shape} vs {B.shape}")
    return A, B


def hadamard(A, B) -> np.ndarray:
    A, B = _same_shape(A, B, "hadamard")
    return A * B


def colon(A, B) -> float:
    """Trace inner product ``A : B = sum_ij A_ij B_ij``."""
    A, B = _same_shape(A, B, "colon")
    return float(np.vdot(A, B))


def diag_embed(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 2 and 1 in v.shape:
        v = v.ravel()
    if v.ndim != 1:
        raise ContractError(f"diag_embed needs a vector, got shape {v.shape}")
    return np.diag(v)


def ones(m: int) -> np.ndarray:
    return np.ones((m, 1))
