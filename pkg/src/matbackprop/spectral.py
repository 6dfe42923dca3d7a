"""SVD / symmetric-EIG layers, matrix-function layers and the log-covariance descriptor.

Every backward pass takes the factors cached by its forward pass and maps
upstream gradients (``gU``, ``gS``, ``gV``, ``gQ``, ``gC``) to the gradient of
the scalar loss with respect to the layer input.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .errors import ContractError, DegenerateSpectrumError, DomainError, RankDeficiencyError
from .linalg import EigFactors, SvdFactors, as_matrix, diag_part, eig_sym, svd_full, sym


@dataclass(frozen=True)
class GapPolicy:
    """How to treat (near-)repeated values in the K matrices.

    ``action="error"`` raises :class:`DegenerateSpectrumError`;
    ``action="clamp"`` replaces small denominators by ``sign * min_gap``.
    """

    min_gap: float = 1e-8
    action: Literal["error", "clamp"] = "error"

    def __post_init__(self):
        if not self.min_gap > 0:
            raise ContractError("min_gap must be positive")
        if self.action not in ("error", "clamp"):
            raise ContractError(f"unknown gap action {self.action!r}")


DEFAULT_POLICY = GapPolicy()


@dataclass(frozen=True)
class MatrixFunctionSpec:
    g: Callable[[np.ndarray], np.ndarray]
    g_prime: Callable[[np.ndarray], np.ndarray]
    epsilon: float = 1e-3
    name: str = "g"

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ContractError("epsilon must be nonnegative")


def _inv(x):
    return 1.0 / x


LOG = MatrixFunctionSpec(np.log, _inv, 1e-3, "log")


def log_spec(epsilon=1e-3) -> MatrixFunctionSpec:
    return MatrixFunctionSpec(np.log, _inv, epsilon, "log")


def _apply(fn, values, what):
    with np.errstate(all="ignore"):
        out = np.asarray(fn(values), dtype=np.float64)
    if out.shape != values.shape or not np.all(np.isfinite(out)):
        bad = values[~np.isfinite(out)] if out.shape == values.shape else values
        raise DomainError(f"{what} is not finite at spectrum values {bad[:5]}")
    return out


def _antisym_inverse(diff: np.ndarray, policy: GapPolicy) -> np.ndarray:
    """1/diff off the diagonal, 0 on it, with the gap policy applied."""
    n = diff.shape[0]
    iu = np.triu_indices(n, 1)
    upper = diff[iu]
    small = np.abs(upper) < policy.min_gap
    if np.any(small):
        if policy.action == "error":
            t = int(np.argmax(small))
            raise DegenerateSpectrumError(int(iu[0][t]), int(iu[1][t]), abs(upper[t]), policy.min_gap)
        signs = np.where(upper[small] < 0, -1.0, 1.0)
        upper = upper.copy()
        upper[small] = signs * policy.min_gap
    K = np.zeros((n, n))
    K[iu] = 1.0 / upper
    return K - K.T


def build_K(s, policy: GapPolicy = DEFAULT_POLICY) -> np.ndarray:
    """K_ij = 1 / (s_i^2 - s_j^2) for i != j, zero diagonal."""
    s = np.asarray(s, dtype=np.float64).ravel()
    if np.any(s < 0):
        raise ContractError("singular values must be nonnegative")
    sq = s**2
    return _antisym_inverse(sq[:, None] - sq[None, :], policy)


def build_K_tilde(q, policy: GapPolicy = DEFAULT_POLICY) -> np.ndarray:
    """K~_ij = 1 / (q_i - q_j) for i != j, zero diagonal."""
    q = np.asarray(q, dtype=np.float64).ravel()
    return _antisym_inverse(q[:, None] - q[None, :], policy)


def _grad_or_zeros(g, shape, name):
    if g is None:
        return np.zeros(shape)
    g = np.asarray(g, dtype=np.float64)
    if g.shape != shape:
        raise ContractError(f"{name} has shape {g.shape}, expected {shape}")
    return g


def svd_layer_backward(X, f: SvdFactors, gU=None, gS=None, gV=None, policy: GapPolicy = DEFAULT_POLICY):
    """Gradient w.r.t. ``X`` of a loss of ``(U, S, V) = svd(X)``.

    ``gU`` must be given for the full m x m ``U``; its trailing m - n columns
    act on the null-space block.
    """
    X = as_matrix(X, "X")
    m, n = X.shape
    if f.S.shape != (m, n):
        raise ContractError(f"factors of shape {f.S.shape} do not match X of shape {X.shape}")
    gU = _grad_or_zeros(gU, (m, m), "gU")
    gS = _grad_or_zeros(gS, (m, n), "gS")
    gV = _grad_or_zeros(gV, (n, n), "gV")
    U, S, V = f.U, f.S, f.V
    s = f.s

    if np.any(gU):
        if s[-1] <= policy.min_gap:
            raise RankDeficiencyError(
                f"smallest singular value {s[-1]:.3e} <= {policy.min_gap:.3e}; Sigma_n is not invertible"
            )
        U1, U2 = U[:, :n], U[:, n:]
        D = (gU[:, :n] - U2 @ gU[:, n:].T @ U1) / s
    else:
        D = np.zeros((m, n))

    out = D @ V.T + U @ diag_part(gS - U.T @ D) @ V.T
    inner = V.T @ (gV - V @ D.T @ U @ S)
    if np.any(inner):
        K = build_K(s, policy)
        out += 2.0 * U @ S @ sym(K.T * inner) @ V.T
    return out


def eig_layer_backward(Z, f: EigFactors, gU=None, gQ=None, policy: GapPolicy = DEFAULT_POLICY):
    """Gradient w.r.t. symmetric ``Z`` of a loss of ``(U, Q) = eig(Z)``; exactly symmetric."""
    Z = as_matrix(Z, "Z")
    m = f.U.shape[0]
    if Z.shape != (m, m):
        raise ContractError(f"factors of size {m} do not match Z of shape {Z.shape}")
    gU = _grad_or_zeros(gU, (m, m), "gU")
    gQ = _grad_or_zeros(gQ, (m, m), "gQ")
    U = f.U
    middle = diag_part(gQ)
    inner = U.T @ gU
    if np.any(inner):
        middle = middle + build_K_tilde(f.q, policy).T * inner
    G = U @ middle @ U.T
    return 0.5 * (G + G.T)


# -- matrix functions ----------------------------------------------------------


def matfun_svd_forward(f: SvdFactors, spec: MatrixFunctionSpec = LOG) -> np.ndarray:
    """``C = V g(S^T S + eps I) V^T``, i.e. ``g(F^T F + eps I)`` for ``F = U S V^T``."""
    lam = f.s**2 + spec.epsilon
    gl = _apply(spec.g, lam, f"{spec.name}")
    return sym((f.V * gl) @ f.V.T)


def matfun_svd_backward(f: SvdFactors, spec: MatrixFunctionSpec, gC):
    """Returns ``(gV, gS)``; the layer does not read ``U`` so its gradient is zero."""
    n = f.V.shape[0]
    gC = _grad_or_zeros(gC, (n, n), "gC")
    lam = f.s**2 + spec.epsilon
    gl = _apply(spec.g, lam, spec.name)
    gpl = _apply(spec.g_prime, lam, f"{spec.name}'")
    Gs = sym(gC)
    gV = 2.0 * (Gs @ f.V) * gl
    gS = diag_part(2.0 * (f.S * gpl) @ (f.V.T @ Gs @ f.V))
    return gV, gS


def matfun_eig_forward(f: EigFactors, spec: MatrixFunctionSpec = LOG) -> np.ndarray:
    """``C = U g(Q) U^T``. Any epsilon shift must already be part of the factored matrix."""
    gq = _apply(spec.g, f.q, spec.name)
    return sym((f.U * gq) @ f.U.T)


def matfun_eig_backward(f: EigFactors, spec: MatrixFunctionSpec, gC):
    """Returns ``(gU, gQ)`` with ``gQ`` restricted to the diagonal."""
    m = f.U.shape[0]
    gC = _grad_or_zeros(gC, (m, m), "gC")
    q = f.q
    gq = _apply(spec.g, q, spec.name)
    gpq = _apply(spec.g_prime, q, f"{spec.name}'")
    gU = 2.0 * (sym(gC) @ f.U) * gq
    gQ = diag_part(gpq[:, None] * (f.U.T @ gC @ f.U))
    return gU, gQ


# -- log-covariance descriptor ---------------------------------------------------


@dataclass(frozen=True)
class O2PCache:
    F: np.ndarray
    path: str
    factors: SvdFactors | EigFactors
    spec: MatrixFunctionSpec
    policy: GapPolicy
    Z: np.ndarray | None = None


def deep_o2p_forward(F, spec: MatrixFunctionSpec = LOG, path="svd", policy: GapPolicy = DEFAULT_POLICY):
    """``C = g(F^T F + eps I)`` through an SVD of ``F`` or an EIG of ``F^T F + eps I``.

    Returns ``(C, cache)``.
    """
    F = as_matrix(F, "F")
    d = F.shape[1]
    if path == "svd":
        f = svd_full(F)
        return matfun_svd_forward(f, spec), O2PCache(F, path, f, spec, policy)
    if path == "eig":
        Z = F.T @ F + spec.epsilon * np.eye(d)
        f = eig_sym(Z)
        return matfun_eig_forward(f, spec), O2PCache(F, path, f, spec, policy, Z)
    raise ContractError(f"unknown path {path!r}; expected 'svd' or 'eig'")


def deep_o2p(F, spec: MatrixFunctionSpec = LOG, path="svd", policy: GapPolicy = DEFAULT_POLICY) -> np.ndarray:
    return deep_o2p_forward(F, spec, path, policy)[0]


def deep_o2p_backward(cache: O2PCache, gC) -> np.ndarray:
    F, f = cache.F, cache.factors
    if cache.path == "svd":
        gV, gS = matfun_svd_backward(f, cache.spec, gC)
        return svd_layer_backward(F, f, None, gS, gV, cache.policy)
    gU, gQ = matfun_eig_backward(f, cache.spec, gC)
    gZ = eig_layer_backward(cache.Z, f, gU, gQ, cache.policy)
    return 2.0 * F @ sym(gZ)
