"""Normalized-cuts layers: affinity, degree normalization, projectors, J1/J2 and inference."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage
from sklearn.cluster import KMeans

from .errors import (
    AffinityDomainError,
    ContractError,
    DisconnectedPixelError,
    EmptyClusterError,
    RankLemmaViolation,
)
from .linalg import as_matrix, eig_sym, pinv_and_rank, sym


@dataclass(frozen=True)
class SegmentationInstance:
    F: np.ndarray
    E: np.ndarray
    k: int
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        F = as_matrix(self.F, "F")
        E = as_matrix(self.E, "E")
        if F.shape[0] != E.shape[0]:
            raise ContractError(f"F has {F.shape[0]} rows but E has {E.shape[0]}")
        check_indicator(E)
        if E.shape[1] != self.k:
            raise ContractError(f"E has {E.shape[1]} columns, expected k={self.k}")
        if self.image_shape is not None and int(np.prod(self.image_shape)) != F.shape[0]:
            raise ContractError(f"image_shape {self.image_shape} does not cover {F.shape[0]} pixels")

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.E, axis=1)

    @property
    def m(self) -> int:
        return self.F.shape[0]


def check_indicator(E: np.ndarray) -> None:
    if not np.all((E == 0) | (E == 1)):
        raise ContractError("indicator matrix E must be binary")
    if not np.all(E.sum(axis=1) == 1):
        raise ContractError("every row of E must contain exactly one 1")
    if np.any(E.sum(axis=0) == 0):
        raise EmptyClusterError(f"empty clusters: {np.flatnonzero(E.sum(axis=0) == 0).tolist()}")


def indicator(labels, k=None) -> np.ndarray:
    labels = np.asarray(labels).ravel()
    k = int(labels.max()) + 1 if k is None else k
    E = np.zeros((labels.size, k))
    E[np.arange(labels.size), labels] = 1.0
    return E


# -- affinity ------------------------------------------------------------------


@dataclass
class AffinityModel:
    Lambda: np.ndarray
    nonneg_guard: bool = True

    def __post_init__(self):
        self.Lambda = as_matrix(self.Lambda, "Lambda")
        if self.Lambda.shape[0] != self.Lambda.shape[1]:
            raise ContractError("Lambda must be square")


def affinity_forward(F, model: AffinityModel) -> np.ndarray:
    F = as_matrix(F, "F")
    if F.shape[1] != model.Lambda.shape[0]:
        raise ContractError(f"F has {F.shape[1]} columns, Lambda is {model.Lambda.shape}")
    W = F @ model.Lambda @ F.T
    if model.nonneg_guard and np.any(W < 0):
        i, j = np.unravel_index(np.argmin(W), W.shape)
        raise AffinityDomainError(int(i), int(j), float(W[i, j]))
    return W


def affinity_backward(F, model: AffinityModel, gW):
    """Returns ``(gLambda, gF)`` for ``W = F Lambda F^T``."""
    F = as_matrix(F, "F")
    gW = np.asarray(gW, dtype=np.float64)
    if gW.shape != (F.shape[0], F.shape[0]):
        raise ContractError(f"gW has shape {gW.shape}, expected {(F.shape[0],) * 2}")
    return F.T @ gW @ F, 2.0 * sym(gW) @ F @ model.Lambda.T


# -- normalization ---------------------------------------------------------------


@dataclass(frozen=True)
class Normalization:
    degrees: np.ndarray
    M: np.ndarray
    Omega: np.ndarray | None = None

    @property
    def D(self) -> np.ndarray:
        return np.diag(self.degrees)


def degree_and_normalize(W, E=None) -> Normalization:
    """``D = [W 1]``, ``M = D^-1/2 W D^-1/2`` and, given ``E``, ``Omega = D^1/2 E E^T D^1/2``."""
    W = as_matrix(W, "W")
    m = W.shape[0]
    if W.shape != (m, m):
        raise ContractError(f"W must be square, got {W.shape}")
    d = W.sum(axis=1)
    bad = np.flatnonzero(d <= 0)
    if bad.size:
        raise DisconnectedPixelError(bad.tolist())
    r = 1.0 / np.sqrt(d)
    M = sym(r[:, None] * W * r[None, :])
    Omega = None
    if E is not None:
        E = as_matrix(E, "E")
        if E.shape[0] != m:
            raise ContractError(f"E has {E.shape[0]} rows, W has {m}")
        h = np.sqrt(d)[:, None] * E
        Omega = h @ h.T
    return Normalization(d, M, Omega)


# -- projectors ------------------------------------------------------------------


def projector_forward(A) -> np.ndarray:
    """Orthogonal projector ``A A^+`` onto range(A)."""
    return _projector(A)[0]


def _projector(A):
    A = as_matrix(A, "A")
    Ap, rank = pinv_and_rank(A)
    P = A @ Ap
    return 0.5 * (P + P.T), Ap, rank


def projector_backward(A, P, gP, A_pinv=None) -> np.ndarray:
    """Gradient w.r.t. symmetric ``A`` of a loss of ``P = A A^+`` (symmetrized)."""
    A = as_matrix(A, "A")
    m = A.shape[0]
    if A_pinv is None:
        A_pinv = pinv_and_rank(A)[0]
    G = 2.0 * (np.eye(m) - P) @ sym(gP) @ A_pinv
    return 0.5 * (G + G.T)


def projector_variation(A, P, dA, A_pinv=None) -> np.ndarray:
    """First-order change of ``P`` for a rank-preserving symmetric change ``dA``."""
    if A_pinv is None:
        A_pinv = pinv_and_rank(A)[0]
    return 2.0 * sym((np.eye(A.shape[0]) - P) @ dA @ A_pinv)


# -- alignment objectives ------------------------------------------------------------


@dataclass(frozen=True)
class J1Cache:
    W: np.ndarray
    E: np.ndarray
    norm: Normalization
    P_M: np.ndarray
    P_Omega: np.ndarray
    M_pinv: np.ndarray
    Omega_pinv: np.ndarray
    rank_M: int
    rank_Omega: int
    value: float


def j1_forward(W, E):
    """``J1 = 1/2 ||P_M - P_Omega||_F^2``; returns ``(value, cache)``."""
    W = as_matrix(W, "W")
    E = as_matrix(E, "E")
    nz = degree_and_normalize(W, E)
    P_M, M_pinv, rM = _projector(nz.M)
    P_O, O_pinv, rO = _projector(nz.Omega)
    value = 0.5 * float(np.sum((P_M - P_O) ** 2))
    return value, J1Cache(W, E, nz, P_M, P_O, M_pinv, O_pinv, rM, rO, value)


def j1_backward(c: J1Cache) -> np.ndarray:
    gM = projector_backward(c.norm.M, c.P_M, c.P_M - c.P_Omega, c.M_pinv)
    gO = projector_backward(c.norm.Omega, c.P_Omega, c.P_Omega - c.P_M, c.Omega_pinv)
    d = c.norm.degrees
    r = 1.0 / np.sqrt(d)
    term = (c.norm.Omega @ sym(gO) - c.norm.M @ sym(gM)) / d[:, None]
    G = r[:, None] * gM * r[None, :] + np.diag(term)[:, None]
    return 0.5 * (G + G.T)


@dataclass(frozen=True)
class J2Cache:
    W: np.ndarray
    E: np.ndarray
    P_W: np.ndarray
    P_Psi: np.ndarray
    W_pinv: np.ndarray
    rank_W: int
    value: float

    @property
    def rank_target(self) -> int:
        return int(np.linalg.matrix_rank(self.E))


def psi_projector(E) -> np.ndarray:
    E = as_matrix(E, "E")
    G = E.T @ E
    if np.any(np.diag(G) == 0):
        raise EmptyClusterError("E has an empty cluster; E^T E is singular")
    return sym(E @ np.linalg.solve(G, E.T))


def j2_forward(W, E):
    """``J2 = 1/2 ||P_W - P_Psi||_F^2`` with ``P_Psi = E (E^T E)^-1 E^T``."""
    W = as_matrix(W, "W")
    E = as_matrix(E, "E")
    if E.shape[0] != W.shape[0]:
        raise ContractError(f"E has {E.shape[0]} rows, W has {W.shape[0]}")
    P_W, W_pinv, rank = _projector(W)
    P_Psi = psi_projector(E)
    value = 0.5 * float(np.sum((P_W - P_Psi) ** 2))
    return value, J2Cache(W, E, P_W, P_Psi, W_pinv, rank, value)


def j2_backward(c: J2Cache) -> np.ndarray:
    G = -2.0 * (np.eye(c.W.shape[0]) - c.P_W) @ c.P_Psi @ c.W_pinv
    return 0.5 * (G + G.T)


@dataclass(frozen=True)
class LambdaGradReport:
    norm: float
    tolerance: float
    passed: bool


def j2_lambda_grad_is_zero(F, model: AffinityModel, E) -> LambdaGradReport:
    F = as_matrix(F, "F")
    W = affinity_forward(F, model)
    _, cache = j2_forward(W, E)
    gLambda, _ = affinity_backward(F, model, j2_backward(cache))
    value = float(np.linalg.norm(gLambda))
    tol = 1e-8 * (1.0 + float(np.linalg.norm(F)) ** 2)
    return LambdaGradReport(value, tol, value <= tol)


@dataclass(frozen=True)
class RankGapReport:
    distance: float
    rank_a: int
    rank_b: int
    implication_applies: bool

    @property
    def ranks_equal(self) -> bool:
        return self.rank_a == self.rank_b


def rank_gap_check(A, B) -> RankGapReport:
    """Projector distance and numerical ranks; raises if ``||P_A - P_B||_F < 1`` with unequal ranks."""
    PA, _, ra = _projector(A)
    PB, _, rb = _projector(B)
    if PA.shape != PB.shape:
        raise ContractError(f"projectors act on different spaces: {PA.shape} vs {PB.shape}")
    dist = float(np.linalg.norm(PA - PB))
    applies = dist < 1.0
    if applies and ra != rb:
        raise RankLemmaViolation(f"||P_A - P_B||_F = {dist:.6g} < 1 but rank(A)={ra} != rank(B)={rb}")
    return RankGapReport(dist, ra, rb, applies)


def check_j2_iterate(c: J2Cache) -> RankGapReport:
    """Rank-lemma check for a J2 cache; ``J2 < 1/2`` is the same as distance < 1."""
    dist = float(np.linalg.norm(c.P_W - c.P_Psi))
    target = c.rank_target
    applies = dist < 1.0
    if applies and c.rank_W != target:
        raise RankLemmaViolation(f"J2 = {c.value:.6g} < 1/2 but rank(W)={c.rank_W} != rank(EE^T)={target}")
    return RankGapReport(dist, c.rank_W, target, applies)


# -- evaluation and inference ----------------------------------------------------------


def ncuts_criterion(W, E) -> float:
    """``Tr(E^T W E (E^T D E)^-1)``."""
    W = as_matrix(W, "W")
    E = as_matrix(E, "E")
    if E.shape[0] != W.shape[0]:
        raise ContractError(f"E has {E.shape[0]} rows, W has {W.shape[0]}")
    d = W.sum(axis=1)
    EDE = E.T @ (d[:, None] * E)
    if np.linalg.matrix_rank(EDE) < EDE.shape[0]:
        raise EmptyClusterError("E^T D E is singular (empty cluster or zero-degree cluster)")
    return float(np.trace(E.T @ W @ E @ np.linalg.inv(EDE)))


@dataclass(frozen=True)
class KMeansConfig:
    n_init: int = 50
    max_iter: int = 300
    seed: int = 0


def _split_components(labels, image_shape):
    grid = labels.reshape(image_shape)
    out = np.full(grid.shape, -1, dtype=int)
    nxt = 0
    for lab in np.unique(grid):
        comp, n = ndimage.label(grid == lab)
        for c in range(1, n + 1):
            out[comp == c] = nxt
            nxt += 1
    return out.ravel()


def _canonical(labels):
    """Relabel by order of first appearance so results are comparable across runs."""
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inv]


def spectral_inference(
    W,
    k_list: Sequence[int] = tuple(range(2, 10)),
    image_shape=None,
    kmeans: KMeansConfig = KMeansConfig(),
) -> list[np.ndarray]:
    """One labeling per k: k-means on D^-1/2-weighted top-k eigenvectors of M."""
    nz = degree_and_normalize(W)
    f = eig_sym(nz.M)
    r = 1.0 / np.sqrt(nz.degrees)
    m = nz.M.shape[0]
    results = []
    for k in k_list:
        if not 1 <= k <= m:
            raise ContractError(f"k={k} outside [1, {m}]")
        if k == 1:
            labels = np.zeros(m, dtype=int)
        else:
            emb = r[:, None] * f.U[:, :k]
            km = KMeans(k, init="k-means++", n_init=kmeans.n_init, max_iter=kmeans.max_iter,
                        random_state=kmeans.seed)
            labels = km.fit_predict(emb)
        if image_shape is not None:
            labels = _split_components(labels, image_shape)
        results.append(_canonical(labels))
    return results


@dataclass
class NcutsSummary:
    """Evaluation bundle printed by the ``eval`` command."""

    m: int
    k: int
    criterion: float
    j1: float
    j2: float
    rank_W: int
    rank_target: int
    extras: dict = field(default_factory=dict)


def evaluate(W, E) -> NcutsSummary:
    E = as_matrix(E, "E")
    check_indicator(E)
    j1, _ = j1_forward(W, E)
    j2, c2 = j2_forward(W, E)
    return NcutsSummary(
        m=W.shape[0], k=E.shape[1], criterion=ncuts_criterion(W, E), j1=j1, j2=j2,
        rank_W=c2.rank_W, rank_target=c2.rank_target,
    )
