"""Central finite-difference oracle, Taylor-order estimates and the registered gradient sweep."""
from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass
from typing import Any, Callable

import numpy as np

from . import ncuts as nc
from . import netgraph as ng
from . import spectral as sp
from .errors import ProbeError
from .linalg import colon, eig_sym, svd_full, sym

DEFAULT_GAP_FLOOR = 1e-2
ELEMENT_TOL = 1e-5
PROJECTOR_TOL = 1e-4
TAYLOR_SCALE = 1e-3


def default_step(X) -> float:
    return 1e-6 * (1.0 + float(np.linalg.norm(X)))


def fd_grad(f: Callable[[np.ndarray], float], X, h=None, symmetric=False) -> np.ndarray:
    """Entrywise central differences ``(f(X + h E_ij) - f(X - h E_ij)) / 2h``.

    With ``symmetric=True`` entries (i, j) and (j, i) are perturbed together and
    the result is the symmetric gradient: off-diagonal derivatives are halved so
    the output is comparable to a symmetrized analytic gradient.
    """
    X = np.asarray(X, dtype=np.float64)
    h = default_step(X) if h is None else h
    G = np.zeros_like(X)
    if symmetric and X.shape[0] != X.shape[1]:
        raise ValueError("symmetric mode needs a square input")

    def probe(idx, E):
        try:
            return (f(X + E) - f(X - E)) / (2.0 * h)
        except Exception as exc:
            raise ProbeError(idx, exc) from exc

    if symmetric:
        n = X.shape[0]
        for i in range(n):
            for j in range(i, n):
                E = np.zeros_like(X)
                E[i, j] = h
                E[j, i] = h
                d = probe((i, j), E)
                G[i, j] = G[j, i] = d if i == j else 0.5 * d
        return G
    for idx in np.ndindex(X.shape):
        E = np.zeros_like(X)
        E[idx] = h
        G[idx] = probe(idx, E)
    return G


def relative_error(a, b) -> float:
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)))
    if denom < 1e-14:
        return 0.0
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b))) / denom


def taylor_residuals(f, X, grad, direction, h, halvings=1):
    """First-order residuals ``|f(X + t dX) - f(X) - t grad:dX|`` at ``t = h, h/2, ...``."""
    f0 = f(X)
    slope = colon(grad, direction)
    return [abs(f(X + t * direction) - f0 - t * slope) for t in h * 0.5 ** np.arange(halvings + 1)]


def taylor_order(f, X, grad, direction, h, halvings=12) -> float:
    """Convergence order of the first-order residual under halving of ``h``.

    Uses the smallest step pair whose residuals stay well above the rounding
    floor; ``inf`` when the residual is at rounding level already (exactly
    linear directions).
    """
    r = taylor_residuals(f, X, grad, direction, h, halvings)
    scale = 1.0 + abs(f(X))
    if r[0] <= 1e-13 * scale:
        return math.inf
    usable = [i for i in range(halvings) if r[i + 1] > 1e-12 * scale]
    i = usable[-1] if usable else 0
    return math.log2(r[i] / max(r[i + 1], 1e-300))


@dataclass
class GradReport:
    op: str
    seed: int
    h: float
    rel_error: float
    order: float
    passed: bool
    tolerance: float
    error: str | None = None

    def to_dict(self):
        return asdict(self)


@dataclass
class GradCase:
    """A scalar composite ``value(X, ctx)`` and its analytic gradient ``grad(X, ctx)``."""

    name: str
    sample: Callable[[np.random.Generator, float], tuple[np.ndarray, Any]]
    value: Callable[[np.ndarray, Any], float]
    grad: Callable[[np.ndarray, Any], np.ndarray]
    tolerance: float = ELEMENT_TOL
    symmetric: bool = False


def check_one(case: GradCase, seed: int, tolerance=None, gap_floor=DEFAULT_GAP_FLOOR) -> GradReport:
    tol = case.tolerance if tolerance is None else tolerance
    h = float("nan")
    try:
        rng = np.random.default_rng(seed)
        X, ctx = case.sample(rng, gap_floor)
        h = default_step(X)
        f = lambda Y: case.value(Y, ctx)
        g = case.grad(X, ctx)
        n = fd_grad(f, X, h, case.symmetric)
        err = relative_error(g, n)
        direction = rng.standard_normal(X.shape)
        if case.symmetric:
            direction = sym(direction)
        direction /= np.linalg.norm(direction)
        order = taylor_order(f, X, g, direction, TAYLOR_SCALE * (1.0 + float(np.linalg.norm(X))))
    except Exception as exc:  # recorded, never a pass
        return GradReport(case.name, seed, h, math.inf, math.nan, False, tol, f"{type(exc).__name__}: {exc}")
    return GradReport(case.name, seed, h, err, order, err <= tol, tol)


def check(case: GradCase, seeds, tolerance=None, gap_floor=DEFAULT_GAP_FLOOR) -> list[GradReport]:
    return [check_one(case, int(s), tolerance, gap_floor) for s in seeds]


# -- samplers ---------------------------------------------------------------------


def orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def spaced_values(rng, n, lo, hi, gap):
    """n values in [lo, hi], sorted descending, pairwise separated by at least ``gap``."""
    for _ in range(1000):
        v = np.sort(rng.uniform(lo, hi, n))[::-1]
        if n < 2 or np.min(-np.diff(v)) >= gap:
            return v
    return np.linspace(hi, lo, n)


def sample_matrix_with_singular_values(rng, m, n, s):
    S = np.zeros((m, n))
    S[np.arange(n), np.arange(n)] = s
    return orthogonal(rng, m) @ S @ orthogonal(rng, n).T


def sample_conditioned(rng, m, n, gap_floor, lo=0.5, hi=2.5):
    """Random m x n matrix whose squared singular values are >= gap_floor apart."""
    for _ in range(1000):
        s = spaced_values(rng, n, lo, hi, gap_floor)
        sq = s**2
        if n < 2 or np.min(-np.diff(sq)) >= gap_floor:
            return sample_matrix_with_singular_values(rng, m, n, s)
    raise RuntimeError("could not sample a conditioned spectrum")


def sample_symmetric(rng, n, gap_floor, lo=0.5, hi=3.0):
    q = spaced_values(rng, n, lo, hi, gap_floor)
    U = orthogonal(rng, n)
    return sym(U @ np.diag(q) @ U.T)


def positive_features(rng, m, d, gap_floor):
    """Strictly positive m x d features with a well-conditioned column space."""
    for _ in range(1000):
        F = rng.uniform(0.2, 1.5, (m, d))
        s = np.linalg.svd(F, compute_uv=False)
        if s[-1] > 0.3 and np.min(-np.diff(s**2)) >= gap_floor:
            return F
    return F


def random_labels(rng, m, k):
    labels = np.concatenate([np.arange(k), rng.integers(0, k, m - k)])
    return rng.permutation(labels)


# -- registry -----------------------------------------------------------------------

SQRT = sp.MatrixFunctionSpec(np.sqrt, lambda x: 0.5 / np.sqrt(x), 1e-3, "sqrt")


def _svd_sigma1_case():
    def sample(rng, gap):
        return sample_conditioned(rng, 6, 4, gap), None

    def value(X, _):
        return float(svd_full(X).s[0])

    def grad(X, _):
        f = svd_full(X)
        gS = np.zeros(f.S.shape)
        gS[0, 0] = 1.0
        return sp.svd_layer_backward(X, f, None, gS, None)

    return GradCase("svd_layer_sigma1", sample, value, grad)


def _svd_uv_case():
    def sample(rng, gap):
        X = sample_conditioned(rng, 5, 4, gap)
        return X, (rng.standard_normal((5, 5)), rng.standard_normal((5, 4)), rng.standard_normal((4, 4)))

    def value(X, ctx):
        f = svd_full(X)
        A, B, C = ctx
        return colon(A, f.U) + colon(B, f.S) + colon(C, f.V)

    def grad(X, ctx):
        A, B, C = ctx
        return sp.svd_layer_backward(X, svd_full(X), A, B, C)

    return GradCase("svd_layer_uv", sample, value, grad)


def _eig_case():
    def sample(rng, gap):
        return sample_symmetric(rng, 5, gap), (rng.standard_normal((5, 5)), rng.standard_normal((5, 5)))

    def value(Z, ctx):
        f = eig_sym(Z)
        return colon(ctx[0], f.U) + colon(ctx[1], f.Q)

    def grad(Z, ctx):
        return sp.eig_layer_backward(Z, eig_sym(Z), ctx[0], ctx[1])

    return GradCase("eig_layer", sample, value, grad, symmetric=True)


def _matfun_svd_case():
    def sample(rng, gap):
        return sample_conditioned(rng, 6, 4, gap), rng.standard_normal((4, 4))

    def value(X, A):
        return colon(A, sp.matfun_svd_forward(svd_full(X), SQRT))

    def grad(X, A):
        f = svd_full(X)
        gV, gS = sp.matfun_svd_backward(f, SQRT, A)
        return sp.svd_layer_backward(X, f, None, gS, gV)

    return GradCase("matfun_svd_sqrt", sample, value, grad)


def _matfun_eig_case():
    def sample(rng, gap):
        return sample_symmetric(rng, 5, gap), rng.standard_normal((5, 5))

    def value(Z, A):
        return colon(A, sp.matfun_eig_forward(eig_sym(Z), sp.LOG))

    def grad(Z, A):
        f = eig_sym(Z)
        gU, gQ = sp.matfun_eig_backward(f, sp.LOG, A)
        return sp.eig_layer_backward(Z, f, gU, gQ)

    return GradCase("matfun_eig_log", sample, value, grad, symmetric=True)


def _deep_o2p_case(path):
    def sample(rng, gap):
        return sample_conditioned(rng, 8, 4, gap), rng.standard_normal((4, 4))

    def value(F, A):
        return colon(A, sp.deep_o2p(F, sp.LOG, path))

    def grad(F, A):
        _, cache = sp.deep_o2p_forward(F, sp.LOG, path)
        return sp.deep_o2p_backward(cache, A)

    return GradCase(f"deep_o2p_{path}", sample, value, grad)


def _projector_case():
    # A = X X^T keeps rank(A) fixed under perturbations of X
    def sample(rng, gap):
        return sample_conditioned(rng, 6, 3, gap), rng.standard_normal((6, 6))

    def value(X, G):
        return colon(G, nc.projector_forward(X @ X.T))

    def grad(X, G):
        A = X @ X.T
        P = nc.projector_forward(A)
        gA = nc.projector_backward(A, P, G)
        return 2.0 * sym(gA) @ X

    return GradCase("projector", sample, value, grad, PROJECTOR_TOL)


def _objective_case(name, fwd, bwd, lam=False):
    def sample(rng, gap):
        m, d, k = 10, 3, 2
        F = positive_features(rng, m, d, gap)
        E = nc.indicator(random_labels(rng, m, k), k)
        B = rng.uniform(0.0, 0.1, (d, d))
        Lam = np.eye(d) + sym(B)
        if lam:
            return Lam, (F, E)
        return F, (Lam, E)

    if lam:
        def value(Lam, ctx):
            F, E = ctx
            return fwd(nc.affinity_forward(F, nc.AffinityModel(Lam)), E)[0]

        def grad(Lam, ctx):
            F, E = ctx
            model = nc.AffinityModel(Lam)
            _, c = fwd(nc.affinity_forward(F, model), E)
            return sym(nc.affinity_backward(F, model, bwd(c))[0])
    else:
        def value(F, ctx):
            Lam, E = ctx
            return fwd(nc.affinity_forward(F, nc.AffinityModel(Lam)), E)[0]

        def grad(F, ctx):
            Lam, E = ctx
            model = nc.AffinityModel(Lam)
            _, c = fwd(nc.affinity_forward(F, model), E)
            return nc.affinity_backward(F, model, bwd(c))[1]

    return GradCase(name, sample, value, grad, PROJECTOR_TOL, symmetric=lam)


def _layer_case(name, make, wrt="input", tolerance=ELEMENT_TOL, margin=0.0):
    """Generic netgraph case: ``make(rng, gap) -> (pipeline, x, y)``.

    ``wrt`` is ``"input"`` or the index of a parameter in ``pipeline.params``.
    With ``margin > 0`` samples whose rectifier inputs come closer than
    ``margin`` to the kink are redrawn.
    """

    def sample(rng, gap):
        for _ in range(200):
            p, x, y = make(rng, gap)
            if margin <= 0 or _min_rectifier_margin(p, x) >= margin:
                break
        X = x if wrt == "input" else p.params[wrt]
        return np.array(X, dtype=np.float64), (p, x, y)

    def _set(X, ctx):
        p, x, y = ctx
        if wrt == "input":
            return p, X, y
        p.params[wrt][...] = X
        return p, x, y

    def value(X, ctx):
        p, x, y = _set(X, ctx)
        return ng.pipeline_forward(p, x, y)[0]

    def grad(X, ctx):
        p, x, y = _set(X, ctx)
        _, caches = ng.pipeline_forward(p, x, y)
        pg, gx = ng.pipeline_backward(p, caches)
        return np.array(gx if wrt == "input" else pg[wrt])

    return GradCase(name, sample, value, grad, tolerance)


def _min_rectifier_margin(p, x):
    h = np.asarray(x, dtype=np.float64)
    best = math.inf
    for layer in p.layers:
        if isinstance(layer, ng.Rectifier):
            best = min(best, float(np.min(np.abs(h))))
        h, _ = layer.forward(h)
    return best


def _o2p_pipeline(path):
    def make(rng, gap):
        m, d, hdim = 8, 4, 3
        x = rng.standard_normal((m, d))
        layers = [
            ng.Linear.init(rng, d, hdim, bias=0.3),
            ng.Rectifier(),
            ng.DeepO2P(sp.LOG, path),
            ng.Flatten(),
            ng.Linear.init(rng, hdim * hdim, 1),
        ]
        return ng.Pipeline(layers, ng.LogisticLoss()), x, int(rng.integers(0, 2))

    return make


def _ncuts_pipeline(rng, gap):
    m, p_in, hdim, k = 12, 4, 2, 3
    x = rng.standard_normal((m, p_in))
    labels = random_labels(rng, m, k)
    layers = [ng.Linear.init(rng, p_in, hdim, bias=0.5), ng.Rectifier(), ng.AppendOnes(), ng.Affinity(np.eye(hdim + 1))]
    return ng.Pipeline(layers, ng.J2Loss()), x, nc.indicator(labels, k)


def _simple(layer_factory, in_shape, loss="frob"):
    def make(rng, gap):
        layer = layer_factory(rng)
        x = rng.standard_normal(in_shape)
        out, _ = layer.forward(x)
        if loss == "frob":
            return ng.Pipeline([layer], ng.FrobeniusAlignmentLoss()), x, rng.standard_normal(out.shape)
        return ng.Pipeline([layer], ng.LogisticLoss()), x, int(rng.integers(0, 2))

    return make


def build_registry() -> dict[str, GradCase]:
    cases = [
        _svd_sigma1_case(),
        _svd_uv_case(),
        _eig_case(),
        _matfun_svd_case(),
        _matfun_eig_case(),
        _deep_o2p_case("svd"),
        _deep_o2p_case("eig"),
        _projector_case(),
        _objective_case("j1", nc.j1_forward, nc.j1_backward),
        _objective_case("j2", nc.j2_forward, nc.j2_backward),
        _objective_case("affinity_F_j2", nc.j2_forward, nc.j2_backward),
        _objective_case("affinity_lambda_j1", nc.j1_forward, nc.j1_backward, lam=True),
        _layer_case("layer_linear_input", _simple(lambda r: ng.Linear.init(r, 4, 3, bias=0.1), (5, 4))),
        _layer_case("layer_linear_weight", _simple(lambda r: ng.Linear.init(r, 4, 3, bias=0.1), (5, 4)), wrt=0),
        _layer_case("layer_linear_bias", _simple(lambda r: ng.Linear.init(r, 4, 3, bias=0.1), (5, 4)), wrt=1),
        _layer_case("layer_rectifier", _simple(lambda r: ng.Rectifier(), (5, 4)), margin=0.05),
        _layer_case("layer_flatten", _simple(lambda r: ng.Flatten(), (3, 4))),
        _layer_case("layer_append_ones", _simple(lambda r: ng.AppendOnes(), (5, 2))),
        _layer_case("layer_scale", _simple(lambda r: ng.Scale(r.standard_normal()), (3, 3)), wrt=0),
        _layer_case("layer_deep_o2p_svd", _simple(lambda r: ng.DeepO2P(sp.LOG, "svd"), (7, 3))),
        _layer_case("layer_deep_o2p_eig", _simple(lambda r: ng.DeepO2P(sp.LOG, "eig"), (7, 3))),
        _layer_case("loss_logistic", _simple(lambda r: ng.Scale(1.0), (1, 1), loss="logistic")),
        _layer_case("loss_frobenius", _simple(lambda r: ng.Scale(1.0), (4, 3))),
        _layer_case("layer_affinity_j2", _ncuts_pipeline, tolerance=PROJECTOR_TOL, margin=0.05),
        _layer_case("pipeline_o2p_svd", _o2p_pipeline("svd"), margin=0.05),
        _layer_case("pipeline_o2p_eig", _o2p_pipeline("eig"), margin=0.05),
        _layer_case("pipeline_o2p_svd_weight", _o2p_pipeline("svd"), wrt=0, margin=0.05),
        _layer_case("pipeline_ncuts_weight", _ncuts_pipeline, wrt=0, tolerance=PROJECTOR_TOL, margin=0.05),
    ]
    return {c.name: c for c in cases}


def select(registry: dict[str, GradCase], pattern: str | None) -> list[GradCase]:
    if not pattern:
        return list(registry.values())
    rx = re.compile(pattern)
    return [c for name, c in registry.items() if rx.search(name)]


def run_sweep(pattern=None, seeds=range(20), gap_floor=DEFAULT_GAP_FLOOR, seed_offset=0) -> list[GradReport]:
    reports = []
    for case in select(build_registry(), pattern):
        reports.extend(check(case, [seed_offset + s for s in seeds], gap_floor=gap_floor))
    return reports
