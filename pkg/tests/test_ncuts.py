import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import adjusted_rand_score

from matbackprop.errors import (
    AffinityDomainError,
    ContractError,
    DisconnectedPixelError,
    EmptyClusterError,
    RankLemmaViolation,
)
from matbackprop.gradcheck import fd_grad, positive_features, random_labels, relative_error
from matbackprop.linalg import colon, numerical_rank, sym
from matbackprop.ncuts import (
    AffinityModel,
    SegmentationInstance,
    affinity_backward,
    affinity_forward,
    check_indicator,
    check_j2_iterate,
    degree_and_normalize,
    evaluate,
    indicator,
    j1_backward,
    j1_forward,
    j2_backward,
    j2_forward,
    j2_lambda_grad_is_zero,
    ncuts_criterion,
    projector_backward,
    projector_forward,
    projector_variation,
    psi_projector,
    rank_gap_check,
    spectral_inference,
)

E23 = indicator([0, 0, 1, 1, 1], 2)


def low_rank_sym(rng, m, r):
    B = rng.standard_normal((m, r))
    return B @ np.diag(rng.uniform(0.5, 2.0, r)) @ B.T


def congruence_pair(rng, A, h):
    """A(t) = (I + tB) A (I + tB)^T keeps the rank; returns dA and A(+h), A(-h)."""
    B = rng.standard_normal(A.shape)
    m = A.shape[0]
    plus = (np.eye(m) + h * B) @ A @ (np.eye(m) + h * B).T
    minus = (np.eye(m) - h * B) @ A @ (np.eye(m) - h * B).T
    return B @ A + A @ B.T, plus, minus


def check_projector_laws(P, A):
    assert np.linalg.norm(P @ P - P) <= 1e-8
    assert np.linalg.norm(P - P.T) <= 1e-12
    assert np.linalg.norm(P @ A - A) <= 1e-8 * (1 + np.linalg.norm(A))


def brute_criterion(W, labels, k):
    """Sum over clusters of assoc(A, A) / assoc(A, V) by explicit pixel-pair loops."""
    m = W.shape[0]
    total = 0.0
    for c in range(k):
        inside = [i for i in range(m) if labels[i] == c]
        within = sum(W[i, j] for i in inside for j in inside)
        degree = sum(W[i, j] for i in inside for j in range(m))
        total += within / degree
    return total


# -- indicators and instances -------------------------------------------------------


def test_indicator_and_checks():
    np.testing.assert_array_equal(E23.sum(axis=1), 1)
    check_indicator(E23)
    with pytest.raises(ContractError):
        check_indicator(np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(EmptyClusterError):
        check_indicator(np.array([[1.0, 0.0], [1.0, 0.0]]))


def test_instance_requires_matching_rows():
    with pytest.raises(ContractError):
        SegmentationInstance(np.ones((4, 2)), E23, 2, None)


# -- affinity ------------------------------------------------------------------------


def test_affinity_identity_example():
    model = AffinityModel(np.eye(2))
    W = affinity_forward(np.eye(2), AffinityModel(np.eye(2), nonneg_guard=False))
    np.testing.assert_array_equal(W, np.eye(2))
    gL, gF = affinity_backward(np.eye(2), model, np.eye(2))
    np.testing.assert_array_equal(gL, np.eye(2))
    np.testing.assert_array_equal(gF, 2 * np.eye(2))


def test_affinity_zero_upstream():
    F = np.ones((3, 2))
    gL, gF = affinity_backward(F, AffinityModel(np.eye(2)), np.zeros((3, 3)))
    assert not np.any(gL) and not np.any(gF)


def test_affinity_guard_names_pair():
    F = np.array([[1.0, 0.0], [-1.0, 0.0]])
    with pytest.raises(AffinityDomainError) as info:
        affinity_forward(F, AffinityModel(np.eye(2)))
    assert info.value.pair in ((0, 1), (1, 0))


def test_affinity_fd_through_j2():
    rng = np.random.default_rng(0)
    F = positive_features(rng, 9, 3, 0.05)
    A = rng.standard_normal((3, 3))
    model = AffinityModel(A @ A.T + np.eye(3))
    E = indicator(random_labels(rng, 9, 3), 3)
    W = affinity_forward(F, model)
    _, gF = affinity_backward(F, model, j2_backward(j2_forward(W, E)[1]))

    def loss(G):
        return j2_forward(affinity_forward(G, model), E)[0]

    assert relative_error(gF, fd_grad(loss, F)) < 1e-5


# -- normalization -----------------------------------------------------------------


def test_normalize_identity():
    nz = degree_and_normalize(np.eye(5), E23)
    np.testing.assert_array_equal(nz.D, np.eye(5))
    np.testing.assert_array_equal(nz.M, np.eye(5))
    np.testing.assert_array_equal(nz.Omega, E23 @ E23.T)


@pytest.mark.parametrize("seed", range(5))
def test_normalized_spectrum_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    F = rng.uniform(0.1, 1.0, (10, 3))
    nz = degree_and_normalize(F @ F.T)
    assert np.array_equal(nz.M, nz.M.T)
    q = np.linalg.eigvalsh(nz.M)
    assert q.min() >= -1 - 1e-12 and q.max() <= 1 + 1e-12


def test_disconnected_pixel():
    W = np.eye(3)
    W[1, 1] = 0.0
    with pytest.raises(DisconnectedPixelError) as info:
        degree_and_normalize(W)
    assert info.value.rows == [1]


# -- projectors -------------------------------------------------------------------------


def test_projector_examples():
    np.testing.assert_array_equal(projector_forward(np.diag([1.0, 0.0])), np.diag([1.0, 0.0]))
    A = np.array([[2.0, 1.0], [1.0, 3.0]])
    P = projector_forward(A)
    np.testing.assert_allclose(P, np.eye(2), atol=1e-15)
    assert not np.any(np.abs(projector_backward(A, P, np.ones((2, 2)))) > 1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 7), st.integers(0, 2**31 - 1), st.data())
def test_projector_laws(m, seed, data):
    r = data.draw(st.integers(1, m))
    A = low_rank_sym(np.random.default_rng(seed), m, r)
    P = projector_forward(A)
    check_projector_laws(P, A)
    assert numerical_rank(A) == r


@pytest.mark.parametrize("seed", range(10))
def test_projector_variation_along_congruence(seed):
    rng = np.random.default_rng(seed)
    A = low_rank_sym(rng, 4, 2)
    P = projector_forward(A)
    h = 1e-6
    dA, plus, minus = congruence_pair(rng, A, h)
    fd = (projector_forward(plus) - projector_forward(minus)) / (2 * h)
    assert relative_error(projector_variation(A, P, dA), fd) < 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_projector_backward_is_adjoint_of_variation(seed):
    rng = np.random.default_rng(seed)
    A = low_rank_sym(rng, 5, 3)
    P = projector_forward(A)
    gP = rng.standard_normal((5, 5))
    dA, _, _ = congruence_pair(rng, A, 1.0)
    lhs = colon(gP, projector_variation(A, P, dA))
    rhs = colon(projector_backward(A, P, gP), dA)
    assert abs(lhs - rhs) <= 1e-10 * (1 + abs(lhs))


def test_projector_backward_symmetric():
    rng = np.random.default_rng(3)
    A = low_rank_sym(rng, 5, 2)
    g = projector_backward(A, projector_forward(A), rng.standard_normal((5, 5)))
    np.testing.assert_array_equal(g, g.T)


# -- objectives ---------------------------------------------------------------------------


def test_ideal_affinity_zero_objectives():
    W = E23 @ E23.T
    v1, c1 = j1_forward(W, E23)
    v2, c2 = j2_forward(W, E23)
    assert v1 == pytest.approx(0, abs=1e-20) and v2 == pytest.approx(0, abs=1e-20)
    assert np.linalg.norm(j1_backward(c1)) < 1e-12
    assert np.linalg.norm(j2_backward(c2)) < 1e-12
    assert ncuts_criterion(W, E23) == pytest.approx(2.0, abs=1e-12)


def test_psi_projector_equals_projector_of_EEt():
    np.testing.assert_allclose(psi_projector(E23), projector_forward(E23 @ E23.T), atol=1e-14)


def test_full_rank_w_zero_j2_gradient():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((5, 5))
    _, c = j2_forward(A @ A.T + np.eye(5), E23)
    assert np.linalg.norm(j2_backward(c)) < 1e-12


def test_single_cluster_j1_against_direct_projectors():
    E = np.ones((4, 1))
    f = np.array([[1.0], [2.0], [0.5], [1.5]])
    assert j1_forward(f @ f.T, E)[0] == pytest.approx(0, abs=1e-20)
    F = np.random.default_rng(1).uniform(0.2, 1.0, (4, 2))
    W = F @ F.T
    nz = degree_and_normalize(W, E)
    expected = 0.5 * np.sum((projector_forward(nz.M) - projector_forward(nz.Omega)) ** 2)
    assert j1_forward(W, E)[0] == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_j1_gradient_through_features(seed):
    rng = np.random.default_rng(seed)
    F = positive_features(rng, 8, 2, 0.05)
    E = indicator(random_labels(rng, 8, 2), 2)
    model = AffinityModel(np.eye(2))
    W = affinity_forward(F, model)
    _, gF = affinity_backward(F, model, j1_backward(j1_forward(W, E)[1]))
    fd = fd_grad(lambda G: j1_forward(affinity_forward(G, model), E)[0], F)
    assert relative_error(gF, fd) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_j2_gradient_through_features(seed):
    rng = np.random.default_rng(seed)
    F = positive_features(rng, 8, 2, 0.05)
    E = indicator(random_labels(rng, 8, 2), 2)
    model = AffinityModel(np.eye(2))
    W = affinity_forward(F, model)
    _, gF = affinity_backward(F, model, j2_backward(j2_forward(W, E)[1]))
    fd = fd_grad(lambda G: j2_forward(affinity_forward(G, model), E)[0], F)
    assert relative_error(gF, fd) < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_objectives_nonnegative(seed):
    rng = np.random.default_rng(seed)
    F = rng.uniform(0.05, 1.0, (7, 3))
    E = indicator(random_labels(rng, 7, 2), 2)
    assert j1_forward(F @ F.T, E)[0] >= 0
    assert j2_forward(F @ F.T, E)[0] >= 0


# -- Lambda cannot be learned through J2 ------------------------------------------------


@pytest.mark.parametrize("seed", range(20))
def test_lambda_gradient_vanishes(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 5))
    F = rng.standard_normal((9, d))
    A = rng.standard_normal((d, d))
    E = indicator(random_labels(rng, 9, 3), 3)
    rep = j2_lambda_grad_is_zero(F, AffinityModel(A @ A.T, nonneg_guard=False), E)
    assert rep.passed, rep


def test_lambda_gradient_identity_features():
    rep = j2_lambda_grad_is_zero(np.eye(5), AffinityModel(np.eye(5), nonneg_guard=False), E23)
    assert rep.norm <= 1e-14


def test_lambda_gradient_rank_deficient_features():
    rng = np.random.default_rng(2)
    F = rng.standard_normal((8, 1)) @ rng.standard_normal((1, 3))
    E = indicator(random_labels(rng, 8, 2), 2)
    assert j2_lambda_grad_is_zero(F, AffinityModel(np.eye(3), nonneg_guard=False), E).passed


# -- rank lemma ---------------------------------------------------------------------------


def test_rank_gap_equal_inputs():
    A = E23 @ E23.T
    rep = rank_gap_check(A, A)
    assert rep.distance == pytest.approx(0, abs=1e-14) and rep.ranks_equal


@pytest.mark.parametrize("seed", range(20))
def test_rank_gap_distance_at_least_one(seed):
    rng = np.random.default_rng(seed)
    rep = rank_gap_check(low_rank_sym(rng, 5, 2), low_rank_sym(rng, 5, 1))
    assert rep.rank_a == 2 and rep.rank_b == 1
    assert rep.distance >= 1 - 1e-12
    assert not rep.implication_applies


def test_check_j2_iterate_raises_on_inconsistent_cache():
    W = E23 @ E23.T
    _, c = j2_forward(W, E23)
    forged = type(c)(c.W, c.E, c.P_W, c.P_Psi, c.W_pinv, 1, c.value)
    with pytest.raises(RankLemmaViolation):
        check_j2_iterate(forged)
    assert check_j2_iterate(c).implication_applies


# -- normalized cuts criterion -----------------------------------------------------


def test_criterion_single_cluster():
    W = np.random.default_rng(0).uniform(0.1, 1, (4, 4))
    assert ncuts_criterion(W + W.T, np.ones((4, 1))) == pytest.approx(1.0, rel=1e-14)


def test_criterion_equal_sizes():
    E = indicator([0, 0, 1, 1, 2, 2], 3)
    assert ncuts_criterion(E @ E.T, E) == pytest.approx(3.0, rel=1e-14)


@pytest.mark.parametrize("seed", range(10))
def test_criterion_matches_pairwise_sums(seed):
    rng = np.random.default_rng(seed)
    F = rng.uniform(0.1, 1.0, (9, 3))
    W = F @ F.T
    labels = random_labels(rng, 9, 3)
    val = ncuts_criterion(W, indicator(labels, 3))
    oracle = brute_criterion(W, labels, 3)
    assert abs(val - oracle) <= 1e-9 * max(1.0, abs(oracle))


def test_criterion_empty_cluster():
    E = np.zeros((3, 2))
    E[:, 0] = 1
    with pytest.raises(EmptyClusterError):
        ncuts_criterion(np.ones((3, 3)), E)


# -- permutation equivariance -----------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    F = rng.uniform(0.1, 1.0, (8, 2))
    E = indicator(random_labels(rng, 8, 2), 2)
    model = AffinityModel(np.eye(2))
    perm = rng.permutation(8)
    Pm = np.eye(8)[perm]
    for fwd, bwd in ((j1_forward, j1_backward), (j2_forward, j2_backward)):
        W = affinity_forward(F, model)
        g = bwd(fwd(W, E)[1])
        Wp = affinity_forward(Pm @ F, model)
        gp = bwd(fwd(Wp, Pm @ E)[1])
        np.testing.assert_allclose(gp, Pm @ g @ Pm.T, atol=1e-10)
        _, gF = affinity_backward(F, model, g)
        _, gFp = affinity_backward(Pm @ F, model, gp)
        np.testing.assert_allclose(gFp, Pm @ gF, atol=1e-10)


# -- inference and evaluation -------------------------------------------------------------


def test_inference_ideal_affinity():
    labels = np.array([0, 0, 1, 1, 1, 2, 2, 0])
    E = indicator(labels, 3)
    out = spectral_inference(E @ E.T + 1e-3, [1, 3])
    assert np.all(out[0] == 0)
    assert adjusted_rand_score(labels, out[1]) == pytest.approx(1.0)


def test_inference_splits_disconnected_segments():
    labels = np.array([0, 1, 0, 0, 1, 1, 1, 1, 1])  # 3x3, label 0 forms two pieces
    E = indicator(labels, 2)
    out = spectral_inference(E @ E.T + 1e-3, [2], image_shape=(3, 3))[0]
    assert len(np.unique(out)) == 3


def test_inference_deterministic_and_k_range():
    F = np.random.default_rng(0).uniform(0.1, 1, (12, 3))
    a = spectral_inference(F @ F.T, [2, 3])
    b = spectral_inference(F @ F.T, [2, 3])
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    with pytest.raises(ContractError):
        spectral_inference(F @ F.T, [13])


def test_evaluate_summary():
    s = evaluate(E23 @ E23.T, E23)
    assert s.rank_W == s.rank_target == 2
    assert s.j1 == pytest.approx(0, abs=1e-20) and s.j2 == pytest.approx(0, abs=1e-20)
    assert s.criterion == pytest.approx(2.0)
