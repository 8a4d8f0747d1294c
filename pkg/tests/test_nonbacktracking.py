import numpy as np
import pytest

from asymeig import model, nonbacktracking as nb
from asymeig.errors import ContractViolationError
from asymeig.eigensolve import top_eigenpairs
from asymeig.sparse import SparseMatrix, from_dense


def _two_block(n, a, b):
    phi1 = np.ones(n) / np.sqrt(n)
    phi2 = np.concatenate([np.ones(n // 2), -np.ones(n // 2)]) / np.sqrt(n)
    return model.ground_truth_from_factors(
        [a + b, a - b], np.column_stack([phi1, phi2]),
        np.column_stack([phi1, phi2]), symmetric=True,
    )


def test_triangle_edges():
    tri = from_dense(np.array([[0, 1, 1], [1, 0, 1], [1, 1, 0]], dtype=float))
    es = nb.build_edge_set(tri)
    assert es.n_edges == 6
    assert np.array_equal(es.degrees, [2, 2, 2])
    assert np.array_equal(es.reverse_index[es.reverse_index], np.arange(6))


def test_loop_convention():
    es = nb.build_edge_set(SparseMatrix(3, 3, [1], [1], [1.0]))
    assert es.n_edges == 1
    assert es.degrees[1] == 2
    assert es.has_loops


def test_asymmetric_mask_rejected():
    with pytest.raises(ContractViolationError):
        nb.build_edge_set(SparseMatrix(3, 3, [0], [1], [1.0]))


def test_edge_count_concentration():
    n, dbar = 1000, 6.0
    mask = model.sample_symmetric_mask(n, dbar, 3)
    pattern = SparseMatrix(n, n, mask.rows, mask.cols, np.ones(mask.size))
    es = nb.build_edge_set(pattern)
    assert abs(es.n_edges - dbar * n) <= 4 * np.sqrt(dbar * n)


def test_two_cycle_is_nilpotent():
    two = from_dense(np.array([[0, 1], [1, 0]], dtype=float))
    op = nb.NBOperator(nb.build_edge_set(two), np.ones(2))
    assert np.allclose(op.apply(np.array([1.0, -2.0])), 0.0)


def test_path_propagation():
    path = from_dense(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float))
    es = nb.build_edge_set(path)
    weights = 2.0 * np.ones(es.n_edges)
    op = nb.NBOperator(es, weights)
    iab = int(np.where((es.tails == 0) & (es.heads == 1))[0][0])
    ibc = int(np.where((es.tails == 1) & (es.heads == 2))[0][0])
    # B pulls from the edges ahead: the indicator of (b, c) feeds (a, b) only
    v = np.zeros(es.n_edges)
    v[ibc] = 1.0
    out = op.apply(v)
    assert np.nonzero(out)[0].tolist() == [iab]
    assert out[iab] == 2.0
    # and the transpose pushes (a, b) forward onto (b, c)
    v = np.zeros(es.n_edges)
    v[iab] = 1.0
    out = op.apply_transpose(v)
    assert np.nonzero(out)[0].tolist() == [ibc]
    assert out[ibc] == 2.0


def test_densified_equivalence(rng):
    gt = model.generate_ground_truth(30, 30, eigenvalues=[3.0, 1.5],
                                     sampler="gaussian", seed=2)
    mask = model.sample_symmetric_mask(30, 6.0, 3)
    obs = model.observe(gt, mask, 1.0)
    op = nb.nb_operator_from_observed(obs.matrix, 6.0)
    assert op.dim_in <= 400
    dense = op.to_dense_nb()
    for _ in range(5):
        v = rng.standard_normal(op.dim_in)
        assert np.max(np.abs(op.apply(v) - dense @ v)) < 1e-12
        assert np.max(np.abs(op.apply_transpose(v) - dense.T @ v)) < 1e-12


def test_parity_identity(rng):
    gt = model.generate_ground_truth(200, 200, eigenvalues=[2.0],
                                     sampler="uniform", seed=1)
    mask = model.sample_symmetric_mask(200, 5.0, 4)
    obs = model.observe(gt, mask, 1.0)
    op = nb.nb_operator_from_observed(obs.matrix, 5.0)
    assert nb.nb_parity_mismatch(op, probes=50) < 1e-10


def test_lift_norm_and_empty():
    n, dbar = 4000, 6.0
    gt = model.generate_ground_truth(n, n, eigenvalues=[1.0], sampler="gaussian",
                                     seed=0)
    mask = model.sample_symmetric_mask(n, dbar, 7)
    pattern = SparseMatrix(n, n, mask.rows, mask.cols, np.ones(mask.size))
    es = nb.build_edge_set(pattern)
    plus, minus = nb.lift_edge(gt.right_vectors[:, 0], dbar, es)
    assert abs(np.sum(plus**2) - 1.0) <= 0.05
    assert abs(np.sum(minus**2) - 1.0) <= 0.05
    empty = nb.build_edge_set(SparseMatrix(3, 3, [], [], []))
    p, m = nb.lift_edge(np.ones(3), dbar, empty)
    assert p.size == 0 and m.size == 0


def test_lift_star_count():
    # star: center 0 with 3 leaves; |phi_minus|^2 counts out-edges of 0
    star = np.zeros((4, 4))
    star[0, 1:] = 1.0
    star[1:, 0] = 1.0
    es = nb.build_edge_set(from_dense(star))
    plus, minus = nb.lift_edge(np.eye(4)[0], 2.0, es)
    # edges with head 0: three of them, each contributing 1/dbar
    assert np.sum(plus**2) == pytest.approx(3 / 2.0)
    assert np.sum(minus**2) == pytest.approx(3 / 2.0)


def test_lower_regular_and_isolated():
    tri = from_dense(np.array([[0, 1, 1], [1, 0, 1], [1, 1, 0]], dtype=float))
    es = nb.build_edge_set(tri)
    low = nb.lower(np.ones(es.n_edges), es, 4.0)
    assert np.allclose(low.check, 2.0 / 4.0)  # degree 2 everywhere
    assert np.allclose(low.hat, 2.0 / (4.0 * 1.0))
    isolated = from_dense(
        np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], dtype=float)
    )
    es2 = nb.build_edge_set(isolated)
    low2 = nb.lower(np.ones(es2.n_edges), es2, 4.0)
    assert low2.hat[2] == 0.0  # isolated vertex
    assert low2.hat[0] == 0.0  # degree-one vertex zeroed as well
    assert low2.check[2] == 0.0


def test_lowered_overlap_er():
    n, dbar = 4000, 8.0
    gt = model.generate_ground_truth(n, n, eigenvalues=[1.0], sampler="constant",
                                     seed=0)
    mask = model.sample_symmetric_mask(n, dbar, 11)
    obs = model.observe(gt, mask, 1.0)
    op = nb.nb_operator_from_observed(obs.matrix, dbar)
    rep, preds = nb.nb_spectrum(op, k=1, gt=gt, d=dbar, tol=1e-7, seed=11)
    gamma = preds["gamma"][0]
    assert gamma == pytest.approx(1.0 / (1.0 - 1.0 / dbar), abs=1e-6)
    low = nb.lower(rep.pairs[0].right, op.edges, dbar)
    overlap = abs(np.real(np.vdot(low.hat_unit, gt.right_vectors[:, 0])))
    assert abs(overlap - 1.0 / np.sqrt(gamma)) <= 0.05
    # the left eigenvector's check-divergence estimates phi just as well
    low_left = nb.lower(rep.pairs[0].left, op.edges, dbar)
    overlap_left = abs(np.real(np.vdot(low_left.check_unit, gt.right_vectors[:, 0])))
    assert abs(overlap_left - 1.0 / np.sqrt(gamma)) <= 0.05
    # weighted NB left/right dot: (1 - f4/dbar)/sqrt(f4) with f4 = 1 here
    assert abs(rep.pairs[0].lr_overlap - (1.0 - 1.0 / dbar)) <= 0.05


def test_gamma_hat_dominates_on_constant_row_sums():
    gt = _two_block(400, 4.0, 1.0)
    prof = model.detection_profile(gt, 6.0, "nb")
    tab = model.correlation_tables(gt, prof, 6.0)
    assert prof.r0 == 2
    assert np.all(tab.gamma_hat >= tab.gamma - 1e-12)
    rho = prof.rho
    mu = gt.eigenvalues
    for i in range(2):
        assert tab.gamma_hat[i] == pytest.approx(
            rho / mu[i] ** 2 * tab.gamma[i], rel=1e-9
        )


def test_hat_check_proportionality():
    n, dbar = 2000, 8.0
    gt = model.generate_ground_truth(n, n, eigenvalues=[1.0], sampler="uniform",
                                     seed=2)
    mask = model.sample_symmetric_mask(n, dbar, 5)
    obs = model.observe(gt, mask, 1.0)
    op = nb.nb_operator_from_observed(obs.matrix, dbar)
    rep = top_eigenpairs(op, k=1, tol=1e-8, seed=5)
    pair = rep.pairs[0]
    hat = nb.lower(pair.right, op.edges, dbar).hat_unit
    check = nb.lower(pair.left, op.edges, dbar).check_unit
    assert abs(np.real(np.vdot(hat, check))) >= 0.99


def test_symmetrize_rect_mask():
    mask = model.MaskSample(2, 3, 1.0, 0, np.array([0]), np.array([1]))
    out = nb.symmetrize_rect_mask(mask, 2, 3)
    assert out.shape == (5, 5)
    pairs = set(zip(out.rows.tolist(), out.cols.tolist()))
    assert pairs == {(0, 3), (3, 0)}
    full = model.sample_mask(2, 3, 3.0, 0)
    assert full.size == 6
    sym = nb.symmetrize_rect_mask(full, 2, 3)
    assert sym.nnz == 12
    es = nb.build_edge_set(sym)
    assert es.n_edges == 12


def test_weighted_nb_lr_dot_gaussian():
    # non-constant weights: <psi, psi'> tends to (1 - f4/dbar)/sqrt(f4)
    n, dbar = 2000, 12.0
    gt = model.generate_ground_truth(n, n, eigenvalues=[1.0], sampler="gaussian",
                                     seed=3)
    phi = gt.right_vectors[:, 0]
    f4 = n * np.sum(phi**4)
    pred = (1 - f4 / dbar) / np.sqrt(f4)
    meas = []
    for seed in range(3):
        mask = model.sample_symmetric_mask(n, dbar, seed)
        obs = model.observe(gt, mask, 1.0)
        op = nb.nb_operator_from_observed(obs.matrix, dbar)
        rep, preds = nb.nb_spectrum(op, k=1, gt=gt, d=dbar, tol=1e-7, seed=seed)
        meas.append(rep.pairs[0].lr_overlap)
        # series route and closed form agree on the prediction
        assert abs(preds["lr_dot_pred"][0] - pred) < 0.01
    assert abs(np.mean(meas) - pred) <= 0.05


def test_gram_diagnostic():
    gt = _two_block(400, 4.0, 1.0)
    prof = model.detection_profile(gt, 6.0, "nb")
    c, sigma_min = nb.gram_diagnostic(gt, prof.r0)
    # constant Q row sums: the Gram metric is bounded below by one
    assert sigma_min >= 1.0 - 1e-9
    assert np.allclose(c, c.T)
    assert np.all(np.linalg.eigvalsh(c) > 0)
