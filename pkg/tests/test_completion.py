import numpy as np
import pytest

from asymeig import completion, model, oracles
from asymeig.errors import ContractViolationError, NumericalConsistencyError
from asymeig.operators import adjoint_mismatch
from asymeig.sparse import SparseMatrix, from_dense


def _instance(m, n, sigma, d, seed, sampler="gaussian", truth_seed=0):
    gt = model.generate_ground_truth(m, n, singular_values=sigma, sampler=sampler,
                                     seed=truth_seed)
    mask = model.sample_mask(m, n, d, seed)
    return gt, model.observe(gt, mask, 1.0).matrix


def test_split_worked_example():
    t = from_dense(np.array([[0.0, 2.0, 0.0, 4.0], [1.0, 0.0, 0.0, 4.0]]))
    for seed in range(300):
        rs = completion.split(t, seed)
        c1 = rs.c1.to_dense()
        if c1[0, 1] == 2.0 and c1[1, 3] == 4.0 and rs.c1.nnz == 2:
            break
    else:
        pytest.fail("printed split not reachable")
    pair = completion.build_xy(rs, 4, 2.0)
    scale = (2 * 4 / 2.0) ** 2
    assert np.allclose(pair.x.to_dense(), scale * np.array([[0, 0], [16, 0]]))
    expect_y = np.zeros((4, 4))
    expect_y[0, 3] = 4.0
    expect_y[3, 1] = 8.0
    assert np.allclose(pair.y.to_dense(), scale * expect_y)


def test_split_conservation_and_disjoint(rng):
    rows = rng.integers(0, 60, 500)
    cols = rng.integers(0, 80, 500)
    vals = rng.standard_normal(500)
    t = SparseMatrix(60, 80, rows, cols, vals)
    rs = completion.split(t, seed=4)
    assert np.allclose((rs.c1 + rs.c2).to_dense(), t.to_dense())
    keys1 = set(zip(rs.c1.rows.tolist(), rs.c1.cols.tolist()))
    keys2 = set(zip(rs.c2.rows.tolist(), rs.c2.cols.tolist()))
    assert not keys1 & keys2
    assert rs.c1.nnz + rs.c2.nnz == t.nnz


def test_split_empty_and_balance(rng):
    empty = SparseMatrix(5, 5, [], [], [])
    rs = completion.split(empty, 0)
    assert rs.c1.nnz == rs.c2.nnz == 0
    n_entries = 10_000
    rows = np.repeat(np.arange(100), 100)
    cols = np.tile(np.arange(100), 100)
    t = SparseMatrix(100, 100, rows, cols, np.ones(n_entries))
    rs = completion.split(t, 7)
    assert abs(rs.c1.nnz - n_entries / 2) <= 4 * np.sqrt(n_entries / 4)


def test_build_xy_zero_side():
    t = from_dense(np.array([[1.0, 2.0], [0.0, 3.0]]))
    rs = completion.RandomSplit(c1=t, c2=SparseMatrix(2, 2, [], [], []), seed=0)
    pair = completion.build_xy(rs, 2, 1.0)
    assert np.allclose(pair.x.to_dense(), 0.0)
    assert np.allclose(pair.y.to_dense(), 0.0)


def test_xy_nonzero_spectra_match(rng):
    gt, obs = _instance(30, 40, [2.0, 1.0], 20.0, seed=1)
    rs = completion.split(obs, 3)
    pair = completion.build_xy(rs, 40, 20.0)
    x_vals = np.linalg.eigvals(pair.x.to_dense())
    y_vals = np.linalg.eigvals(pair.y.to_dense())
    x_big = np.sort_complex(x_vals[np.abs(x_vals) > 1e-6])
    y_big = np.sort_complex(y_vals[np.abs(y_vals) > 1e-6])
    assert len(x_big) == len(y_big)
    assert np.max(np.abs(x_big - y_big)) <= 1e-8 * max(np.abs(x_big).max(), 1.0)
    assert adjoint_mismatch(pair.x, probes=50) < 1e-10
    assert adjoint_mismatch(pair.y, probes=50) < 1e-10


def test_square_spectrum_exact_on_full_mask():
    gt = model.generate_ground_truth(80, 80, eigenvalues=[3.0, -2.0],
                                     sampler="gaussian", seed=5)
    mask = model.sample_mask(80, 80, 80.0, 0)
    a = model.observe(gt, mask, 1.0).matrix
    rep = completion.square_spectrum(a, k=2, seed=1)
    assert np.allclose(np.sort(rep.values.real), [-2.0, 3.0], atol=1e-7)


def test_estimate_correlations_values():
    c1s, c2s, c1a, c2a = completion.estimate_correlations(1.0, 1.0)
    assert (c1s, c2s, c1a, c2a) == (1.0, 1.0, 1.0, 1.0)
    c1s, _, c1a, _ = completion.estimate_correlations(0.7, 0.7)
    assert c1s == pytest.approx(np.sqrt(0.7))
    assert c1a == pytest.approx(np.sqrt(1.4 / 1.7))
    with pytest.raises(NumericalConsistencyError):
        completion.estimate_correlations(1.1, 0.5)
    # mild excess is clamped
    vals = completion.estimate_correlations(1.0 + 5e-7, 0.5)
    assert vals[0] == 1.0


def test_estimator_ordering_avg_geq_sim(rng):
    for t1, t2 in rng.random((50, 2)):
        c1s, c2s, c1a, c2a = completion.estimate_correlations(t1, t2)
        assert c1a >= c1s - 1e-12
        assert c2a >= c2s - 1e-12
        assert c1a <= 1.0 + 1e-12


def test_estimate_weights():
    corr = completion.estimate_correlations(1.0, 1.0)
    assert completion.estimate_weights(25.0, corr, "sim") == pytest.approx(5.0)
    corr = completion.estimate_correlations(0.8, 0.8)
    assert completion.estimate_weights(25.0, corr, "sim") == pytest.approx(4.0)
    with pytest.raises(ContractViolationError):
        completion.estimate_weights(-1.0, corr, "sim")
    with pytest.raises(ContractViolationError):
        completion.estimate_weights(25.0 + 1j, corr, "avg")


def test_full_mask_recovery():
    # With every entry revealed the SVD baseline is exact.  The randomized
    # methods still split the data, so their error matches the theory floor
    # (gamma > 1 at any finite size) instead of vanishing.
    gt, obs = _instance(60, 90, [4.0, 2.0], 90.0, seed=2)
    svd = completion.complete(obs, 90.0, r_hat=2, method="svd_baseline", seed=0)
    rel = svd.frobenius_error_sq(gt) / np.sum(gt.singular_values**2)
    assert rel <= 1e-12
    avg = completion.complete(obs, 90.0, r_hat=2, method="avg", seed=0)
    assert avg.frobenius_error_sq(gt) / np.sum(gt.singular_values**2) < 0.25


def test_complete_warns_when_rank_unreachable():
    gt, obs = _instance(40, 50, [3.0], 25.0, seed=3)
    cm = completion.complete(obs, 25.0, r_hat=4, method="sim", seed=1)
    assert cm.rank < 4
    assert any("admissible" in w for w in cm.warnings)


def test_scale_equivariance():
    gt, obs = _instance(80, 120, [2.0], 40.0, seed=4)
    scaled = obs.scaled(3.0)
    base = completion.complete(obs, 40.0, r_hat=1, method="avg", seed=9)
    big = completion.complete(scaled, 40.0, r_hat=1, method="avg", seed=9)
    assert big.weights[0] == pytest.approx(3.0 * base.weights[0], rel=1e-9)
    align = abs(np.dot(base.left_factors[:, 0], big.left_factors[:, 0]))
    assert align == pytest.approx(1.0, abs=1e-9)


def test_mse_star_limits():
    gt = model.generate_ground_truth(400, 600, singular_values=[2.0],
                                     sampler="uniform", seed=3)
    prof = model.detection_profile(gt, 50.0, "rectangular")
    tab = model.correlation_tables(gt, prof, 50.0)
    got = completion.mse_star(gt, tab, "sim")
    g1, g2 = tab.gamma_tri[0], tab.gamma_nab[0]
    expect = 4.0 * (1.0 - 1.0 / (g1 * g2))
    assert got == pytest.approx(expect, rel=1e-9)
    # d -> infinity: error floor vanishes
    prof = model.detection_profile(gt, 600.0, "rectangular")
    tab = model.correlation_tables(gt, prof, 600.0)
    assert completion.mse_star(gt, tab, "avg") < 0.05
    # perfect-correlation limit: c = 1 and identity Gram matrices
    class Perfect:
        gamma = np.ones(2)
        Gamma = np.eye(2)
        gamma_tri = np.ones(2)
        gamma_nab = np.ones(2)
        Gamma_tri = np.eye(2)
        Gamma_nab = np.eye(2)

    gt2 = model.generate_ground_truth(50, 50, singular_values=[3.0, 1.0],
                                      sampler="gaussian", seed=0)
    assert completion.mse_star(gt2, Perfect, "sim") == pytest.approx(0.0, abs=1e-12)


def test_pipeline_equivalence_dense_vs_iterative():
    for seed in range(3):
        gt, obs = _instance(60, 90, [3.0], 45.0, seed=seed, truth_seed=seed)
        fast = completion.complete(obs, 45.0, r_hat=1, method="sim", seed=seed)
        slow = oracles.brute_force_complete(obs, 45.0, r_hat=1, method="sim",
                                            seed=seed)
        assert fast.rank == slow.rank == 1
        assert fast.estimates[0].nu == pytest.approx(slow.estimates[0].nu,
                                                     rel=1e-6)
        left = abs(np.dot(fast.left_factors[:, 0], slow.left_factors[:, 0]))
        right = abs(np.dot(fast.right_factors[:, 0], slow.right_factors[:, 0]))
        assert left >= 1.0 - 1e-6
        assert right >= 1.0 - 1e-6


def test_brute_force_guard():
    gt, obs = _instance(40, 50, [2.0], 25.0, seed=0)
    with pytest.raises(ContractViolationError):
        oracles.brute_force_complete(
            SparseMatrix(400, 400, [], [], []), 5.0, 1
        )
    cm = oracles.brute_force_complete(obs, 25.0, r_hat=1, method="avg", seed=0)
    assert cm.rank == 1


def test_empty_input_returns_empty_estimate():
    empty = SparseMatrix(30, 30, [], [], [])
    cm = oracles.brute_force_complete(empty, 3.0, r_hat=1, method="avg", seed=0)
    assert cm.rank == 0
    assert cm.warnings


def test_symmetric_completion_mse_matches_split_theory():
    # symmetric truth through the split pipeline: the rectangular formulas
    # with alpha = 1 are the governing theory (threshold 2 * kurtosis)
    n, d = 2000, 10.0
    gt = model.generate_ground_truth(n, n, eigenvalues=[1.0], sampler="gaussian",
                                     seed=0)
    zeta = gt.left_vectors[:, 0]
    xi = gt.right_vectors[:, 0]
    pred = model.rank_one_predictions(
        d, symmetric=False, n=n,
        zeta_l4sq=float(np.sqrt(np.sum(zeta**4))),
        xi_l4sq=float(np.sqrt(np.sum(xi**4))),
    )
    errs = []
    for seed in range(6):
        mask = model.sample_mask(n, n, d, seed)
        obs = model.observe(gt, mask, 1.0)
        cm = completion.complete(obs.matrix, d, r_hat=1, method="avg", seed=seed)
        errs.append(cm.frobenius_error_sq(gt))
    assert abs(np.mean(errs) - pred["mse_avg"]) <= 0.15 * pred["mse_avg"]


def test_sparse_regime_ordering_beats_svd():
    # the headline regime: near the threshold the plain SVD fails hard
    m, n, d = 2000, 3000, 9.7
    gt = model.generate_ground_truth(m, n, singular_values=[1.0],
                                     sampler="gaussian", seed=1)
    means = {}
    for method in ("sim", "avg", "svd_baseline"):
        errs = []
        for seed in range(6):
            mask = model.sample_mask(m, n, d, seed)
            obs = model.observe(gt, mask, 1.0)
            cm = completion.complete(obs.matrix, d, r_hat=1, method=method,
                                     seed=seed)
            errs.append(cm.frobenius_error_sq(gt))
        means[method] = np.mean(errs)
    assert means["avg"] < means["sim"] < means["svd_baseline"]
    assert means["svd_baseline"] > 2.0  # localization failure, error > signal


def test_two_spike_weight_matches_series_theory():
    # bounded sampler keeps r0 = 2 so the gamma tables cover both spikes
    gt = model.generate_ground_truth(1000, 5000, singular_values=[5.0, 3.0],
                                     sampler="uniform", seed=2)
    d = 50.0
    prof = model.detection_profile(gt, d, "rectangular")
    assert prof.r0 == 2
    tab = model.correlation_tables(gt, prof, d)
    w_pred = (5.0 * np.sqrt(2 / (tab.gamma_tri[0] + 1))
              * np.sqrt(2 / (tab.gamma_nab[0] + 1)))
    mask = model.sample_mask(1000, 5000, d, 4)
    obs = model.observe(gt, mask, 1.0)
    cm = completion.complete(obs.matrix, d, r_hat=2, method="avg", seed=4)
    assert cm.weights[0] < 5.0
    assert abs(cm.weights[0] - w_pred) <= 0.10 * w_pred


def test_chat_sim_against_gamma_tables():
    # data-driven c-hat vs the series 1/sqrt(gamma_tri) at alpha = 1
    n, d = 2500, 50.0
    gt = model.generate_ground_truth(n, n, singular_values=[1.0],
                                     sampler="gaussian", seed=0)
    prof = model.detection_profile(gt, d, "rectangular")
    tab = model.correlation_tables(gt, prof, d)
    c1_pred = 1.0 / np.sqrt(tab.gamma_tri[0])
    mask = model.sample_mask(n, n, d, 3)
    obs = model.observe(gt, mask, 1.0)
    cm = completion.complete(obs.matrix, d, r_hat=1, method="sim", seed=3)
    assert abs(cm.estimates[0].c1_sim - c1_pred) <= 0.03
