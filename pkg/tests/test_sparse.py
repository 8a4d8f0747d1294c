import numpy as np
import pytest

from asymeig.errors import ContractViolationError, MatrixMarketParseError
from asymeig.operators import SparseOperator, adjoint_mismatch
from asymeig.sparse import (
    SparseMatrix,
    from_dense,
    identity,
    read_matrix_market,
    write_matrix_market,
)


def test_identity_matvec():
    m = identity(3)
    v = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(m.matvec(v), v)


def test_zero_matrix_matvec():
    m = SparseMatrix(4, 5, [], [], [])
    assert np.array_equal(m.matvec(np.ones(5)), np.zeros(4))
    assert m.nnz == 0


def test_random_matvec_matches_dense(rng):
    rows = rng.integers(0, 50, 200)
    cols = rng.integers(0, 50, 200)
    vals = rng.standard_normal(200)
    m = SparseMatrix(50, 50, rows, cols, vals)
    dense = m.to_dense()
    for _ in range(5):
        v = rng.standard_normal(50)
        expect = dense @ v
        got = m.matvec(v)
        assert np.max(np.abs(got - expect)) <= 1e-12 * max(1.0, np.max(np.abs(expect)))
        u = rng.standard_normal(50)
        assert np.allclose(m.matvec_transpose(u), dense.T @ u, atol=1e-12)


def test_duplicates_are_summed():
    m = SparseMatrix(2, 2, [0, 0, 1], [1, 1, 0], [2.0, 3.0, 1.0])
    assert m.nnz == 2
    assert m.to_dense()[0, 1] == 5.0


def test_matvec_is_deterministic(rng):
    rows = rng.integers(0, 30, 500)
    cols = rng.integers(0, 30, 500)
    vals = rng.standard_normal(500)
    m = SparseMatrix(30, 30, rows, cols, vals)
    v = rng.standard_normal(30)
    first = m.matvec(v)
    for _ in range(3):
        assert np.array_equal(m.matvec(v), first)


def test_index_bounds_and_dim_mismatch():
    with pytest.raises(ContractViolationError):
        SparseMatrix(2, 2, [2], [0], [1.0])
    with pytest.raises(ContractViolationError):
        SparseMatrix(2, 2, [0], [-1], [1.0])
    m = identity(3)
    with pytest.raises(ContractViolationError):
        m.matvec(np.ones(4))


def test_adjoint_consistency_sparse(rng):
    rows = rng.integers(0, 40, 300)
    cols = rng.integers(0, 25, 300)
    vals = rng.standard_normal(300)
    op = SparseOperator(SparseMatrix(40, 25, rows, cols, vals))
    assert adjoint_mismatch(op, probes=100) < 1e-10


def test_matrix_market_roundtrip(tmp_path, rng):
    rows = rng.integers(0, 100, 400)
    cols = rng.integers(0, 80, 400)
    vals = rng.standard_normal(400)
    m = SparseMatrix(100, 80, rows, cols, vals)
    path = tmp_path / "m.mtx"
    write_matrix_market(m, path)
    back = read_matrix_market(path)
    assert back.shape == m.shape
    assert np.array_equal(back.rows, m.rows)
    assert np.array_equal(back.cols, m.cols)
    assert np.array_equal(back.vals, m.vals)


def test_matrix_market_identity(tmp_path):
    path = tmp_path / "id.mtx"
    path.write_text(
        "%%MatrixMarket matrix coordinate real general\n"
        "3 3 3\n1 1 1.0\n2 2 1.0\n3 3 1.0\n"
    )
    m = read_matrix_market(path)
    assert m.nnz == 3
    assert np.allclose(m.to_dense(), np.eye(3))


def test_matrix_market_zero_index_errors_with_line(tmp_path):
    path = tmp_path / "bad.mtx"
    path.write_text(
        "%%MatrixMarket matrix coordinate real general\n"
        "3 3 2\n1 1 1.0\n0 2 5.0\n"
    )
    with pytest.raises(MatrixMarketParseError) as err:
        read_matrix_market(path)
    assert err.value.line_number == 4


def test_matrix_market_bad_header(tmp_path):
    path = tmp_path / "bad.mtx"
    path.write_text("%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n")
    with pytest.raises(MatrixMarketParseError) as err:
        read_matrix_market(path)
    assert err.value.line_number == 1


def test_sum_and_transpose(rng):
    a = from_dense(rng.standard_normal((6, 4)))
    b = from_dense(rng.standard_normal((6, 4)))
    assert np.allclose((a + b).to_dense(), a.to_dense() + b.to_dense())
    assert np.allclose(a.transpose().to_dense(), a.to_dense().T)
    assert np.allclose(a.scaled(-2.5).to_dense(), -2.5 * a.to_dense())
