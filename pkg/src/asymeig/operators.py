"""Matrix-free linear operators.

Every operator exposes `dim_in`, `dim_out`, `apply` and `apply_transpose`
and must satisfy the adjoint identity <u, A v> = <A^T u, v>.  All operators
here are stateless after construction and accept real or complex vectors
(complex input is pushed through the real kernels componentwise).
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolationError
from .sparse import SparseMatrix


class LinearOperator:
    """Base class; subclasses implement _apply / _apply_transpose on real vectors."""

    dim_in: int
    dim_out: int

    def apply(self, v):
        v = np.asarray(v)
        if v.shape != (self.dim_in,):
            raise ContractViolationError(
                f"apply expects length {self.dim_in}, got {v.shape}"
            )
        if np.iscomplexobj(v):
            return self._apply(v.real) + 1j * self._apply(v.imag)
        return self._apply(v)

    def apply_transpose(self, u):
        u = np.asarray(u)
        if u.shape != (self.dim_out,):
            raise ContractViolationError(
                f"apply_transpose expects length {self.dim_out}, got {u.shape}"
            )
        if np.iscomplexobj(u):
            return self._apply_transpose(u.real) + 1j * self._apply_transpose(u.imag)
        return self._apply_transpose(u)

    def _apply(self, v):
        raise NotImplementedError

    def _apply_transpose(self, u):
        raise NotImplementedError

    @property
    def is_square(self):
        return self.dim_in == self.dim_out

    def transpose(self):
        return TransposedOperator(self)

    def to_dense(self):
        """Materialize by applying to the canonical basis (small dims only)."""
        out = np.zeros((self.dim_out, self.dim_in))
        e = np.zeros(self.dim_in)
        for j in range(self.dim_in):
            e[j] = 1.0
            out[:, j] = self._apply(e)
            e[j] = 0.0
        return out


class TransposedOperator(LinearOperator):
    def __init__(self, base):
        self.base = base
        self.dim_in = base.dim_out
        self.dim_out = base.dim_in

    def _apply(self, v):
        return self.base._apply_transpose(v)

    def _apply_transpose(self, u):
        return self.base._apply(u)


class SparseOperator(LinearOperator):
    """SparseMatrix as an operator."""

    def __init__(self, matrix: SparseMatrix):
        self.matrix = matrix
        self.dim_in = matrix.ncols
        self.dim_out = matrix.nrows

    def _apply(self, v):
        return self.matrix.matvec(v)

    def _apply_transpose(self, u):
        return self.matrix.matvec_transpose(u)


class DenseOperator(LinearOperator):
    def __init__(self, mat):
        self.mat = np.asarray(mat, dtype=float)
        self.dim_out, self.dim_in = self.mat.shape

    def _apply(self, v):
        return self.mat @ v

    def _apply_transpose(self, u):
        return self.mat.T @ u


class ProductOperator(LinearOperator):
    """scale * (A @ B) applied as two chained operator products."""

    def __init__(self, a: LinearOperator, b: LinearOperator, scale=1.0):
        if a.dim_in != b.dim_out:
            raise ContractViolationError("inner dimensions of product differ")
        self.a = a
        self.b = b
        self.scale = float(scale)
        self.dim_in = b.dim_in
        self.dim_out = a.dim_out

    def _apply(self, v):
        return self.scale * self.a._apply(self.b._apply(v))

    def _apply_transpose(self, u):
        return self.scale * self.b._apply_transpose(self.a._apply_transpose(u))


class LowRankOperator(LinearOperator):
    """sum_k w_k * left[:, k] right[:, k]^T from dense factors."""

    def __init__(self, left, right, weights):
        self.left = np.asarray(left, dtype=float)
        self.right = np.asarray(right, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        if self.left.shape[1] != self.right.shape[1] != self.weights.size:
            raise ContractViolationError("factor rank mismatch")
        self.dim_out = self.left.shape[0]
        self.dim_in = self.right.shape[0]

    def _apply(self, v):
        return self.left @ (self.weights * (self.right.T @ v))

    def _apply_transpose(self, u):
        return self.right @ (self.weights * (self.left.T @ u))


def adjoint_mismatch(op: LinearOperator, probes=100, seed=0):
    """Worst relative |<u, Av> - <A^T u, v>| over random probe pairs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(probes):
        v = rng.standard_normal(op.dim_in)
        u = rng.standard_normal(op.dim_out)
        lhs = float(u @ op.apply(v))
        rhs = float(op.apply_transpose(u) @ v)
        scale = max(abs(lhs), abs(rhs), 1e-300)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst
