"""Weighted non-backtracking operator on directed edges.

Edges of a symmetric revealed set are enumerated both ways in
lexicographic (tail, head) order; a loop contributes one directed edge but
counts twice in the degree table.  The operator acts matrix-free in
O(|E|): per head vertex we accumulate S(y) = sum of outgoing weighted
values and subtract the single backtracking term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError
from .operators import LinearOperator
from .sparse import SparseMatrix, _group_sum


@dataclass
class EdgeSet:
    """Directed edges of a symmetric mask with reverse map and degree table."""

    n_vertices: int
    tails: np.ndarray
    heads: np.ndarray
    reverse_index: np.ndarray
    degrees: np.ndarray
    has_loops: bool

    @property
    def n_edges(self):
        return self.tails.size


def build_edge_set(mask: SparseMatrix) -> EdgeSet:
    """Enumerate both orientations of a symmetric 0/1 revealed set.

    The input must have a symmetric nonzero pattern; loops appear as a
    single directed edge (x, x) whose degree contribution is two.
    """
    if mask.nrows != mask.ncols:
        raise ContractViolationError("edge set needs a square mask")
    n = mask.nrows
    tails, heads = mask.rows, mask.cols
    key = tails * n + heads
    rev_key = heads * n + tails
    if tails.size:
        pos = np.minimum(np.searchsorted(key, rev_key), key.size - 1)
        if not np.all(key[pos] == rev_key):
            raise ContractViolationError("mask pattern is not symmetric")
        reverse_index = pos
    else:
        reverse_index = np.zeros(0, dtype=np.int64)
    loops = tails == heads
    degrees = np.bincount(heads, minlength=n).astype(np.int64)
    degrees += np.bincount(tails[loops], minlength=n)
    return EdgeSet(
        n_vertices=n,
        tails=tails.copy(),
        heads=heads.copy(),
        reverse_index=reverse_index,
        degrees=degrees,
        has_loops=bool(np.any(loops)),
    )


class NBOperator(LinearOperator):
    """B[e, f] = w(f) for f = (y, b) following e = (x, y) with b != x."""

    def __init__(self, edge_set: EdgeSet, weights):
        self.edges = edge_set
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.shape != (edge_set.n_edges,):
            raise ContractViolationError("one weight per directed edge required")
        self.dim_in = self.dim_out = edge_set.n_edges

    def _apply(self, v):
        e = self.edges
        wv = self.weights * v
        per_tail = _group_sum(e.tails, wv, e.n_vertices)
        return per_tail[e.heads] - wv[e.reverse_index]

    def _apply_transpose(self, u):
        e = self.edges
        per_head = _group_sum(e.heads, u, e.n_vertices)
        return self.weights * (per_head[e.tails] - u[e.reverse_index])

    def to_dense_nb(self):
        """Densified B for cross-checking small instances (|E| <= 400)."""
        e = self.edges
        if e.n_edges > 400:
            raise ContractViolationError("densified B is capped at 400 edges")
        b = np.zeros((e.n_edges, e.n_edges))
        for i in range(e.n_edges):
            x, y = e.tails[i], e.heads[i]
            follows = (e.tails == y) & (e.heads != x)
            b[i, follows] = self.weights[follows]
        return b  # (B v)(e) = sum_f B[e, f] v(f)


def nb_operator_from_observed(observed: SparseMatrix, dbar) -> NBOperator:
    """Weighted NB operator from a symmetric raw observed matrix.

    Weights are (n / dbar) times the observed values, aligned with the
    lexicographic edge order of the mask pattern.
    """
    edge_set = build_edge_set(observed)
    weights = (observed.nrows / dbar) * observed.vals
    return NBOperator(edge_set, weights)


def lift_edge(phi, dbar, edge_set: EdgeSet):
    """Edge-space lifts: plus reads the head mark, minus the tail mark."""
    phi = np.asarray(phi)
    scale = 1.0 / np.sqrt(dbar)
    return phi[edge_set.heads] * scale, phi[edge_set.tails] * scale


@dataclass
class LoweredVectors:
    check: np.ndarray  # left divergence, 1/d normalization
    hat: np.ndarray  # right divergence, 1/(d (deg - 1)), zeroed at deg <= 1
    check_unit: np.ndarray
    hat_unit: np.ndarray


def lower(psi, edge_set: EdgeSet, d) -> LoweredVectors:
    """Map an edge vector back to vertex space by incoming-edge sums."""
    psi = np.asarray(psi)
    sums = _group_sum(edge_set.heads, psi, edge_set.n_vertices)
    check = sums / d
    denom = d * (edge_set.degrees - 1.0)
    hat = np.where(edge_set.degrees >= 2, sums / np.where(denom == 0, 1.0, denom), 0.0)

    def unit(v):
        nrm = np.linalg.norm(v)
        return v / nrm if nrm > 0 else v

    return LoweredVectors(check=check, hat=hat, check_unit=unit(check), hat_unit=unit(hat))


def gram_diagnostic(gt, r0):
    """Gram matrix C of the detected eigenvectors under the Q row-sum metric.

    C[i, j] = <1, Q (phi_i .* phi_j)> / (mu_i mu_j); its smallest eigenvalue
    is reported for diagnostics only (it is never consumed by a prediction).
    """
    from .model import _SquareQ

    if r0 == 0:
        return np.zeros((0, 0)), None
    q = _SquareQ(gt)
    mu = gt.eigenvalues
    phi = gt.right_vectors
    c = np.zeros((r0, r0))
    for i in range(r0):
        for j in range(i, r0):
            val = float(np.sum(q.apply(phi[:, i] * phi[:, j]))) / (mu[i] * mu[j])
            c[i, j] = c[j, i] = val
    sigma_min = float(np.min(np.linalg.eigvalsh(c)))
    return c, sigma_min


def nb_spectrum(op: NBOperator, k, gt=None, d=None, tol=1e-8, max_iter=300, seed=0):
    """Top-k eigenpairs of B plus, when the truth is supplied, the
    gamma / gamma-hat predictions and the predicted left/right dot.
    """
    from .eigensolve import top_eigenpairs

    report = top_eigenpairs(op, k=k, tol=tol, max_iter=max_iter, seed=seed)
    predictions = None
    if gt is not None and d is not None:
        from .model import correlation_tables, detection_profile

        profile = detection_profile(gt, d, "nb")
        tables = correlation_tables(gt, profile, d)
        lr_pred = [
            float(1.0 / np.sqrt(g * gh))
            for g, gh in zip(tables.gamma, tables.gamma_hat)
        ]
        _, sigma_min = gram_diagnostic(gt, profile.r0)
        predictions = {
            "gamma": tables.gamma.tolist(),
            "gamma_hat": tables.gamma_hat.tolist(),
            "lr_dot_pred": lr_pred,
            "theta": profile.theta,
            "r0": profile.r0,
            "gram_sigma_min": sigma_min,
        }
    return report, predictions


def symmetrize_rect_mask(mask, m, n) -> SparseMatrix:
    """Block mask (0, M; M^T, 0) over m + n vertices, as a 0/1 pattern."""
    if (mask.m, mask.n) != (m, n):
        raise ContractViolationError("mask dimensions disagree")
    rows = np.concatenate([mask.rows, mask.cols + m])
    cols = np.concatenate([mask.cols + m, mask.rows])
    vals = np.ones(rows.size)
    return SparseMatrix(m + n, m + n, rows, cols, vals)


def nb_parity_mismatch(op: NBOperator, probes=50, seed=0):
    """Random-probe check of B^T Delta J == Delta J B.

    Delta is diagonal with n P_e (recovered here as (dbar) * weight, scale
    free for the identity) and J the edge reversal.
    """
    e = op.edges
    rng = np.random.default_rng(seed)
    delta = op.weights  # any positive multiple of n P_e works
    worst = 0.0
    for _ in range(probes):
        u = rng.standard_normal(e.n_edges)
        v = rng.standard_normal(e.n_edges)
        lhs = u @ op.apply_transpose(delta * v[e.reverse_index])
        rhs = u @ (delta * op.apply(v)[e.reverse_index])
        scale = max(abs(lhs), abs(rhs), 1e-300)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst
