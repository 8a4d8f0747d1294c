"""Randomized asymmetrization pipeline: split, X/Y, estimators, completion.

The pipeline is homogeneous of degree one in the observed matrix and pure
given (inputs, seed): the split, both eigensolves and all sign choices are
derived deterministically from the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError, NumericalConsistencyError
from .eigensolve import EigenSolveReport, top_eigenpairs, top_eigenpairs_dense
from .operators import ProductOperator, SparseOperator
from .sparse import SparseMatrix

_STREAM_SPLIT = 201

ADMISSIBLE_IMAG_REL = 1e-6
ADMISSIBLE_BULK_MARGIN = 1.15
DEGENERATE_REL_GAP = 1e-6


@dataclass
class RandomSplit:
    """Disjoint routing of the observed entries: c1 + c2 == T exactly."""

    c1: SparseMatrix
    c2: SparseMatrix
    seed: int


def split(observed: SparseMatrix, seed) -> RandomSplit:
    """Route each revealed entry to C1 with an independent fair coin.

    Coin flips are made in the matrix's canonical row-major entry order,
    so the split is reproducible from (T, seed).
    """
    rng = np.random.default_rng([_STREAM_SPLIT, seed])
    to_c1 = rng.random(observed.nnz) < 0.5
    c1 = SparseMatrix(
        observed.nrows, observed.ncols,
        observed.rows[to_c1], observed.cols[to_c1], observed.vals[to_c1],
        sum_duplicates=False,
    )
    c2 = SparseMatrix(
        observed.nrows, observed.ncols,
        observed.rows[~to_c1], observed.cols[~to_c1], observed.vals[~to_c1],
        sum_duplicates=False,
    )
    return RandomSplit(c1=c1, c2=c2, seed=seed)


@dataclass
class AsymmetricPair:
    """X = s^2 C1 C2^T (m x m) and Y = s^2 C2^T C1 (n x n), matrix-free."""

    x: ProductOperator
    y: ProductOperator
    scale: float


def build_xy(rsplit: RandomSplit, n, d) -> AsymmetricPair:
    if rsplit.c1.ncols != n:
        raise ContractViolationError("n disagrees with the split's column count")
    scale = (2.0 * n / d) ** 2
    c1 = SparseOperator(rsplit.c1)
    c2 = SparseOperator(rsplit.c2)
    x = ProductOperator(c1, c2.transpose(), scale)
    y = ProductOperator(c2.transpose(), c1, scale)
    return AsymmetricPair(x=x, y=y, scale=scale)


def square_spectrum(a: SparseMatrix, k, tol=1e-8, max_iter=300, seed=0) -> EigenSolveReport:
    """Top-k left/right eigenpairs of a square observed matrix."""
    if a.nrows != a.ncols:
        raise ContractViolationError("square_spectrum needs a square matrix")
    return top_eigenpairs(SparseOperator(a), k=k, tol=tol, max_iter=max_iter, seed=seed)


def estimate_correlations(x_overlap, y_overlap):
    """Data-driven correlation estimates from the left/right eigenvector dots.

    Returns (c1_sim, c2_sim, c1_avg, c2_avg), all clamped to [0, 1].
    """
    out = []
    for t in (x_overlap, y_overlap):
        t = abs(float(t))
        if t > 1.0 + 1e-6:
            raise NumericalConsistencyError(
                f"|<left, right>| = {t} exceeds 1 beyond tolerance"
            )
        out.append(min(t, 1.0))
    t1, t2 = out
    c1_sim = np.sqrt(t1)
    c2_sim = np.sqrt(t2)
    c1_avg = np.sqrt(2.0 * t1 / (1.0 + t1))
    c2_avg = np.sqrt(2.0 * t2 / (1.0 + t2))
    return c1_sim, c2_sim, c1_avg, c2_avg


def estimate_weights(nu, correlations, method):
    """w-hat = sqrt(nu) * c1 * c2 for the chosen method."""
    if method not in ("sim", "avg"):
        raise ContractViolationError("method must be 'sim' or 'avg'")
    nu = complex(nu)
    if abs(nu.imag) > ADMISSIBLE_IMAG_REL * abs(nu) or nu.real <= 0:
        raise ContractViolationError("weight needs a real positive eigenvalue")
    c1_sim, c2_sim, c1_avg, c2_avg = correlations
    if method == "sim":
        return float(np.sqrt(nu.real) * c1_sim * c2_sim)
    return float(np.sqrt(nu.real) * c1_avg * c2_avg)


@dataclass
class IndexEstimate:
    """Everything the pipeline measured for one retained component."""

    nu: float
    eta: float
    sigma_hat: float
    x_lr_dot: float
    y_lr_dot: float
    c1_sim: float
    c2_sim: float
    c1_avg: float
    c2_avg: float
    w_sim: float
    w_avg: float


@dataclass
class CompletedMatrix:
    rank: int
    weights: np.ndarray
    left_factors: np.ndarray  # (m, rank)
    right_factors: np.ndarray  # (n, rank)
    method: str
    estimates: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    x_report: EigenSolveReport | None = None
    y_report: EigenSolveReport | None = None

    def frobenius_error_sq(self, gt) -> float:
        """|| P - P-hat ||_F^2 from factors, in O((m + n) rank^2)."""
        sig = gt.singular_values
        p_norm = float(np.sum(sig**2))
        if self.rank == 0:
            return p_norm
        gl = gt.left_vectors.T @ self.left_factors  # (r, rank)
        gr = gt.right_vectors.T @ self.right_factors
        cross = float(np.einsum("i,ik,ik,k->", sig, gl, gr, self.weights))
        ll = self.left_factors.T @ self.left_factors
        rr = self.right_factors.T @ self.right_factors
        own = float(self.weights @ (ll * rr) @ self.weights)
        return p_norm - 2.0 * cross + own


def _admissible(report: EigenSolveReport, warnings):
    """Indices of real positive eigenvalues clearly above the bulk estimate."""
    bulk = report.bulk_radius_estimate or 0.0
    keep = []
    values = report.values
    for i, pair in enumerate(report.pairs):
        lam = pair.value
        if abs(lam.imag) > ADMISSIBLE_IMAG_REL * max(abs(lam), 1e-300):
            continue
        if lam.real <= 0:
            continue
        if lam.real <= ADMISSIBLE_BULK_MARGIN * bulk:
            continue
        if not pair.converged:
            warnings.append(f"unconverged eigenvalue {lam:.6g} skipped")
            continue
        others = np.delete(values, i)
        if others.size and np.min(np.abs(others - lam)) < DEGENERATE_REL_GAP * abs(lam):
            warnings.append(
                f"eigenvalue {lam.real:.6g} is part of a degenerate cluster; excluded"
            )
            continue
        keep.append(i)
    return keep


def _real_vector(vec):
    return np.real(vec)


def complete(
    observed: SparseMatrix,
    d,
    r_hat=None,
    method="avg",
    seed=0,
    tol=1e-8,
    max_iter=300,
    dense_oracle=False,
) -> CompletedMatrix:
    """Full pipeline from the unscaled masked matrix T = P .* M.

    split -> X, Y -> top-2 r-hat eigenpairs each -> admissible real positive
    eigenvalues matched across X and Y -> orientation fixes -> data-driven
    c-hat, w-hat -> factors.  `svd_baseline` instead truncates the SVD of
    (n/d) T at rank r-hat.  `dense_oracle=True` swaps the iterative
    eigensolver for the dense reference one (small instances only).
    """
    if method not in ("sim", "avg", "svd_baseline"):
        raise ContractViolationError("method must be sim, avg or svd_baseline")
    if r_hat is not None and r_hat < 1:
        raise ContractViolationError("r_hat must be at least 1")
    m, n = observed.shape
    if method == "svd_baseline":
        return _svd_baseline(observed, d, r_hat or 1, seed, tol, max_iter)
    rsplit = split(observed, seed)
    pair = build_xy(rsplit, n, d)
    k_target = r_hat if r_hat is not None else 5
    kx = min(m, 2 * k_target)
    ky = min(n, 2 * k_target)
    warnings = []
    if dense_oracle:
        x_rep = top_eigenpairs_dense(pair.x, kx)
        y_rep = top_eigenpairs_dense(pair.y, ky)
    else:
        x_rep = top_eigenpairs(pair.x, kx, tol=tol, max_iter=max_iter, seed=seed)
        y_rep = top_eigenpairs(pair.y, ky, tol=tol, max_iter=max_iter, seed=seed)
    x_keep = _admissible(x_rep, warnings)
    y_keep = _admissible(y_rep, warnings)
    if r_hat is None:
        r_hat = max(len(x_keep), 1)
    # Greedy nearest-value assignment between the admissible sets.
    matches = []
    y_free = list(y_keep)
    for xi in x_keep:
        if not y_free:
            break
        nu = x_rep.pairs[xi].value.real
        best = min(y_free, key=lambda yi: abs(y_rep.pairs[yi].value.real - nu))
        y_free.remove(best)
        matches.append((xi, best))
    matches.sort(key=lambda t: -x_rep.pairs[t[0]].value.real)
    if len(matches) < r_hat:
        warnings.append(
            f"only {len(matches)} admissible eigenvalue pairs for requested "
            f"rank {r_hat}"
        )
    matches = matches[:r_hat]
    a_scaled = observed.scaled(n / d)
    weights, lefts, rights, estimates = [], [], [], []
    for xi, yi in matches:
        px, py = x_rep.pairs[xi], y_rep.pairs[yi]
        nu, eta = px.value.real, py.value.real
        corr = estimate_correlations(px.lr_overlap, py.lr_overlap)
        if method == "sim":
            zeta = _real_vector(px.right)
            xi_vec = _real_vector(py.right)
        else:
            zl = _real_vector(px.right) + _real_vector(px.left)
            xr = _real_vector(py.right) + _real_vector(py.left)
            zeta = zl / np.linalg.norm(zl)
            xi_vec = xr / np.linalg.norm(xr)
        # Joint orientation: the pair (zeta, xi) should look like A itself.
        if float(zeta @ a_scaled.matvec(xi_vec)) < 0:
            xi_vec = -xi_vec
        w = estimate_weights(nu, corr, method)
        weights.append(w)
        lefts.append(zeta)
        rights.append(xi_vec)
        estimates.append(
            IndexEstimate(
                nu=nu, eta=eta, sigma_hat=float(np.sqrt(nu)),
                x_lr_dot=px.lr_overlap, y_lr_dot=py.lr_overlap,
                c1_sim=corr[0], c2_sim=corr[1], c1_avg=corr[2], c2_avg=corr[3],
                w_sim=estimate_weights(nu, corr, "sim"),
                w_avg=estimate_weights(nu, corr, "avg"),
            )
        )
    rank = len(weights)
    return CompletedMatrix(
        rank=rank,
        weights=np.array(weights),
        left_factors=np.column_stack(lefts) if rank else np.zeros((m, 0)),
        right_factors=np.column_stack(rights) if rank else np.zeros((n, 0)),
        method=method,
        estimates=estimates,
        warnings=warnings,
        x_report=x_rep,
        y_report=y_rep,
    )


def _svd_baseline(observed, d, r_hat, seed, tol, max_iter):
    """Rank r-hat truncated SVD of (n/d) T, via the symmetric product operator."""
    m, n = observed.shape
    a = observed.scaled(n / d)
    op = SparseOperator(a)
    gram = ProductOperator(op, op.transpose(), 1.0)  # A A^T, PSD on R^m
    k = min(m, r_hat)
    rep = top_eigenpairs(gram, k, tol=tol, max_iter=max_iter, seed=seed,
                         compute_left=False)
    weights, lefts, rights = [], [], []
    warnings = []
    for pair in rep.pairs:
        lam = pair.value.real
        if lam <= 0:
            warnings.append("nonpositive singular value candidate skipped")
            continue
        u = _real_vector(pair.right)
        u = u / np.linalg.norm(u)
        av = a.matvec_transpose(u)
        s = np.linalg.norm(av)
        if s == 0:
            continue
        weights.append(s)
        lefts.append(u)
        rights.append(av / s)
    rank = len(weights)
    return CompletedMatrix(
        rank=rank,
        weights=np.array(weights),
        left_factors=np.column_stack(lefts) if rank else np.zeros((m, 0)),
        right_factors=np.column_stack(rights) if rank else np.zeros((n, 0)),
        method="svd_baseline",
        estimates=[],
        warnings=warnings,
        x_report=rep,
    )


def mse_star(gt, tables, method) -> float:
    """Predicted optimal mean-square error for the sim or avg estimators.

    Uses the printed form sum_i sigma_i^2 (1 - 2 (c1 c2)_i^2)
    + sum_ij sigma_i sigma_j (c1_i c2_j)^2 (C1)_ij (C2)_ij.
    """
    if method not in ("sim", "avg"):
        raise ContractViolationError("mse_star is defined for sim and avg")
    if tables.gamma_tri is not None:
        g1 = np.asarray(tables.gamma_tri)
        g2 = np.asarray(tables.gamma_nab)
        gam1 = np.asarray(tables.Gamma_tri)
        gam2 = np.asarray(tables.Gamma_nab)
    else:
        g1 = g2 = np.asarray(tables.gamma)
        gam1 = gam2 = np.asarray(tables.Gamma)
    r0 = g1.size
    sig = gt.singular_values[:r0]
    eye = np.eye(r0)
    if method == "sim":
        c1 = 1.0 / np.sqrt(g1)
        c2 = 1.0 / np.sqrt(g2)
        corr1 = gam1 / np.sqrt(np.outer(g1, g1))
        corr2 = gam2 / np.sqrt(np.outer(g2, g2))
    else:
        c1 = np.sqrt(2.0 / (g1 + 1.0))
        c2 = np.sqrt(2.0 / (g2 + 1.0))
        corr1 = (gam1 + eye) / np.sqrt(np.outer(g1 + 1.0, g1 + 1.0))
        corr2 = (gam2 + eye) / np.sqrt(np.outer(g2 + 1.0, g2 + 1.0))
    total = float(np.sum(sig**2 * (1.0 - 2.0 * (c1 * c2) ** 2)))
    cross = np.outer(sig, sig) * np.outer(c1, c2) ** 2 * corr1 * corr2
    return total + float(np.sum(cross))
