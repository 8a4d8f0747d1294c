"""Ground-truth generation, masking, Hermitization, and closed-form theory.

RNG discipline: every sampling operation draws from
`np.random.default_rng([STREAM_TAG, seed])` where STREAM_TAG is a fixed
per-purpose constant, so independent quantities never share a stream and
every output is reproducible from (inputs, seed) alone.

The geometric-series quantities (gamma, Gamma and friends) are summed to
numerical convergence rather than truncated at the profile's depth
parameter `ell`: at desk-scale n that integer is 0-2, while every
numerical prediction in scope is the converged (large-n) value of the
series.  The truncation count is shared across all entries of one table so
termwise identities (e.g. gamma_tri + gamma_nab = 2 gamma) hold exactly.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass
from io import BytesIO

import numpy as np

from .errors import ContractViolationError
from .operators import LinearOperator
from .sparse import SparseMatrix

_STREAM_LEFT = 101
_STREAM_RIGHT = 102
_STREAM_MASK = 103
_STREAM_SYM_MASK = 104

POWER_TOL = 1e-8
POWER_MAX_ITERS = 10_000
SERIES_TOL = 1e-13
SERIES_MAX_TERMS = 2000

KURTOSIS = {
    "gaussian": 3.0,
    "uniform": 9.0 / 5.0,
    "laplace": 6.0,
    "hyperbolic_secant": 5.0,
    "centered_bernoulli": 1.0,
    "constant": 1.0,
}


def parse_sampler(name):
    """Split 'bernoulli(0.25)' into ('bernoulli', 0.25); plain names pass through."""
    name = name.strip()
    if name.startswith("bernoulli(") and name.endswith(")"):
        return "bernoulli", float(name[len("bernoulli(") : -1])
    return name, None


def sampler_kurtosis(name):
    """Asymptotic value of n*|phi|_4^4 for unit vectors drawn from the sampler."""
    base, param = parse_sampler(name)
    if base == "bernoulli":
        if param is None or not 0 < param <= 1:
            raise ContractViolationError("bernoulli sampler needs c in (0, 1]")
        return 1.0 / param
    try:
        return KURTOSIS[base]
    except KeyError:
        raise ContractViolationError(f"unknown sampler {name!r}")


def _draw(name, rng, size):
    base, param = parse_sampler(name)
    if base == "gaussian":
        return rng.standard_normal(size)
    if base == "uniform":
        return rng.random(size)
    if base == "laplace":
        return rng.laplace(size=size)
    if base == "hyperbolic_secant":
        u = rng.random(size)
        return (2.0 / np.pi) * np.log(np.tan(np.pi * u / 2.0))
    if base == "bernoulli":
        if param is None or not 0 < param <= 1:
            raise ContractViolationError("bernoulli sampler needs c in (0, 1]")
        return (rng.random(size) < param).astype(float)
    if base == "centered_bernoulli":
        return np.where(rng.random(size) < 0.5, -1.0, 1.0)
    if base == "constant":
        return np.ones(size)
    raise ContractViolationError(f"unknown sampler {name!r}")


@dataclass
class GroundTruth:
    """Low-rank factorization of the hidden matrix.

    Always stored as P = left @ diag(sigma) @ right.T with orthonormal factor
    columns.  In the symmetric case left = eigen_signs * right, so signed
    eigenvalues are eigen_signs * sigma, ordered by decreasing modulus.
    """

    m: int
    n: int
    singular_values: np.ndarray
    left_vectors: np.ndarray  # (m, r)
    right_vectors: np.ndarray  # (n, r)
    symmetric: bool = False
    eigen_signs: np.ndarray = None
    sampler: str = "gaussian"
    seed: int = 0

    def __post_init__(self):
        self.singular_values = np.asarray(self.singular_values, dtype=float)
        if self.eigen_signs is None:
            self.eigen_signs = np.ones(self.rank)
        self.eigen_signs = np.asarray(self.eigen_signs, dtype=float)
        if np.any(np.diff(self.singular_values) > 1e-12):
            raise ContractViolationError("singular values must be non-increasing")
        if np.any(self.singular_values <= 0):
            raise ContractViolationError("singular values must be positive")
        if self.symmetric and self.m != self.n:
            raise ContractViolationError("symmetric ground truth needs m == n")

    @property
    def rank(self):
        return self.singular_values.size

    @property
    def eigenvalues(self):
        """Signed eigenvalues (symmetric case), ordered by decreasing modulus."""
        if not self.symmetric:
            raise ContractViolationError("eigenvalues only defined when symmetric")
        return self.eigen_signs * self.singular_values

    def entry_values(self, rows, cols):
        """P evaluated at index arrays, never densifying."""
        lw = self.left_vectors[rows, :] * self.singular_values
        return np.einsum("ij,ij->i", lw, self.right_vectors[cols, :])

    def dense(self):
        if self.m * self.n > 10**6:
            raise ContractViolationError("refusing to densify beyond 10^6 entries")
        return (self.left_vectors * self.singular_values) @ self.right_vectors.T

    def matvec(self, v):
        return self.left_vectors @ (self.singular_values * (self.right_vectors.T @ v))

    def matvec_transpose(self, u):
        return self.right_vectors @ (self.singular_values * (self.left_vectors.T @ u))

    def max_abs_entry(self, chunk=512):
        """Exact max |P_xy| over all entries, evaluated in row blocks."""
        best = 0.0
        lw = self.left_vectors * self.singular_values
        for start in range(0, self.m, chunk):
            block = lw[start : start + chunk] @ self.right_vectors.T
            best = max(best, float(np.max(np.abs(block))))
        return best

    def incoherence(self):
        """b = sqrt(n) * max_k |factor_k|_inf, a diagnostic only."""
        worst = max(
            float(np.max(np.abs(self.left_vectors))),
            float(np.max(np.abs(self.right_vectors))),
        )
        return float(np.sqrt(self.n) * worst)


def _orthonormalize(cols):
    """QR with positive diagonal: Gram-Schmidt result, deterministic signs."""
    q, r = np.linalg.qr(cols)
    diag = np.diag(r)
    if np.any(np.abs(diag) < 1e-10 * max(1.0, np.max(np.abs(cols)))):
        raise ContractViolationError(
            "sampled factor vectors are numerically dependent; "
            "rank too high for this sampler"
        )
    return q * np.sign(diag)


def generate_ground_truth(
    m,
    n,
    singular_values=None,
    eigenvalues=None,
    sampler="gaussian",
    seed=0,
) -> GroundTruth:
    """Draw i.i.d. factor vectors and orthonormalize them.

    Exactly one of `singular_values` (rectangular) or `eigenvalues`
    (symmetric, signed, m == n) must be given.
    """
    if (singular_values is None) == (eigenvalues is None):
        raise ContractViolationError("pass singular_values xor eigenvalues")
    if m < 2 or n < 2:
        raise ContractViolationError("need m, n >= 2")
    symmetric = eigenvalues is not None
    if symmetric:
        eigs = np.asarray(eigenvalues, dtype=float)
        order = np.argsort(-np.abs(eigs), kind="stable")
        eigs = eigs[order]
        sigma = np.abs(eigs)
        signs = np.sign(eigs)
        if np.any(sigma == 0):
            raise ContractViolationError("zero eigenvalues are not part of the rank")
    else:
        sigma = np.asarray(singular_values, dtype=float)
        signs = np.ones_like(sigma)
    r = sigma.size
    if r > min(m, n):
        raise ContractViolationError(f"rank {r} exceeds min(m, n) = {min(m, n)}")
    rng_right = np.random.default_rng([_STREAM_RIGHT, seed])
    right = _orthonormalize(_draw(sampler, rng_right, (n, r)))
    if symmetric:
        left = right * signs
    else:
        rng_left = np.random.default_rng([_STREAM_LEFT, seed])
        left = _orthonormalize(_draw(sampler, rng_left, (m, r)))
    return GroundTruth(
        m=m,
        n=n,
        singular_values=sigma,
        left_vectors=left,
        right_vectors=right,
        symmetric=symmetric,
        eigen_signs=signs,
        sampler=sampler,
        seed=seed,
    )


def ground_truth_from_factors(
    sigma, left, right, symmetric=False, eigen_signs=None, sampler="explicit", seed=0
) -> GroundTruth:
    """Wrap explicit factors (validated) as a GroundTruth."""
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    for f, tag in ((left, "left"), (right, "right")):
        gram = f.T @ f
        if not np.allclose(gram, np.eye(f.shape[1]), atol=1e-8):
            raise ContractViolationError(f"{tag} factors are not orthonormal")
    return GroundTruth(
        m=left.shape[0],
        n=right.shape[0],
        singular_values=np.asarray(sigma, dtype=float),
        left_vectors=left,
        right_vectors=right,
        symmetric=symmetric,
        eigen_signs=eigen_signs,
        sampler=sampler,
        seed=seed,
    )


@dataclass
class MaskSample:
    m: int
    n: int
    d: float
    seed: int
    rows: np.ndarray
    cols: np.ndarray
    symmetric: bool = False

    @property
    def size(self):
        return self.rows.size


def sample_mask(m, n, d, seed) -> MaskSample:
    """Independent Bernoulli(d/n) mask over an m x n index grid."""
    if not 0 < d <= n:
        raise ContractViolationError("need 0 < d <= n")
    rng = np.random.default_rng([_STREAM_MASK, seed])
    prob = d / n
    rows_acc, cols_acc = [], []
    block = max(1, int(4_000_000 // max(n, 1)))
    for start in range(0, m, block):
        stop = min(start + block, m)
        hits = rng.random((stop - start, n)) < prob
        r, c = np.nonzero(hits)
        rows_acc.append(r + start)
        cols_acc.append(c)
    rows = np.concatenate(rows_acc) if rows_acc else np.zeros(0, np.int64)
    cols = np.concatenate(cols_acc) if cols_acc else np.zeros(0, np.int64)
    return MaskSample(m=m, n=n, d=float(d), seed=seed, rows=rows, cols=cols)


def sample_symmetric_mask(n, dbar, seed) -> MaskSample:
    """Symmetric Bernoulli(dbar/n) mask: upper triangle (with diagonal) mirrored."""
    if not 0 < dbar <= n:
        raise ContractViolationError("need 0 < dbar <= n")
    rng = np.random.default_rng([_STREAM_SYM_MASK, seed])
    prob = dbar / n
    rows_acc, cols_acc = [], []
    block = max(1, int(4_000_000 // max(n, 1)))
    for start in range(0, n, block):
        stop = min(start + block, n)
        hits = rng.random((stop - start, n)) < prob
        r, c = np.nonzero(hits)
        r = r + start
        keep = r <= c
        rows_acc.append(r[keep])
        cols_acc.append(c[keep])
    up_r = np.concatenate(rows_acc)
    up_c = np.concatenate(cols_acc)
    off = up_r != up_c
    rows = np.concatenate([up_r, up_c[off]])
    cols = np.concatenate([up_c, up_r[off]])
    order = np.argsort(rows * n + cols, kind="stable")
    return MaskSample(
        m=n, n=n, d=float(dbar), seed=seed,
        rows=rows[order], cols=cols[order], symmetric=True,
    )


@dataclass
class ObservedEntries:
    """Sparse matrix of revealed, rescaled entries plus its provenance."""

    matrix: SparseMatrix
    scale: float
    mask_seed: int
    scale_tag: str = "raw"  # raw | n_over_d | 2n_over_d


def observe(gt: GroundTruth, mask: MaskSample, scale=1.0) -> ObservedEntries:
    if (mask.m, mask.n) != (gt.m, gt.n):
        raise ContractViolationError("mask dimensions do not match ground truth")
    vals = scale * gt.entry_values(mask.rows, mask.cols)
    matrix = SparseMatrix(gt.m, gt.n, mask.rows, mask.cols, vals, sum_duplicates=False)
    tag = "raw" if scale == 1.0 else f"x{scale:g}"
    return ObservedEntries(matrix=matrix, scale=float(scale), mask_seed=mask.seed,
                           scale_tag=tag)


class HermitizedOperator(LinearOperator):
    """Block operator (0, P; P^T, 0) applied from the factors."""

    def __init__(self, gt: GroundTruth):
        self.gt = gt
        self.dim_in = self.dim_out = gt.m + gt.n

    def _apply(self, v):
        top = self.gt.matvec(v[self.gt.m :])
        bot = self.gt.matvec_transpose(v[: self.gt.m])
        return np.concatenate([top, bot])

    def _apply_transpose(self, u):
        return self._apply(u)  # symmetric by construction


@dataclass
class HermitizedProblem:
    size: int
    phi_plus: np.ndarray  # (m + n, r)
    phi_minus: np.ndarray
    operator: HermitizedOperator
    sigma: np.ndarray


def hermitize(gt: GroundTruth) -> HermitizedProblem:
    """Lift P to its symmetric block form with eigenvectors (+-zeta; xi)/sqrt(2)."""
    r = gt.rank
    size = gt.m + gt.n
    phi_plus = np.vstack([gt.left_vectors, gt.right_vectors]) / np.sqrt(2.0)
    phi_minus = np.vstack([-gt.left_vectors, gt.right_vectors]) / np.sqrt(2.0)
    return HermitizedProblem(
        size=size,
        phi_plus=phi_plus,
        phi_minus=phi_minus,
        operator=HermitizedOperator(gt),
        sigma=gt.singular_values.copy(),
    )


class _SquareQ:
    """Q = n * (P .* P) for symmetric P, applied from the low-rank expansion."""

    def __init__(self, gt: GroundTruth):
        mu = gt.eigenvalues
        phi = gt.right_vectors
        r = gt.rank
        if r * r <= 64:
            had = np.stack(
                [phi[:, i] * phi[:, j] for i in range(r) for j in range(r)]
            )
            self.had = had
            self.wts = np.array([mu[i] * mu[j] for i in range(r) for j in range(r)])
            self.dense = None
        elif gt.n <= 4000:
            p = gt.dense()
            self.dense = gt.n * p * p
        else:
            raise ContractViolationError(
                "Q needs rank^2 <= 64 or n <= 4000 to be applied"
            )
        self.n = gt.n

    def apply(self, v):
        if self.dense is not None:
            return self.dense @ v
        return self.n * (self.had.T @ (self.wts * (self.had @ v)))


class _RectQ:
    """Base m x n matrix Q = n * (P .* P) for rectangular P (low-rank expansion)."""

    def __init__(self, gt: GroundTruth):
        r = gt.rank
        s = gt.singular_values
        zl = gt.left_vectors
        xr = gt.right_vectors
        if r * r <= 64:
            self.hl = np.stack(
                [zl[:, i] * zl[:, j] for i in range(r) for j in range(r)]
            )
            self.hr = np.stack(
                [xr[:, i] * xr[:, j] for i in range(r) for j in range(r)]
            )
            self.wts = np.array([s[i] * s[j] for i in range(r) for j in range(r)])
            self.dense = None
        elif max(gt.m, gt.n) <= 4000:
            p = gt.dense()
            self.dense = gt.n * p * p
        else:
            raise ContractViolationError(
                "Q needs rank^2 <= 64 or dims at most 4000 to be applied"
            )
        self.n = gt.n

    def apply(self, v):
        """Q @ v, v of length n."""
        if self.dense is not None:
            return self.dense @ v
        return self.n * (self.hl.T @ (self.wts * (self.hr @ v)))

    def apply_transpose(self, u):
        if self.dense is not None:
            return self.dense.T @ u
        return self.n * (self.hr.T @ (self.wts * (self.hl @ u)))


class _HermQ:
    """Q-tilde = (m + n) |P-tilde|^2 as a symmetric block operator."""

    def __init__(self, gt: GroundTruth):
        self.base = _RectQ(gt)
        self.m = gt.m
        self.n = gt.n
        self.scale = (gt.m + gt.n) / gt.n  # Q-tilde blocks are (ntilde/n) * Q

    def apply(self, v):
        top = self.scale * self.base.apply(v[self.m :])
        bot = self.scale * self.base.apply_transpose(v[: self.m])
        return np.concatenate([top, bot])


def _power_iteration(apply_fn, dim, tol=POWER_TOL, max_iters=POWER_MAX_ITERS):
    """Perron eigenvalue of an entrywise non-negative symmetric operator."""
    v = np.ones(dim) / np.sqrt(dim)
    rho_old = 0.0
    for it in range(1, max_iters + 1):
        w = apply_fn(v)
        rho = float(np.linalg.norm(w))
        if rho == 0.0:
            return 0.0, it, True
        v = w / rho
        if abs(rho - rho_old) <= tol * rho:
            return rho, it, True
        rho_old = rho
    return rho_old, max_iters, False


@dataclass
class DetectionProfile:
    """Every threshold-type quantity derived from (P, d) for one variant."""

    variant: str
    d: float
    d_eff: float
    n_eff: int
    L: float
    rho: float
    theta1: float
    theta2: float
    theta: float
    r0: int
    tau0: float | None
    ell: int
    gap_ratios: list
    incoherence_b: float
    moduli: list
    power_iterations: int = 0
    power_converged: bool = True

    def to_dict(self):
        return {
            "variant": self.variant,
            "d": self.d,
            "d_eff": self.d_eff,
            "n_eff": self.n_eff,
            "L": self.L,
            "rho": self.rho,
            "theta1": self.theta1,
            "theta2": self.theta2,
            "theta": self.theta,
            "r0": self.r0,
            "tau0": self.tau0,
            "ell": self.ell,
            "gap_ratios": list(self.gap_ratios),
            "incoherence_b": self.incoherence_b,
            "moduli": list(self.moduli),
            "power_converged": self.power_converged,
        }


def detection_profile(gt: GroundTruth, d, variant="square") -> DetectionProfile:
    """Thresholds, detection rank and gap ratios for one of the three variants.

    square:      directed mask with parameter d; D = max(2d, 1.01).
    nb:          symmetric mask, d is the symmetric degree dbar; D = max(d, 1.01).
    rectangular: Hermitized conventions; d_eff = (1+alpha)d/2, size m+n,
                 D = max(2 d_eff, 1.01), theta2 = sqrt(2 rho / d).
    """
    if d <= 0:
        raise ContractViolationError("d must be positive")
    if variant in ("square", "nb") and not gt.symmetric:
        raise ContractViolationError(f"variant {variant!r} needs symmetric truth")
    max_abs = gt.max_abs_entry()
    if variant in ("square", "nb"):
        moduli = np.abs(gt.eigenvalues)
        q = _SquareQ(gt)
        rho, iters, converged = _power_iteration(q.apply, gt.n)
        L = gt.n * max_abs
        d_eff = float(d)
        n_eff = gt.n
        theta1 = L / d_eff
        theta2 = float(np.sqrt(rho / d_eff))
        big_d = max(2 * d, 1.01) if variant == "square" else max(d, 1.01)
    elif variant == "rectangular":
        moduli = gt.singular_values.copy()
        alpha = gt.m / gt.n
        q = _RectQ(gt)

        def sym_apply(v):
            top = q.apply(v[gt.m :])
            bot = q.apply_transpose(v[: gt.m])
            return np.concatenate([top, bot])

        rho, iters, converged = _power_iteration(sym_apply, gt.m + gt.n)
        # || (0, Q; Q^T, 0) || equals ||Q||, the top singular value of the base Q.
        n_eff = gt.m + gt.n
        L = n_eff * max_abs
        d_eff = (1 + alpha) * d / 2.0
        theta1 = L / d_eff
        theta2 = float(np.sqrt((1 + alpha) * rho / d_eff))
        big_d = max(2 * d_eff, 1.01)
    else:
        raise ContractViolationError(f"unknown variant {variant!r}")
    theta = max(theta1, theta2)
    r0 = int(np.sum(moduli > theta))  # strictly above; ties count as below
    tau0 = float(theta / moduli[r0 - 1]) if r0 >= 1 else None
    ell = int(np.floor(np.log(n_eff) / np.log(big_d) / 8.0))
    ell_eff = max(ell, 1)
    gap_ratios = []
    mods_ext = np.concatenate([moduli, [0.0]]) if gt.rank < min(gt.m, gt.n) else moduli
    signed = gt.eigenvalues if gt.symmetric else moduli
    signed_ext = (
        np.concatenate([signed, [0.0]]) if gt.rank < min(gt.m, gt.n) else signed
    )
    for i in range(r0):
        ratios = np.delete(signed_ext, i) / signed[i]
        gap_ratios.append(float(1.0 - np.min(np.abs(1.0 - ratios**ell_eff))))
    return DetectionProfile(
        variant=variant,
        d=float(d),
        d_eff=float(d_eff),
        n_eff=n_eff,
        L=float(L),
        rho=float(rho),
        theta1=float(theta1),
        theta2=theta2,
        theta=float(theta),
        r0=r0,
        tau0=tau0,
        ell=ell,
        gap_ratios=gap_ratios,
        incoherence_b=gt.incoherence(),
        moduli=[float(x) for x in moduli],
        power_iterations=iters,
        power_converged=converged,
    )


@dataclass
class CorrelationTables:
    """gamma / Gamma series for the detected indices, summed to convergence."""

    gamma: np.ndarray  # (r0,)
    Gamma: np.ndarray  # (r0, r0)
    gamma_hat: np.ndarray | None  # non-backtracking variant
    gamma_tri: np.ndarray | None  # rectangular only
    gamma_nab: np.ndarray | None
    Gamma_tri: np.ndarray | None
    Gamma_nab: np.ndarray | None
    d_used: float
    terms: int

    def to_dict(self):
        def conv(x):
            return None if x is None else np.asarray(x).tolist()

        return {
            "gamma": conv(self.gamma),
            "Gamma": conv(self.Gamma),
            "gamma_hat": conv(self.gamma_hat),
            "gamma_tri": conv(self.gamma_tri),
            "gamma_nab": conv(self.gamma_nab),
            "Gamma_tri": conv(self.Gamma_tri),
            "Gamma_nab": conv(self.Gamma_nab),
            "d_used": self.d_used,
            "terms": self.terms,
        }


def _series_terms(profile: DetectionProfile):
    """Shared truncation depth: geometric ratio (theta2/mu_r0)^2 to 1e-13."""
    if profile.r0 == 0:
        return 1
    ratio = (profile.theta2 / profile.moduli[profile.r0 - 1]) ** 2
    if ratio <= 0:
        return 8
    est = int(np.ceil(np.log(SERIES_TOL) / np.log(ratio))) if ratio < 1 else SERIES_MAX_TERMS
    return int(np.clip(est, 8, SERIES_MAX_TERMS))


def _accumulate(apply_q, vec, denom_list, terms):
    """sum_s <1, Q^s vec> / denom^s for several denominators at once."""
    ones_dot = []
    u = vec.copy()
    ones_dot.append(float(np.sum(u)))
    for _ in range(terms):
        u = apply_q(u)
        ones_dot.append(float(np.sum(u)))
    ones_dot = np.array(ones_dot)
    out = []
    for denom in denom_list:
        powers = denom ** -np.arange(terms + 1, dtype=float)
        out.append(float(ones_dot @ powers))
    return out


def correlation_tables(gt: GroundTruth, profile: DetectionProfile, d) -> CorrelationTables:
    """gamma_i, Gamma_ij and the variant-specific companions.

    For square/nb variants the sums run over Q = n P.*P with the vertex
    eigenvectors; for the rectangular variant over Q-tilde with the
    Hermitized vectors, including the block-zeroed triangle/nabla variants.
    The non-backtracking gamma_hat is produced for symmetric variants.
    """
    if abs(d - profile.d) > 1e-9:
        raise ContractViolationError("profile was computed for a different d")
    r0 = profile.r0
    if r0 == 0:
        empty = np.zeros(0)
        square_like = profile.variant in ("square", "nb")
        return CorrelationTables(
            gamma=empty, Gamma=np.zeros((0, 0)),
            gamma_hat=empty if square_like else None,
            gamma_tri=None if square_like else empty,
            gamma_nab=None if square_like else empty,
            Gamma_tri=None if square_like else np.zeros((0, 0)),
            Gamma_nab=None if square_like else np.zeros((0, 0)),
            d_used=profile.d_eff, terms=0,
        )
    terms = _series_terms(profile)
    if profile.variant in ("square", "nb"):
        q = _SquareQ(gt)
        mu = gt.eigenvalues
        d_used = profile.d_eff
        gamma = np.zeros(r0)
        gamma_hat = np.zeros(r0)
        big_gamma = np.zeros((r0, r0))
        for i in range(r0):
            if mu[i] == 0:
                raise ContractViolationError("zero eigenvalue inside detection rank")
            for j in range(i, r0):
                vec = gt.right_vectors[:, i] * gt.right_vectors[:, j]
                val = _accumulate(q.apply, vec, [mu[i] * mu[j] * d_used], terms)[0]
                big_gamma[i, j] = big_gamma[j, i] = val
            gamma[i] = big_gamma[i, i]
            # hat-gamma starts the sum at s = 1 with one extra power.
            vec = gt.right_vectors[:, i] ** 2
            full = _accumulate(q.apply, vec, [mu[i] ** 2 * d_used], terms + 1)[0]
            gamma_hat[i] = d_used * (full - 1.0)
        return CorrelationTables(
            gamma=gamma, Gamma=big_gamma, gamma_hat=gamma_hat,
            gamma_tri=None, gamma_nab=None, Gamma_tri=None, Gamma_nab=None,
            d_used=d_used, terms=terms,
        )
    # rectangular: Hermitized geometry
    herm = hermitize(gt)
    q = _HermQ(gt)
    sig = gt.singular_values
    d_used = profile.d_eff
    m = gt.m
    gamma = np.zeros(r0)
    big_gamma = np.zeros((r0, r0))
    g_tri = np.zeros((r0, r0))
    g_nab = np.zeros((r0, r0))
    for i in range(r0):
        for j in range(r0):
            pp = herm.phi_plus[:, i] * herm.phi_plus[:, j]
            tri = np.concatenate(
                [gt.left_vectors[:, i] * gt.left_vectors[:, j], np.zeros(gt.n)]
            )
            nab = np.concatenate(
                [np.zeros(m), gt.right_vectors[:, i] * gt.right_vectors[:, j]]
            )
            # Printed convention: Gamma uses (sigma_i sigma_j d), the triangle
            # and nabla tables use (sigma_i^2 d) even off the diagonal.
            if j >= i:
                val = _accumulate(q.apply, pp, [sig[i] * sig[j] * d_used], terms)[0]
                big_gamma[i, j] = big_gamma[j, i] = val
            g_tri[i, j] = _accumulate(q.apply, tri, [sig[i] ** 2 * d_used], terms)[0]
            g_nab[i, j] = _accumulate(q.apply, nab, [sig[i] ** 2 * d_used], terms)[0]
        gamma[i] = big_gamma[i, i]
    return CorrelationTables(
        gamma=gamma, Gamma=big_gamma, gamma_hat=None,
        gamma_tri=np.diag(g_tri).copy(), gamma_nab=np.diag(g_nab).copy(),
        Gamma_tri=g_tri, Gamma_nab=g_nab,
        d_used=d_used, terms=terms,
    )


def rank_one_predictions(
    d,
    kurtosis=None,
    alpha=1.0,
    symmetric=True,
    sigma1=1.0,
    fourth_moment=None,
    zeta_l4sq=None,
    xi_l4sq=None,
    n=None,
    kurtosis_left=None,
    kurtosis_right=None,
):
    """Closed-form rank-one theory, from sampler kurtosis or measured 4-norms.

    Symmetric case: pass `kurtosis` (or `fourth_moment` = measured n|phi|_4^4).
    Rectangular case: pass `kurtosis` (both sides) or kurtosis_left/right, or
    measured `zeta_l4sq`/`xi_l4sq` = |zeta|_4^2, |xi|_4^2 together with `n`.

    Below the detection threshold overlaps are reported as zero with the
    `below_threshold` flag set and the MSE saturates at sigma1^2.
    """
    out = {"d": float(d), "alpha": float(alpha), "sigma1": float(sigma1)}
    if symmetric:
        f4 = fourth_moment if fourth_moment is not None else kurtosis
        if f4 is None:
            raise ContractViolationError("need kurtosis or fourth_moment")
        d_crit = float(f4)
        out["threshold_d_crit"] = d_crit
        out["theta2"] = float(np.sqrt(f4 / d))
        below = d <= d_crit
        out["below_threshold"] = bool(below)
        if below:
            out.update(
                gamma=None, gamma_tri=None, gamma_nab=None,
                overlap_sim=0.0, overlap_avg=0.0, lr_dot=0.0, nb_lr_dot=0.0,
                mse_sim=sigma1**2, mse_avg=sigma1**2,
            )
            return out
        gamma = 1.0 / (1.0 - f4 / d)
        out["gamma"] = float(gamma)
        out["gamma_tri"] = None
        out["gamma_nab"] = None
        out["overlap_sim"] = float(1.0 / np.sqrt(gamma))
        out["overlap_avg"] = float(np.sqrt(2.0 / (gamma + 1.0)))
        out["lr_dot"] = float(1.0 / gamma)
        # weighted non-backtracking left/right dot at the same degree
        out["nb_lr_dot"] = float((1.0 - f4 / d) / np.sqrt(f4))
        out["mse_sim"] = float(sigma1**2 * (1.0 - 1.0 / gamma**2))
        out["mse_avg"] = float(sigma1**2 * (1.0 - (2.0 / (gamma + 1.0)) ** 2))
        return out
    # rectangular
    if zeta_l4sq is not None and xi_l4sq is not None:
        if n is None:
            raise ContractViolationError("measured norms need n")
        a = float(zeta_l4sq)
        b = float(xi_l4sq)
        t_num = 2.0 * n * a * b
    else:
        kl = kurtosis_left if kurtosis_left is not None else kurtosis
        kr = kurtosis_right if kurtosis_right is not None else kurtosis
        if kl is None or kr is None:
            raise ContractViolationError("need kurtosis for both sides")
        # |zeta|_4^2 = sqrt(k_l / m), |xi|_4^2 = sqrt(k_r / n), m = alpha n
        a = np.sqrt(kl / alpha)  # n |zeta|_4^2 / sqrt(n), relative scale only
        b = np.sqrt(kr)
        t_num = 2.0 * np.sqrt(kl * kr / alpha)
    d_crit = float(t_num)
    out["threshold_d_crit"] = d_crit
    out["theta2"] = float(np.sqrt(t_num / d))
    below = d <= d_crit
    out["below_threshold"] = bool(below)
    if below:
        out.update(
            gamma=None, gamma_tri=None, gamma_nab=None,
            overlap_sim=0.0, overlap_avg=0.0,
            overlap_sim_right=0.0, overlap_avg_right=0.0,
            lr_dot=0.0, lr_dot_right=0.0, nb_lr_dot=None,
            mse_sim=sigma1**2, mse_avg=sigma1**2,
        )
        return out
    t = t_num / d
    beta = a / b  # |zeta|_4^2 / |xi|_4^2
    gamma_tri = (1.0 + beta * t) / (1.0 - t * t)
    gamma_nab = (1.0 + t / beta) / (1.0 - t * t)
    out["gamma"] = float(0.5 * (gamma_tri + gamma_nab))
    out["gamma_tri"] = float(gamma_tri)
    out["gamma_nab"] = float(gamma_nab)
    out["overlap_sim"] = float(1.0 / np.sqrt(gamma_tri))
    out["overlap_sim_right"] = float(1.0 / np.sqrt(gamma_nab))
    out["overlap_avg"] = float(np.sqrt(2.0 / (gamma_tri + 1.0)))
    out["overlap_avg_right"] = float(np.sqrt(2.0 / (gamma_nab + 1.0)))
    out["lr_dot"] = float(1.0 / gamma_tri)
    out["lr_dot_right"] = float(1.0 / gamma_nab)
    out["nb_lr_dot"] = None
    out["mse_sim"] = float(sigma1**2 * (1.0 - 1.0 / (gamma_tri * gamma_nab)))
    out["mse_avg"] = float(
        sigma1**2 * (1.0 - 4.0 / ((gamma_tri + 1.0) * (gamma_nab + 1.0)))
    )
    return out


def save_truth_bundle(gt: GroundTruth, path):
    """Factor bundle: zip holding a JSON header plus binary .npy payloads."""
    header = {
        "m": gt.m,
        "n": gt.n,
        "rank": gt.rank,
        "singular_values": gt.singular_values.tolist(),
        "eigen_signs": gt.eigen_signs.tolist(),
        "symmetric": gt.symmetric,
        "sampler": gt.sampler,
        "seed": gt.seed,
    }
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("header.json", json.dumps(header, indent=2))
        for name, arr in (("left_vectors", gt.left_vectors),
                          ("right_vectors", gt.right_vectors)):
            buf = BytesIO()
            np.save(buf, arr)
            zf.writestr(name + ".npy", buf.getvalue())


def load_truth_bundle(path) -> GroundTruth:
    with zipfile.ZipFile(path) as zf:
        header = json.loads(zf.read("header.json"))
        left = np.load(BytesIO(zf.read("left_vectors.npy")))
        right = np.load(BytesIO(zf.read("right_vectors.npy")))
    return GroundTruth(
        m=header["m"],
        n=header["n"],
        singular_values=np.array(header["singular_values"]),
        left_vectors=left,
        right_vectors=right,
        symmetric=header["symmetric"],
        eigen_signs=np.array(header["eigen_signs"]),
        sampler=header["sampler"],
        seed=header["seed"],
    )
