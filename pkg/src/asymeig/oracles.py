"""Independent verification machinery.

Marked Galton-Watson trees (Poisson(2d) offspring, fair edge orientations,
uniform marks) drive Monte-Carlo checks of the moment identities for the
path functionals; a dense-eigensolver completion pipeline provides the
brute-force baseline.  Trees are stored as flat per-generation arrays, and
the Monte-Carlo runner samples only out-oriented subtrees in vectorized
batches: directed root paths never enter an in-oriented child's subtree,
so the in-children contribute nothing to any path functional.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .completion import CompletedMatrix, complete
from .errors import ContractViolationError
from .model import GroundTruth, _SquareQ

_STREAM_TREE = 301
_STREAM_MC = 302

TREE_SIZE_GUARD = 10**7


@dataclass
class MarkedTree:
    """Per-generation flat arrays: parents index the previous generation."""

    root_mark: int
    depth: int
    marks: list  # marks[g]: int array, generation g >= 1
    parents: list  # parents[g]: index into generation g - 1
    outward: list  # outward[g]: True when the edge points parent -> child

    def generation_sizes(self):
        return [1] + [m.size for m in self.marks]


@dataclass
class TreeFunctionalSpec:
    """Inputs of one path functional: prefactor, summand vector, depth, degree."""

    phi: np.ndarray
    psi: np.ndarray
    t: int
    d: float


def sample_gw_tree(d, n, depth, root_mark, seed) -> MarkedTree:
    """Marked directed Galton-Watson tree truncated at `depth`."""
    if depth < 0:
        raise ContractViolationError("depth must be non-negative")
    if (2 * d) ** depth > TREE_SIZE_GUARD:
        raise ContractViolationError("expected tree size exceeds the resource guard")
    rng = np.random.default_rng([_STREAM_TREE, seed])
    marks, parents, outward = [], [], []
    gen_size = 1
    for _ in range(depth):
        counts = rng.poisson(2 * d, size=gen_size)
        total = int(counts.sum())
        parents.append(np.repeat(np.arange(gen_size), counts))
        outward.append(rng.random(total) < 0.5)
        marks.append(rng.integers(0, n, size=total))
        gen_size = total
        if total == 0:
            break
    return MarkedTree(
        root_mark=int(root_mark), depth=depth,
        marks=marks, parents=parents, outward=outward,
    )


def eval_tree_functional(tree: MarkedTree, gt: GroundTruth, spec: TreeFunctionalSpec):
    """Exact sum over directed root paths of length t.

    A path contributes phi(root mark) * prod P(step marks) * psi(end mark),
    all scaled by (n/d)^t; only out-oriented edges can be traversed.
    """
    t = spec.t
    if t > tree.depth:
        raise ContractViolationError("tree shallower than the requested depth")
    phi_root = spec.phi[tree.root_mark]
    if t == 0:
        return float(phi_root * spec.psi[tree.root_mark])
    # value[g][node] = sum over directed paths root -> node of the P-product;
    # zero marks nodes unreachable along out-oriented edges.
    prev_marks = np.array([tree.root_mark])
    prev_vals = np.ones(1)
    for g in range(t):
        if g >= len(tree.marks) or tree.marks[g].size == 0:
            return 0.0
        par = tree.parents[g]
        mk = tree.marks[g]
        step = gt.entry_values(prev_marks[par], mk)
        vals = np.where(tree.outward[g], prev_vals[par] * step, 0.0)
        prev_marks, prev_vals = mk, vals
    total = float(np.dot(prev_vals, spec.psi[prev_marks]))
    return (gt.n / spec.d) ** t * phi_root * total


@dataclass
class TreeMoments:
    """Monte-Carlo means with standard errors and their closed-form targets."""

    mean_f: float
    se_f: float
    pred_f: float
    mean_ff: float
    se_ff: float
    pred_ff: float
    mean_F2: float
    se_F2: float
    pred_F2: float
    num_samples: int

    def to_dict(self):
        return self.__dict__.copy()

    def within(self, n_se=3.0):
        checks = []
        for mean, se, pred in (
            (self.mean_f, self.se_f, self.pred_f),
            (self.mean_ff, self.se_ff, self.pred_ff),
            (self.mean_F2, self.se_F2, self.pred_F2),
        ):
            checks.append(abs(mean - pred) <= n_se * se + 1e-12)
        return checks


def _batch_path_sums(gt, d, x, vec_a, vec_b, depth, rng, batch):
    """Vectorized per-sample sums over directed root paths.

    Returns arrays (batch, depth + 1): entry [s, t] is
    sum over out-paths of length t of prod(P) * vec(end mark), for both
    summand vectors.  Only out-children are sampled (Poisson(d) per node).
    """
    sums_a = np.zeros((batch, depth + 1))
    sums_b = np.zeros((batch, depth + 1))
    sums_a[:, 0] = vec_a[x]
    sums_b[:, 0] = vec_b[x]
    root_ids = np.arange(batch)
    sample_of = root_ids
    marks = np.full(batch, x)
    vals = np.ones(batch)
    for t in range(1, depth + 1):
        counts = rng.poisson(d, size=marks.size)
        total = int(counts.sum())
        if total == 0:
            break
        parent = np.repeat(np.arange(marks.size), counts)
        child_marks = rng.integers(0, gt.n, size=total)
        step = gt.entry_values(marks[parent], child_marks)
        vals = vals[parent] * step
        sample_of = sample_of[parent]
        marks = child_marks
        sums_a[:, t] = np.bincount(sample_of, weights=vals * vec_a[marks], minlength=batch)
        sums_b[:, t] = np.bincount(sample_of, weights=vals * vec_b[marks], minlength=batch)
    return sums_a, sums_b


def mc_tree_moments(
    gt: GroundTruth, d, x, i, j, t, num_samples, seed, batch=20_000
) -> TreeMoments:
    """Monte-Carlo estimates of the three tree-moment identities.

    mean_f averages f_{phi_i, phi_j, t}; mean_ff averages the product
    f_{1, phi_i, t} f_{1, phi_j, t}; mean_F2 averages the squared
    martingale increment built from f_{1, phi_i, t} and f_{1, phi_i, t+1}.
    Closed forms use Q^s applied to the Hadamard factor products.
    """
    if not gt.symmetric:
        raise ContractViolationError("tree moments are defined for symmetric truth")
    mu = gt.eigenvalues
    phi = gt.right_vectors
    if max(i, j) >= gt.rank:
        raise ContractViolationError("factor index out of range")
    depth = t + 1  # F needs one extra level
    if (2 * d) ** depth > TREE_SIZE_GUARD:
        raise ContractViolationError("expected tree size exceeds the resource guard")
    rng = np.random.default_rng([_STREAM_MC, seed])
    scale = (gt.n / d) ** np.arange(depth + 1)
    f_vals = np.zeros(num_samples)
    ff_vals = np.zeros(num_samples)
    f2_vals = np.zeros(num_samples)
    done = 0
    while done < num_samples:
        b = min(batch, num_samples - done)
        sums_i, sums_j = _batch_path_sums(gt, d, x, phi[:, i], phi[:, j], depth, rng, b)
        g_i = sums_i * scale  # f_{1, phi_i, t} per depth column
        g_j = sums_j * scale
        f_vals[done : done + b] = phi[x, i] * g_j[:, t]
        ff_vals[done : done + b] = g_i[:, t] * g_j[:, t]
        big_f = g_i[:, t] - g_i[:, t + 1] / mu[i]
        f2_vals[done : done + b] = big_f**2
        done += b

    def stats(arr):
        mean = float(np.mean(arr))
        se = float(np.std(arr, ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
        return mean, se

    q = _SquareQ(gt)
    had_ij = phi[:, i] * phi[:, j]
    had_ii = phi[:, i] * phi[:, i]
    # product moment: mu_i^t mu_j^t sum_s Q^s had_ij(x) / (mu_i mu_j d)^s
    acc = 0.0
    u = had_ij.copy()
    for s in range(t + 1):
        acc += u[x] / (mu[i] * mu[j] * d) ** s
        if s < t:
            u = q.apply(u)
    pred_ff = mu[i] ** t * mu[j] ** t * acc
    # squared martingale increment: the (t+1)-th term of the same series,
    # Q^(t+1) had_ii(x) / (mu_i^2 d^(t+1)).
    u = had_ii.copy()
    for _ in range(t + 1):
        u = q.apply(u)
    pred_f2 = u[x] / (mu[i] ** 2 * d ** (t + 1))
    pred_f = phi[x, i] * phi[x, j] * mu[j] ** t
    mean_f, se_f = stats(f_vals)
    mean_ff, se_ff = stats(ff_vals)
    mean_f2, se_f2 = stats(f2_vals)
    return TreeMoments(
        mean_f=mean_f, se_f=se_f, pred_f=float(pred_f),
        mean_ff=mean_ff, se_ff=se_ff, pred_ff=float(pred_ff),
        mean_F2=mean_f2, se_F2=se_f2, pred_F2=float(pred_f2),
        num_samples=num_samples,
    )


def brute_force_complete(observed, d, r_hat, method="avg", seed=0) -> CompletedMatrix:
    """Dense-oracle completion: identical pipeline, dense eigensolver."""
    m, n = observed.shape
    if max(m, n) > 300:
        raise ContractViolationError("brute-force completion is capped at 300")
    return complete(observed, d, r_hat=r_hat, method=method, seed=seed,
                    dense_oracle=True)
