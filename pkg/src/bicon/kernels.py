"""Similarity kernels, softmax transition rows, and the supervisory
neighborhood constructions they are trained against.

A transition matrix here always means: square, zero diagonal, each row a
probability distribution over the other points. Learned rows come from a
row softmax over kernel scores (diagonal excluded); supervisory rows come
from the data (Gaussian conditionals, shared labels, or k-nearest
neighbors) or from cluster assignments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRowError, DimensionError, DomainError, NumericalError

KERNEL_FAMILIES = ("angular", "distance")

_UNIT_TOL = 1e-9


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus the scale C multiplying raw similarities."""

    family: str
    scale: float = 1.0

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise DomainError(f"unknown kernel family {self.family!r}; expected one of {KERNEL_FAMILIES}")
        if not (np.isfinite(self.scale) and self.scale > 0.0):
            raise DomainError(f"kernel scale must be finite and > 0, got {self.scale!r}")


def squared_distances(a, b=None, block=128):
    """Pairwise squared euclidean distances between rows of a and b.

    Accumulates per coordinate (difference, square, sum over the feature
    axis), so each entry matches a direct per-pair recomputation bit for
    bit. Blocked to bound the temporary to block*len(b)*d floats.
    """
    a = np.asarray(a, dtype=float)
    b = a if b is None else np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"expected row matrices with equal widths, got {a.shape} and {b.shape}")
    out = np.empty((a.shape[0], b.shape[0]))
    # overflow to inf is legal here; consumers validate finiteness
    with np.errstate(over="ignore"):
        for start in range(0, a.shape[0], block):
            diff = a[start:start + block, None, :] - b[None, :, :]
            out[start:start + block] = np.sum(diff * diff, axis=-1)
    return out


def normalize_rows(z):
    """Scale each row to unit euclidean norm."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {z.shape}")
    norms = np.sqrt(np.sum(z * z, axis=1, keepdims=True))
    if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
        raise DomainError("cannot normalize rows with zero or non-finite norm")
    return z / norms


def similarity_matrix(z, spec):
    """Scaled pairwise similarity scores.

    angular: C * (z_i . z_j), rows must already be unit norm.
    distance: C * (-||z_i - z_j||^2).

    Diagonal entries are computed but carry no meaning; every consumer
    excludes them.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[0] < 2:
        raise DimensionError(f"expected an N x d matrix with N >= 2, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise DomainError("embedding contains non-finite entries")
    if spec.family == "angular":
        norms = np.sqrt(np.sum(z * z, axis=1))
        if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
            raise DomainError("angular kernel requires unit-norm rows (within 1e-9)")
        return spec.scale * (z @ z.T)
    return -spec.scale * squared_distances(z)


def kernel_rows(scores):
    """Row softmax of a score matrix with the diagonal excluded.

    Each row is shifted by its off-diagonal maximum before exponentiation;
    entries far below the row maximum may underflow to exact zero.
    """
    s = np.asarray(scores, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionError(f"expected a square score matrix, got shape {s.shape}")
    n = s.shape[0]
    if n < 2:
        raise DimensionError("need at least 2 points for transition rows")
    off = ~np.eye(n, dtype=bool)
    if not np.all(np.isfinite(s[off])):
        raise DomainError("off-diagonal scores contain non-finite entries")
    shifted = np.where(off, s, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    w = np.exp(shifted)
    return w / w.sum(axis=1, keepdims=True)


def softmax_rows_grad(q, dL_dq):
    """Pull a gradient in the transition rows back to the scores."""
    inner = np.sum(dL_dq * q, axis=1, keepdims=True)
    return q * (dL_dq - inner)


def kernel_rows_grad(z, spec, dL_dq):
    """Gradient of a scalar loss with respect to the raw embedding rows.

    Chains loss -> transition rows -> scores -> embedding. For the
    angular family z is the raw (unnormalized) embedding; the unit-sphere
    normalization consumed by similarity_matrix is part of the chain, so
    the returned gradient includes the tangent-space projection.
    """
    z = np.asarray(z, dtype=float)
    g = np.asarray(dL_dq, dtype=float)
    if z.ndim != 2 or g.shape != (z.shape[0], z.shape[0]):
        raise DimensionError(f"shape mismatch: z {z.shape}, dL_dq {g.shape}")
    if np.any(np.diagonal(g) != 0.0):
        raise DomainError("dL_dq must be zero on the diagonal")
    if spec.family == "angular":
        norms = np.sqrt(np.sum(z * z, axis=1, keepdims=True))
        if np.any(norms == 0.0):
            raise DomainError("cannot normalize rows with zero norm")
        u = z / norms
        q = kernel_rows(similarity_matrix(u, spec))
        t = softmax_rows_grad(q, g)
        s = t + t.T
        du = spec.scale * (s @ u)
        # project onto the tangent space of the unit sphere, undo the scaling
        return (du - np.sum(du * u, axis=1, keepdims=True) * u) / norms
    q = kernel_rows(similarity_matrix(z, spec))
    t = softmax_rows_grad(q, g)
    s = t + t.T
    # d score_ij / d z_i = -2C (z_i - z_j)
    return -2.0 * spec.scale * (s.sum(axis=1, keepdims=True) * z - s @ z)


def learned_rows(z, spec):
    """Transition rows of an embedding: softmax kernel, diagonal excluded.

    Normalizes rows first for the angular family; this is the composition
    whose gradient kernel_rows_grad computes.
    """
    if spec.family == "angular":
        z = normalize_rows(z)
    return kernel_rows(similarity_matrix(z, spec))


def validate_distribution(mat, tol=1e-9):
    """Raise unless mat is square with zero diagonal and unit row sums."""
    m = np.asarray(mat, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
        raise DimensionError(f"expected a square transition matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError("transition matrix contains non-finite entries")
    if np.any(np.diagonal(m) != 0.0):
        raise DomainError("transition matrix diagonal must be exactly zero")
    if np.any(m < 0.0):
        raise DomainError("transition matrix contains negative entries")
    err = np.max(np.abs(m.sum(axis=1) - 1.0))
    if err > tol:
        raise DomainError(f"transition rows must sum to 1 within {tol}, worst error {err!r}")
    return m


def _row_stats(d2, beta, off):
    """Transition rows and exp(entropy) per row for bandwidths beta."""
    t = np.where(off, -beta[:, None] * d2, -np.inf)
    t = t - t.max(axis=1, keepdims=True)
    w = np.exp(t)
    P = w / w.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = P * np.log(P)
    plogp[P <= 0.0] = 0.0
    return P, np.exp(-plogp.sum(axis=1))


def supervisory_sne(x, perplexity, max_iter=64, tol=1e-4):
    """Gaussian conditional neighbor rows with per-point bandwidths.

    Row i is exp(-||x_i - x_j||^2 / (2 sigma_i^2)) normalized over j != i,
    with sigma_i found by bisection so that exp(row entropy) matches the
    requested perplexity within tol. Rows whose entropy does not depend
    on the bandwidth at all (mutually equidistant neighborhoods) are
    accepted as-is; any other row that fails to converge raises, carrying
    the row index.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 3:
        raise DimensionError(f"expected an N x d matrix with N >= 3, got shape {x.shape}")
    n = x.shape[0]
    if not (2.0 <= perplexity <= n - 1):
        raise DomainError(f"perplexity must lie in [2, N-1] = [2, {n - 1}], got {perplexity!r}")
    target = float(perplexity)
    d2 = squared_distances(x)
    off = ~np.eye(n, dtype=bool)

    # bisection runs on beta = 1 / (2 sigma^2); exp-entropy decreases in beta
    hi = np.ones(n)
    _, f_lo = _row_stats(d2, np.zeros(n), off)
    _, f_hi = _row_stats(d2, hi, off)
    for _ in range(max_iter):
        if not np.all(np.isfinite(f_hi)):
            raise NumericalError(
                "non-finite entropy during bandwidth search",
                row=int(np.argmin(np.isfinite(f_hi))),
            )
        need = f_hi > target
        if not need.any():
            break
        hi[need] *= 2.0
        _, f_hi = _row_stats(d2, hi, off)

    unreachable = f_hi > target
    if unreachable.any():
        flat = np.abs(f_hi - f_lo) <= tol
        bad = unreachable & ~flat
        if bad.any():
            raise NumericalError(
                f"bandwidth bisection did not converge after {max_iter} doublings",
                row=int(np.argmax(bad)),
            )
    active = ~unreachable
    lo = np.where(hi > 1.0, 0.5 * hi, 0.0)

    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        _, f_mid = _row_stats(d2, mid, off)
        go_hi = f_mid >= target
        lo = np.where(active & go_hi, mid, lo)
        hi = np.where(active & ~go_hi, mid, hi)
    beta = np.where(active, 0.5 * (lo + hi), hi)

    P, f = _row_stats(d2, beta, off)
    bad = active & (np.abs(f - target) > tol)
    if bad.any():
        raise NumericalError(
            f"bandwidth bisection did not reach perplexity {target} within {tol}",
            row=int(np.argmax(bad)),
        )
    return P


def supervisory_labels(labels):
    """Uniform neighbor rows over the other points sharing a label."""
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] < 2:
        raise DimensionError(f"expected a 1-D label vector of length >= 2, got shape {y.shape}")
    uniq, inv, counts = np.unique(y, return_inverse=True, return_counts=True)
    if np.any(counts < 2):
        lone = uniq[np.argmin(counts)]
        raise DomainError(f"label class {lone!r} has a single member; every class needs >= 2")
    same = inv[:, None] == inv[None, :]
    np.fill_diagonal(same, False)
    return same / (counts[inv] - 1)[:, None]


def supervisory_knn(x, k):
    """Uniform neighbor rows over each point's k nearest others.

    Distance ties are broken toward the smaller index.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DimensionError(f"expected an N x d matrix with N >= 2, got shape {x.shape}")
    n = x.shape[0]
    if not (1 <= k <= n - 1):
        raise DomainError(f"k must lie in [1, N-1] = [1, {n - 1}], got {k!r}")
    d2 = squared_distances(x)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    P = np.zeros((n, n))
    np.put_along_axis(P, order, 1.0 / k, axis=1)
    return P


def cluster_transition(assignments):
    """Transition rows induced by soft cluster assignments.

    q(j | i) = (phi_i . phi_j) / sum_{k != i} (phi_i . phi_k), diagonal
    zero. A row whose off-diagonal overlap is all zero cannot be
    normalized and raises, carrying the row index.
    """
    phi = np.asarray(assignments, dtype=float)
    if phi.ndim != 2 or phi.shape[0] < 2:
        raise DimensionError(f"expected an N x C assignment matrix with N >= 2, got shape {phi.shape}")
    if not np.all(np.isfinite(phi)) or np.any(phi < 0.0):
        raise DomainError("assignments must be finite and non-negative")
    err = np.max(np.abs(phi.sum(axis=1) - 1.0))
    if err > 1e-9:
        raise DomainError(f"assignment rows must sum to 1 within 1e-9, worst error {err!r}")
    G = phi @ phi.T
    np.fill_diagonal(G, 0.0)
    r = G.sum(axis=1)
    if np.any(r <= 0.0):
        row = int(np.argmax(r <= 0.0))
        raise DegenerateRowError(
            f"row {row} has zero overlap with every other point", row=row
        )
    return G / r[:, None]


def cluster_transition_grad(assignments, dL_dq):
    """Pull a gradient in cluster_transition's output back to assignments."""
    phi = np.asarray(assignments, dtype=float)
    g = np.asarray(dL_dq, dtype=float)
    if g.shape != (phi.shape[0], phi.shape[0]):
        raise DimensionError(f"shape mismatch: assignments {phi.shape}, dL_dq {g.shape}")
    G = phi @ phi.T
    np.fill_diagonal(G, 0.0)
    r = G.sum(axis=1, keepdims=True)
    q = G / r
    M = (g - np.sum(g * q, axis=1, keepdims=True)) / r
    np.fill_diagonal(M, 0.0)
    return (M + M.T) @ phi
