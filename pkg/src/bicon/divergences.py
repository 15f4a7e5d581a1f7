"""Discrete f-divergences and their derivatives in the second argument.

Four kinds are supported: KL, total variation (TV), Jensen-Shannon (JSD)
and squared Hellinger. All values use natural logarithms and the
0*log(0) = 0 convention. The second argument (and the JSD mixture) is
floored at ``EPS`` before logs, roots and divisions, so values stay
finite as q -> 0 while KL keeps its blow-up behaviour in that limit.

The ``*_rows`` functions operate on row-aligned matrices without simplex
validation; they are the hot path for the trainers and for
finite-difference probes, which deliberately step off the simplex.
The scalar entry points validate their inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, DomainError

EPS = 1e-12
SIMPLEX_TOL = 1e-9


def _as_rows(p):
    p = np.asarray(p, dtype=float)
    return p.reshape(1, -1) if p.ndim == 1 else p


def _kl_rows(P, Q):
    Qf = np.maximum(Q, EPS)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = P * np.log(P / Qf)
    terms[P <= 0.0] = 0.0
    return terms.sum(axis=1)


def _tv_rows(P, Q):
    return 0.5 * np.abs(P - Q).sum(axis=1)


def _jsd_rows(P, Q):
    M = 0.5 * (P + Q)
    Mf = np.maximum(M, EPS)
    with np.errstate(divide="ignore", invalid="ignore"):
        tp = P * np.log(P / Mf)
        tq = Q * np.log(Q / Mf)
    tp[P <= 0.0] = 0.0
    tq[Q <= 0.0] = 0.0
    return 0.5 * (tp.sum(axis=1) + tq.sum(axis=1))


def _hellinger_rows(P, Q):
    d = np.sqrt(P) - np.sqrt(Q)
    return 0.5 * (d * d).sum(axis=1)


def _kl_grad_rows(P, Q):
    return -P / np.maximum(Q, EPS)


def _tv_grad_rows(P, Q):
    # sign(0) = 0 keeps p = q stationary
    return 0.5 * np.sign(Q - P)


def _jsd_grad_rows(P, Q):
    Qf = np.maximum(Q, EPS)
    return 0.5 * np.log(2.0 * Qf / (P + Qf))


def _hellinger_grad_rows(P, Q):
    return 0.5 * (1.0 - np.sqrt(P / np.maximum(Q, EPS)))


# kind tag -> (value, derivative in q), both row-batched
DIVERGENCES = {
    "KL": (_kl_rows, _kl_grad_rows),
    "TV": (_tv_rows, _tv_grad_rows),
    "JSD": (_jsd_rows, _jsd_grad_rows),
    "Hellinger": (_hellinger_rows, _hellinger_grad_rows),
}

KINDS = tuple(DIVERGENCES)


def _check_kind(kind):
    if kind not in DIVERGENCES:
        raise DomainError(f"unknown divergence {kind!r}; expected one of {KINDS}")


def validate_probability_vector(p, name="p"):
    """Check that p is a finite probability vector; return it as float64."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.shape[0] < 2:
        raise DimensionError(f"{name} must be a 1-D vector of length >= 2, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise DomainError(f"{name} contains non-finite entries")
    if np.any(p < 0.0):
        raise DomainError(f"{name} contains negative entries")
    total = float(p.sum())
    if abs(total - 1.0) > SIMPLEX_TOL:
        raise DomainError(f"{name} sums to {total!r}, expected 1 within {SIMPLEX_TOL}")
    return p


def divergence_rows(kind, P, Q):
    """Per-row divergence for row-aligned matrices (no simplex validation)."""
    _check_kind(kind)
    P = _as_rows(P)
    Q = _as_rows(Q)
    if P.shape != Q.shape:
        raise DimensionError(f"row shapes differ: {P.shape} vs {Q.shape}")
    return DIVERGENCES[kind][0](P, Q)


def divergence_grad_rows(kind, P, Q):
    """Per-row derivative in the second argument (no simplex validation)."""
    _check_kind(kind)
    P = _as_rows(P)
    Q = _as_rows(Q)
    if P.shape != Q.shape:
        raise DimensionError(f"row shapes differ: {P.shape} vs {Q.shape}")
    return DIVERGENCES[kind][1](P, Q)


def divergence(kind, p, q):
    """D(p || q) for one pair of probability vectors."""
    _check_kind(kind)
    p = validate_probability_vector(p, "p")
    q = validate_probability_vector(q, "q")
    if p.shape != q.shape:
        raise DimensionError(f"p and q lengths differ: {p.shape[0]} vs {q.shape[0]}")
    return float(DIVERGENCES[kind][0](p.reshape(1, -1), q.reshape(1, -1))[0])


def divergence_grad_q(kind, p, q):
    """Componentwise d D(p || q) / d q_k for one pair of probability vectors."""
    _check_kind(kind)
    p = validate_probability_vector(p, "p")
    q = validate_probability_vector(q, "q")
    if p.shape != q.shape:
        raise DimensionError(f"p and q lengths differ: {p.shape[0]} vs {q.shape[0]}")
    return DIVERGENCES[kind][1](p.reshape(1, -1), q.reshape(1, -1))[0]
