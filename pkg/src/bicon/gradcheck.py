"""Central finite-difference verification of every analytic gradient.

Each check builds small random instances, evaluates the analytic
gradient, and compares against central differences of the corresponding
value function. Instances for TV are resampled until every |p - q| entry
clears a margin, since its derivative jumps where p = q.

The same checks back both the test suite and the CLI gradcheck command.
"""

from __future__ import annotations

import numpy as np

from . import divergences
from .errors import NumericalError
from .kernels import (
    KERNEL_FAMILIES,
    KernelSpec,
    cluster_transition,
    cluster_transition_grad,
    kernel_rows_grad,
    learned_rows,
    supervisory_knn,
    supervisory_labels,
    supervisory_sne,
)
from .model import ClusterHead, Encoder, backward, forward, head_backward, head_forward
from .trainers import (
    cluster_value_and_grads,
    encoder_value_and_grads,
    sne_free_value_and_grads,
)

TOL = 1e-5
STEP = 1e-6

SCOPES = ("divergences", "kernels", "model", "end2end")

_TV_MARGIN = 1e-4


def fd_grad(f, x, h=STEP):
    """Central finite differences of scalar f() with respect to array x.

    f must read x live; entries are perturbed in place and restored.
    """
    x = np.asarray(x)
    g = np.zeros(x.shape)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_error(analytic, numeric):
    """Max absolute difference, relative to the numeric gradient's scale.

    When both gradients vanish below 1e-8 the pair counts as exact: a
    translation-invariant loss has identically zero bias gradients, and
    central differences there return pure roundoff noise that no relative
    normalization survives.
    """
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    if np.max(np.abs(analytic)) <= 1e-8 and np.max(np.abs(numeric)) <= 1e-8:
        return 0.0
    scale = max(float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def _simplex_pair(rng, n, margin=_TV_MARGIN, min_entry=1e-3):
    while True:
        p = rng.dirichlet(np.ones(n))
        q = rng.dirichlet(np.ones(n))
        if p.min() < min_entry or q.min() < min_entry:
            continue
        if np.min(np.abs(p - q)) < margin:
            continue
        return p, q


def check_divergences(seed=0, trials=20, n=8):
    """Worst relative error of each divergence derivative against
    central differences at interior simplex points."""
    results = []
    for kind in divergences.KINDS:
        rng = np.random.default_rng([seed, 23])
        worst = 0.0
        for _ in range(trials):
            p, q = _simplex_pair(rng, n)
            analytic = divergences.divergence_grad_rows(kind, p, q)[0]

            def value():
                return float(divergences.divergence_rows(kind, p, q)[0])

            worst = max(worst, rel_error(analytic, fd_grad(value, q)))
        results.append((kind, worst))
    return results


def _softmax(rows):
    shifted = rows - rows.max(axis=1, keepdims=True)
    w = np.exp(shifted)
    return w / w.sum(axis=1, keepdims=True)


def check_kernels(seed=0, trials=10):
    """Worst relative error of the kernel-row and cluster-transition
    gradient chains, probed with a random linear functional of the rows."""
    results = []
    for family in KERNEL_FAMILIES:
        rng = np.random.default_rng([seed, 29])
        spec = KernelSpec(family, 1.25)
        worst = 0.0
        for _ in range(trials):
            z = rng.standard_normal((5, 3))
            A = rng.standard_normal((5, 5))
            np.fill_diagonal(A, 0.0)
            analytic = kernel_rows_grad(z, spec, A)

            def value():
                return float(np.sum(A * learned_rows(z, spec)))

            worst = max(worst, rel_error(analytic, fd_grad(value, z)))
        results.append((family, worst))
    rng = np.random.default_rng([seed, 31])
    worst = 0.0
    for _ in range(trials):
        logits = rng.standard_normal((6, 4))
        A = rng.standard_normal((6, 6))
        np.fill_diagonal(A, 0.0)
        phi = _softmax(logits)
        dphi = cluster_transition_grad(phi, A)
        analytic = phi * (dphi - np.sum(dphi * phi, axis=1, keepdims=True))

        def value():
            return float(np.sum(A * cluster_transition(_softmax(logits))))

        worst = max(worst, rel_error(analytic, fd_grad(value, logits)))
    results.append(("cluster-transition", worst))
    return results


def check_model(seed=0, trials=10):
    """Worst relative error of each container's backward pass, including
    the gradient it reports for its input."""
    results = []
    rng = np.random.default_rng([seed, 37])
    for kind in ("linear", "mlp1"):
        worst = 0.0
        for _ in range(trials):
            enc = Encoder.init(kind, 3, 4, 2, rng)
            x = rng.standard_normal((6, 3))
            A = rng.standard_normal((6, 2))

            def value():
                return float(np.sum(A * forward(enc, x)))

            grads, dx = backward(enc, x, A)
            for name, tensor in enc.params().items():
                worst = max(worst, rel_error(grads[name], fd_grad(value, tensor)))
            worst = max(worst, rel_error(dx, fd_grad(value, x)))
        results.append((f"encoder-{kind}", worst))
    worst = 0.0
    for _ in range(trials):
        head = ClusterHead.init(3, 4, rng)
        x = rng.standard_normal((6, 3))
        A = rng.standard_normal((6, 4))

        def value():
            return float(np.sum(A * head_forward(head, x)))

        grads, dx = head_backward(head, x, A)
        for name, tensor in head.params().items():
            worst = max(worst, rel_error(grads[name], fd_grad(value, tensor)))
        worst = max(worst, rel_error(dx, fd_grad(value, x)))
    results.append(("cluster-head", worst))
    return results


def _tv_margin_ok(divergence, p, q):
    if divergence != "TV":
        return True
    off = ~np.eye(p.shape[0], dtype=bool)
    return float(np.min(np.abs(p - q)[off])) > _TV_MARGIN


def _check_tensors(value, params, analytic):
    worst = 0.0
    for name, tensor in params.items():
        worst = max(worst, rel_error(analytic[name], fd_grad(value, tensor)))
    return worst


def _e2e_sne_free(div, family, seed):
    spec = KernelSpec(family, 1.25)
    for attempt in range(50):
        rng = np.random.default_rng([seed, 41, attempt])
        x = rng.standard_normal((10, 3))
        p = supervisory_sne(x, 4.0)
        table = 0.8 * rng.standard_normal((10, 2))
        if not _tv_margin_ok(div, p, learned_rows(table, spec)):
            continue
        loss, grads = sne_free_value_and_grads(div, p, table, spec)

        def value():
            return sne_free_value_and_grads(div, p, table, spec)[0]

        return _check_tensors(value, {"embedding": table}, grads)
    raise NumericalError("could not build a margin-safe sne instance")


def _e2e_sne_parametric(div, family, seed):
    spec = KernelSpec(family, 1.25)
    for attempt in range(50):
        rng = np.random.default_rng([seed, 43, attempt])
        x = rng.standard_normal((10, 3))
        p = supervisory_sne(x, 4.0)
        enc = Encoder.init("mlp1", 3, 4, 2, rng)
        if not _tv_margin_ok(div, p, learned_rows(forward(enc, x), spec)):
            continue
        loss, grads = encoder_value_and_grads(div, p, enc, x, spec)

        def value():
            return encoder_value_and_grads(div, p, enc, x, spec)[0]

        return _check_tensors(value, enc.params(), grads)
    raise NumericalError("could not build a margin-safe sne instance")


def _e2e_supcon(div, family, seed):
    spec = KernelSpec(family, 1.25)
    labels = np.array([0, 0, 1, 1, 2, 2, 3, 3])
    p = supervisory_labels(labels)
    for attempt in range(50):
        rng = np.random.default_rng([seed, 47, attempt])
        x = rng.standard_normal((8, 3))
        enc = Encoder.init("mlp1", 3, 4, 3, rng)
        if not _tv_margin_ok(div, p, learned_rows(forward(enc, x), spec)):
            continue
        loss, grads = encoder_value_and_grads(div, p, enc, x, spec)

        def value():
            return encoder_value_and_grads(div, p, enc, x, spec)[0]

        return _check_tensors(value, enc.params(), grads)
    raise NumericalError("could not build a margin-safe supcon instance")


def _e2e_cluster(div, seed):
    for attempt in range(50):
        rng = np.random.default_rng([seed, 53, attempt])
        x = rng.standard_normal((9, 3))
        p = supervisory_knn(x, 3)
        head = ClusterHead.init(3, 4, rng)
        if not _tv_margin_ok(div, p, cluster_transition(head_forward(head, x))):
            continue
        loss, grads = cluster_value_and_grads(div, p, head, x)

        def value():
            return cluster_value_and_grads(div, p, head, x)[0]

        return _check_tensors(value, head.params(), grads)
    raise NumericalError("could not build a margin-safe cluster instance")


def check_end2end(seed=0):
    """Worst relative error of every task assembly's full gradient chain,
    across all divergences, kernel families and parameter tensors."""
    results = []
    for div in divergences.KINDS:
        for family in KERNEL_FAMILIES:
            results.append((f"sne-free/{div}/{family}", _e2e_sne_free(div, family, seed)))
            results.append((f"sne-parametric/{div}/{family}", _e2e_sne_parametric(div, family, seed)))
            results.append((f"supcon/{div}/{family}", _e2e_supcon(div, family, seed)))
        # the cluster assembly has no kernel in its chain
        results.append((f"cluster/{div}", _e2e_cluster(div, seed)))
    return results


def run_scope(scope, seed=0):
    """All (component, worst relative error) pairs for one CLI scope."""
    if scope == "divergences":
        return check_divergences(seed)
    if scope == "kernels":
        return check_kernels(seed)
    if scope == "model":
        return check_model(seed)
    if scope == "end2end":
        return check_end2end(seed)
    raise ValueError(f"unknown gradcheck scope {scope!r}; expected one of {SCOPES}")
