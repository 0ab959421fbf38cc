"""Representation probing and the numerical loss-gap bound verifier.

Covers: sigmoid-kernel PCA projection to 2-D, linear probes for the
sensitive attribute and for mimicking the head's decision boundary, the
cosine-similarity diagnostic between probe weight rows, and an empirical
check of the between-group loss-gap inequality

    gap <= eps_p * (lambda_z * eps_c + eps_L)

with all constants measured on a supplied pair set.  The check is a
falsification harness over finite samples, not a proof: expectations are
replaced by empirical means and a small slack absorbs rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateProjectionError, DivergenceError, ShapeError


def kpca_project(Z, dims: int = 2, gain: float | None = None, offset: float = 1.0):
    """Project representations to ``dims`` coordinates with sigmoid-kernel PCA.

    K_ij = tanh(gain * <z_i, z_j> + offset) with gain defaulting to
    1/dim(z); the kernel matrix is double-centered and the top eigenpairs
    of the symmetric eigensolve give the coordinates, each eigenvector
    scaled by 1/sqrt(eigenvalue).  Sign convention: the first nonzero
    entry of each eigenvector is positive.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise ShapeError("Z must be (n, dim)")
    n, d = Z.shape
    if n < dims + 1:
        raise ShapeError(f"need at least {dims + 1} points, got {n}")
    g = (1.0 / d) if gain is None else float(gain)
    K = np.tanh(g * (Z @ Z.T) + offset)
    ones = np.full((n, n), 1.0 / n)
    Kc = K - ones @ K - K @ ones + ones @ K @ ones
    Kc = 0.5 * (Kc + Kc.T)
    evals, evecs = np.linalg.eigh(Kc)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if np.count_nonzero(evals > 1e-10) < dims:
        raise DegenerateProjectionError(
            f"only {int(np.count_nonzero(evals > 1e-10))} positive eigenvalues, need {dims}"
        )
    coords = np.empty((n, dims))
    for k in range(dims):
        v = evecs[:, k]
        nz = np.nonzero(np.abs(v) > 1e-12)[0]
        if nz.size and v[nz[0]] < 0.0:
            v = -v
        coords[:, k] = v / math.sqrt(evals[k])
    return coords, evals[:dims], Kc


@dataclass
class LinearProbe:
    """Affine classifier W z + b with one weight row per class."""

    W: np.ndarray
    b: np.ndarray

    def logits(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) @ self.W.T + self.b

    def predict(self, Z) -> np.ndarray:
        return np.argmax(self.logits(Z), axis=-1)


def fit_linear_probe(Z, targets, epochs: int = 200, lr: float = 1e-2,
                     seed: int = 0) -> LinearProbe:
    """Train a linear softmax classifier on representations with full-batch
    Adam; deterministic for a given seed.

    Weights start at zero, which keeps the two rows of a binary probe
    exactly antisymmetric throughout training (the softmax gradient rows
    sum to zero), so a single row is a clean discriminator direction for
    the cosine diagnostic rather than carrying an arbitrary shared shift.
    """
    Z = np.asarray(Z, dtype=np.float64)
    t = np.asarray(targets, dtype=np.int64)
    if Z.ndim != 2 or t.shape != (Z.shape[0],):
        raise ShapeError("targets must align with representation rows")
    n, d = Z.shape
    n_classes = int(t.max()) + 1 if t.size else 2
    n_classes = max(n_classes, 2)
    W = np.zeros((n_classes, d))
    b = np.zeros(n_classes)
    mW = np.zeros_like(W)
    vW = np.zeros_like(W)
    mb = np.zeros_like(b)
    vb = np.zeros_like(b)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), t] = 1.0
    for step in range(1, epochs + 1):
        logits = Z @ W.T + b
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        p = e / e.sum(axis=1, keepdims=True)
        dlogits = (p - onehot) / n
        gW = dlogits.T @ Z
        gb = dlogits.sum(axis=0)
        if not (np.all(np.isfinite(gW)) and np.all(np.isfinite(gb))):
            raise DivergenceError(f"probe gradient non-finite at step {step}")
        c1 = 1.0 - beta1 ** step
        c2 = 1.0 - beta2 ** step
        for param, grad, m, v in ((W, gW, mW, vW), (b, gb, mb, vb)):
            m[...] = beta1 * m + (1.0 - beta1) * grad
            v[...] = beta2 * v + (1.0 - beta2) * grad * grad
            param[...] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return LinearProbe(W, b)


def probe_agreement(probe: LinearProbe, Z, targets) -> float:
    """Fraction of probe predictions equal to the targets."""
    t = np.asarray(targets, dtype=np.int64)
    return int(np.count_nonzero(probe.predict(Z) == t)) / t.shape[0]


def head_attention_similarity(sens: LinearProbe, mimic: LinearProbe,
                              group_index: int, class_index: int) -> float:
    """Cosine of the selected sensitive-probe row and mimic-probe row.

    High similarity means the head's decision direction aligns with the
    group direction in representation space; NaN when a row is zero.
    """
    w1 = np.asarray(sens.W[group_index], dtype=np.float64)
    w2 = np.asarray(mimic.W[class_index], dtype=np.float64)
    if w1.shape != w2.shape:
        raise ShapeError("probe rows must share the representation dim")
    n1 = float(np.linalg.norm(w1))
    n2 = float(np.linalg.norm(w2))
    if n1 == 0.0 or n2 == 0.0:
        return math.nan
    return float(np.dot(w1, w2) / (n1 * n2))


def squared_class_loss(out, j: int) -> float:
    """Bounded base loss: squared distance of the output to one-hot class j."""
    o = np.asarray(out, dtype=np.float64)
    d = o.copy()
    d[j] -= 1.0
    return float(np.dot(d, d))


@dataclass
class TheoremInstance:
    """Measured constants and verdict of one loss-gap bound check.

    ``passed`` is None when the pair set violates the hypotheses (some
    pair has identical soft labels but different representations), in
    which case no pass/fail verdict is issued.
    """

    epsilon_p: float
    epsilon_c: float
    epsilon_L: float
    lambda_z: float
    n_pairs: int
    loss_gap: float
    bound: float
    passed: bool | None
    violations: int = 0


def verify_theorem_bound(head_fn, z1, z2, p1, p2, base_loss=squared_class_loss,
                         fd_step: float = 1e-5, slack: float = 1e-9) -> TheoremInstance:
    """Check the between-group loss-gap bound with measured constants.

    ``head_fn`` maps a representation vector to an output vector; the loss
    on a pair member is L(out, p) = (1-p) l(out, 0) + p l(out, 1) with
    ``base_loss`` as l.  Constants: eps_p is the max |p1-p2|, lambda_z the
    max ||z1-z2|| / |p1-p2|, eps_L the max base loss over members and both
    classes, eps_c the max gradient norm of L at pair midpoints via
    central finite differences.  The verdict compares the empirical
    between-group mean-loss gap against eps_p (lambda_z eps_c + eps_L).
    """
    Z1 = np.atleast_2d(np.asarray(z1, dtype=np.float64))
    Z2 = np.atleast_2d(np.asarray(z2, dtype=np.float64))
    P1 = np.asarray(p1, dtype=np.float64).ravel()
    P2 = np.asarray(p2, dtype=np.float64).ravel()
    m = Z1.shape[0]
    if Z2.shape != Z1.shape or P1.shape != (m,) or P2.shape != (m,):
        raise ShapeError("pair arrays must align: (m, d) twice and (m,) twice")
    if m == 0:
        raise ShapeError("need at least one pair")
    if np.any(P1 < 0) or np.any(P1 > 1) or np.any(P2 < 0) or np.any(P2 > 1):
        raise ConfigError("soft labels must lie in [0, 1]")

    def pair_loss(out, p):
        return (1.0 - p) * base_loss(out, 0) + p * base_loss(out, 1)

    dp = np.abs(P1 - P2)
    dz = np.linalg.norm(Z1 - Z2, axis=1)
    violations = int(np.count_nonzero((dp == 0.0) & (dz > 0.0)))
    eps_p = float(np.max(dp))
    nz = dp > 0.0
    lambda_z = float(np.max(dz[nz] / dp[nz])) if np.any(nz) else 0.0

    eps_L = 0.0
    for Zs in (Z1, Z2):
        for z in Zs:
            out = head_fn(z)
            eps_L = max(eps_L, base_loss(out, 0), base_loss(out, 1))

    mid = 0.5 * (Z1 + Z2)
    pbar = 0.5 * (P1 + P2)
    eps_c = 0.0
    d = Z1.shape[1]
    for i in range(m):
        grad = np.empty(d)
        for k in range(d):
            zp = mid[i].copy()
            zm = mid[i].copy()
            zp[k] += fd_step
            zm[k] -= fd_step
            grad[k] = (pair_loss(head_fn(zp), pbar[i]) - pair_loss(head_fn(zm), pbar[i])) \
                / (2.0 * fd_step)
        eps_c = max(eps_c, float(np.linalg.norm(grad)))

    loss0 = math.fsum(pair_loss(head_fn(Z1[i]), P1[i]) for i in range(m)) / m
    loss1 = math.fsum(pair_loss(head_fn(Z2[i]), P2[i]) for i in range(m)) / m
    gap = abs(loss0 - loss1)
    bound = eps_p * (lambda_z * eps_c + eps_L)
    passed = None if violations else bool(gap <= bound + slack)
    return TheoremInstance(
        epsilon_p=eps_p, epsilon_c=eps_c, epsilon_L=eps_L, lambda_z=lambda_z,
        n_pairs=m, loss_gap=gap, bound=bound, passed=passed, violations=violations,
    )


def make_head_fn(model):
    """Adapter: the model's head as a plain z -> probabilities callable."""
    from . import nn

    def head(z):
        return nn.head_forward(model, np.asarray(z, dtype=np.float64))

    return head


def match_pairs_by_confidence(Z, p, groups, n_pairs=None):
    """Rank-match group-0 and group-1 members by soft label to build pairs
    with small |p1 - p2|; returns (Z1, Z2, P1, P2)."""
    Z = np.asarray(Z, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64).ravel()
    g = np.asarray(groups).ravel()
    i0 = np.nonzero(g == 0)[0]
    i1 = np.nonzero(g == 1)[0]
    if i0.size == 0 or i1.size == 0:
        raise ShapeError("both groups must be present")
    i0 = i0[np.argsort(p[i0], kind="stable")]
    i1 = i1[np.argsort(p[i1], kind="stable")]
    m = min(i0.size, i1.size)
    if n_pairs is not None:
        m = min(n_pairs, m)
    sel0 = np.round(np.linspace(0, i0.size - 1, m)).astype(np.int64)
    sel1 = np.round(np.linspace(0, i1.size - 1, m)).astype(np.int64)
    i0, i1 = i0[sel0], i1[sel1]
    return Z[i0], Z[i1], p[i0], p[i1]
