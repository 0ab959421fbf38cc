"""Scalar training objectives and their logit-space gradients.

Includes temperature-scaled softmax, cross entropy, generalized cross
entropy, the neutralized-representation MSE distillation loss, the
interpolation smoothing penalty, their weighted combination, and the
multi-group smoothing variant.

Vector arguments may be a single sample ``(C,)`` or a batch ``(n, C)``;
batch losses are means over rows and gradients carry the 1/n factor.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError, NumericError, ShapeError
from .nn import Gradients, Model

PROB_FLOOR = 1e-12


@dataclass
class SoftTarget:
    """Temperature-softened probability vector used as a supervision signal."""

    probabilities: np.ndarray
    temperature: float

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise ConfigError("soft-target entries must lie in [0, 1]")
        if abs(float(np.sum(p)) - 1.0) > 1e-9:
            raise ConfigError("soft-target probabilities must sum to 1")
        if self.temperature < 1.0:
            raise ConfigError(f"temperature must be >= 1, got {self.temperature}")
        self.probabilities = p


def soft_target(logits, temperature) -> SoftTarget:
    return SoftTarget(softmax_temperature(logits, temperature), float(temperature))


@dataclass
class RnfLossConfig:
    """Weights of the combined head-retraining loss.

    alpha scales the smoothing penalty; lambda_set lists the interpolation
    coefficients (each in [1/2, 1)); temperature softens both the teacher
    targets and the student head output.
    """

    alpha: float = 1.0
    lambda_set: tuple[float, ...] = (0.6, 0.7, 0.8, 0.9)
    temperature: float = 2.0

    def __post_init__(self):
        if self.alpha < 0.0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        self.lambda_set = tuple(float(v) for v in self.lambda_set)
        if not self.lambda_set:
            raise ConfigError("lambda_set must not be empty")
        if any(not 0.5 <= v < 1.0 for v in self.lambda_set):
            raise ConfigError(f"lambda values must lie in [0.5, 1), got {self.lambda_set}")
        if self.temperature < 1.0:
            raise ConfigError(f"temperature must be >= 1, got {self.temperature}")


@dataclass
class GceConfig:
    """Degree-of-amplification parameter q in (0, 1]."""

    q: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.q <= 1.0:
            raise ConfigError(f"q must lie in (0, 1], got {self.q}")


def softmax_temperature(logits, temperature) -> np.ndarray:
    """Softmax of logits / T, computed with max subtraction.

    The argmax is the argmax of the logits for every T >= 1; larger T only
    flattens the distribution.
    """
    if temperature < 1.0:
        raise ConfigError(f"temperature must be >= 1, got {temperature}")
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("logits contain non-finite values")
    return nn.stable_softmax(z / float(temperature))


def softmax_logit_grad(probs, dprobs, temperature=1.0) -> np.ndarray:
    """Pull dLoss/dProbs back through a temperature-T softmax to the logits."""
    p = np.asarray(probs, dtype=np.float64)
    g = np.asarray(dprobs, dtype=np.float64)
    inner = np.sum(g * p, axis=-1, keepdims=True)
    return p * (g - inner) / float(temperature)


def _prep_probs(probs, y):
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    yy = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if yy.shape[0] != p.shape[0]:
        raise ShapeError("labels do not align with probability rows")
    if np.any(yy < 0) or np.any(yy >= p.shape[1]):
        raise ShapeError("class index out of range")
    return p, yy


def _clamped_py(p, yy):
    py = p[np.arange(p.shape[0]), yy]
    if np.any(py < PROB_FLOOR):
        warnings.warn("probability clamped at 1e-12 before log/pow", RuntimeWarning)
        py = np.maximum(py, PROB_FLOOR)
    return py


def ce_loss(probs, y):
    """Cross entropy -log p_y and its logit gradient probs - onehot(y)."""
    single = np.asarray(probs).ndim == 1
    p, yy = _prep_probs(probs, y)
    py = _clamped_py(p, yy)
    loss = float(np.mean(-np.log(py)))
    grad = p.copy()
    grad[np.arange(p.shape[0]), yy] -= 1.0
    if single:
        return loss, grad[0]
    return loss, grad / p.shape[0]


def gce_loss(probs, y, cfg: GceConfig):
    """Generalized cross entropy (1 - p_y^q) / q.

    The logit gradient is p_y^q times the cross-entropy logit gradient, so
    confidently fit samples are up-weighted; q -> 0 recovers -log p_y.
    """
    if not isinstance(cfg, GceConfig):
        cfg = GceConfig(q=float(cfg))
    single = np.asarray(probs).ndim == 1
    p, yy = _prep_probs(probs, y)
    py = _clamped_py(p, yy)
    loss = float(np.mean(-np.expm1(cfg.q * np.log(py)) / cfg.q))
    grad = p.copy()
    grad[np.arange(p.shape[0]), yy] -= 1.0
    grad *= (py ** cfg.q)[:, None]
    if single:
        return loss, grad[0]
    return loss, grad / p.shape[0]


def rnf_mse_loss(probs, target):
    """Squared L2 distance between the head output and the soft target.

    Returns the scalar and dLoss/dOutput = 2 (probs - target).
    """
    a = np.asarray(probs, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"output shape {a.shape} != target shape {b.shape}")
    d = a - b
    if a.ndim == 1:
        return float(np.dot(d, d)), 2.0 * d
    return float(np.mean(np.sum(d * d, axis=1))), 2.0 * d / a.shape[0]


def _rows(z, model):
    a = np.asarray(z, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2 or a.shape[1] != model.encoder_dim:
        raise ShapeError(f"representation width {a.shape[-1]} != {model.encoder_dim}")
    return a


def _head_eval_points(model, points, temperature, mode, rng):
    """Head traces for several same-shaped batches sharing one dropout draw."""
    masks = None
    if mode == "train":
        masks = nn.draw_dropout_masks(
            model, points[0].shape[0], model.encoder_depth, model.num_layers, rng
        )
    traces = [nn.head_trace(model, p, mode=mode, masks=masks) for p in points]
    outs = [softmax_temperature(t.logits, temperature) for t in traces]
    return traces, outs


def smooth_loss(model: Model, z1, z2, lambda_set, temperature=1.0,
                mode="eval", rng=None):
    """Interpolation smoothing penalty.

    Sum over lambda of the L1 distance between the head output at
    lambda*z1 + (1-lambda)*z2 and the head output at the midpoint, summed
    over classes, averaged over rows.  Gradients flow to head parameters
    through every interpolant and the midpoint.
    """
    lams = tuple(float(v) for v in lambda_set)
    if not lams:
        raise ConfigError("lambda_set must not be empty")
    if any(not 0.5 <= v < 1.0 for v in lams):
        raise ConfigError(f"lambda values must lie in [0.5, 1), got {lams}")
    a, b = _rows(z1, model), _rows(z2, model)
    if a.shape != b.shape:
        raise ShapeError("z1 and z2 must have the same shape")
    n = a.shape[0]
    mid = 0.5 * (a + b)
    points = [mid] + [lam * a + (1.0 - lam) * b for lam in lams]
    traces, outs = _head_eval_points(model, points, temperature, mode, rng)

    value = 0.0
    d_mid = np.zeros_like(outs[0])
    grads = []
    for lam_out, trace in zip(outs[1:], traces[1:]):
        diff = lam_out - outs[0]
        value += float(np.sum(np.abs(diff))) / n
        s = np.sign(diff) / n
        grads.append(nn.backward(model, trace, softmax_logit_grad(lam_out, s, temperature)))
        d_mid -= s
    grads.append(
        nn.backward(model, traces[0], softmax_logit_grad(outs[0], d_mid, temperature))
    )
    return value, nn.add_gradients(model, *grads)


def combined_rnf_loss(model: Model, z1, z2, p1, p2, cfg: RnfLossConfig,
                      mode="eval", rng=None):
    """Distillation MSE on the neutralized midpoint plus alpha times the
    smoothing penalty; gradients restricted to head parameters.

    The head output is computed at cfg.temperature, matching the scale of
    the soft targets (p1 + p2) / 2.
    """
    a, b = _rows(z1, model), _rows(z2, model)
    if a.shape != b.shape:
        raise ShapeError("z1 and z2 must have the same shape")
    t1 = np.atleast_2d(np.asarray(p1, dtype=np.float64))
    t2 = np.atleast_2d(np.asarray(p2, dtype=np.float64))
    n_classes = model.layer_dims[-1]
    if t1.shape != (a.shape[0], n_classes) or t2.shape != t1.shape:
        raise ShapeError("soft targets do not align with representations")

    n = a.shape[0]
    mid = 0.5 * (a + b)
    points = [mid]
    if cfg.alpha > 0.0:
        points += [lam * a + (1.0 - lam) * b for lam in cfg.lambda_set]
    traces, outs = _head_eval_points(model, points, cfg.temperature, mode, rng)

    target = 0.5 * (t1 + t2)
    value, d_mid_out = rnf_mse_loss(outs[0], target)

    grads = []
    if cfg.alpha > 0.0:
        for lam_out, trace in zip(outs[1:], traces[1:]):
            diff = lam_out - outs[0]
            value += cfg.alpha * float(np.sum(np.abs(diff))) / n
            s = cfg.alpha * np.sign(diff) / n
            grads.append(
                nn.backward(model, trace, softmax_logit_grad(lam_out, s, cfg.temperature))
            )
            d_mid_out -= s
    grads.append(
        nn.backward(model, traces[0], softmax_logit_grad(outs[0], d_mid_out, cfg.temperature))
    )
    return value, nn.add_gradients(model, *grads)


def multi_group_smooth(model: Model, z_list, lambda_list, temperature=1.0) -> float:
    """L1 distance between the head output at the lambda-weighted normalized
    combination of K representations and at their uniform combination."""
    if len(z_list) < 2:
        raise ConfigError("need at least two groups")
    lams = np.asarray(lambda_list, dtype=np.float64)
    if lams.shape != (len(z_list),):
        raise ConfigError("one lambda per representation required")
    if np.any(lams < 0.0) or np.any(lams > 1.0):
        raise ConfigError(f"lambda values must lie in [0, 1], got {lambda_list}")
    total = float(np.sum(lams))
    if total == 0.0:
        raise ConfigError("lambda values must not all be zero")
    zs = [_rows(z, model) for z in z_list]
    if any(z.shape != zs[0].shape for z in zs):
        raise ShapeError("representations must share one shape")
    weighted = sum(l * z for l, z in zip(lams, zs)) / total
    uniform = sum(zs) / float(len(zs))
    _, outs = _head_eval_points(model, [weighted, uniform], temperature, "eval", None)
    return float(np.sum(np.abs(outs[0] - outs[1]))) / zs[0].shape[0]
