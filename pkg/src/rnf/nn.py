"""Minimal dense MLP: forward pass, exact reverse-mode gradients, Adam.

The topology is a fixed stack of fully connected layers with ReLU after
every hidden layer, inverted dropout after the first two hidden layers,
and a softmax output.  Layers ``[0, encoder_depth)`` form the
representation encoder g, layers ``[encoder_depth, L)`` the classification
head c; head-only training freezes everything below that boundary.

All arithmetic is float64.  Inputs may be a single vector ``(d,)`` or a
batch ``(n, d)``; traces always store batch-shaped arrays.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, NumericError, ShapeError, TraceError
from .rng import substream

# Dropout is wired after the first two hidden layers only.
DROPOUT_LAYERS = 2


@dataclass
class Model:
    """Parameter store for the MLP, split into encoder and head.

    ``weights[l]`` has shape ``(layer_dims[l+1], layer_dims[l])``; biases
    match the output width.  ``encoder_depth`` is the first head layer.
    """

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    encoder_depth: int
    dropout_rate: float = 0.2

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 3:
            raise ConfigError("need at least one hidden layer (>= 3 layer dims)")
        if any(d <= 0 for d in self.layer_dims):
            raise ConfigError(f"layer dims must be positive, got {self.layer_dims}")
        n_layers = len(self.layer_dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ShapeError("weights/biases do not chain with layer_dims")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_dims[l + 1], self.layer_dims[l])
            if w.shape != expect or b.shape != (expect[0],):
                raise ShapeError(f"layer {l}: weight shape {w.shape} != {expect}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericError(f"layer {l}: non-finite parameters")
        if not 0 < self.encoder_depth < n_layers:
            raise ConfigError(
                f"encoder_depth must be in (0, {n_layers}), got {self.encoder_depth}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def encoder_dim(self) -> int:
        return self.layer_dims[self.encoder_depth]


def init_model(layer_dims, encoder_depth, dropout_rate=0.2, seed=0) -> Model:
    """Fresh model with Glorot-uniform weights and zero biases.

    Per layer the weights are uniform in +-sqrt(6 / (fan_in + fan_out)),
    drawn from the run seed's "init" stream.
    """
    rng = substream(seed, "init")
    dims = tuple(int(d) for d in layer_dims)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Model(dims, weights, biases, encoder_depth, dropout_rate)


def copy_model(model: Model) -> Model:
    return Model(
        model.layer_dims,
        [w.copy() for w in model.weights],
        [b.copy() for b in model.biases],
        model.encoder_depth,
        model.dropout_rate,
    )


@dataclass
class ForwardTrace:
    """Cached intermediates of one forward pass over layers [start, end).

    ``pre[i]``/``post[i]`` are the pre- and post-activation of layer
    ``start + i``; ``masks[i]`` is the boolean dropout keep-mask (train
    mode only, None otherwise).  ``logits``/``probabilities`` are set when
    the span reaches the output layer.
    """

    start: int
    end: int
    mode: str
    x: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]
    masks: list[np.ndarray | None]
    squeeze: bool
    logits: np.ndarray | None = None
    probabilities: np.ndarray | None = None

    @property
    def output(self) -> np.ndarray:
        out = self.post[-1]
        return out[0] if self.squeeze else out


def stable_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def _as_batch(x, width, what="input"):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
        squeeze = True
    elif a.ndim == 2:
        squeeze = False
    else:
        raise ShapeError(f"{what} must be 1-D or 2-D, got ndim={a.ndim}")
    if a.shape[1] != width:
        raise ShapeError(f"{what} width {a.shape[1]} != expected {width}")
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{what} contains non-finite values")
    return a, squeeze


def _resolve_rng(rng):
    if rng is None or isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(int(rng))


def _run_span(model, a, start, end, mode, rng=None, masks=None):
    """Run layers [start, end) on batch ``a``; returns per-layer caches."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    rng = _resolve_rng(rng)
    rate = model.dropout_rate
    last = model.num_layers - 1
    x0 = a
    pre_list, post_list, mask_list = [], [], []
    for i, l in enumerate(range(start, end)):
        pre = a @ model.weights[l].T + model.biases[l]
        if l < last:
            h = np.maximum(pre, 0.0)
            mask = None
            if l < DROPOUT_LAYERS and rate > 0.0 and mode == "train":
                if masks is not None:
                    mask = masks[i]
                else:
                    if rng is None:
                        raise ConfigError("training-mode forward needs an rng or seed")
                    mask = rng.random(pre.shape) >= rate
                h = h * mask / (1.0 - rate)
            a = h
            mask_list.append(mask)
        else:
            a = pre
            mask_list.append(None)
        pre_list.append(pre)
        post_list.append(a)
    return x0, pre_list, post_list, mask_list


def draw_dropout_masks(model, n_rows, start, end, rng, mode="train"):
    """Pre-draw the keep-masks a span forward would draw, in the same order.

    Lets several forward passes share one dropout realization.
    """
    rng = _resolve_rng(rng)
    rate = model.dropout_rate
    last = model.num_layers - 1
    out = []
    for l in range(start, end):
        if l < last and l < DROPOUT_LAYERS and rate > 0.0 and mode == "train":
            if rng is None:
                raise ConfigError("training-mode dropout masks need an rng or seed")
            out.append(rng.random((n_rows, model.layer_dims[l + 1])) >= rate)
        else:
            out.append(None)
    return out


def forward(model: Model, x, mode="eval", rng=None) -> ForwardTrace:
    """Full forward pass; returns logits, softmax probabilities and all
    intermediates needed for backprop.  Eval mode is deterministic."""
    a, squeeze = _as_batch(x, model.layer_dims[0])
    x0, pre, post, masks = _run_span(model, a, 0, model.num_layers, mode, rng)
    logits = pre[-1][0] if squeeze else pre[-1]
    return ForwardTrace(
        0, model.num_layers, mode, x0, pre, post, masks, squeeze,
        logits=logits, probabilities=stable_softmax(logits),
    )


def encode_trace(model: Model, x, mode="eval", rng=None) -> ForwardTrace:
    """Trace of the encoder span [0, encoder_depth)."""
    a, squeeze = _as_batch(x, model.layer_dims[0])
    x0, pre, post, masks = _run_span(model, a, 0, model.encoder_depth, mode, rng)
    return ForwardTrace(0, model.encoder_depth, mode, x0, pre, post, masks, squeeze)


def encode(model: Model, x) -> np.ndarray:
    """Representation z = g(x): encoder layers only, eval mode."""
    return encode_trace(model, x, mode="eval").output


def head_trace(model: Model, z, mode="eval", rng=None, masks=None) -> ForwardTrace:
    """Trace of the head span [encoder_depth, L) on representation z."""
    a, squeeze = _as_batch(z, model.encoder_dim, what="representation")
    x0, pre, post, msk = _run_span(
        model, a, model.encoder_depth, model.num_layers, mode, rng, masks=masks
    )
    logits = pre[-1][0] if squeeze else pre[-1]
    return ForwardTrace(
        model.encoder_depth, model.num_layers, mode, x0, pre, post, msk, squeeze,
        logits=logits, probabilities=stable_softmax(logits),
    )


def head_forward(model: Model, z) -> np.ndarray:
    """Head softmax output c(z), eval mode.

    Composes with encode: ``head_forward(m, encode(m, x))`` equals
    ``forward(m, x).probabilities`` exactly in eval mode.
    """
    return head_trace(model, z, mode="eval").probabilities


@dataclass
class Gradients:
    """Per-layer (dW, db) aligned with ``model.weights``; None = untouched.

    ``dinput`` is the gradient with respect to the trace's input, filled
    only when requested.
    """

    layers: list[tuple[np.ndarray, np.ndarray] | None]
    dinput: np.ndarray | None = None


def zero_gradients(model: Model) -> Gradients:
    return Gradients(
        [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(model.weights, model.biases)]
    )


def add_gradients(model: Model, *grads: Gradients) -> Gradients:
    layers: list[tuple[np.ndarray, np.ndarray] | None] = [None] * model.num_layers
    for g in grads:
        for l, entry in enumerate(g.layers):
            if entry is None:
                continue
            if layers[l] is None:
                layers[l] = (entry[0].copy(), entry[1].copy())
            else:
                layers[l][0][...] += entry[0]
                layers[l][1][...] += entry[1]
    return Gradients(layers)


def scale_gradients(grads: Gradients, factor: float) -> Gradients:
    return Gradients(
        [None if e is None else (e[0] * factor, e[1] * factor) for e in grads.layers],
        None if grads.dinput is None else grads.dinput * factor,
    )


def _check_trace(model, trace):
    if trace.end - trace.start != len(trace.pre):
        raise TraceError("trace layer count inconsistent")
    if trace.x.shape[1] != model.layer_dims[trace.start]:
        raise TraceError("trace input width does not match model")
    for i, l in enumerate(range(trace.start, trace.end)):
        if trace.pre[i].shape[1] != model.layer_dims[l + 1]:
            raise TraceError(f"trace layer {l} width does not match model")


def backward(model: Model, trace: ForwardTrace, d_out, scope="all", *,
             wrt="pre", need_input_grad=False) -> Gradients:
    """Exact reverse-mode gradients for the parameters in scope.

    ``d_out`` is the upstream gradient at the span's final layer: with
    ``wrt="pre"`` it is dLoss/dLogits (pre-activation), with ``wrt="post"``
    dLoss/d(post-activation).  ``scope="head_only"`` stops at
    ``model.encoder_depth`` and leaves encoder entries as None.
    """
    if scope not in ("all", "head_only"):
        raise ConfigError(f"scope must be 'all' or 'head_only', got {scope!r}")
    _check_trace(model, trace)
    d = np.asarray(d_out, dtype=np.float64)
    rows = trace.x.shape[0]
    width = model.layer_dims[trace.end]
    if d.ndim == 1:
        if rows != 1:
            raise ShapeError("1-D upstream gradient for a multi-row trace")
        d = d.reshape(1, -1)
    if d.shape != (rows, width):
        raise TraceError(f"upstream gradient shape {d.shape} != {(rows, width)}")

    stop = trace.start
    if scope == "head_only":
        stop = max(stop, model.encoder_depth)

    rate = model.dropout_rate
    last = model.num_layers - 1
    layers: list[tuple[np.ndarray, np.ndarray] | None] = [None] * model.num_layers
    dinput = None
    dpost = None  # gradient wrt post-activation of the current layer

    for l in range(trace.end - 1, stop - 1, -1):
        i = l - trace.start
        if l == trace.end - 1:
            if wrt == "post" and l < last:
                dpost = d
                dpre = None
            else:
                dpre = d
        if dpre is None:
            h = dpost
            if trace.masks[i] is not None:
                h = h * trace.masks[i] / (1.0 - rate)
            dpre = h * (trace.pre[i] > 0.0)
        a_in = trace.post[i - 1] if i > 0 else trace.x
        layers[l] = (dpre.T @ a_in, dpre.sum(axis=0))
        if l > stop or need_input_grad:
            dpost = dpre @ model.weights[l]
        dpre = None

    if need_input_grad:
        if stop != trace.start:
            raise ConfigError("input gradient undefined when the span is cut by scope")
        dinput = dpost
    return Gradients(layers, dinput)


@dataclass
class AdamState:
    """First/second-moment accumulators, allocated lazily per layer."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def _ensure(self, model):
        while len(self.m) < model.num_layers:
            self.m.append(None)
            self.v.append(None)


def init_adam(lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    return AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(model: Model, grads: Gradients, state: AdamState):
    """One bias-corrected Adam update, in place; skips None gradient entries.

    Returns the same (model, state) pair for chaining.
    """
    state._ensure(model)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for l, entry in enumerate(grads.layers):
        if entry is None:
            continue
        dw, db = entry
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
            raise DivergenceError(f"non-finite gradient in layer {l}")
        if state.m[l] is None:
            state.m[l] = (np.zeros_like(model.weights[l]), np.zeros_like(model.biases[l]))
            state.v[l] = (np.zeros_like(model.weights[l]), np.zeros_like(model.biases[l]))
        for p, g, m, v in ((model.weights[l], dw, state.m[l][0], state.v[l][0]),
                           (model.biases[l], db, state.m[l][1], state.v[l][1])):
            m[...] = b1 * m + (1.0 - b1) * g
            v[...] = b2 * v + (1.0 - b2) * g * g
            p[...] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return model, state
