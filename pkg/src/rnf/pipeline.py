"""End-to-end training orchestration.

Stage one trains the teacher (plain cross entropy) and, with a GCE
config, the bias-amplified model.  Stage two freezes the teacher's
encoder and retrains the classification head on neutralized
representation pairs with soft targets.  Also here: proxy group
annotation from model confidence, the adversarial and
equalized-odds-regularization baselines, debiased-encoder combination,
evaluation into MetricsRecord, and seeded sweeps over a trade-off
hyper-parameter.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import losses, metrics, nn
from .data import Dataset, batches, sample_pair
from .errors import ConfigError, DivergenceError, InputError
from .losses import GceConfig, RnfLossConfig
from .rng import derive_seed, substream

log = logging.getLogger(__name__)


@dataclass
class StageOneConfig:
    """Hyper-parameters of a stage-one (teacher or bias-amplified) run."""

    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    patience: int = 5
    gce: GceConfig | None = None
    hidden_dims: tuple[int, ...] = (50, 50)
    encoder_depth: int = 1
    dropout: float = 0.2

    def __post_init__(self):
        if self.epochs <= 0 or self.lr <= 0 or self.batch_size <= 0:
            raise ConfigError("epochs, lr and batch_size must be positive")


@dataclass
class ProxyConfig:
    """Confidence-partition ratio for proxy group annotation."""

    gamma: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")


@dataclass
class RnfStageConfig:
    """Hyper-parameters of the head-retraining stage."""

    loss: RnfLossConfig = field(default_factory=RnfLossConfig)
    annotation: str = "proxy"  # ground_truth | proxy | random
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    patience: int = 5
    head_scope: str = "full_head"  # full_head | last_layer
    head_init: str = "teacher"     # teacher | fresh
    head_dropout: bool = True
    accuracy_budget: float = 0.05

    def __post_init__(self):
        if self.annotation not in ("ground_truth", "proxy", "random"):
            raise ConfigError(f"unknown annotation source {self.annotation!r}")
        if self.head_scope not in ("full_head", "last_layer"):
            raise ConfigError(f"unknown head_scope {self.head_scope!r}")
        if self.head_init not in ("teacher", "fresh"):
            raise ConfigError(f"unknown head_init {self.head_init!r}")
        if self.epochs <= 0 or self.lr <= 0 or self.batch_size <= 0:
            raise ConfigError("epochs, lr and batch_size must be positive")
        if self.accuracy_budget < 0.0:
            raise ConfigError("accuracy_budget must be >= 0")


@dataclass
class BaselineConfig:
    """Adversarial or equalized-odds-regularization baseline settings."""

    kind: str = "eor"  # adversarial | eor
    beta: float = 1.0
    adversary_hidden: tuple[int, ...] = (50,)
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    patience: int = 5
    hidden_dims: tuple[int, ...] = (50, 50)
    encoder_depth: int = 1
    dropout: float = 0.2

    def __post_init__(self):
        if self.kind not in ("adversarial", "eor"):
            raise ConfigError(f"unknown baseline kind {self.kind!r}")
        if self.beta < 0.0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.epochs <= 0 or self.lr <= 0 or self.batch_size <= 0:
            raise ConfigError("epochs, lr and batch_size must be positive")


@dataclass
class TrainResult:
    model: nn.Model
    history: list[dict]
    skipped: list[int] = field(default_factory=list)


def _loss_fn(cfg: StageOneConfig):
    if cfg.gce is None:
        return losses.ce_loss
    return lambda probs, y: losses.gce_loss(probs, y, cfg.gce)


def _mean_valid_loss(model, valid, loss_fn):
    trace = nn.forward(model, valid.X, mode="eval")
    value, _ = loss_fn(trace.probabilities, valid.y)
    return value


def train_stage_one(train: Dataset, valid: Dataset, cfg: StageOneConfig) -> TrainResult:
    """Train a fresh model with CE (teacher) or GCE (bias-amplified).

    Early-stops on validation loss with the configured patience and
    returns the best-validation snapshot plus the per-epoch loss history.
    """
    if len(train) == 0 or len(valid) == 0:
        raise InputError("stage one needs non-empty train and valid splits")
    dims = (train.dim, *cfg.hidden_dims, train.num_classes)
    model = nn.init_model(dims, cfg.encoder_depth, cfg.dropout, seed=cfg.seed)
    state = nn.init_adam(lr=cfg.lr)
    loss_fn = _loss_fn(cfg)
    drop_rng = substream(cfg.seed, "dropout")

    history = []
    best = (math.inf, nn.copy_model(model))
    stall = 0
    for epoch in range(cfg.epochs):
        epoch_loss = 0.0
        for batch in batches(train, cfg.batch_size, cfg.seed, epoch):
            trace = nn.forward(model, train.X[batch], mode="train", rng=drop_rng)
            value, dlogits = loss_fn(trace.probabilities, train.y[batch])
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            grads = nn.backward(model, trace, dlogits, scope="all")
            nn.adam_step(model, grads, state)
            epoch_loss += value * batch.size
        valid_loss = _mean_valid_loss(model, valid, loss_fn)
        history.append({"epoch": epoch, "train_loss": epoch_loss / len(train),
                        "valid_loss": valid_loss})
        if valid_loss < best[0]:
            best = (valid_loss, nn.copy_model(model))
            stall = 0
        else:
            stall += 1
            if stall > cfg.patience:
                break
    log.info("stage one: %d epochs, best valid loss %.6f", len(history), best[0])
    return TrainResult(best[1], history)


def generate_proxy_annotations(model: nn.Model, train: Dataset,
                               cfg: ProxyConfig) -> np.ndarray:
    """Proxy group labels from a bias-amplified model's confidence.

    Within desired-label samples the top-gamma fraction by predicted
    desired-class probability becomes privileged (1); within
    undesired-label samples the top-gamma fraction by predicted
    undesired-class probability becomes unprivileged (0).  Confidence ties
    break by row order, so the split is deterministic.
    """
    probs = nn.forward(model, train.X, mode="eval").probabilities
    proxy = np.zeros(len(train), dtype=np.int64)
    for label, conf_col, top_value, rest_value in ((1, 1, 1, 0), (0, 0, 0, 1)):
        idx = np.nonzero(train.y == label)[0]
        if idx.size == 0:
            continue
        order = idx[np.argsort(-probs[idx, conf_col], kind="stable")]
        k = int(round(cfg.gamma * idx.size))
        proxy[order[:k]] = top_value
        proxy[order[k:]] = rest_value
    return proxy


def _effective_depth(teacher: nn.Model, cfg: RnfStageConfig) -> int:
    if cfg.head_scope == "last_layer":
        return teacher.num_layers - 1
    return teacher.encoder_depth


def _stage_two_annotations(train: Dataset, cfg: RnfStageConfig) -> np.ndarray:
    if cfg.annotation == "ground_truth":
        if train.a is None:
            raise ConfigError("annotation=ground_truth but the split has no groups")
        return train.a
    if cfg.annotation == "proxy":
        if train.proxy is None:
            raise ConfigError("annotation=proxy but no proxy annotations are attached")
        return train.proxy
    rng = substream(cfg.seed, "random-annotations")
    return rng.integers(0, train.num_groups, size=len(train))


def _valid_scores(model, valid) -> tuple[float, float]:
    """(accuracy, accuracy - |1 - DP|) on the validation split.

    The composite falls back to accuracy alone when the split carries no
    group labels; an undefined DP (a degenerate predictor with no positive
    predictions) is scored as worst-case |1 - DP| = 1.
    """
    probs = nn.forward(model, valid.X, mode="eval").probabilities
    preds = np.argmax(probs, axis=1)
    acc = metrics.accuracy(preds, valid.y)
    if valid.a is None:
        return acc, acc
    try:
        dp = metrics.demographic_parity(preds, valid.a)
    except InputError:
        return acc, acc
    if math.isnan(dp):
        return acc, acc - 1.0
    return acc, acc - abs(1.0 - dp)


def train_rnf_head(teacher: nn.Model, train: Dataset, valid: Dataset,
                   cfg: RnfStageConfig) -> TrainResult:
    """Retrain the classification head on neutralized representations.

    The encoder (everything below the head boundary) stays bit-identical
    to the teacher.  Each anchor is paired within its batch with a uniform
    same-label different-group partner; the head sees the representation
    midpoint and distills the averaged temperature-softened teacher
    probabilities, plus the interpolation smoothing penalty.  Anchors with
    no partner are skipped and counted per epoch.
    """
    groups = _stage_two_annotations(train, cfg)
    k = _effective_depth(teacher, cfg)
    student = nn.copy_model(teacher)
    student.encoder_depth = k
    if cfg.head_init == "fresh":
        fresh = nn.init_model(student.layer_dims, k, student.dropout_rate,
                              seed=derive_seed(cfg.seed, "head-init"))
        for l in range(k, student.num_layers):
            student.weights[l] = fresh.weights[l]
            student.biases[l] = fresh.biases[l]

    z_all = nn.encode(student, train.X)
    teacher_logits = nn.forward(teacher, train.X, mode="eval").logits
    p_all = losses.softmax_temperature(teacher_logits, cfg.loss.temperature)

    state = nn.init_adam(lr=cfg.lr)
    mode = "train" if cfg.head_dropout else "eval"
    drop_rng = substream(cfg.seed, "dropout")
    pair_rng = substream(cfg.seed, "pair-sampling")

    def head_snapshot():
        return ([w.copy() for w in student.weights[k:]],
                [b.copy() for b in student.biases[k:]])

    # Selection: best composite among epochs whose validation accuracy
    # stays within accuracy_budget of the backbone teacher's; if no epoch
    # qualifies, the most accurate epoch wins.  Guards against the
    # degenerate near-constant head that scores well on DP alone.
    base_acc, _ = _valid_scores(teacher, valid)
    best_eligible = (-math.inf, None)
    best_acc = (-math.inf, head_snapshot())
    history = []
    skipped_per_epoch = []
    stall = 0
    for epoch in range(cfg.epochs):
        epoch_loss, used, skipped = 0.0, 0, 0
        for batch in batches(train, cfg.batch_size, cfg.seed, epoch):
            anchors, partners = [], []
            for i in batch:
                j = sample_pair(batch, int(i), train.y, groups, pair_rng)
                if j is None:
                    skipped += 1
                else:
                    anchors.append(int(i))
                    partners.append(j)
            if not anchors:
                continue
            value, grads = losses.combined_rnf_loss(
                student, z_all[anchors], z_all[partners],
                p_all[anchors], p_all[partners], cfg.loss,
                mode=mode, rng=drop_rng,
            )
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite stage-two loss at epoch {epoch}")
            nn.adam_step(student, grads, state)
            epoch_loss += value * len(anchors)
            used += len(anchors)
        acc, score = _valid_scores(student, valid)
        history.append({
            "epoch": epoch,
            "train_loss": epoch_loss / used if used else math.nan,
            "valid_accuracy": acc,
            "valid_score": score,
            "skipped": skipped,
        })
        skipped_per_epoch.append(skipped)
        if used == 0:
            log.warning("epoch %d: no anchor found a partner", epoch)
        improved = False
        if acc >= base_acc - cfg.accuracy_budget and score > best_eligible[0]:
            best_eligible = (score, head_snapshot())
            improved = True
        if acc > best_acc[0]:
            best_acc = (acc, head_snapshot())
            improved = True
        if improved:
            stall = 0
        else:
            stall += 1
            if stall > cfg.patience:
                break
    chosen = best_eligible[1] if best_eligible[1] is not None else best_acc[1]
    for offset, l in enumerate(range(k, student.num_layers)):
        student.weights[l] = chosen[0][offset]
        student.biases[l] = chosen[1][offset]
    log.info("stage two: %d epochs, selected %s epoch (composite %.4f)",
             len(history),
             "eligible" if best_eligible[1] is not None else "fallback",
             best_eligible[0])
    return TrainResult(student, history, skipped_per_epoch)


def combine_debiased_encoder(backbone: nn.Model, train: Dataset, valid: Dataset,
                             cfg: RnfStageConfig) -> TrainResult:
    """Head retraining on top of a debiased (adversarial or EOR) encoder."""
    return train_rnf_head(backbone, train, valid, cfg)


def _adversary_ce_grads(adversary, z, groups_batch):
    trace = nn.forward(adversary, z, mode="eval")
    value, dlogits = losses.ce_loss(trace.probabilities, groups_batch)
    grads = nn.backward(adversary, trace, dlogits, scope="all", need_input_grad=True)
    return value, grads


def train_adversarial(train: Dataset, valid: Dataset, cfg: BaselineConfig) -> TrainResult:
    """Adversarial debiasing: an adversary predicts the group from z while
    the main model maximizes task accuracy minus beta times the
    adversary's success; one adversary step per main step.

    With beta = 0 the main-model trajectory is exactly vanilla training
    (the adversary draws from its own RNG streams).
    """
    if train.a is None or valid.a is None:
        raise ConfigError("adversarial training needs ground-truth group labels")
    dims = (train.dim, *cfg.hidden_dims, train.num_classes)
    model = nn.init_model(dims, cfg.encoder_depth, cfg.dropout, seed=cfg.seed)
    z_dim = model.encoder_dim
    adversary = nn.init_model((z_dim, *cfg.adversary_hidden, train.num_groups),
                              1, 0.0, seed=derive_seed(cfg.seed, "adversary-init"))
    state = nn.init_adam(lr=cfg.lr)
    adv_state = nn.init_adam(lr=cfg.lr)
    drop_rng = substream(cfg.seed, "dropout")

    history = []
    best = (math.inf, nn.copy_model(model))
    stall = 0
    for epoch in range(cfg.epochs):
        epoch_loss = 0.0
        for batch in batches(train, cfg.batch_size, cfg.seed, epoch):
            Xb, yb, ab = train.X[batch], train.y[batch], train.a[batch]
            # adversary step on the current (detached) representations
            z_eval = nn.encode(model, Xb)
            _, adv_grads = _adversary_ce_grads(adversary, z_eval, ab)
            nn.adam_step(adversary, adv_grads, adv_state)
            # main step: task CE minus beta * adversary CE through the encoder
            trace = nn.forward(model, Xb, mode="train", rng=drop_rng)
            value, dlogits = losses.ce_loss(trace.probabilities, yb)
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            grads = nn.backward(model, trace, dlogits, scope="all")
            z_train = trace.post[model.encoder_depth - 1]
            _, adv_grads2 = _adversary_ce_grads(adversary, z_train, ab)
            enc_trace = nn.ForwardTrace(
                0, model.encoder_depth, "train", trace.x,
                trace.pre[:model.encoder_depth], trace.post[:model.encoder_depth],
                trace.masks[:model.encoder_depth], trace.squeeze,
            )
            enc_grads = nn.backward(model, enc_trace, adv_grads2.dinput, scope="all",
                                    wrt="post")
            grads = nn.add_gradients(model, grads, nn.scale_gradients(enc_grads, -cfg.beta))
            nn.adam_step(model, grads, state)
            epoch_loss += value * batch.size
        # validation objective of the main player
        v_trace = nn.forward(model, valid.X, mode="eval")
        v_task, _ = losses.ce_loss(v_trace.probabilities, valid.y)
        v_adv, _ = _adversary_ce_grads(adversary, nn.encode(model, valid.X), valid.a)
        valid_loss = v_task - cfg.beta * v_adv
        history.append({"epoch": epoch, "train_loss": epoch_loss / len(train),
                        "valid_loss": valid_loss})
        if valid_loss < best[0]:
            best = (valid_loss, nn.copy_model(model))
            stall = 0
        else:
            stall += 1
            if stall > cfg.patience:
                break
    return TrainResult(best[1], history)


def soft_delta_eo(probs, labels, groups):
    """Differentiable equalized-odds surrogate over one batch.

    Replaces indicator predictions with the predicted desired-class
    probability; returns (value, d value / d prob_desired) or (None, None)
    when a (group, label) cell is empty.
    """
    p1 = np.asarray(probs, dtype=np.float64)[:, 1]
    y = np.asarray(labels)
    g = np.asarray(groups)
    cells = {}
    for a in (0, 1):
        for label in (0, 1):
            sel = (g == a) & (y == label)
            n = int(np.count_nonzero(sel))
            if n == 0:
                return None, None
            cells[a, label] = (sel, n)
    value = 0.0
    grad = np.zeros_like(p1)
    for label in (0, 1):
        sel0, n0 = cells[0, label]
        sel1, n1 = cells[1, label]
        value += float(p1[sel0].mean() - p1[sel1].mean())
        grad[sel0] += 1.0 / n0
        grad[sel1] -= 1.0 / n1
    return value, grad


def train_eor(train: Dataset, valid: Dataset, cfg: BaselineConfig) -> TrainResult:
    """Cross entropy plus beta * |soft equalized-odds gap| per batch.

    Batches missing a (group, label) cell contribute plain CE only.  With
    beta = 0 this is exactly vanilla training.
    """
    if train.a is None or valid.a is None:
        raise ConfigError("EOR training needs ground-truth group labels")
    dims = (train.dim, *cfg.hidden_dims, train.num_classes)
    model = nn.init_model(dims, cfg.encoder_depth, cfg.dropout, seed=cfg.seed)
    state = nn.init_adam(lr=cfg.lr)
    drop_rng = substream(cfg.seed, "dropout")

    def objective_terms(probs, yb, ab):
        ce, dlogits = losses.ce_loss(probs, yb)
        eo, eo_grad = soft_delta_eo(probs, yb, ab)
        if eo is None or cfg.beta == 0.0:
            return ce, dlogits
        n = probs.shape[0]
        dprob = np.zeros_like(probs)
        dprob[:, 1] = cfg.beta * math.copysign(1.0, eo) * eo_grad
        dlogits = dlogits + losses.softmax_logit_grad(probs, dprob)
        return ce + cfg.beta * abs(eo), dlogits

    history = []
    best = (math.inf, nn.copy_model(model))
    stall = 0
    for epoch in range(cfg.epochs):
        epoch_loss = 0.0
        for batch in batches(train, cfg.batch_size, cfg.seed, epoch):
            trace = nn.forward(model, train.X[batch], mode="train", rng=drop_rng)
            value, dlogits = objective_terms(trace.probabilities, train.y[batch],
                                             train.a[batch])
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            grads = nn.backward(model, trace, dlogits, scope="all")
            nn.adam_step(model, grads, state)
            epoch_loss += value * batch.size
        v_trace = nn.forward(model, valid.X, mode="eval")
        v_ce, _ = losses.ce_loss(v_trace.probabilities, valid.y)
        v_eo, _ = soft_delta_eo(v_trace.probabilities, valid.y, valid.a)
        valid_loss = v_ce + (cfg.beta * abs(v_eo) if v_eo is not None else 0.0)
        history.append({"epoch": epoch, "train_loss": epoch_loss / len(train),
                        "valid_loss": valid_loss})
        if valid_loss < best[0]:
            best = (valid_loss, nn.copy_model(model))
            stall = 0
        else:
            stall += 1
            if stall > cfg.patience:
                break
    return TrainResult(best[1], history)


def train_baseline(train: Dataset, valid: Dataset, cfg: BaselineConfig) -> TrainResult:
    if cfg.kind == "adversarial":
        return train_adversarial(train, valid, cfg)
    return train_eor(train, valid, cfg)


def evaluate(model: nn.Model, split: Dataset) -> metrics.MetricsRecord:
    """MetricsRecord of the model on a split, using ground-truth groups."""
    if split.a is None:
        raise InputError("evaluation split has no ground-truth group labels")
    probs = nn.forward(model, split.X, mode="eval").probabilities
    return metrics.build_record(probs, split.y, split.a)


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class RunRecord:
    """One completed (or aborted) run inside a sweep."""

    run_id: str
    method: str
    seed: int
    alpha: float = math.nan
    beta: float = math.nan
    q: float = math.nan
    gamma: float = math.nan
    temperature: float = math.nan
    record: metrics.MetricsRecord | None = None
    error: str = ""


@dataclass
class SweepPoint:
    """Seed-averaged metrics at one grid value."""

    method: str
    param: float
    mean_acc: float
    std_acc: float
    mean_dp: float
    std_dp: float
    mean_eo: float
    std_eo: float
    n: int
    excluded: dict = field(default_factory=dict)
    aborted: int = 0


@dataclass
class SweepTemplates:
    """Per-run config templates a sweep stamps grid values and seeds into."""

    stage_one: StageOneConfig = field(default_factory=StageOneConfig)
    bias_amplified: StageOneConfig = field(
        default_factory=lambda: StageOneConfig(gce=GceConfig())
    )
    proxy: ProxyConfig = field(default_factory=ProxyConfig)
    rnf: RnfStageConfig = field(default_factory=RnfStageConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)


def run_method(method: str, train: Dataset, valid: Dataset, test: Dataset,
               tpl: SweepTemplates, param: float, seed: int) -> RunRecord:
    """One full run of a method at one grid value; param is alpha for the
    RNF variants and beta for the baselines."""
    rec = RunRecord(
        run_id=f"{method}-p{param:g}-s{seed}", method=method, seed=seed,
        gamma=tpl.proxy.gamma,
    )
    try:
        if method in ("rnf", "rnf_gt"):
            rec.alpha = param
            rec.temperature = tpl.rnf.loss.temperature
            s1 = replace(tpl.stage_one, seed=seed, gce=None)
            teacher = train_stage_one(train, valid, s1).model
            if method == "rnf":
                rec.q = tpl.bias_amplified.gce.q
                fb = train_stage_one(train, valid, replace(tpl.bias_amplified, seed=seed))
                train_ann = train.with_proxy(
                    generate_proxy_annotations(fb.model, train, tpl.proxy)
                )
                cfg = replace(tpl.rnf, seed=seed, annotation="proxy",
                              loss=replace(tpl.rnf.loss, alpha=param))
            else:
                train_ann = train
                cfg = replace(tpl.rnf, seed=seed, annotation="ground_truth",
                              loss=replace(tpl.rnf.loss, alpha=param))
            student = train_rnf_head(teacher, train_ann, valid, cfg).model
            rec.record = evaluate(student, test)
        elif method in ("adversarial", "eor"):
            rec.beta = param
            cfg = replace(tpl.baseline, kind=method, beta=param, seed=seed)
            model = train_baseline(train, valid, cfg).model
            rec.record = evaluate(model, test)
        else:
            raise ConfigError(f"unknown sweep method {method!r}")
    except DivergenceError as exc:
        rec.error = str(exc)
    return rec


def _aggregate(method, param, records) -> SweepPoint:
    vals = {"acc": [], "dp": [], "eo": []}
    excluded = {"dp": 0, "eo": 0}
    aborted = 0
    for r in records:
        if r.record is None:
            aborted += 1
            continue
        vals["acc"].append(r.record.accuracy)
        if math.isnan(r.record.dp):
            excluded["dp"] += 1
        else:
            vals["dp"].append(r.record.dp)
        if math.isnan(r.record.delta_eo):
            excluded["eo"] += 1
        else:
            vals["eo"].append(r.record.delta_eo)

    def stats(xs):
        if not xs:
            return math.nan, math.nan
        arr = np.asarray(xs)
        return float(arr.mean()), float(arr.std())

    ma, sa = stats(vals["acc"])
    md, sd = stats(vals["dp"])
    me, se = stats(vals["eo"])
    return SweepPoint(method, param, ma, sa, md, sd, me, se,
                      n=len(vals["acc"]), excluded=excluded, aborted=aborted)


def sweep(train: Dataset, valid: Dataset, test: Dataset, method: str, grid,
          n_seeds: int, tpl: SweepTemplates | None = None, base_seed: int = 0):
    """Average n_seeds full runs of a method at every grid value.

    Run seeds are base_seed XOR run index, so every grid point sees the
    same seed set and points are comparable pairwise.  Undefined metrics
    are excluded from the means with exclusion counts kept per point;
    aborted runs are flagged and the sweep continues.
    """
    grid = [float(v) for v in grid]
    if not grid:
        raise ConfigError("sweep grid must not be empty")
    if n_seeds < 1:
        raise ConfigError("n_seeds must be >= 1")
    tpl = tpl or SweepTemplates()
    points, records = [], []
    for param in grid:
        here = [
            run_method(method, train, valid, test, tpl, param, base_seed ^ i)
            for i in range(n_seeds)
        ]
        records.extend(here)
        points.append(_aggregate(method, param, here))
        log.info("sweep %s param=%g done (%d runs)", method, param, n_seeds)
    return points, records
