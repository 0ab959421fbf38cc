"""Group fairness and accuracy measurement.

Conventions: group index 0 is the unprivileged group, class 1 the desired
outcome.  Undefined metrics (empty cell, zero denominator) come back as
NaN rather than raising, so sweep aggregation can skip them; callers that
need to know which cell was empty use the returned counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ShapeError


def _vec(x, name):
    a = np.asarray(x)
    if a.ndim != 1:
        raise ShapeError(f"{name} must be 1-D")
    return a


def _aligned(*pairs):
    arrays = [_vec(x, name) for x, name in pairs]
    n = arrays[0].shape[0]
    if any(a.shape[0] != n for a in arrays):
        raise ShapeError("metric inputs must have equal length")
    if n == 0:
        raise InputError("metric inputs must not be empty")
    return arrays


def accuracy(preds, labels) -> float:
    """Fraction of predictions equal to the labels."""
    p, y = _aligned((preds, "preds"), (labels, "labels"))
    return int(np.count_nonzero(p == y)) / p.shape[0]


def demographic_parity(preds, groups) -> float:
    """p(pred=1 | group 0) / p(pred=1 | group 1); NaN if the denominator is 0.

    Group 0 is unprivileged, so values below 1 indicate disadvantage and 1
    is fair.  Raises if either group is empty.
    """
    p, g = _aligned((preds, "preds"), (groups, "groups"))
    n0 = int(np.count_nonzero(g == 0))
    n1 = int(np.count_nonzero(g == 1))
    if n0 == 0 or n1 == 0:
        raise InputError("both groups must be non-empty")
    r0 = int(np.count_nonzero((p == 1) & (g == 0))) / n0
    r1 = int(np.count_nonzero((p == 1) & (g == 1))) / n1
    if r1 == 0.0:
        return math.nan
    return r0 / r1


def equalized_odds(preds, labels, groups) -> float:
    """(TPR0 - TPR1) + (FPR0 - FPR1); 0 is fair, NaN if any cell is empty.

    Negative values mean group 0 receives the desired outcome at lower
    rates conditioned on the true label.
    """
    p, y, g = _aligned((preds, "preds"), (labels, "labels"), (groups, "groups"))
    rates = {}
    for a in (0, 1):
        for label in (0, 1):
            cell = (g == a) & (y == label)
            n = int(np.count_nonzero(cell))
            if n == 0:
                return math.nan
            rates[a, label] = int(np.count_nonzero(cell & (p == 1))) / n
    return (rates[0, 1] - rates[1, 1]) + (rates[0, 0] - rates[1, 0])


def empty_cells(labels, groups) -> tuple[str, ...]:
    """Names of the (group, label) cells with no samples."""
    y, g = _aligned((labels, "labels"), (groups, "groups"))
    out = []
    for a in (0, 1):
        for label in (0, 1):
            if int(np.count_nonzero((g == a) & (y == label))) == 0:
                out.append(f"a={a},y={label}")
    return tuple(out)


@dataclass
class ConfidenceGaps:
    """Per-(group, label) mean desired-class probability and the two gaps.

    gap1: privileged minus unprivileged mean desired-class probability
    among desired-label samples.  gap2: unprivileged minus privileged mean
    less-desired probability among undesired-label samples.  A biased
    model shows both gaps positive.
    """

    cell_means: dict
    counts: dict
    gap1: float
    gap2: float
    undefined_cells: tuple[str, ...] = ()


def confidence_gap(prob_desired, labels, groups) -> ConfidenceGaps:
    """Cell means of the desired-class probability and the two gap stats.

    Sums are exactly rounded (math.fsum) so independent re-computation in
    any order reproduces identical values.
    """
    p, y, g = _aligned((prob_desired, "prob_desired"), (labels, "labels"), (groups, "groups"))
    p = p.astype(np.float64, copy=False)
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise InputError("probabilities must lie in [0, 1]")
    means, counts = {}, {}
    undefined = []
    for a in (0, 1):
        for label in (0, 1):
            cell = (g == a) & (y == label)
            n = int(np.count_nonzero(cell))
            counts[a, label] = n
            if n == 0:
                means[a, label] = math.nan
                undefined.append(f"a={a},y={label}")
            else:
                means[a, label] = math.fsum(p[cell]) / n

    gap1 = means[1, 1] - means[0, 1]
    if counts[0, 0] and counts[1, 0]:
        less0 = math.fsum(1.0 - v for v in p[(g == 0) & (y == 0)]) / counts[0, 0]
        less1 = math.fsum(1.0 - v for v in p[(g == 1) & (y == 0)]) / counts[1, 0]
        gap2 = less0 - less1
    else:
        gap2 = math.nan
    return ConfidenceGaps(means, counts, gap1, gap2, tuple(undefined))


@dataclass
class MetricsRecord:
    """Evaluation summary of one model on one split."""

    accuracy: float
    dp: float
    delta_eo: float
    gap1: float
    gap2: float
    group_confidence: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    undefined_flags: tuple[str, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise InputError(f"accuracy out of [0, 1]: {self.accuracy}")
        if not math.isnan(self.delta_eo) and not -2.0 <= self.delta_eo <= 2.0:
            raise InputError(f"delta_eo out of [-2, 2]: {self.delta_eo}")


def build_record(probs, labels, groups) -> MetricsRecord:
    """Full MetricsRecord from predicted probabilities and ground truth.

    Hard predictions are the argmax of the probabilities; ties break
    toward the lower class index.
    """
    pr = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    preds = np.argmax(pr, axis=1)
    y, g = _aligned((labels, "labels"), (groups, "groups"))
    acc = accuracy(preds, y)
    dp = demographic_parity(preds, g)
    eo = equalized_odds(preds, y, g)
    gaps = confidence_gap(pr[:, 1], y, g)
    flags = []
    if math.isnan(dp):
        flags.append("dp")
    if math.isnan(eo):
        cells = empty_cells(y, g)
        if cells:
            flags.extend(f"eo:{c}" for c in cells)
        else:
            flags.append("eo")
    flags.extend(f"conf:{c}" for c in gaps.undefined_cells)
    return MetricsRecord(
        accuracy=acc, dp=dp, delta_eo=eo, gap1=gaps.gap1, gap2=gaps.gap2,
        group_confidence=gaps.cell_means, counts=gaps.counts,
        undefined_flags=tuple(flags),
    )
