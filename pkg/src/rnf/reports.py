"""CSV reports and the optional SVG curve rendering.

Headers are stable across versions (append-only evolution).  Floats are
written with shortest round-trip repr so re-running a config snapshot
reproduces the files byte for byte; undefined metrics become empty fields
with their names listed in ``undefined_flags``.
"""

from __future__ import annotations

import math

import numpy as np

from .metrics import MetricsRecord
from .pipeline import RunRecord, SweepPoint

METRICS_HEADER = ("run_id", "method", "seed", "alpha", "beta", "q", "gamma", "T",
                  "accuracy", "dp", "delta_eo", "gap1", "gap2", "undefined_flags")
CURVE_HEADER = ("method", "param", "mean_acc", "std_acc", "mean_dp", "std_dp",
                "mean_eo", "std_eo", "n")


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    return str(v)


def metrics_row(rec: RunRecord) -> str:
    m = rec.record
    flags = ";".join(m.undefined_flags) if m else "aborted:" + rec.error
    cells = [
        rec.run_id, rec.method, str(rec.seed),
        _num(rec.alpha), _num(rec.beta), _num(rec.q), _num(rec.gamma),
        _num(rec.temperature),
        _num(m.accuracy if m else None), _num(m.dp if m else None),
        _num(m.delta_eo if m else None),
        _num(m.gap1 if m else None), _num(m.gap2 if m else None),
        flags,
    ]
    return ",".join(cells)


def emit_metrics_csv(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(METRICS_HEADER) + "\n")
        for rec in records:
            fh.write(metrics_row(rec) + "\n")


def single_record(run_id, method, seed, record: MetricsRecord, **hyper) -> RunRecord:
    rec = RunRecord(run_id=run_id, method=method, seed=seed, record=record)
    for key, value in hyper.items():
        setattr(rec, key, value)
    return rec


def emit_curve_csv(points, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CURVE_HEADER) + "\n")
        for p in points:
            cells = [p.method, _num(p.param), _num(p.mean_acc), _num(p.std_acc),
                     _num(p.mean_dp), _num(p.std_dp), _num(p.mean_eo), _num(p.std_eo),
                     str(p.n)]
            fh.write(",".join(cells) + "\n")


# --- minimal SVG scatter+line rendering ------------------------------------

_W, _H, _PAD = 420, 320, 45


def _scale(vals, lo_pix, hi_pix):
    finite = [v for v in vals if not math.isnan(v)]
    if not finite:
        finite = [0.0, 1.0]
    lo, hi = min(finite), max(finite)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    span = hi - lo

    def to_pix(v):
        return lo_pix + (v - lo) / span * (hi_pix - lo_pix)

    return to_pix, lo, hi


def _panel(points: list[SweepPoint], metric: str, x0: int, title: str) -> list[str]:
    xs = [p.mean_acc for p in points]
    ys = [getattr(p, metric) for p in points]
    sx, xlo, xhi = _scale(xs, x0 + _PAD, x0 + _W - 10)
    sy, ylo, yhi = _scale(ys, _H - _PAD, 15)
    out = [
        f'<rect x="{x0 + _PAD}" y="15" width="{_W - _PAD - 10}" height="{_H - _PAD - 15}" '
        'fill="none" stroke="#999"/>',
        f'<text x="{x0 + _W // 2}" y="12" text-anchor="middle" font-size="12">{title}</text>',
        f'<text x="{x0 + _W // 2}" y="{_H - 8}" text-anchor="middle" font-size="10">'
        f"accuracy [{xlo:.3f}, {xhi:.3f}]</text>",
        f'<text x="{x0 + 12}" y="{_H // 2}" font-size="10" '
        f'transform="rotate(-90 {x0 + 12} {_H // 2})" text-anchor="middle">'
        f"{metric} [{ylo:.3f}, {yhi:.3f}]</text>",
    ]
    path = []
    for p in points:
        if math.isnan(p.mean_acc) or math.isnan(getattr(p, metric)):
            continue
        px, py = sx(p.mean_acc), sy(getattr(p, metric))
        path.append(f"{px:.1f},{py:.1f}")
        out.append(f'<circle cx="{px:.1f}" cy="{py:.1f}" r="3" fill="#1f77b4"/>')
        out.append(f'<text x="{px + 4:.1f}" y="{py - 4:.1f}" font-size="8">{p.param:g}</text>')
    if len(path) > 1:
        out.append(f'<polyline points="{" ".join(path)}" fill="none" stroke="#1f77b4"/>')
    return out


def render_curve_svg(points, path) -> None:
    """Two fixed panels: (accuracy, DP) and (accuracy, delta EO)."""
    body = _panel(list(points), "mean_dp", 0, "fairness-accuracy (DP)")
    body += _panel(list(points), "mean_eo", _W, "fairness-accuracy (dEO)")
    svg = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{2 * _W}" height="{_H}" '
        f'viewBox="0 0 {2 * _W} {_H}" font-family="sans-serif">',
        *body,
        "</svg>",
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(svg) + "\n")


def emit_kpca_csv(coords, a, y, preds, path) -> None:
    """Projection dump for external plotting: index, coord1, coord2, a, y, pred."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("index,coord1,coord2,a,y,pred\n")
        for i in range(coords.shape[0]):
            fh.write(f"{i},{float(coords[i, 0])!r},{float(coords[i, 1])!r},"
                     f"{int(a[i])},{int(y[i])},{int(preds[i])}\n")
