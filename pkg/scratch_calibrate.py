"""Scratch calibration of the planted-bias synthetic pipeline (not shipped)."""
import time
from dataclasses import replace

import numpy as np

from rnf import analysis, metrics, nn, pipeline
from rnf.data import SplitSpec, SyntheticSpec, generate_synthetic, split
from rnf.losses import GceConfig, RnfLossConfig
from rnf.rng import substream

ARCH = dict(hidden_dims=(16, 16), encoder_depth=1, dropout=0.2)
S1 = dict(epochs=30, lr=5e-3, batch_size=64, patience=5)
S2 = dict(epochs=30, lr=5e-3, batch_size=64, patience=5)
SYNTH = dict(n=1600, d=6, group_rates=(0.25, 0.65), group_balance=0.5, noise=1.0)
GAMMA = 0.5
Q = 0.6
LOSS = dict(alpha=1.0, lambda_set=(0.6, 0.7, 0.8, 0.9), temperature=2.0)


def one_seed(seed):
    ds = generate_synthetic(SyntheticSpec(**SYNTH, seed=seed))
    tr, va, te = split(ds, SplitSpec(0.625, 0.125, 0.25, seed=seed))
    s1 = pipeline.StageOneConfig(**S1, **ARCH, seed=seed)
    teacher = pipeline.train_stage_one(tr, va, s1).model
    fb = pipeline.train_stage_one(tr, va, replace(s1, gce=GceConfig(q=Q))).model
    proxy_gce = pipeline.generate_proxy_annotations(fb, tr, pipeline.ProxyConfig(GAMMA))
    proxy_ce = pipeline.generate_proxy_annotations(teacher, tr, pipeline.ProxyConfig(GAMMA))
    loss = RnfLossConfig(**LOSS)
    rcfg = pipeline.RnfStageConfig(loss=loss, epochs=S2["epochs"], lr=S2["lr"],
                                   batch_size=S2["batch_size"], patience=S2["patience"],
                                   seed=seed, annotation="proxy")
    st_gce = pipeline.train_rnf_head(teacher, tr.with_proxy(proxy_gce), va, rcfg).model
    st_ce = pipeline.train_rnf_head(teacher, tr.with_proxy(proxy_ce), va, rcfg).model
    st_rand = pipeline.train_rnf_head(teacher, tr, va, replace(rcfg, annotation="random")).model
    st_gt = pipeline.train_rnf_head(teacher, tr, va, replace(rcfg, annotation="ground_truth")).model

    out = {}
    for name, model in [("vanilla", teacher), ("gce", fb), ("rnf_gce", st_gce),
                        ("rnf_ce", st_ce), ("rnf_rand", st_rand), ("rnf_gt", st_gt)]:
        out[name] = pipeline.evaluate(model, te)
    out["agree_gce"] = float(np.mean(proxy_gce == tr.a))
    out["agree_ce"] = float(np.mean(proxy_ce == tr.a))

    # confidence gaps of the bias-amplified model on train
    probs = nn.forward(fb, tr.X).probabilities
    gaps = metrics.confidence_gap(probs[:, 1], tr.y, tr.a)
    out["fb_gap1"], out["fb_gap2"] = gaps.gap1, gaps.gap2

    # cosine diagnostic vanilla vs rnf (probe on 400 train reps)
    sel = substream(seed, "probe-sample").permutation(len(tr))[:400]
    for tag, model in [("van", teacher), ("rnf", st_gce)]:
        Z = nn.encode(model, tr.X[sel])
        preds = np.argmax(nn.forward(model, tr.X[sel]).probabilities, axis=1)
        sens = analysis.fit_linear_probe(Z, tr.a[sel], seed=seed)
        mimic = analysis.fit_linear_probe(Z, preds, seed=seed + 1)
        out[f"cos_{tag}"] = analysis.head_attention_similarity(sens, mimic, 1, 1)
    return out


t0 = time.time()
rows = []
for seed in range(20):
    rows.append(one_seed(seed))
    print(f"seed {seed} done {time.time()-t0:.1f}s", flush=True)

def med(key, attr=None):
    vals = [getattr(r[key], attr) if attr else r[key] for r in rows]
    return float(np.median(vals))

print("\n== medians over 20 seeds ==")
for name in ("vanilla", "gce", "rnf_rand", "rnf_ce", "rnf_gce", "rnf_gt"):
    print(f"{name:9s} acc={med(name,'accuracy'):.3f} dp={med(name,'dp'):.3f} eo={med(name,'delta_eo'):+.3f}")
print("agreement gce=%.3f ce=%.3f" % (med("agree_gce"), med("agree_ce")))
print("fb gaps: gap1=%.3f gap2=%.3f  (pos counts: %d, %d)" % (
    med("fb_gap1"), med("fb_gap2"),
    sum(r["fb_gap1"] > 0 for r in rows), sum(r["fb_gap2"] > 0 for r in rows)))
print("cos: van=%.3f rnf=%.3f decrease_count=%d" % (
    med("cos_van"), med("cos_rnf"), sum(r["cos_rnf"] < r["cos_van"] for r in rows)))
eo = lambda k: float(np.median([abs(r[k].delta_eo) for r in rows]))
print("|eo| medians: vanilla=%.3f gce=%.3f rnf_rand=%.3f rnf_ce=%.3f rnf_gce=%.3f" % (
    eo("vanilla"), eo("gce"), eo("rnf_rand"), eo("rnf_ce"), eo("rnf_gce")))
print("gce more biased count (|eo| gce >= vanilla):",
      sum(abs(r["gce"].delta_eo) >= abs(r["vanilla"].delta_eo) for r in rows))
print("rnf_gce improves DP vs vanilla count:",
      sum(abs(1 - r["rnf_gce"].dp) < abs(1 - r["vanilla"].dp) for r in rows))
print("rnf acc drop vs vanilla (median):",
      med("vanilla", "accuracy") - med("rnf_gce", "accuracy"))
print(f"total {time.time()-t0:.1f}s")
