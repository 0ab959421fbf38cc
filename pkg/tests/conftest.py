"""Shared desk-scale settings and the 20-seed trained-model bank.

The bank trains, per seed: a plain-CE teacher, a GCE bias-amplified
model, proxy annotations from both, and four retrained-head students
(GCE proxies, CE proxies, random, ground truth), plus the evaluation
records, confidence gaps and probe cosines used by the statistical
checks.  Session-scoped so the pipeline and acceptance suites share one
set of runs.
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np
import pytest

from rnf import analysis, metrics, nn, pipeline
from rnf.data import SplitSpec, SyntheticSpec, generate_synthetic, split
from rnf.losses import GceConfig, RnfLossConfig
from rnf.rng import substream

N_SEEDS = 20

SYNTH = SyntheticSpec()  # n=1600, d=4, rates (0.3, 0.7), balance 0.5, noise 1.0
STAGE1 = dict(epochs=30, lr=5e-3, batch_size=64, patience=5,
              hidden_dims=(16, 16), encoder_depth=1, dropout=0.2)
STAGE1_BASELINE = dict(epochs=30, lr=5e-3, batch_size=64, patience=5,
                       hidden_dims=(16, 16), encoder_depth=1, dropout=0.2)
STAGE2 = dict(epochs=40, lr=5e-3, batch_size=64, patience=8)
Q_AMPLIFY = 0.8
GAMMA = 0.7          # matches the planted slice composition (tuned on validation)
LOSS = RnfLossConfig(alpha=0.1, lambda_set=(0.6, 0.7, 0.8, 0.9), temperature=2.0)
PROBE_SAMPLES = 400


def desk_splits(seed, spec=None):
    ds = generate_synthetic(replace(spec or SYNTH, seed=seed))
    return split(ds, SplitSpec(0.625, 0.125, 0.25, seed=seed))


def stage_one_cfg(seed, **overrides):
    kw = {**STAGE1, **overrides}
    return pipeline.StageOneConfig(seed=seed, **kw)


def rnf_cfg(seed, annotation="proxy", **overrides):
    kw = {**STAGE2, **overrides}
    loss = kw.pop("loss", LOSS)
    return pipeline.RnfStageConfig(loss=loss, seed=seed, annotation=annotation, **kw)


@dataclass
class SeedRun:
    seed: int
    train: object
    valid: object
    test: object
    teacher: nn.Model
    amplified: nn.Model
    proxies_gce: np.ndarray
    proxies_ce: np.ndarray
    students: dict
    records: dict
    fb_gaps: metrics.ConfidenceGaps
    cosines: dict


def _run_seed(seed: int) -> SeedRun:
    train, valid, test = desk_splits(seed)
    teacher = pipeline.train_stage_one(train, valid, stage_one_cfg(seed)).model
    amplified = pipeline.train_stage_one(
        train, valid, stage_one_cfg(seed, gce=GceConfig(Q_AMPLIFY))
    ).model
    pcfg = pipeline.ProxyConfig(GAMMA)
    proxies_gce = pipeline.generate_proxy_annotations(amplified, train, pcfg)
    proxies_ce = pipeline.generate_proxy_annotations(teacher, train, pcfg)

    students = {
        "rnf_gce": pipeline.train_rnf_head(
            teacher, train.with_proxy(proxies_gce), valid, rnf_cfg(seed)).model,
        "rnf_ce": pipeline.train_rnf_head(
            teacher, train.with_proxy(proxies_ce), valid, rnf_cfg(seed)).model,
        "rnf_random": pipeline.train_rnf_head(
            teacher, train, valid, rnf_cfg(seed, annotation="random")).model,
        "rnf_gt": pipeline.train_rnf_head(
            teacher, train, valid, rnf_cfg(seed, annotation="ground_truth")).model,
    }
    records = {"vanilla": pipeline.evaluate(teacher, test),
               "gce": pipeline.evaluate(amplified, test)}
    records.update({k: pipeline.evaluate(m, test) for k, m in students.items()})

    fb_probs = nn.forward(amplified, train.X, mode="eval").probabilities
    fb_gaps = metrics.confidence_gap(fb_probs[:, 1], train.y, train.a)

    sel = substream(seed, "probe-sample").permutation(len(train))[:PROBE_SAMPLES]
    cosines = {}
    for tag, model in (("vanilla", teacher), ("rnf_gt", students["rnf_gt"]),
                       ("rnf_gce", students["rnf_gce"])):
        Z = nn.encode(model, train.X[sel])
        preds = np.argmax(nn.forward(model, train.X[sel], mode="eval").probabilities, axis=1)
        sens = analysis.fit_linear_probe(Z, train.a[sel], seed=seed)
        mimic = analysis.fit_linear_probe(Z, preds, seed=seed + 1)
        cosines[tag] = analysis.head_attention_similarity(sens, mimic, 1, 1)
    return SeedRun(seed, train, valid, test, teacher, amplified,
                   proxies_gce, proxies_ce, students, records, fb_gaps, cosines)


@pytest.fixture(scope="session")
def seed_bank():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return [_run_seed(seed) for seed in range(N_SEEDS)]


@pytest.fixture(scope="session")
def adversarial_bank(seed_bank):
    """Adversarially trained models plus the linear-probe comparison flag."""
    out = {}
    for run in seed_bank:
        cfg = pipeline.BaselineConfig(
            kind="adversarial", beta=1.0, adversary_hidden=(16,),
            seed=run.seed, **STAGE1_BASELINE)
        model = pipeline.train_adversarial(run.train, run.valid, cfg).model
        sel = substream(run.seed, "probe-sample").permutation(len(run.train))
        sel = sel[:PROBE_SAMPLES]
        score = {}
        for tag, m in (("vanilla", run.teacher), ("adversarial", model)):
            Z = nn.encode(m, run.train.X[sel])
            probe = analysis.fit_linear_probe(Z, run.train.a[sel], seed=run.seed)
            score[tag] = analysis.probe_agreement(probe, Z, run.train.a[sel])
        out[run.seed] = {
            "model": model,
            "record": pipeline.evaluate(model, run.test),
            "probe_drop": score["adversarial"] < score["vanilla"],
        }
    return out


@pytest.fixture(scope="session")
def combine_bank(seed_bank):
    """Head retraining stacked on an EOR-debiased backbone, per seed."""
    out = {}
    for run in seed_bank:
        cfg = pipeline.BaselineConfig(kind="eor", beta=1.0, seed=run.seed,
                                      **STAGE1_BASELINE)
        backbone = pipeline.train_eor(run.train, run.valid, cfg).model
        student = pipeline.combine_debiased_encoder(
            backbone, run.train, run.valid,
            rnf_cfg(run.seed, annotation="ground_truth")).model
        out[run.seed] = pipeline.evaluate(student, run.test)
    return out


def median(values):
    return float(np.median(np.asarray(values, dtype=np.float64)))


def sign_test_p(successes: int, trials: int) -> float:
    """One-sided exact binomial tail P(X >= successes) under p = 1/2."""
    from math import comb

    total = sum(comb(trials, k) for k in range(successes, trials + 1))
    return total / 2.0 ** trials
