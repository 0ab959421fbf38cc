"""End-to-end training stages, proxy annotation, baselines, sweeps.

Statistical checks run over the shared 20-seed bank (see conftest); the
directional thresholds mirror the ablation behavior the method is known
for: proxy-based head retraining mitigates less than ground truth but
more than random pairing, and the bias-amplified model is more biased
than the plain teacher.
"""

import math
import warnings
from dataclasses import replace

import numpy as np
import pytest

from conftest import (GAMMA, N_SEEDS, Q_AMPLIFY, desk_splits, median, rnf_cfg,
                      sign_test_p, stage_one_cfg)
from rnf import nn, pipeline
from rnf.data import Dataset, SplitSpec, SyntheticSpec, generate_synthetic, split
from rnf.errors import ConfigError, DivergenceError, InputError
from rnf.losses import GceConfig, RnfLossConfig
from rnf.pipeline import (BaselineConfig, ProxyConfig, RnfStageConfig,
                          StageOneConfig, SweepTemplates, evaluate,
                          generate_proxy_annotations, run_method, soft_delta_eo,
                          sweep, train_eor, train_rnf_head, train_stage_one)

warnings.filterwarnings("ignore", category=RuntimeWarning)


def label_only_dataset(n=400, seed=0):
    """Features depend on the label only, so every cross-group partner is an
    exact feature twin (z1 = z2, p1 = p2)."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    a = rng.integers(0, 2, n)
    X = np.zeros((n, 4))
    X[:, 1] = 0.6 * (2 * y - 1)
    return Dataset(X, y, a=a)


class TestStageOne:
    def test_separable_reaches_full_validation_accuracy(self):
        train, valid, _ = desk_splits(3, SyntheticSpec(n=800, noise=0.0))
        res = train_stage_one(train, valid, stage_one_cfg(3, epochs=20, patience=20))
        probs = nn.forward(res.model, valid.X).probabilities
        assert (probs.argmax(axis=1) == valid.y).mean() == 1.0

    def test_gce_limit_tracks_ce_training(self):
        train, valid, _ = desk_splits(5)
        ce = train_stage_one(train, valid, stage_one_cfg(5, epochs=6, patience=6))
        gce = train_stage_one(train, valid,
                              stage_one_cfg(5, epochs=6, patience=6,
                                            gce=GceConfig(1e-6)))
        for a, b in zip(ce.history, gce.history):
            assert abs(a["train_loss"] - b["train_loss"]) < 1e-3

    def test_bias_amplification_over_twenty_seeds(self):
        # wider net and gentle lr make the GCE shift consistent; the gap is
        # measured on a large fresh draw so estimator noise does not mask it
        wins = 0
        for seed in range(N_SEEDS):
            spec = SyntheticSpec(group_rates=(0.1, 0.9))
            train, valid, _ = desk_splits(seed, spec)
            big = generate_synthetic(replace(spec, n=20000, seed=seed + 1000))
            _, _, eval_split = split(big, SplitSpec(0.0, 0.0, 1.0, seed=0))
            cfg = stage_one_cfg(seed, epochs=40, patience=40, lr=1e-3,
                                hidden_dims=(50, 50))
            teacher = train_stage_one(train, valid, cfg).model
            amplified = train_stage_one(train, valid,
                                        replace(cfg, gce=GceConfig(0.6))).model
            t = evaluate(teacher, eval_split)
            f = evaluate(amplified, eval_split)
            wins += abs(f.delta_eo) >= abs(t.delta_eo)
        assert wins >= 16

    def test_divergence_reported_with_epoch(self):
        # overflow in the forward pass yields a non-finite loss
        rng = np.random.default_rng(1)
        X = np.full((64, 4), 1e308)
        ds = Dataset(X, rng.integers(0, 2, 64), a=rng.integers(0, 2, 64))
        with pytest.raises(DivergenceError, match="epoch 0"):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                train_stage_one(ds, ds, stage_one_cfg(1, epochs=3, patience=3))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            StageOneConfig(epochs=0)
        with pytest.raises(ConfigError):
            StageOneConfig(lr=-1.0)


class TestProxyAnnotations:
    def _confidence_model(self):
        # head logit for the desired class equals the raw input feature
        m = nn.init_model((1, 1, 2), 1, 0.0, seed=0)
        m.weights[0][...] = [[1.0]]
        m.biases[0][...] = [10.0]
        m.weights[1][...] = [[0.0], [1.0]]
        m.biases[1][...] = [0.0, -10.0]
        return m

    def _dataset(self, confidences, label):
        logits = np.log(np.asarray(confidences) / (1 - np.asarray(confidences)))
        X = logits.reshape(-1, 1)
        y = np.full(len(confidences), label, dtype=np.int64)
        return Dataset(X, y)

    def test_gamma_one_whole_slice_partition(self):
        ds = self._dataset([0.9, 0.6, 0.2], 1)
        proxy = generate_proxy_annotations(self._confidence_model(), ds,
                                           ProxyConfig(1.0))
        np.testing.assert_array_equal(proxy, [1, 1, 1])
        ds0 = self._dataset([0.9, 0.6, 0.2], 0)
        proxy0 = generate_proxy_annotations(self._confidence_model(), ds0,
                                            ProxyConfig(1.0))
        np.testing.assert_array_equal(proxy0, [0, 0, 0])

    def test_sort_and_cut(self):
        ds = self._dataset([0.9, 0.8, 0.6, 0.3], 1)
        proxy = generate_proxy_annotations(self._confidence_model(), ds,
                                           ProxyConfig(0.5))
        np.testing.assert_array_equal(proxy, [1, 1, 0, 0])

    def test_undesired_slice_inverted(self):
        # top undesired-class confidence = lowest desired confidence
        ds = self._dataset([0.9, 0.8, 0.6, 0.3], 0)
        proxy = generate_proxy_annotations(self._confidence_model(), ds,
                                           ProxyConfig(0.5))
        np.testing.assert_array_equal(proxy, [1, 1, 0, 0])

    def test_every_sample_annotated_and_fraction_matches_gamma(self):
        rng = np.random.default_rng(0)
        for seed in range(5):
            train, valid, _ = desk_splits(seed)
            model = train_stage_one(train, valid, stage_one_cfg(seed)).model
            gamma = float(rng.uniform(0.2, 0.9))
            proxy = generate_proxy_annotations(model, train, ProxyConfig(gamma))
            assert set(np.unique(proxy)) <= {0, 1}
            desired = train.y == 1
            frac = float(proxy[desired].mean())
            assert abs(frac - gamma) <= 1.0 / desired.sum() + 1e-12

    def test_better_than_chance(self, seed_bank):
        agreements = [float(np.mean(run.proxies_gce == run.train.a))
                      for run in seed_bank]
        n = len(seed_bank[0].train)
        assert median(agreements) > 0.5 + 3 * math.sqrt(0.25 / n)

    def test_gamma_range(self):
        with pytest.raises(ConfigError):
            ProxyConfig(0.0)
        with pytest.raises(ConfigError):
            ProxyConfig(1.2)


class TestRnfHead:
    def test_distillation_fixed_point(self):
        ds = label_only_dataset(seed=7)
        train, valid, test = split(ds, SplitSpec(0.6, 0.2, 0.2, seed=7))
        teacher = train_stage_one(train, valid,
                                  stage_one_cfg(7, epochs=15, patience=15)).model
        cfg = rnf_cfg(7, annotation="ground_truth", head_init="fresh",
                      loss=RnfLossConfig(alpha=0.0, temperature=1.0))
        student = train_rnf_head(teacher, train, valid, cfg).model
        t_preds = np.argmax(nn.forward(teacher, test.X).probabilities, axis=1)
        s_preds = np.argmax(nn.forward(student, test.X).probabilities, axis=1)
        assert (t_preds == s_preds).mean() >= 0.99

    def test_encoder_bit_identical(self, seed_bank):
        for run in seed_bank[:5]:
            for student in run.students.values():
                k = run.teacher.encoder_depth
                for l in range(k):
                    assert np.array_equal(student.weights[l], run.teacher.weights[l])
                    assert np.array_equal(student.biases[l], run.teacher.biases[l])

    def test_last_layer_scope_freezes_rest(self):
        train, valid, _ = desk_splits(2)
        teacher = train_stage_one(train, valid, stage_one_cfg(2)).model
        cfg = rnf_cfg(2, annotation="ground_truth", head_scope="last_layer",
                      epochs=5, patience=5)
        student = train_rnf_head(teacher, train, valid, cfg).model
        assert student.encoder_depth == teacher.num_layers - 1
        for l in range(teacher.num_layers - 1):
            assert np.array_equal(student.weights[l], teacher.weights[l])

    def test_mitigation_over_twenty_seeds(self, seed_bank):
        improved = sum(
            abs(1 - run.records["rnf_gt"].dp) < abs(1 - run.records["vanilla"].dp)
            for run in seed_bank)
        assert improved >= int(0.8 * N_SEEDS)
        drop = median([run.records["vanilla"].accuracy
                       - run.records["rnf_gt"].accuracy for run in seed_bank])
        assert drop <= 0.03

    def test_missing_annotation_source_rejected(self):
        train, valid, _ = desk_splits(0)
        teacher = train_stage_one(train, valid, stage_one_cfg(0)).model
        with pytest.raises(ConfigError, match="proxy"):
            train_rnf_head(teacher, train, valid, rnf_cfg(0, annotation="proxy"))
        stripped = Dataset(train.X, train.y)
        with pytest.raises(ConfigError, match="ground_truth"):
            train_rnf_head(teacher, stripped, valid,
                           rnf_cfg(0, annotation="ground_truth"))

    def test_skipped_anchor_counting(self):
        # one lonely label: every batch anchor of that label lacks a partner
        rng = np.random.default_rng(3)
        n = 64
        X = rng.normal(size=(n, 4))
        y = np.zeros(n, dtype=np.int64)
        y[0] = 1
        a = rng.integers(0, 2, n)
        ds = Dataset(X, y, a=a)
        teacher = nn.init_model((4, 8, 8, 2), 1, 0.2, seed=0)
        cfg = rnf_cfg(0, annotation="ground_truth", epochs=2, patience=2)
        res = train_rnf_head(teacher, ds, ds, cfg)
        assert all(s >= 1 for s in res.skipped)


class TestBaselines:
    def test_adversarial_beta_zero_reproduces_vanilla_exactly(self):
        train, valid, test = desk_splits(4)
        s1 = stage_one_cfg(4, epochs=12, patience=12)
        vanilla = train_stage_one(train, valid, s1).model
        cfg = BaselineConfig(kind="adversarial", beta=0.0, adversary_hidden=(16,),
                             epochs=12, patience=12, lr=s1.lr,
                             batch_size=s1.batch_size, seed=4,
                             hidden_dims=s1.hidden_dims,
                             encoder_depth=s1.encoder_depth, dropout=s1.dropout)
        adv = pipeline.train_adversarial(train, valid, cfg).model
        for wa, wb in zip(vanilla.weights, adv.weights):
            assert np.array_equal(wa, wb)
        va = evaluate(vanilla, test).accuracy
        aa = evaluate(adv, test).accuracy
        assert abs(va - aa) <= 0.02

    def test_eor_beta_zero_losses_equal(self):
        train, valid, _ = desk_splits(4)
        s1 = stage_one_cfg(4, epochs=8, patience=8)
        vanilla = train_stage_one(train, valid, s1)
        cfg = BaselineConfig(kind="eor", beta=0.0, epochs=8, patience=8, lr=s1.lr,
                             batch_size=s1.batch_size, seed=4,
                             hidden_dims=s1.hidden_dims,
                             encoder_depth=s1.encoder_depth, dropout=s1.dropout)
        eor = train_eor(train, valid, cfg)
        for a, b in zip(vanilla.history, eor.history):
            assert abs(a["train_loss"] - b["train_loss"]) <= 1e-9
            assert abs(a["valid_loss"] - b["valid_loss"]) <= 1e-9

    def test_soft_delta_eo_zero_for_group_identical_probabilities(self):
        probs = np.array([[0.3, 0.7], [0.3, 0.7], [0.8, 0.2], [0.8, 0.2]] * 2)
        labels = np.array([1, 1, 0, 0] * 2)
        groups = np.array([0, 1, 0, 1] * 2)
        value, grad = soft_delta_eo(probs, labels, groups)
        assert value == 0.0
        assert grad is not None

    def test_soft_delta_eo_empty_cell_skipped(self):
        probs = np.array([[0.3, 0.7], [0.8, 0.2]])
        value, grad = soft_delta_eo(probs, [1, 0], [0, 0])
        assert value is None and grad is None

    def test_eor_trend_over_beta(self):
        grid = (0.0, 0.5, 1.0, 2.0)
        eo = {b: [] for b in grid}
        for seed in range(N_SEEDS):
            train, valid, test = desk_splits(seed)
            for beta in grid:
                cfg = BaselineConfig(kind="eor", beta=beta, epochs=30, patience=5,
                                     lr=5e-3, batch_size=64, seed=seed,
                                     hidden_dims=(16, 16), encoder_depth=1,
                                     dropout=0.2)
                model = train_eor(train, valid, cfg).model
                eo[beta].append(abs(evaluate(model, test).delta_eo))
        med = {b: median(v) for b, v in eo.items()}
        steps = [med[0.0] >= med[0.5], med[0.5] >= med[1.0],
                 med[1.0] >= med[2.0], med[0.0] >= med[2.0]]
        assert sum(steps) >= 3

    def test_adversarial_probe_and_dp_direction(self, seed_bank, adversarial_bank):
        probe_wins = sum(adversarial_bank[s]["probe_drop"] for s in range(N_SEEDS))
        dp_wins = sum(
            abs(1 - adversarial_bank[s]["record"].dp)
            < abs(1 - seed_bank[s].records["vanilla"].dp)
            for s in range(N_SEEDS))
        assert probe_wins >= int(0.8 * N_SEEDS)
        assert dp_wins >= int(0.8 * N_SEEDS)

    def test_beta_validation(self):
        with pytest.raises(ConfigError):
            BaselineConfig(kind="eor", beta=-0.5)
        with pytest.raises(ConfigError):
            BaselineConfig(kind="nonsense")

    def test_ground_truth_required(self):
        train, valid, _ = desk_splits(0)
        stripped = Dataset(train.X, train.y)
        cfg = BaselineConfig(kind="eor", beta=1.0, hidden_dims=(16, 16),
                             encoder_depth=1)
        with pytest.raises(ConfigError):
            train_eor(stripped, valid, cfg)


class TestCombineDebiasedEncoder:
    def test_backbone_encoder_bit_identical(self):
        train, valid, _ = desk_splits(6)
        cfg = BaselineConfig(kind="eor", beta=1.0, epochs=15, patience=5, lr=5e-3,
                             batch_size=64, seed=6, hidden_dims=(16, 16),
                             encoder_depth=1, dropout=0.2)
        backbone = train_eor(train, valid, cfg).model
        student = pipeline.combine_debiased_encoder(
            backbone, train, valid, rnf_cfg(6, annotation="ground_truth",
                                            epochs=10, patience=5)).model
        for l in range(backbone.encoder_depth):
            assert np.array_equal(student.weights[l], backbone.weights[l])

    def test_combination_beats_plain_rnf_directionally(self, seed_bank,
                                                       combine_bank):
        dp_comb = median([combine_bank[s].dp for s in range(N_SEEDS)])
        dp_rnf = median([seed_bank[s].records["rnf_gt"].dp for s in range(N_SEEDS)])
        assert abs(1 - dp_comb) <= abs(1 - dp_rnf)

    def test_alpha_zero_identity_annotations_distills_backbone(self):
        ds = label_only_dataset(seed=9)
        train, valid, test = split(ds, SplitSpec(0.6, 0.2, 0.2, seed=9))
        cfg = BaselineConfig(kind="eor", beta=0.5, epochs=10, patience=10, lr=5e-3,
                             batch_size=64, seed=9, hidden_dims=(16, 16),
                             encoder_depth=1, dropout=0.2)
        backbone = train_eor(train, valid, cfg).model
        student = pipeline.combine_debiased_encoder(
            backbone, train, valid,
            rnf_cfg(9, annotation="ground_truth", head_init="fresh",
                    loss=RnfLossConfig(alpha=0.0, temperature=1.0))).model
        b_preds = np.argmax(nn.forward(backbone, test.X).probabilities, axis=1)
        s_preds = np.argmax(nn.forward(student, test.X).probabilities, axis=1)
        assert (b_preds == s_preds).mean() >= 0.99


class TestEvaluate:
    def test_perfect_predictor(self):
        train, valid, test = desk_splits(8, SyntheticSpec(n=800, noise=0.0))
        model = train_stage_one(train, valid,
                                stage_one_cfg(8, epochs=20, patience=20)).model
        rec = evaluate(model, test)
        assert rec.accuracy == 1.0
        assert rec.delta_eo == 0.0

    def test_matches_metric_functions(self, seed_bank):
        from rnf import metrics

        run = seed_bank[0]
        rec = run.records["vanilla"]
        probs = nn.forward(run.teacher, run.test.X).probabilities
        preds = probs.argmax(axis=1)
        assert rec.accuracy == metrics.accuracy(preds, run.test.y)
        assert rec.dp == metrics.demographic_parity(preds, run.test.a)
        assert rec.delta_eo == metrics.equalized_odds(preds, run.test.y, run.test.a)

    def test_repeat_bit_identical(self, seed_bank):
        run = seed_bank[0]
        a = evaluate(run.teacher, run.test)
        b = evaluate(run.teacher, run.test)
        assert a.accuracy == b.accuracy and a.dp == b.dp and a.delta_eo == b.delta_eo

    def test_missing_groups_rejected(self):
        train, valid, _ = desk_splits(0)
        model = nn.init_model((train.dim, 8, 2), 1, 0.0, seed=0)
        with pytest.raises(InputError):
            evaluate(model, Dataset(train.X, train.y))


class TestSweep:
    def _templates(self):
        return SweepTemplates(
            stage_one=stage_one_cfg(0),
            bias_amplified=stage_one_cfg(0, gce=GceConfig(Q_AMPLIFY)),
            proxy=ProxyConfig(GAMMA),
            rnf=rnf_cfg(0, annotation="ground_truth"),
        )

    def test_single_point_single_seed_equals_direct_run(self):
        train, valid, test = desk_splits(4)
        tpl = self._templates()
        points, records = sweep(train, valid, test, "rnf_gt", [0.1], 1,
                                tpl=tpl, base_seed=7)
        direct = run_method("rnf_gt", train, valid, test, tpl, 0.1, 7)
        assert points[0].mean_acc == direct.record.accuracy
        assert points[0].mean_dp == direct.record.dp
        assert records[0].run_id == direct.run_id

    def test_five_seed_stability(self):
        train, valid, test = desk_splits(4)
        points, _ = sweep(train, valid, test, "rnf_gt", [0.1], 5,
                          tpl=self._templates(), base_seed=0)
        assert points[0].std_acc <= 0.02

    def test_alpha_tradeoff_direction(self):
        train, valid, test = desk_splits(2)
        points, _ = sweep(train, valid, test, "rnf_gt", [0.0, 0.5, 1.0], 5,
                          tpl=self._templates(), base_seed=0)
        by_alpha = {p.param: p for p in points}
        assert by_alpha[1.0].mean_dp >= by_alpha[0.0].mean_dp

    def test_aborted_runs_flagged_and_sweep_continues(self, monkeypatch):
        train, valid, test = desk_splits(0)

        def explode(*args, **kwargs):
            raise DivergenceError("boom")

        monkeypatch.setattr(pipeline, "train_stage_one", explode)
        points, records = sweep(train, valid, test, "rnf_gt", [0.1], 2,
                                tpl=self._templates(), base_seed=0)
        assert all(r.record is None and r.error for r in records)
        assert points[0].aborted == 2
        assert math.isnan(points[0].mean_acc)

    def test_empty_grid_rejected(self):
        train, valid, test = desk_splits(0)
        with pytest.raises(ConfigError):
            sweep(train, valid, test, "rnf_gt", [], 1)

    def test_run_seed_is_base_xor_index(self):
        train, valid, test = desk_splits(4)
        _, records = sweep(train, valid, test, "rnf_gt", [0.1], 2,
                           tpl=self._templates(), base_seed=5)
        assert [r.seed for r in records] == [5 ^ 0, 5 ^ 1]


class TestDeterminism:
    def test_full_pipeline_bit_identical(self):
        outs = []
        for _ in range(2):
            train, valid, test = desk_splits(9)
            teacher = train_stage_one(train, valid, stage_one_cfg(9)).model
            fb = train_stage_one(train, valid,
                                 stage_one_cfg(9, gce=GceConfig(Q_AMPLIFY))).model
            proxy = generate_proxy_annotations(fb, train, ProxyConfig(GAMMA))
            student = train_rnf_head(teacher, train.with_proxy(proxy), valid,
                                     rnf_cfg(9)).model
            outs.append(evaluate(student, test))
        a, b = outs
        assert (a.accuracy, a.dp, a.delta_eo, a.gap1, a.gap2) == \
            (b.accuracy, b.dp, b.delta_eo, b.gap1, b.gap2)
