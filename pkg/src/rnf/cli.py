"""Command-line surface.

Every command takes ``--config <path>`` plus repeatable ``--set key=value``
overrides, writes a run directory (config snapshot, log, checkpoints,
metrics CSV) under ``$RNF_OUT_DIR`` or ``out.dir``, and exits 0 on
success, 1 on configuration errors, 2 on runtime/numeric errors, 3 when
the only outcome was undefined metrics.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys

import numpy as np

from . import analysis, checkpoint, data, losses, nn, pipeline, reports
from .config import RunConfig, load_config
from .errors import (CheckpointError, ConfigError, IngestError, InputError,
                     RnfError)
from .rng import substream

log = logging.getLogger("rnf")


def _require_file(path, what):
    if not path:
        raise ConfigError(f"{what} is not set")
    if not os.path.isfile(path):
        raise ConfigError(f"{what} does not exist: {path}")
    return path


_run_handlers: list[logging.Handler] = []


def _make_run_dir(command: str, cfg: RunConfig) -> str:
    root = os.environ.get("RNF_OUT_DIR") or cfg["out.dir"]
    name = cfg["run.name"] or f"{command}-{cfg.digest().hex()[:8]}"
    run_dir = base = os.path.join(root, name)
    n = 1
    while os.path.exists(run_dir):
        n += 1
        run_dir = f"{base}-r{n}"
    os.makedirs(run_dir)
    with open(os.path.join(run_dir, "config.snapshot"), "w", encoding="utf-8") as fh:
        fh.write(cfg.snapshot())
    handler = logging.FileHandler(os.path.join(run_dir, "log.txt"), encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logging.getLogger("rnf").addHandler(handler)
    _run_handlers.append(handler)
    return run_dir


def _load_dataset(cfg: RunConfig) -> data.Dataset:
    path = _require_file(cfg["data.path"], "data.path")
    schema = data.load_schema(_require_file(cfg["data.schema"], "data.schema"))
    categories = None
    if cfg["data.categories"]:
        categories = _read_categories(_require_file(cfg["data.categories"], "data.categories"))
    return data.ingest_csv(path, schema, categories=categories)


def _read_categories(path):
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            if not key.startswith("categories."):
                raise ConfigError(f"bad categories line: {line!r}")
            out[key[len("categories."):]] = value.split(",")
    return out


def _write_categories(dataset: data.Dataset, run_dir: str) -> None:
    if not dataset.categories:
        return
    with open(os.path.join(run_dir, "categories.txt"), "w", encoding="utf-8") as fh:
        for col, cats in dataset.categories.items():
            fh.write(f"categories.{col}={','.join(cats)}\n")


def _splits(cfg: RunConfig):
    dataset = _load_dataset(cfg)
    spec = data.SplitSpec(cfg["split.train"], cfg["split.valid"], cfg["split.test"],
                          seed=cfg["seed"])
    return dataset, data.split(dataset, spec)


def _stage_one_cfg(cfg: RunConfig, gce=None) -> pipeline.StageOneConfig:
    return pipeline.StageOneConfig(
        epochs=cfg["stage1.epochs"], lr=cfg["stage1.lr"],
        batch_size=cfg["stage1.batch_size"], seed=cfg["seed"],
        patience=cfg["stage1.patience"], gce=gce,
        hidden_dims=cfg["model.hidden"], encoder_depth=cfg["model.encoder_depth"],
        dropout=cfg["model.dropout"],
    )


def _rnf_cfg(cfg: RunConfig) -> pipeline.RnfStageConfig:
    return pipeline.RnfStageConfig(
        loss=losses.RnfLossConfig(alpha=cfg["rnf.alpha"],
                                  lambda_set=cfg["rnf.lambda_set"],
                                  temperature=cfg["rnf.temperature"]),
        annotation=cfg["rnf.annotation"], epochs=cfg["rnf.epochs"], lr=cfg["rnf.lr"],
        batch_size=cfg["rnf.batch_size"], seed=cfg["seed"],
        patience=cfg["rnf.patience"], head_scope=cfg["rnf.head_scope"],
        head_init=cfg["rnf.head_init"], head_dropout=cfg["rnf.head_dropout"],
    )


def _baseline_cfg(cfg: RunConfig) -> pipeline.BaselineConfig:
    return pipeline.BaselineConfig(
        kind=cfg["baseline.kind"], beta=cfg["baseline.beta"],
        adversary_hidden=cfg["baseline.adversary_hidden"],
        epochs=cfg["baseline.epochs"], lr=cfg["baseline.lr"],
        batch_size=cfg["baseline.batch_size"], seed=cfg["seed"],
        patience=cfg["baseline.patience"], hidden_dims=cfg["model.hidden"],
        encoder_depth=cfg["model.encoder_depth"], dropout=cfg["model.dropout"],
    )


def _templates(cfg: RunConfig) -> pipeline.SweepTemplates:
    return pipeline.SweepTemplates(
        stage_one=_stage_one_cfg(cfg),
        bias_amplified=_stage_one_cfg(cfg, gce=losses.GceConfig(q=cfg["stage1.q"])),
        proxy=pipeline.ProxyConfig(gamma=cfg["proxy.gamma"]),
        rnf=_rnf_cfg(cfg),
        baseline=_baseline_cfg(cfg),
    )


def _emit_single(run_dir, cfg, method, record) -> None:
    rec = reports.single_record(
        f"{method}-s{cfg['seed']}", method, cfg["seed"], record,
        alpha=cfg["rnf.alpha"] if method.startswith("rnf") else math.nan,
        beta=cfg["baseline.beta"] if method in ("adversarial", "eor") else math.nan,
        q=cfg["stage1.q"] if method in ("gce", "rnf") else math.nan,
        gamma=cfg["proxy.gamma"] if method == "rnf" else math.nan,
        temperature=cfg["rnf.temperature"] if method.startswith("rnf") else math.nan,
    )
    path = os.path.join(run_dir, "metrics.csv")
    reports.emit_metrics_csv([rec], path)
    with open(path, "r", encoding="utf-8") as fh:
        print(fh.read(), end="")


def _undefined_only(record) -> bool:
    return math.isnan(record.dp) and math.isnan(record.delta_eo)


# --- commands ---------------------------------------------------------------


def cmd_synth_data(cfg: RunConfig) -> int:
    run_dir = _make_run_dir("synth-data", cfg)
    spec = data.SyntheticSpec(
        n=cfg["synth.n"], d=cfg["synth.d"],
        group_rates=(cfg["synth.rate0"], cfg["synth.rate1"]),
        group_balance=cfg["synth.balance"], noise=cfg["synth.noise"],
        seed=cfg["seed"],
    )
    ds = data.generate_synthetic(spec)
    out = cfg["synth.out"]
    if not os.path.isabs(out):
        out = os.path.join(run_dir, out)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(ds.feature_names) + ",a,y\n")
        for i in range(len(ds)):
            cells = [repr(float(v)) for v in ds.X[i]] + [str(int(ds.a[i])), str(int(ds.y[i]))]
            fh.write(",".join(cells) + "\n")
    schema_path = out + ".schema"
    with open(schema_path, "w", encoding="utf-8") as fh:
        for name in ds.feature_names:
            fh.write(f"column.{name}.kind=continuous\n")
        fh.write("column.a.kind=sensitive\ncolumn.y.kind=label\n")
        fh.write("label=y\ndesired=1\nsensitive=a\nprivileged=1\n")
        fh.write("sensitive_as_feature=false\n")
    log.info("wrote %s (%d rows) and %s", out, len(ds), schema_path)
    print(f"{out}\n{schema_path}")
    return 0


def cmd_train_teacher(cfg: RunConfig) -> int:
    return _train_stage_one_command(cfg, "train-teacher", gce=None)


def cmd_train_bias_amplified(cfg: RunConfig) -> int:
    return _train_stage_one_command(
        cfg, "train-bias-amplified", gce=losses.GceConfig(q=cfg["stage1.q"])
    )


def _train_stage_one_command(cfg, command, gce) -> int:
    run_dir = _make_run_dir(command, cfg)
    dataset, (train, valid, test) = _splits(cfg)
    _write_categories(dataset, run_dir)
    result = pipeline.train_stage_one(train, valid, _stage_one_cfg(cfg, gce=gce))
    checkpoint.save_checkpoint(result.model, os.path.join(run_dir, "model.ckpt"),
                               cfg.digest())
    record = pipeline.evaluate(result.model, test)
    _emit_single(run_dir, cfg, "gce" if gce else "vanilla", record)
    if cfg["data.dump_encoded"]:
        data.dump_encoded_csv(train, os.path.join(run_dir, "train_encoded.csv"))
    return 3 if _undefined_only(record) else 0


def cmd_gen_proxy(cfg: RunConfig) -> int:
    run_dir = _make_run_dir("gen-proxy", cfg)
    model, _ = checkpoint.load_checkpoint(_require_file(cfg["proxy.model"], "proxy.model"))
    _, (train, _, _) = _splits(cfg)
    proxy = pipeline.generate_proxy_annotations(
        model, train, pipeline.ProxyConfig(gamma=cfg["proxy.gamma"])
    )
    out = os.path.join(run_dir, "proxies.csv")
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("train_index,proxy\n")
        for i, v in enumerate(proxy):
            fh.write(f"{i},{int(v)}\n")
    if train.a is not None:
        agree = int(np.count_nonzero(proxy == train.a)) / len(train)
        log.info("proxy/ground-truth agreement: %.4f", agree)
    print(out)
    return 0


def _read_proxies(path, n) -> np.ndarray:
    out = np.full(n, -1, dtype=np.int64)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "train_index,proxy":
            raise ConfigError(f"{path}: not a proxies file")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            i, v = line.split(",")
            out[int(i)] = int(v)
    if np.any(out < 0):
        raise ConfigError(f"{path}: proxies do not cover every training sample")
    return out


def cmd_train_rnf(cfg: RunConfig) -> int:
    run_dir = _make_run_dir("train-rnf", cfg)
    teacher, _ = checkpoint.load_checkpoint(_require_file(cfg["rnf.teacher"], "rnf.teacher"))
    _, (train, valid, test) = _splits(cfg)
    rcfg = _rnf_cfg(cfg)
    if rcfg.annotation == "proxy":
        train = train.with_proxy(_read_proxies(
            _require_file(cfg["proxy.file"], "proxy.file"), len(train)))
    if rcfg.annotation == "ground_truth" and train.a is None:
        raise ConfigError("annotation=ground_truth but the dataset has no sensitive column")
    result = pipeline.train_rnf_head(teacher, train, valid, rcfg)
    checkpoint.save_checkpoint(result.model, os.path.join(run_dir, "student.ckpt"),
                               cfg.digest())
    method = {"proxy": "rnf", "ground_truth": "rnf_gt", "random": "rnf_random"}[rcfg.annotation]
    record = pipeline.evaluate(result.model, test)
    _emit_single(run_dir, cfg, method, record)
    return 3 if _undefined_only(record) else 0


def cmd_train_baseline(cfg: RunConfig) -> int:
    run_dir = _make_run_dir("train-baseline", cfg)
    _, (train, valid, test) = _splits(cfg)
    bcfg = _baseline_cfg(cfg)
    result = pipeline.train_baseline(train, valid, bcfg)
    checkpoint.save_checkpoint(result.model, os.path.join(run_dir, "model.ckpt"),
                               cfg.digest())
    record = pipeline.evaluate(result.model, test)
    _emit_single(run_dir, cfg, bcfg.kind, record)
    return 3 if _undefined_only(record) else 0


def cmd_evaluate(cfg: RunConfig) -> int:
    run_dir = _make_run_dir("evaluate", cfg)
    model, _ = checkpoint.load_checkpoint(_require_file(cfg["eval.checkpoint"],
                                                        "eval.checkpoint"))
    _, splits = _splits(cfg)
    which = {"train": 0, "valid": 1, "test": 2}
    if cfg["eval.split"] not in which:
        raise ConfigError(f"eval.split must be train|valid|test, got {cfg['eval.split']!r}")
    record = pipeline.evaluate(model, splits[which[cfg["eval.split"]]])
    _emit_single(run_dir, cfg, "eval", record)
    return 3 if _undefined_only(record) else 0


def cmd_sweep(cfg: RunConfig) -> int:
    run_dir = _make_run_dir("sweep", cfg)
    _, (train, valid, test) = _splits(cfg)
    points, records = pipeline.sweep(
        train, valid, test, cfg["sweep.method"], cfg["sweep.grid"],
        cfg["sweep.seeds"], tpl=_templates(cfg), base_seed=cfg["seed"],
    )
    reports.emit_metrics_csv(records, os.path.join(run_dir, "metrics.csv"))
    reports.emit_curve_csv(points, os.path.join(run_dir, "curve.csv"))
    if cfg["report.svg"]:
        reports.render_curve_svg(points, os.path.join(run_dir, "curve.svg"))
    for p in points:
        print(f"{p.method} param={p.param:g} acc={p.mean_acc:.4f} "
              f"dp={p.mean_dp:.4f} eo={p.mean_eo:.4f} n={p.n}")
    if all(math.isnan(p.mean_dp) and math.isnan(p.mean_eo) for p in points):
        return 3
    return 0


def cmd_probe(cfg: RunConfig) -> int:
    run_dir = _make_run_dir("probe", cfg)
    model, _ = checkpoint.load_checkpoint(_require_file(cfg["probe.checkpoint"],
                                                        "probe.checkpoint"))
    _, (train, _, _) = _splits(cfg)
    if train.a is None:
        raise ConfigError("probe needs a dataset with a sensitive column")
    n = min(cfg["probe.samples"], len(train))
    sel = substream(cfg["seed"], "probe-sample").permutation(len(train))[:n]
    Z = nn.encode(model, train.X[sel])
    preds = np.argmax(nn.forward(model, train.X[sel], mode="eval").probabilities, axis=1)
    gain = float(cfg["kpca.gain"]) if cfg["kpca.gain"] else None
    coords, evals, _ = analysis.kpca_project(Z, 2, gain=gain, offset=cfg["kpca.offset"])
    reports.emit_kpca_csv(coords, train.a[sel], train.y[sel], preds,
                          os.path.join(run_dir, "kpca.csv"))
    sens = analysis.fit_linear_probe(Z, train.a[sel], epochs=cfg["probe.epochs"],
                                     lr=cfg["probe.lr"], seed=cfg["seed"])
    mimic = analysis.fit_linear_probe(Z, preds, epochs=cfg["probe.epochs"],
                                      lr=cfg["probe.lr"], seed=cfg["seed"] + 1)
    cos = analysis.head_attention_similarity(sens, mimic, 1, 1)
    summary = {
        "samples": n,
        "kpca_eig1": repr(float(evals[0])),
        "kpca_eig2": repr(float(evals[1])),
        "sens_probe_accuracy": repr(analysis.probe_agreement(sens, Z, train.a[sel])),
        "mimic_agreement": repr(analysis.probe_agreement(mimic, Z, preds)),
        "cosine_similarity": "" if math.isnan(cos) else repr(cos),
    }
    with open(os.path.join(run_dir, "probe.txt"), "w", encoding="utf-8") as fh:
        for key, value in summary.items():
            fh.write(f"{key}={value}\n")
            print(f"{key}={value}")
    return 0


def cmd_verify_bound(cfg: RunConfig) -> int:
    run_dir = _make_run_dir("verify-bound", cfg)
    model, _ = checkpoint.load_checkpoint(_require_file(cfg["bound.checkpoint"],
                                                        "bound.checkpoint"))
    _, (train, _, _) = _splits(cfg)
    if train.a is None:
        raise ConfigError("verify-bound needs a dataset with a sensitive column")
    logits = nn.forward(model, train.X, mode="eval").logits
    p = losses.softmax_temperature(logits, cfg["rnf.temperature"])[:, 1]
    Z = nn.encode(model, train.X)
    z1, z2, p1, p2 = analysis.match_pairs_by_confidence(Z, p, train.a,
                                                        n_pairs=cfg["bound.pairs"])
    inst = analysis.verify_theorem_bound(analysis.make_head_fn(model), z1, z2, p1, p2,
                                         fd_step=cfg["bound.fd_step"])
    verdict = ("hypothesis-violation" if inst.passed is None
               else "pass" if inst.passed else "FAIL")
    lines = [
        f"pairs={inst.n_pairs}",
        f"epsilon_p={inst.epsilon_p!r}",
        f"lambda_z={inst.lambda_z!r}",
        f"epsilon_c={inst.epsilon_c!r}",
        f"epsilon_L={inst.epsilon_L!r}",
        f"loss_gap={inst.loss_gap!r}",
        f"bound={inst.bound!r}",
        f"verdict={verdict}",
    ]
    with open(os.path.join(run_dir, "bound.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


COMMANDS = {
    "train-teacher": cmd_train_teacher,
    "train-bias-amplified": cmd_train_bias_amplified,
    "gen-proxy": cmd_gen_proxy,
    "train-rnf": cmd_train_rnf,
    "train-baseline": cmd_train_baseline,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "probe": cmd_probe,
    "verify-bound": cmd_verify_bound,
    "synth-data": cmd_synth_data,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rnf",
        description="Classification-head debiasing via representation "
                    "neutralization, with fairness evaluation and baselines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("rnf")
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    try:
        cfg = load_config(args.config, args.set)
        return COMMANDS[args.command](cfg)
    except (ConfigError, IngestError, InputError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (CheckpointError, RnfError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    finally:
        root.removeHandler(handler)
        while _run_handlers:
            h = _run_handlers.pop()
            h.close()
            root.removeHandler(h)


if __name__ == "__main__":
    sys.exit(main())
