"""Flat key=value run configuration.

One UTF-8 text file (``#`` comments allowed) covers every stage; unknown
keys are rejected so typos fail fast.  ``--set key=value`` overrides from
the command line go through the same table.  Values keep their file
spelling in the snapshot so re-running a snapshot is byte-reproducible.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import ConfigError


def _bool(v: str) -> bool:
    if v.lower() in ("true", "1", "yes"):
        return True
    if v.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {v!r}")


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.split(",") if x.strip())


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(",") if x.strip())


# key -> (converter, default-as-string or None)
KNOWN_KEYS: dict = {
    "seed": (int, "0"),
    "out.dir": (str, "runs"),
    "run.name": (str, ""),

    "data.path": (str, ""),
    "data.schema": (str, ""),
    "data.categories": (str, ""),
    "data.dump_encoded": (_bool, "false"),

    "split.train": (float, "0.72"),
    "split.valid": (float, "0.08"),
    "split.test": (float, "0.2"),

    "model.hidden": (_ints, "50,50"),
    "model.encoder_depth": (int, "1"),
    "model.dropout": (float, "0.2"),

    "stage1.epochs": (int, "20"),
    "stage1.lr": (float, "1e-3"),
    "stage1.batch_size": (int, "64"),
    "stage1.patience": (int, "5"),
    "stage1.q": (float, "0.2"),

    "proxy.gamma": (float, "0.5"),
    "proxy.model": (str, ""),
    "proxy.file": (str, ""),

    "rnf.alpha": (float, "1.0"),
    "rnf.lambda_set": (_floats, "0.6,0.7,0.8,0.9"),
    "rnf.temperature": (float, "2.0"),
    "rnf.annotation": (str, "proxy"),
    "rnf.epochs": (int, "20"),
    "rnf.lr": (float, "1e-3"),
    "rnf.batch_size": (int, "64"),
    "rnf.patience": (int, "5"),
    "rnf.head_scope": (str, "full_head"),
    "rnf.head_init": (str, "teacher"),
    "rnf.head_dropout": (_bool, "true"),
    "rnf.teacher": (str, ""),

    "baseline.kind": (str, "eor"),
    "baseline.beta": (float, "1.0"),
    "baseline.adversary_hidden": (_ints, "50"),
    "baseline.epochs": (int, "20"),
    "baseline.lr": (float, "1e-3"),
    "baseline.batch_size": (int, "64"),
    "baseline.patience": (int, "5"),

    "sweep.method": (str, "rnf"),
    "sweep.grid": (_floats, "0.0,0.5,1.0"),
    "sweep.seeds": (int, "5"),

    "synth.n": (int, "1600"),
    "synth.d": (int, "4"),
    "synth.rate0": (float, "0.3"),
    "synth.rate1": (float, "0.7"),
    "synth.balance": (float, "0.5"),
    "synth.noise": (float, "1.0"),
    "synth.out": (str, "synth.csv"),

    "eval.checkpoint": (str, ""),
    "eval.split": (str, "test"),

    "probe.checkpoint": (str, ""),
    "probe.samples": (int, "500"),
    "probe.epochs": (int, "200"),
    "probe.lr": (float, "1e-2"),
    "kpca.gain": (str, ""),
    "kpca.offset": (float, "1.0"),

    "bound.checkpoint": (str, ""),
    "bound.pairs": (int, "100"),
    "bound.fd_step": (float, "1e-5"),

    "report.svg": (_bool, "false"),
}


@dataclass
class RunConfig:
    """Resolved configuration: raw strings plus typed access."""

    raw: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.raw) - set(KNOWN_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    def get(self, key: str):
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        conv, default = KNOWN_KEYS[key]
        value = self.raw.get(key, default)
        try:
            return conv(value)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None

    def __getitem__(self, key: str):
        return self.get(key)

    def set(self, key: str, value: str):
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        self.raw[key] = value

    def snapshot(self) -> str:
        """Canonical serialization: every known key, resolved, sorted."""
        lines = []
        for key in sorted(KNOWN_KEYS):
            _, default = KNOWN_KEYS[key]
            lines.append(f"{key}={self.raw.get(key, default)}")
        return "\n".join(lines) + "\n"

    def digest(self) -> bytes:
        return hashlib.sha256(self.snapshot().encode("utf-8")).digest()


def parse_config(text: str) -> RunConfig:
    raw: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        raw[key.strip()] = value.strip()
    return RunConfig(raw)


def load_config(path=None, overrides=()) -> RunConfig:
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
    else:
        cfg = RunConfig({})
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value.strip())
    # eagerly validate every provided value
    for key in cfg.raw:
        cfg.get(key)
    return cfg
