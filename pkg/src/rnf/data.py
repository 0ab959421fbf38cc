"""Dataset schema, CSV ingestion, splits, batching and pair sampling.

A schema is a flat ``key=value`` text file declaring, per CSV column, how
it is featurized:

    column.<name>.kind = categorical | continuous | binary | label
                         | sensitive | ignore
    column.<name>.positive = <value>     (binary columns: value mapped to 1)
    label=<column>  desired=<value>  sensitive=<column>  privileged=<value>
    missing=<token>            missing-value token, default "?"
    drop_missing=true|false    drop rows containing the token (default keep;
                               kept categorical missings become their own
                               "<missing>" one-hot category)
    sensitive_as_feature=true|false   also encode the sensitive column as a
                               0/1 feature (1 = privileged), default true
    default_kind=<kind>        kind for columns the schema does not list
    expect_dim=<int>           hard check on the encoded feature dimension

Categoricals are one-hot encoded in first-appearance order; continuous
columns are standardized later, by ``split``, using training-split
statistics only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, IngestError, ShapeError
from .rng import substream

MISSING_CATEGORY = "<missing>"
_KINDS = ("categorical", "continuous", "binary", "label", "sensitive", "ignore")


@dataclass
class Sample:
    """One row: features, class label, group label, proxy group label."""

    x: np.ndarray
    y: int
    a: int | None = None
    proxy: int | None = None


@dataclass
class ColumnSpec:
    kind: str
    positive: str | None = None


@dataclass
class DatasetSchema:
    """Declarative featurization of one CSV layout."""

    columns: dict[str, ColumnSpec]
    label_column: str
    desired: str
    sensitive_column: str | None = None
    privileged: str | None = None
    missing_token: str = "?"
    drop_missing: bool = False
    sensitive_as_feature: bool = True
    default_kind: str | None = None
    expect_dim: int | None = None

    def __post_init__(self):
        labels = [c for c, s in self.columns.items() if s.kind == "label"]
        if self.label_column not in self.columns:
            self.columns[self.label_column] = ColumnSpec("label")
            labels.append(self.label_column)
        if labels != [self.label_column]:
            raise ConfigError(f"exactly one label column required, got {labels}")
        sens = [c for c, s in self.columns.items() if s.kind == "sensitive"]
        if self.sensitive_column and self.sensitive_column not in self.columns:
            self.columns[self.sensitive_column] = ColumnSpec("sensitive")
            sens.append(self.sensitive_column)
        if len(sens) > 1 or (sens and sens != [self.sensitive_column]):
            raise ConfigError(f"at most one sensitive column allowed, got {sens}")
        if sens and not self.privileged:
            raise ConfigError("sensitive column declared without privileged= value")
        for name, spec in self.columns.items():
            if spec.kind not in _KINDS:
                raise ConfigError(f"column {name}: unknown kind {spec.kind!r}")
            if spec.kind == "binary" and spec.positive is None:
                raise ConfigError(f"binary column {name} needs a positive= value")
        if self.default_kind is not None and self.default_kind not in (
            "categorical", "continuous", "ignore"
        ):
            raise ConfigError(f"default_kind must be a feature kind, got {self.default_kind}")


def parse_schema(text: str) -> DatasetSchema:
    columns: dict[str, ColumnSpec] = {}
    attrs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"schema line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if key.startswith("column."):
            rest = key[len("column."):]
            name, _, attr = rest.rpartition(".")
            if not name or attr not in ("kind", "positive"):
                raise ConfigError(f"schema line {lineno}: bad column key {key!r}")
            spec = columns.setdefault(name, ColumnSpec("ignore"))
            if attr == "kind":
                spec.kind = value
            else:
                spec.positive = value
        else:
            attrs[key] = value

    known = {"label", "desired", "sensitive", "privileged", "missing",
             "drop_missing", "sensitive_as_feature", "default_kind", "expect_dim"}
    unknown = set(attrs) - known
    if unknown:
        raise ConfigError(f"unknown schema keys: {sorted(unknown)}")
    if "label" not in attrs or "desired" not in attrs:
        raise ConfigError("schema must declare label= and desired=")

    def flag(key, default):
        v = attrs.get(key)
        if v is None:
            return default
        if v.lower() not in ("true", "false"):
            raise ConfigError(f"{key} must be true or false, got {v!r}")
        return v.lower() == "true"

    return DatasetSchema(
        columns=columns,
        label_column=attrs["label"],
        desired=attrs["desired"],
        sensitive_column=attrs.get("sensitive"),
        privileged=attrs.get("privileged"),
        missing_token=attrs.get("missing", "?"),
        drop_missing=flag("drop_missing", False),
        sensitive_as_feature=flag("sensitive_as_feature", True),
        default_kind=attrs.get("default_kind"),
        expect_dim=int(attrs["expect_dim"]) if "expect_dim" in attrs else None,
    )


def load_schema(path) -> DatasetSchema:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_schema(fh.read())


@dataclass
class Dataset:
    """Immutable feature matrix with labels and (optional) group columns.

    ``continuous_idx`` marks the columns that standardization applies to;
    ``categories`` records the one-hot order per categorical column so a
    later ingest of new data can reproduce the encoding.
    """

    X: np.ndarray
    y: np.ndarray
    a: np.ndarray | None = None
    proxy: np.ndarray | None = None
    feature_names: tuple[str, ...] = ()
    continuous_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    categories: dict = field(default_factory=dict)
    standardized: bool = False
    num_classes: int = 2
    num_groups: int = 2

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise ShapeError("X must be (n, d) with matching labels")
        if self.a is not None:
            self.a = np.asarray(self.a, dtype=np.int64)
            if self.a.shape != self.y.shape:
                raise ShapeError("groups must align with labels")
        if self.proxy is not None:
            self.proxy = np.asarray(self.proxy, dtype=np.int64)
            if self.proxy.shape != self.y.shape:
                raise ShapeError("proxy annotations must align with labels")
        if not self.feature_names:
            self.feature_names = tuple(f"f{i}" for i in range(self.X.shape[1]))

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def sample(self, i: int) -> Sample:
        return Sample(
            self.X[i].copy(), int(self.y[i]),
            None if self.a is None else int(self.a[i]),
            None if self.proxy is None else int(self.proxy[i]),
        )

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            X=self.X[idx].copy(),
            y=self.y[idx].copy(),
            a=None if self.a is None else self.a[idx].copy(),
            proxy=None if self.proxy is None else self.proxy[idx].copy(),
        )

    def with_proxy(self, proxy) -> "Dataset":
        """Copy of the dataset with proxy group annotations attached."""
        p = np.asarray(proxy, dtype=np.int64)
        if p.shape != self.y.shape:
            raise ShapeError("proxy annotations must align with labels")
        return replace(self, proxy=p)


def ingest_csv(path, schema: DatasetSchema, categories=None) -> Dataset:
    """Encode a CSV file into a Dataset according to the schema.

    Rows with a missing label are dropped always; other missing handling
    follows the schema.  Feature columns keep header order, categoricals
    expanding in place with first-appearance category order (or the
    supplied ``categories``).
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        rows = [[c.strip() for c in row] for row in reader if any(c.strip() for c in row)]

    colspec: dict[str, ColumnSpec] = {}
    for name, spec in schema.columns.items():
        if name not in header:
            raise IngestError(f"schema column {name!r} not found in {path}")
        colspec[name] = spec
    for name in header:
        if name not in colspec:
            if schema.default_kind is None:
                raise IngestError(f"column {name!r} missing from schema (set default_kind= to allow)")
            colspec[name] = ColumnSpec(schema.default_kind)

    col_of = {name: header.index(name) for name in header}
    label_i = col_of[schema.label_column]
    sens_i = col_of[schema.sensitive_column] if schema.sensitive_column else None
    missing = schema.missing_token
    used = [n for n in header if colspec[n].kind != "ignore"]

    kept = []
    for row in rows:
        if len(row) != len(header):
            raise IngestError(f"{path}: row has {len(row)} cells, expected {len(header)}")
        if row[label_i] == missing or row[label_i] == "":
            continue
        if schema.drop_missing and any(row[col_of[n]] == missing for n in used):
            continue
        kept.append(row)
    if not kept:
        raise IngestError(f"{path}: no usable rows")

    fixed_categories = categories is not None
    cats: dict[str, list[str]] = {k: list(v) for k, v in (categories or {}).items()}
    feature_cols = [n for n in header
                    if colspec[n].kind in ("categorical", "continuous", "binary")
                    or (colspec[n].kind == "sensitive" and schema.sensitive_as_feature)]
    for name in feature_cols:
        if colspec[name].kind == "categorical":
            seen = cats.setdefault(name, [])
            for row in kept:
                v = row[col_of[name]]
                v = MISSING_CATEGORY if v == missing else v
                if v not in seen:
                    if fixed_categories:
                        raise IngestError(f"column {name!r}: unseen category {v!r}")
                    seen.append(v)

    names: list[str] = []
    continuous: list[int] = []
    blocks: list[tuple[str, str]] = []  # (column, kind) in output order
    for name in feature_cols:
        kind = colspec[name].kind
        if kind == "categorical":
            for cat in cats[name]:
                names.append(f"{name}={cat}")
            blocks.append((name, "categorical"))
        elif kind == "continuous":
            continuous.append(len(names))
            names.append(name)
            blocks.append((name, "continuous"))
        elif kind == "binary":
            names.append(f"{name}={colspec[name].positive}")
            blocks.append((name, "binary"))
        else:  # sensitive included as a feature
            names.append(f"{name}={schema.privileged}")
            blocks.append((name, "sensitive"))

    n, d = len(kept), len(names)
    X = np.zeros((n, d))
    y = np.zeros(n, dtype=np.int64)
    a = np.zeros(n, dtype=np.int64) if schema.sensitive_column else None
    for r, row in enumerate(kept):
        y[r] = 1 if row[label_i] == schema.desired else 0
        if a is not None:
            a[r] = 1 if row[sens_i] == schema.privileged else 0
        j = 0
        for name, kind in blocks:
            v = row[col_of[name]]
            if kind == "categorical":
                v = MISSING_CATEGORY if v == missing else v
                X[r, j + cats[name].index(v)] = 1.0
                j += len(cats[name])
            elif kind == "continuous":
                try:
                    X[r, j] = float(v)
                except ValueError:
                    raise IngestError(
                        f"column {name!r}: unparseable numeric {v!r} (row {r})"
                    ) from None
                j += 1
            elif kind == "binary":
                X[r, j] = 1.0 if v == colspec[name].positive else 0.0
                j += 1
            else:
                X[r, j] = 1.0 if v == schema.privileged else 0.0
                j += 1

    if schema.expect_dim is not None and d != schema.expect_dim:
        raise IngestError(
            f"{path}: encoded feature dim {d} != expected {schema.expect_dim}; "
            "adjust the schema until the dimension matches"
        )
    return Dataset(
        X, y, a=a, feature_names=tuple(names),
        continuous_idx=np.asarray(continuous, dtype=np.int64),
        categories={k: tuple(v) for k, v in cats.items()},
    )


def dump_encoded_csv(dataset: Dataset, path) -> None:
    """Debug dump of the post-encoding feature matrix (plus y, a, proxy)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        extra = ["y"] + (["a"] if dataset.a is not None else []) \
            + (["proxy"] if dataset.proxy is not None else [])
        w.writerow(list(dataset.feature_names) + extra)
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.X[i]] + [int(dataset.y[i])]
            if dataset.a is not None:
                row.append(int(dataset.a[i]))
            if dataset.proxy is not None:
                row.append(int(dataset.proxy[i]))
            w.writerow(row)


@dataclass
class SplitSpec:
    """Train/valid/test sizes as absolute counts or fractions, plus a seed."""

    train: float
    valid: float
    test: float
    seed: int = 0

    def resolve(self, n: int) -> tuple[int, int, int]:
        parts = (self.train, self.valid, self.test)
        if any(p < 0 for p in parts):
            raise ConfigError(f"split sizes must be non-negative, got {parts}")
        integral = all(float(p).is_integer() for p in parts)
        if integral and sum(int(p) for p in parts) == n:
            return tuple(int(p) for p in parts)
        if abs(sum(parts) - 1.0) <= 1e-9:
            tr = int(round(self.train * n))
            va = int(round(self.valid * n))
            te = n - tr - va
            if te < 0:
                raise ConfigError(f"split fractions {parts} over-allocate {n} rows")
            return tr, va, te
        if integral:
            raise ConfigError(f"split counts {parts} do not sum to {n}")
        raise ConfigError(f"split fractions {parts} do not sum to 1")


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint, exhaustive, seeded-shuffle partition.

    Continuous columns are standardized to zero mean and unit variance
    using statistics of the training split only, applied to all three.
    """
    n = len(dataset)
    n_train, n_valid, n_test = spec.resolve(n)
    perm = substream(spec.seed, "split").permutation(n)
    parts = [
        dataset.subset(perm[:n_train]),
        dataset.subset(perm[n_train:n_train + n_valid]),
        dataset.subset(perm[n_train + n_valid:]),
    ]
    cols = dataset.continuous_idx
    if cols.size and n_train > 0 and not dataset.standardized:
        mu = parts[0].X[:, cols].mean(axis=0)
        sd = parts[0].X[:, cols].std(axis=0)
        sd = np.where(sd < 1e-12, 1.0, sd)
        for part in parts:
            part.X[:, cols] = (part.X[:, cols] - mu) / sd
            part.standardized = True
    return tuple(parts)


def batches(dataset, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Seeded per-epoch shuffle chopped into batches; the short tail is kept."""
    if batch_size < 2:
        raise ConfigError("batch_size must be >= 2 (pair sampling needs partners)")
    n = dataset if isinstance(dataset, int) else len(dataset)
    perm = substream(seed, "shuffle", epoch).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def sample_pair(batch, anchor: int, labels, groups, rng) -> int | None:
    """Uniform partner for the anchor within the batch.

    Candidates share the anchor's class label and have a different group
    annotation; returns None when no candidate exists.
    """
    idx = np.asarray(batch, dtype=np.int64)
    y = np.asarray(labels)
    g = np.asarray(groups)
    mask = (y[idx] == y[anchor]) & (g[idx] != g[anchor])
    candidates = idx[mask]
    if candidates.size == 0:
        return None
    return int(candidates[rng.integers(candidates.size)])


def sample_pairs(batch, labels, groups, rng) -> np.ndarray:
    """Vectorized partner per batch member; -1 marks anchors without one."""
    idx = np.asarray(batch, dtype=np.int64)
    out = np.full(idx.size, -1, dtype=np.int64)
    for pos, anchor in enumerate(idx):
        j = sample_pair(idx, int(anchor), labels, groups, rng)
        if j is not None:
            out[pos] = j
    return out


# Planted mean offsets: the group axis is stronger than the label axis, so
# a fitted model leans on group membership and amplifies the base-rate skew.
GROUP_SCALE = 1.5
LABEL_SCALE = 0.6


@dataclass
class SyntheticSpec:
    """Planted-bias synthetic data: a group mean along axis 0, a label mean
    along axis 1, Gaussian noise elsewhere, and per-group base rates."""

    n: int = 1600
    d: int = 4
    group_rates: tuple[float, float] = (0.3, 0.7)
    group_balance: float = 0.5
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.d < 2:
            raise ConfigError("d must be >= 2")
        if self.n < 4:
            raise ConfigError("n must be >= 4")
        if any(not 0.0 <= r <= 1.0 for r in self.group_rates):
            raise ConfigError(f"group rates must lie in [0, 1], got {self.group_rates}")
        if not 0.0 <= self.group_balance <= 1.0:
            raise ConfigError(f"group_balance must lie in [0, 1], got {self.group_balance}")
        if self.noise < 0.0:
            raise ConfigError("noise must be >= 0")


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw a dataset with a planted group-label correlation.

    Group 0 (unprivileged) has base rate group_rates[0] of the desired
    label, group 1 has group_rates[1]; features are
    GROUP_SCALE (2a-1) e0 + LABEL_SCALE (2y-1) e1 + noise * N(0, I).  The
    group axis separates more cleanly than the label axis, so a model
    fitted on skewed base rates exploits group membership and its
    predicted positive rates are more group-dependent than the labels.
    """
    rng = substream(spec.seed, "synth")
    n, d = spec.n, spec.d
    a = (rng.random(n) >= spec.group_balance).astype(np.int64)
    rates = np.asarray(spec.group_rates)
    y = (rng.random(n) < rates[a]).astype(np.int64)
    X = spec.noise * rng.standard_normal((n, d))
    X[:, 0] += GROUP_SCALE * (2.0 * a - 1.0)
    X[:, 1] += LABEL_SCALE * (2.0 * y - 1.0)
    return Dataset(
        X, y, a=a,
        continuous_idx=np.arange(d, dtype=np.int64),
    )
