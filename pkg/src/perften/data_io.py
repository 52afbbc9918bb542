"""Experiment records: loading, bucketing, featurization and tensor assembly.

Record CSV layout: a header row, a reserved ``score`` column, numeric feature
columns prefixed ``f_`` and every other column a categorical coordinate.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DuplicateEntryError,
    EmptyDataError,
    InfeasiblePlanError,
    ParseError,
    SchemaError,
    UnknownLabelError,
)
from .tensor_core import PerformanceTensor

SCORE_COLUMN = "score"
FEATURE_PREFIX = "f_"


@dataclass(frozen=True)
class PerformanceRecord:
    """One experiment outcome.

    ``coords`` maps dimension name to categorical label, ``features`` holds
    numeric features (holistic setting) and ``score`` the measured value.
    ``score`` may be ``None`` only for records that are to be predicted.
    """

    coords: Dict[str, str]
    score: Optional[float] = None
    features: Tuple[float, ...] = ()
    feature_names: Tuple[str, ...] = ()

    def __post_init__(self):
        if not self.coords and not self.features:
            raise SchemaError("record needs at least one coordinate or feature")
        if self.score is not None and not math.isfinite(self.score):
            raise ValueError(f"score must be finite, got {self.score!r}")

    def key(self, dims):
        return tuple(self.coords[d] for d in dims)


def natural_key(label):
    """Sort numeric-looking labels numerically, before all other labels."""
    try:
        return (0, float(label), "")
    except ValueError:
        return (1, 0.0, label)


def _parse_score(raw, line):
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise ParseError(f"line {line}: score {raw!r} is not a number", line=line) from None
    if not math.isfinite(value):
        raise ParseError(f"line {line}: score {raw!r} is not finite", line=line)
    return value


def _parse_feature(name, raw, line):
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ParseError(f"line {line}: feature {name} value {raw!r} is not a number", line=line) from None


def load_records(path, format=None, require_score=True):
    """Read records from a CSV or JSON-lines file, preserving row order.

    ``format`` defaults to the file extension (``.jsonl``/``.json`` -> JSON
    lines, anything else CSV).
    """
    path = str(path)
    if format is None:
        format = "jsonl" if path.endswith((".jsonl", ".json")) else "csv"
    if format == "csv":
        return _load_csv(path, require_score)
    if format in ("jsonl", "json-lines"):
        return _load_jsonl(path, require_score)
    raise ValueError(f"unknown record format {format!r}")


def _load_csv(path, require_score):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: missing header row") from None
        if len(set(header)) != len(header):
            raise SchemaError(f"{path}: duplicate column names in header")
        if SCORE_COLUMN not in header and require_score:
            raise SchemaError(f"{path}: no '{SCORE_COLUMN}' column in header")
        feat_cols = [h for h in header if h.startswith(FEATURE_PREFIX)]
        coord_cols = [h for h in header if h != SCORE_COLUMN and not h.startswith(FEATURE_PREFIX)]
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"line {lineno}: expected {len(header)} fields, got {len(row)}", line=lineno)
            cells = dict(zip(header, (c.strip() for c in row)))
            score = None
            if SCORE_COLUMN in cells and (require_score or cells[SCORE_COLUMN] != ""):
                score = _parse_score(cells[SCORE_COLUMN], lineno)
            records.append(PerformanceRecord(
                coords={c: cells[c] for c in coord_cols},
                score=score,
                features=tuple(_parse_feature(f, cells[f], lineno) for f in feat_cols),
                feature_names=tuple(feat_cols),
            ))
    return records


def _load_jsonl(path, require_score):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: invalid JSON ({exc.msg})", line=lineno) from None
            if not isinstance(obj, dict):
                raise ParseError(f"line {lineno}: expected a JSON object", line=lineno)
            if SCORE_COLUMN not in obj:
                if require_score:
                    raise SchemaError(f"{path} line {lineno}: no '{SCORE_COLUMN}' field")
                score = None
            else:
                score = _parse_score(obj[SCORE_COLUMN], lineno)
            coords = obj.get("coords")
            names, feats = [], []
            if coords is None:
                coords = {}
                for k, v in obj.items():
                    if k == SCORE_COLUMN or k == "features":
                        continue
                    if k.startswith(FEATURE_PREFIX):
                        names.append(k)
                        feats.append(_parse_feature(k, v, lineno))
                    else:
                        coords[k] = str(v)
            else:
                coords = {str(k): str(v) for k, v in coords.items()}
            nested = obj.get("features")
            if isinstance(nested, dict):
                for k, v in nested.items():
                    names.append(k)
                    feats.append(_parse_feature(k, v, lineno))
            elif isinstance(nested, list):
                for i, v in enumerate(nested):
                    names.append(f"{FEATURE_PREFIX}{i}")
                    feats.append(_parse_feature(f"{FEATURE_PREFIX}{i}", v, lineno))
            records.append(PerformanceRecord(coords, score, tuple(feats), tuple(names)))
    return records


def write_records_csv(path, records, dims=None, extra=None):
    """Write records in the canonical CSV layout. ``extra`` maps column -> per-record values."""
    if not records:
        raise EmptyDataError("no records to write")
    dims = list(dims or records[0].coords)
    fnames = list(records[0].feature_names)
    extra = extra or {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(dims + fnames + [SCORE_COLUMN] + list(extra))
        for i, r in enumerate(records):
            w.writerow([r.coords[d] for d in dims] + [repr(float(v)) for v in r.features]
                       + ["" if r.score is None else repr(float(r.score))]
                       + [extra[c][i] for c in extra])


# ----------------------------------------------------------------------------
# Bucketing


@dataclass(frozen=True)
class BucketPlan:
    attribute: str
    boundaries: Tuple[float, ...]
    n_buckets: int

    def __post_init__(self):
        if self.n_buckets != len(self.boundaries) + 1:
            raise ValueError("n_buckets must equal len(boundaries) + 1")
        if any(b >= c for b, c in zip(self.boundaries, self.boundaries[1:])):
            raise ValueError("boundaries must be strictly increasing")

    def assign(self, values):
        """Bucket index per value; a value equal to a boundary goes to the upper bucket."""
        return np.searchsorted(np.asarray(self.boundaries, dtype=float),
                               np.asarray(values, dtype=float), side="right")


def bucketize(values, n_buckets, strategy="equal_frequency", boundaries=None, attribute=""):
    """Assign each value to one of ``n_buckets`` ordered buckets.

    ``equal_frequency`` cuts the sorted values as close as possible to equal
    sizes without ever splitting a run of tied values; boundaries sit midway
    between the distinct values on either side of a cut. ``fixed_boundaries``
    uses the given boundaries as is. Returns ``(indices, plan)``.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise EmptyDataError("no values to bucketize")
    if n_buckets < 1:
        raise InfeasiblePlanError("n_buckets must be >= 1")
    if strategy == "fixed_boundaries":
        if boundaries is None:
            raise ValueError("fixed_boundaries strategy needs boundaries")
        plan = BucketPlan(attribute, tuple(float(b) for b in boundaries), len(boundaries) + 1)
        if plan.n_buckets != n_buckets:
            raise InfeasiblePlanError(f"{len(boundaries)} boundaries give {plan.n_buckets} buckets, not {n_buckets}")
        return plan.assign(values), plan
    if strategy != "equal_frequency":
        raise ValueError(f"unknown bucketing strategy {strategy!r}")

    distinct, counts = np.unique(values, return_counts=True)
    if n_buckets > distinct.size:
        raise InfeasiblePlanError(
            f"cannot form {n_buckets} buckets from {distinct.size} distinct values without splitting ties")
    n = values.size
    # cum[j] = number of values <= distinct[j]; a cut after distinct[j] puts cum[j] values below it
    cum = np.cumsum(counts)
    cuts = []
    prev = -1
    for k in range(1, n_buckets):
        target = k * n / n_buckets
        # leave at least one distinct value for each remaining bucket
        lo, hi = prev + 1, distinct.size - 1 - (n_buckets - k)
        cand = np.arange(lo, hi + 1)
        j = int(cand[np.argmin(np.abs(cum[cand] - target))])
        cuts.append(j)
        prev = j
    bounds = tuple(float((distinct[j] + distinct[j + 1]) / 2.0) for j in cuts)
    plan = BucketPlan(attribute, bounds, n_buckets)
    return plan.assign(values), plan


# ----------------------------------------------------------------------------
# Vocabulary, featurization and tensors


@dataclass(frozen=True)
class Vocabulary:
    """Closed label sets per coordinate dimension, in index order."""

    dims: Tuple[str, ...]
    labels: Dict[str, Tuple[str, ...]]
    feature_names: Tuple[str, ...] = ()

    def index(self, dim, label):
        try:
            return self._lookup[dim][label]
        except KeyError:
            if dim not in self.labels:
                raise SchemaError(f"unknown dimension {dim!r}") from None
            raise UnknownLabelError(f"label {label!r} not in vocabulary of dimension {dim!r}") from None

    @property
    def _lookup(self):
        cache = self.__dict__.get("_cache")
        if cache is None:
            cache = {d: {lab: i for i, lab in enumerate(labs)} for d, labs in self.labels.items()}
            object.__setattr__(self, "_cache", cache)
        return cache

    @property
    def shape(self):
        return tuple(len(self.labels[d]) for d in self.dims)

    def label_map(self):
        return {d: list(self.labels[d]) for d in self.dims}


def build_vocabulary(records, dims=None):
    """Collect label sets from records; labels sorted with :func:`natural_key`."""
    if not records:
        raise EmptyDataError("no records")
    dims = tuple(dims) if dims is not None else tuple(records[0].coords)
    if len(set(dims)) != len(dims):
        raise SchemaError(f"dimension names must be unique: {dims}")
    seen = {d: set() for d in dims}
    for r in records:
        for d in dims:
            if d not in r.coords:
                raise SchemaError(f"record {r.coords} lacks dimension {d!r}")
            seen[d].add(r.coords[d])
    labels = {d: tuple(sorted(seen[d], key=natural_key)) for d in dims}
    return Vocabulary(dims, labels, tuple(records[0].feature_names))


@dataclass
class FeatureSchema:
    """Encoding plan: one-hot groups for categorical dims, then numeric features.

    When ``zscore`` is set, numeric features are standardized with the
    training statistics captured by :meth:`fit_stats`.
    """

    vocab: Vocabulary
    categorical: Tuple[str, ...]
    numeric: Tuple[str, ...] = ()
    zscore: bool = False
    means: Optional[np.ndarray] = None
    stddevs: Optional[np.ndarray] = None
    _offsets: Dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        off = 0
        for d in self.categorical:
            self._offsets[d] = off
            off += len(self.vocab.labels[d])
        self._n_onehot = off

    @property
    def width(self):
        return self._n_onehot + len(self.numeric)

    def columns(self):
        cols = [f"{d}={lab}" for d in self.categorical for lab in self.vocab.labels[d]]
        return cols + list(self.numeric)

    def fit_stats(self, records):
        if self.numeric and self.zscore:
            raw = np.array([_numeric(r, self.numeric) for r in records], dtype=float)
            self.means = raw.mean(axis=0)
            sd = raw.std(axis=0)
            sd[sd == 0] = 1.0
            self.stddevs = sd
        return self

    def encode(self, records):
        X = np.zeros((len(records), self.width))
        for i, r in enumerate(records):
            X[i] = featurize(r, self)
        return X


def _numeric(record, names):
    lookup = dict(zip(record.feature_names, record.features))
    try:
        return [lookup[n] for n in names]
    except KeyError as exc:
        raise SchemaError(f"record lacks numeric feature {exc.args[0]!r}") from None


def make_schema(vocab, categorical=None, zscore=False):
    cats = tuple(vocab.dims if categorical is None else categorical)
    return FeatureSchema(vocab, cats, tuple(vocab.feature_names), zscore)


def featurize(record, schema):
    """Encode one record as a dense vector following ``schema``."""
    vec = np.zeros(schema.width)
    for d in schema.categorical:
        if d not in record.coords:
            raise SchemaError(f"record lacks coordinate {d!r}")
        vec[schema._offsets[d] + schema.vocab.index(d, record.coords[d])] = 1.0
    if schema.numeric:
        num = np.asarray(_numeric(record, schema.numeric), dtype=float)
        if schema.zscore and schema.means is not None:
            num = (num - schema.means) / schema.stddevs
        vec[schema._n_onehot:] = num
    return vec


def build_tensor(records, dim_order=None, vocab=None, duplicates="error"):
    """Scatter record scores into a masked tensor.

    ``duplicates="mean"`` collapses records sharing a cell to their mean and
    stores the multiplicity as the cell weight (bootstrap resamples);
    otherwise a repeated cell raises :class:`DuplicateEntryError`.
    Returns ``(tensor, vocab)``.
    """
    if vocab is None:
        vocab = build_vocabulary(records, dim_order)
    elif dim_order is not None and tuple(dim_order) != vocab.dims:
        raise SchemaError("dim_order disagrees with the supplied vocabulary")
    dims = vocab.dims
    shape = vocab.shape
    if len(shape) < 2:
        raise SchemaError("a performance tensor needs at least two coordinate dimensions")
    sums = np.zeros(shape)
    counts = np.zeros(shape)
    first: Dict[tuple, PerformanceRecord] = {}
    for r in records:
        if r.score is None:
            raise SchemaError(f"record {r.coords} has no score")
        idx = tuple(vocab.index(d, r.coords[d]) for d in dims)
        if counts[idx] and duplicates == "error":
            raise DuplicateEntryError(f"duplicate coordinates: {first[idx].coords} and {r.coords}")
        first.setdefault(idx, r)
        sums[idx] += r.score
        counts[idx] += 1
    mask = counts > 0
    values = np.divide(sums, counts, out=np.zeros(shape), where=mask)
    weights = counts if duplicates == "mean" and np.any(counts > 1) else None
    return PerformanceTensor(values, mask, weights), vocab


def record_indices(records, vocab):
    """Tensor index tuple per record, as an (n, order) int array."""
    return np.array([[vocab.index(d, r.coords[d]) for d in vocab.dims] for r in records], dtype=int)


def write_label_map(path, vocab):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(vocab.label_map(), fh, indent=2)
        fh.write("\n")
