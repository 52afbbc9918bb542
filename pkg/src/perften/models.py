"""Record-level predictors: the mean baseline, boosted trees and tensor completion.

Every predictor is built against a :class:`~perften.data_io.Vocabulary` that
covers all coordinates it will ever see (training and test cells), so that
one-hot widths and tensor shapes stay fixed across folds and resamples.
"""

from dataclasses import asdict, fields

import numpy as np

from .data_io import build_tensor, build_vocabulary, make_schema, record_indices
from .errors import EmptyDataError, SchemaError
from .tensor_regression import CpConfig, RpcaConfig, complete, require_identifiable
from .trees import LGBM_STYLE, XGB_STYLE, BoostConfig, fit_gbdt, predict_gbdt

MODEL_NAMES = ("baseline", "xgb", "lgbm", "cp", "rpca")
_ALIASES = {"xgb_style": "xgb", "lgbm_style": "lgbm", "mean": "baseline"}


def canonical_name(name):
    name = _ALIASES.get(name, name)
    if name not in MODEL_NAMES:
        raise SchemaError(f"unknown model {name!r}; valid names: {', '.join(MODEL_NAMES)}")
    return name


def mean_baseline(train_scores):
    scores = np.asarray(train_scores, dtype=float)
    if scores.size == 0:
        raise EmptyDataError("mean baseline needs at least one training score")
    return float(np.mean(scores))


class MeanBaseline:
    name = "baseline"

    def __init__(self, vocab=None):
        self.value = None

    def fit(self, records):
        self.value = mean_baseline([r.score for r in records])
        return self

    def predict(self, records):
        return np.full(len(records), self.value)


class BoostedTrees:
    def __init__(self, vocab, cfg, zscore=False, name="xgb", seed=0):
        self.vocab = vocab
        self.cfg = cfg
        self.zscore = zscore
        self.name = name
        self.seed = seed
        self.schema = None
        self.ensemble = None

    def fit(self, records):
        if not records:
            raise EmptyDataError("empty training set")
        self.schema = make_schema(self.vocab, zscore=self.zscore).fit_stats(records)
        X = self.schema.encode(records)
        y = np.array([r.score for r in records], dtype=float)
        self.ensemble = fit_gbdt(X, y, self.cfg, seed=self.seed)
        return self

    def predict(self, records):
        return predict_gbdt(self.ensemble, self.schema.encode(records))


class TensorCompletion:
    """Predicts a cell by completing the tensor of training scores.

    Training records sharing a cell (as happens in bootstrap resamples) are
    averaged, and CP weights the cell by its multiplicity.
    """

    def __init__(self, vocab, method, cfg):
        self.vocab = vocab
        self.method = method
        self.name = method
        self.cfg = cfg
        self.completed = None

    def fit(self, records):
        t, _ = build_tensor(records, vocab=self.vocab, duplicates="mean")
        require_identifiable(t)
        self.completed = complete(t, self.method, self.cfg)
        return self

    def predict(self, records):
        idx = record_indices(records, self.vocab)
        return self.completed.values[tuple(idx.T)]


def _config(cls, base, params):
    params = dict(params or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(params) - known)
    if unknown:
        raise SchemaError(f"params: unknown {cls.__name__} parameter(s) {', '.join(unknown)}")
    merged = asdict(base) if base is not None else {}
    merged.update(params)
    return cls(**merged)


def make_model(name, vocab=None, params=None, seed=0):
    """Construct an unfitted predictor by name."""
    name = canonical_name(name)
    params = dict(params or {})
    if name == "baseline":
        if params:
            raise SchemaError(f"params: the baseline takes no parameters, got {', '.join(sorted(params))}")
        return MeanBaseline(vocab)
    if vocab is None:
        raise SchemaError(f"model {name!r} needs a vocabulary")
    if name in ("xgb", "lgbm"):
        zscore = bool(params.pop("standardize", False))
        cfg = _config(BoostConfig, XGB_STYLE if name == "xgb" else LGBM_STYLE, params)
        return BoostedTrees(vocab, cfg, zscore=zscore, name=name, seed=seed)
    if name == "cp":
        params.setdefault("seed", seed)
        return TensorCompletion(vocab, "cp", _config(CpConfig, None, params))
    return TensorCompletion(vocab, "rpca", _config(RpcaConfig, None, params))


def model_factory(name, vocab=None, params=None, seed=0):
    """Zero-argument callable producing fresh predictors of one kind."""
    canonical_name(name)
    make_model(name, vocab, params, seed)  # validate parameters eagerly
    return lambda: make_model(name, vocab, params, seed)


def is_tensor_model(name):
    return canonical_name(name) in ("cp", "rpca")


def vocabulary_for(*record_sets, dims=None):
    merged = [r for rs in record_sets for r in rs]
    return build_vocabulary(merged, dims)
