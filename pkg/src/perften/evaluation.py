"""k-fold cross-validated RMSE and mean-square-residual breakdowns."""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .data_io import build_tensor, natural_key
from .errors import EmptyDataError, InfeasibleFitError, InfeasiblePlanError, SchemaError
from .models import canonical_name, is_tensor_model, make_model, mean_baseline, vocabulary_for

log = logging.getLogger(__name__)

__all__ = [
    "FoldPlan", "EvalReport", "Residual", "MSRTable",
    "kfold_plan", "mean_baseline", "cross_validate", "msr_analysis",
]


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: Tuple[int, ...]
    seed: int

    def test_indices(self, fold):
        return [i for i, f in enumerate(self.assignment) if f == fold]

    def train_indices(self, fold):
        return [i for i, f in enumerate(self.assignment) if f != fold]

    def sizes(self):
        return [self.assignment.count(f) for f in range(self.k)]


def kfold_plan(n, k=5, seed=0):
    """Uniformly random balanced fold assignment."""
    if k < 2:
        raise InfeasiblePlanError("k must be >= 2")
    if n < k:
        raise InfeasiblePlanError(f"cannot split {n} records into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=int)
    assignment[perm] = np.arange(n) % k
    return FoldPlan(k, tuple(int(a) for a in assignment), seed)


@dataclass(frozen=True)
class Residual:
    fold: int
    key: Tuple[str, ...]
    predicted: float
    actual: float

    @property
    def squared(self):
        return (self.predicted - self.actual) ** 2


@dataclass
class EvalReport:
    model: str
    dims: Tuple[str, ...]
    k: int
    seed: int
    per_fold_rmse: List[float]
    residuals: List[Residual]
    skipped_folds: List[int] = field(default_factory=list)
    diagnostics: List[str] = field(default_factory=list)

    @property
    def mean_rmse(self):
        return float(np.mean(self.per_fold_rmse)) if self.per_fold_rmse else math.nan

    @property
    def incomplete(self):
        return bool(self.skipped_folds)

    @property
    def per_entry_residuals(self):
        return {r.key: (r.predicted, r.actual) for r in self.residuals}

    def to_dict(self):
        return {
            "model": self.model,
            "dims": list(self.dims),
            "k": self.k,
            "seed": self.seed,
            "per_fold_rmse": self.per_fold_rmse,
            "mean_rmse": self.mean_rmse,
            "skipped_folds": self.skipped_folds,
            "incomplete": self.incomplete,
            "diagnostics": self.diagnostics,
            "n_residuals": len(self.residuals),
        }

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_residuals_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fold", *self.dims, "predicted", "actual", "squared_residual"])
            for r in self.residuals:
                w.writerow([r.fold, *r.key, repr(r.predicted), repr(r.actual), repr(r.squared)])


def cross_validate(records, model, plan, params=None, dims=None, seed=0):
    """Train on k-1 folds, score the held-out fold, for every fold.

    Tensor models see the full coordinate grid every time; held-out cells are
    simply absent from the training tensor (masked), never deleted. A fold
    whose removal leaves some tensor slice without observations is skipped
    and listed in ``skipped_folds``.
    """
    if not records:
        raise EmptyDataError("no records to evaluate")
    if len(records) != len(plan.assignment):
        raise SchemaError(f"fold plan covers {len(plan.assignment)} records, got {len(records)}")
    name = canonical_name(model)
    vocab = vocabulary_for(records, dims=dims)
    if is_tensor_model(name):
        build_tensor(records, vocab=vocab)  # rejects duplicate cells up front
    per_fold, residuals, skipped, diags = [], [], [], []
    for fold in range(plan.k):
        test = [records[i] for i in plan.test_indices(fold)]
        train = [records[i] for i in plan.train_indices(fold)]
        predictor = make_model(name, vocab, params, seed)
        try:
            predictor.fit(train)
        except InfeasibleFitError as exc:
            log.warning("fold %d skipped: %s", fold, exc)
            skipped.append(fold)
            diags.append(f"fold {fold}: {exc}")
            continue
        pred = predictor.predict(test)
        actual = np.array([r.score for r in test], dtype=float)
        per_fold.append(float(np.sqrt(np.mean((pred - actual) ** 2))))
        residuals.extend(Residual(fold, r.key(vocab.dims), float(p), float(a))
                         for r, p, a in zip(test, pred, actual))
    if skipped:
        log.warning("%d of %d folds skipped; mean RMSE over completed folds", len(skipped), plan.k)
    return EvalReport(name, vocab.dims, plan.k, plan.seed, per_fold, residuals, skipped, diags)


@dataclass
class MSRTable:
    row_dim: str
    col_dim: str
    row_labels: List[str]
    col_labels: List[str]
    values: np.ndarray  # NaN marks an empty cell
    counts: np.ndarray

    def rows(self):
        """Flat (row_label, col_label, msr, count) tuples; empty cells skipped."""
        out = []
        for i, a in enumerate(self.row_labels):
            for j, b in enumerate(self.col_labels):
                if self.counts[i, j]:
                    out.append((a, b, float(self.values[i, j]), int(self.counts[i, j])))
        return out


def msr_analysis(report, group_dims):
    """Mean squared residual grouped by two dimensions, averaged over the rest."""
    if len(group_dims) != 2:
        raise SchemaError("msr_analysis groups by exactly two dimensions")
    pos = []
    for d in group_dims:
        if d not in report.dims:
            raise SchemaError(f"unknown dimension {d!r}; report has {list(report.dims)}")
        pos.append(report.dims.index(d))
    sums: Dict[Tuple[str, str], float] = {}
    counts: Dict[Tuple[str, str], int] = {}
    for r in report.residuals:
        cell = (r.key[pos[0]], r.key[pos[1]])
        sums[cell] = sums.get(cell, 0.0) + r.squared
        counts[cell] = counts.get(cell, 0) + 1
    rows = sorted({c[0] for c in sums}, key=natural_key)
    cols = sorted({c[1] for c in sums}, key=natural_key)
    vals = np.full((len(rows), len(cols)), np.nan)
    cnt = np.zeros((len(rows), len(cols)), dtype=int)
    for (a, b), s in sums.items():
        i, j = rows.index(a), cols.index(b)
        vals[i, j] = s / counts[(a, b)]
        cnt[i, j] = counts[(a, b)]
    return MSRTable(group_dims[0], group_dims[1], rows, cols, vals, cnt)
