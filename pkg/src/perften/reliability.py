"""Bootstrap prediction distributions and calibration of their intervals.

A prediction distribution holds the K predictions that K models, each trained
on a with-replacement resample of the training records, make for one test
point. Percentile intervals are read off it, and their empirical coverage at a
grid of confidence levels gives the calibration error (CE).
"""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import DimensionError, DomainError, EmptyDataError, InfeasibleFitError

log = logging.getLogger(__name__)

DEFAULT_K = 200
DEFAULT_M = 20


def default_levels(m=DEFAULT_M):
    """``m`` evenly spaced confidence levels ending at 1.0 (0.05, 0.10, ..., 1.00 for m=20)."""
    return np.round(np.arange(1, m + 1) / m, 12)


def parse_levels(text):
    """Parse ``START:END:STEP`` (inclusive of END) into a level array."""
    try:
        start, end, step = (float(p) for p in text.split(":"))
    except ValueError:
        raise ValueError(f"levels must look like START:END:STEP, got {text!r}") from None
    if step <= 0 or start <= 0 or end > 1 or start > end:
        raise ValueError(f"invalid level grid {text!r}")
    n = int(math.floor((end - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(n), 12)


@dataclass(frozen=True, eq=False)
class PredictionDistribution:
    test_id: str
    samples: np.ndarray

    def __post_init__(self):
        s = np.array(self.samples, dtype=float).ravel()
        if s.size == 0:
            raise EmptyDataError("a prediction distribution needs at least one sample")
        if not np.all(np.isfinite(s)):
            raise ValueError("bootstrap samples must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def K(self):
        return self.samples.size

    @property
    def width(self):
        return float(self.samples.max() - self.samples.min())


@dataclass(frozen=True)
class ConfidenceInterval:
    gamma: float
    lower: float
    upper: float

    def contains(self, y):
        """Strict membership: an actual equal to an endpoint is not covered."""
        return self.lower < y < self.upper


def quantile(samples, p):
    """Linear-interpolation quantile at position ``p*(K-1)`` of the sorted samples."""
    s = np.sort(np.asarray(samples, dtype=float))
    pos = p * (s.size - 1)
    lo = int(math.floor(pos))
    if lo >= s.size - 1:
        return float(s[-1])
    frac = pos - lo
    return float(s[lo] + frac * (s[lo + 1] - s[lo]))


def percentile_ci(d, gamma):
    if not 0 < gamma <= 1:
        raise DomainError(f"confidence level must be in (0, 1], got {gamma}")
    s = d.samples if isinstance(d, PredictionDistribution) else np.asarray(d, dtype=float)
    return ConfidenceInterval(float(gamma), quantile(s, (1 - gamma) / 2), quantile(s, (1 + gamma) / 2))


def _samples(d):
    return d.samples if isinstance(d, PredictionDistribution) else np.asarray(d, dtype=float)


def ci_accuracy(actuals, dists, gamma):
    """Fraction of actuals strictly inside their distribution's ``gamma`` interval."""
    actuals = np.asarray(actuals, dtype=float)
    if actuals.size != len(dists):
        raise DimensionError(f"{actuals.size} actuals for {len(dists)} distributions")
    if actuals.size == 0:
        raise EmptyDataError("no test points")
    hits = sum(percentile_ci(_samples(d), gamma).contains(y) for y, d in zip(actuals, dists))
    return hits / actuals.size


@dataclass
class CalibrationReport:
    levels: List[float]
    acc: List[float]
    ce: float
    mean_deviation: float
    average_width: float
    coverage: float
    K: Optional[int] = None
    seed: Optional[int] = None
    model: Optional[str] = None
    n_test: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {
            "levels": self.levels,
            "acc": self.acc,
            "CE": self.ce,
            "mean_deviation": self.mean_deviation,
            "average_width": self.average_width,
            "coverage": self.coverage,
            "K": self.K,
            "seed": self.seed,
            "model": self.model,
            "n_test": self.n_test,
        }
        d.update(self.extra)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {"levels", "acc", "CE", "mean_deviation", "average_width", "coverage",
                 "K", "seed", "model", "n_test"}
        return cls([float(x) for x in d["levels"]], [float(x) for x in d["acc"]], float(d["CE"]),
                   float(d.get("mean_deviation", d["CE"] / max(len(d["levels"]), 1))),
                   float(d["average_width"]), float(d["coverage"]), d.get("K"), d.get("seed"),
                   d.get("model"), int(d.get("n_test", 0)),
                   {k: v for k, v in d.items() if k not in known})

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def calibration_error(actuals, dists, levels=None, K=None, seed=None, model=None):
    """Accuracy per confidence level, their summed gap to the diagonal, width and coverage.

    Coverage is always evaluated at ``gamma = 1`` (the full sample range), even
    if 1.0 is not among ``levels``.
    """
    levels = default_levels() if levels is None else np.asarray(levels, dtype=float)
    if levels.size and (np.any(levels <= 0) or np.any(levels > 1) or np.any(np.diff(levels) <= 0)):
        raise DomainError("levels must be strictly increasing within (0, 1]")
    acc = [ci_accuracy(actuals, dists, g) for g in levels]
    ce = float(sum(abs(a - g) for a, g in zip(acc, levels)))
    widths = [float(_samples(d).max() - _samples(d).min()) for d in dists]
    return CalibrationReport(
        levels=[float(g) for g in levels],
        acc=[float(a) for a in acc],
        ce=ce,
        mean_deviation=ce / levels.size if levels.size else 0.0,
        average_width=float(np.mean(widths)),
        coverage=float(ci_accuracy(actuals, dists, 1.0)),
        K=K, seed=seed, model=model, n_test=len(dists),
    )


def ece(confidences, correct, n_bins=10):
    """Expected calibration error over ``n_bins`` equal-width confidence bins.

    Bin ``m`` (1-based) holds confidences in ``((m-1)/M, m/M]``; a confidence
    of exactly 0 falls in the first bin.
    """
    conf = np.asarray(confidences, dtype=float)
    corr = np.asarray(correct, dtype=bool)
    if conf.shape != corr.shape:
        raise DimensionError("confidences and correctness flags differ in length")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if conf.size == 0:
        raise EmptyDataError("no predictions")
    if np.any((conf < 0) | (conf > 1)) or not np.all(np.isfinite(conf)):
        raise DomainError("confidences must lie in [0, 1]")
    bins = np.clip(np.ceil(conf * n_bins).astype(int) - 1, 0, n_bins - 1)
    total = 0.0
    for m in range(n_bins):
        sel = bins == m
        if sel.any():
            total += sel.sum() / conf.size * abs(corr[sel].mean() - conf[sel].mean())
    return float(total)


def reliability_diagram(report):
    """``(gamma, accuracy)`` rows in ascending level order."""
    return sorted(zip(report.levels, report.acc))


def write_diagram_csv(path, report):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gamma", "accuracy"])
        for g, a in reliability_diagram(report):
            w.writerow([repr(g), repr(a)])


def _replicate_rng(seed, replicate, attempt):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(replicate, attempt)))


def bootstrap_distributions(train_records, model_factory, test_records, K=DEFAULT_K, seed=0, test_ids=None):
    """Resample training records with replacement K times and predict every test record.

    ``model_factory()`` returns a fresh unfitted predictor. Each replicate's
    resample comes from its own sub-seed of ``(seed, replicate, attempt)``. A
    resample the model cannot train on is redrawn; more than ``10*K`` draws
    in total raises :class:`InfeasibleFitError`.
    """
    if K < 2:
        raise ValueError("K must be >= 2")
    n = len(train_records)
    if n == 0:
        raise EmptyDataError("no training records")
    if not test_records:
        raise EmptyDataError("no test records")
    preds = np.empty((K, len(test_records)))
    draws = 0
    for rep in range(K):
        attempt = 0
        while True:
            draws += 1
            if draws > 10 * K:
                raise InfeasibleFitError(f"gave up after {draws - 1} bootstrap draws; model cannot train on resamples")
            idx = _replicate_rng(seed, rep, attempt).integers(0, n, size=n)
            try:
                model = model_factory().fit([train_records[i] for i in idx])
            except InfeasibleFitError as exc:
                log.debug("replicate %d attempt %d redrawn: %s", rep, attempt, exc)
                attempt += 1
                continue
            preds[rep] = model.predict(test_records)
            break
    if test_ids is None:
        test_ids = [str(i) for i in range(len(test_records))]
    return [PredictionDistribution(tid, preds[:, j]) for j, tid in enumerate(test_ids)]
