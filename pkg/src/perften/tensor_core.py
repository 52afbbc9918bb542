"""Dense performance tensors with an explicit observation mask.

Unobserved cells hold NaN in ``values``; the boolean ``mask`` is the source of
truth for what was observed, so a real score of 0.0 is never confused with a
missing experiment.

Unfolding follows the convention where the mode-``n`` matrix has one row per
index of mode ``n`` and the remaining modes are laid out along the columns with
the lowest-numbered mode varying fastest.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError, EmptySelectionError


@dataclass(frozen=True, eq=False)
class PerformanceTensor:
    """Multi-way score array.

    ``weights`` is optional per-cell multiplicity (used when duplicated
    bootstrap records collapse onto one cell); ``None`` means weight 1 on
    every observed cell.
    """

    values: np.ndarray
    mask: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        if values.ndim < 2:
            raise DimensionError(f"tensor order must be >= 2, got {values.ndim}")
        if values.shape != mask.shape:
            raise DimensionError(f"values shape {values.shape} != mask shape {mask.shape}")
        if any(s < 1 for s in values.shape):
            raise DimensionError(f"every dimension must be positive, got {values.shape}")
        if not np.all(np.isfinite(values[mask])):
            raise ValueError("observed entries must be finite")
        values[~mask] = np.nan
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        if self.weights is not None:
            w = np.array(self.weights, dtype=float)
            if w.shape != values.shape:
                raise DimensionError("weights must match the tensor shape")
            w = np.where(mask, w, 0.0)
            if np.any(w[mask] <= 0):
                raise ValueError("observed cells need positive weights")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @classmethod
    def full(cls, values):
        values = np.asarray(values, dtype=float)
        return cls(values, np.ones(values.shape, dtype=bool))

    @property
    def shape(self):
        return self.values.shape

    @property
    def order(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    @property
    def n_observed(self):
        return int(self.mask.sum())

    def cell_weights(self):
        """Per-cell weights, 1.0 on observed cells when no multiplicities were given."""
        if self.weights is None:
            return self.mask.astype(float)
        return np.array(self.weights)

    def filled(self, fill=0.0):
        out = np.array(self.values)
        out[~self.mask] = fill
        return out

    def unfold(self, mode):
        """Return the mode-``mode`` unfoldings of (values, mask)."""
        return unfold(self.values, mode), unfold(self.mask, mode)

    def with_mask(self, mask):
        """Same values restricted to ``mask & self.mask``."""
        mask = np.asarray(mask, dtype=bool) & self.mask
        w = None if self.weights is None else np.where(mask, self.weights, 0.0)
        return PerformanceTensor(self.filled(), mask, w)


@dataclass(frozen=True)
class StandardizationParams:
    means: np.ndarray
    stddevs: np.ndarray
    axis_policy: str = "global"
    mode: Optional[int] = None


def _check_mode(order, mode):
    if not isinstance(mode, (int, np.integer)) or not 0 <= mode < order:
        raise DimensionError(f"mode {mode!r} out of range for order-{order} tensor")


def unfold(x, mode):
    """Mode-``mode`` matricization of an ndarray (or a tensor's values)."""
    if isinstance(x, PerformanceTensor):
        x = x.values
    x = np.asarray(x)
    _check_mode(x.ndim, mode)
    return np.moveaxis(x, mode, 0).reshape(x.shape[mode], -1, order="F")


def fold(m, mode, shape):
    """Inverse of :func:`unfold`."""
    m = np.asarray(m)
    shape = tuple(int(s) for s in shape)
    _check_mode(len(shape), mode)
    rest = shape[:mode] + shape[mode + 1:]
    expected = (shape[mode], int(np.prod(rest, dtype=np.int64)))
    if m.ndim != 2 or m.shape != expected:
        raise DimensionError(f"matrix of shape {m.shape} cannot fold to {shape} along mode {mode}")
    return np.moveaxis(m.reshape((shape[mode],) + rest, order="F"), 0, mode)


def sparsity(t):
    """Fraction of unobserved cells."""
    return float(np.count_nonzero(~t.mask)) / t.size


def _as_values(a):
    return a.values if isinstance(a, PerformanceTensor) else np.asarray(a, dtype=float)


def masked_rmse(a, b, eval_mask):
    va, vb = _as_values(a), _as_values(b)
    sel = np.asarray(eval_mask, dtype=bool)
    if va.shape != vb.shape or sel.shape != va.shape:
        raise DimensionError(f"shape mismatch: {va.shape}, {vb.shape}, mask {sel.shape}")
    if not sel.any():
        raise EmptySelectionError("eval_mask selects no entries")
    diff = va[sel] - vb[sel]
    peak = float(np.max(np.abs(diff)))
    if 0.0 < peak < 1e-150 or peak > 1e150:
        # rescale so squaring neither underflows to 0 nor overflows to inf
        diff = diff / peak
        return peak * float(np.sqrt(np.mean(diff * diff)))
    return float(np.sqrt(np.mean(diff * diff)))


def standardize(t, policy="global", mode=None):
    """Z-score observed entries, globally or per slice of ``mode``.

    Uses the population standard deviation; zero-variance groups get stddev 1.
    Returns ``(standardized_tensor, params)``.
    """
    if policy == "global":
        obs = t.values[t.mask]
        if obs.size == 0:
            raise EmptySelectionError("no observed entries to standardize")
        means = np.array([obs.mean()])
        sd = np.array([obs.std()])
        sd[sd == 0] = 1.0
        out = (t.values - means[0]) / sd[0]
        params = StandardizationParams(means, sd, "global", None)
    elif policy == "per_slice":
        _check_mode(t.order, mode)
        vals, mask = t.unfold(mode)
        means = np.empty(vals.shape[0])
        sd = np.empty(vals.shape[0])
        for i in range(vals.shape[0]):
            row = vals[i, mask[i]]
            if row.size == 0:
                raise EmptySelectionError(f"slice {i} of mode {mode} has no observed entries")
            means[i] = row.mean()
            sd[i] = row.std()
        sd[sd == 0] = 1.0
        out = fold((vals - means[:, None]) / sd[:, None], mode, t.shape)
        params = StandardizationParams(means, sd, "per_slice", int(mode))
    else:
        raise ValueError(f"unknown standardization policy {policy!r}")
    return PerformanceTensor(np.where(t.mask, out, 0.0), t.mask, t.weights), params


def unstandardize_array(x, params):
    x = np.asarray(x, dtype=float)
    if params.axis_policy == "global":
        return x * params.stddevs[0] + params.means[0]
    m = unfold(x, params.mode)
    return fold(m * params.stddevs[:, None] + params.means[:, None], params.mode, x.shape)


def unstandardize(t, params):
    out = unstandardize_array(t.filled(), params)
    return PerformanceTensor(out, t.mask, t.weights)
