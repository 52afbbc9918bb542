"""Tensor completion: masked CP-ALS and Robust PCA on an unfolding.

CP fitting minimizes the (weighted) squared error over observed cells only,
solving one ridge-regularized least-squares problem per factor row. Robust PCA
runs the inexact augmented Lagrangian method on one matricization, with
missing cells re-imputed from the low-rank estimate at every iteration.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import DimensionError, InfeasibleFitError
from .tensor_core import PerformanceTensor, fold, unfold

log = logging.getLogger(__name__)

CP_FORMAT_VERSION = 1


@dataclass(frozen=True)
class CpConfig:
    rank: int = 5
    max_sweeps: int = 500
    tolerance: float = 1e-6
    ridge: float = 1e-8
    init: str = "random_uniform"
    seed: int = 0
    standardize: bool = False

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.init not in ("random_uniform", "hosvd"):
            raise ValueError(f"init must be 'random_uniform' or 'hosvd', got {self.init!r}")
        if self.ridge < 0 or self.tolerance < 0 or self.max_sweeps < 1:
            raise ValueError("ridge, tolerance >= 0 and max_sweeps >= 1 required")


@dataclass(frozen=True)
class RpcaConfig:
    lambda_lowrank: float = 1.0
    lambda_sparse: float = 1.0
    mu_growth: float = 1.1
    max_iters: int = 1000
    tolerance: float = 1e-7
    scale_input: bool = True
    mode: int = 0

    def __post_init__(self):
        if not self.mu_growth > 1:
            raise ValueError("mu_growth must be > 1")
        if self.lambda_lowrank <= 0 or self.lambda_sparse <= 0:
            raise ValueError("regularization weights must be positive")


@dataclass
class FactorModel:
    """Weighted sum of rank-1 tensors.

    Reconstruction is ``offset + scale * sum_r weights[r] * outer(factors[.][:, r])``;
    ``offset``/``scale`` are non-trivial only when the fit standardized its input.
    """

    rank: int
    factors: List[np.ndarray]
    weights: np.ndarray
    offset: float = 0.0
    scale: float = 1.0
    objective_history: List[float] = field(default_factory=list)
    diagnostics: List[str] = field(default_factory=list)
    n_sweeps: int = 0
    converged: bool = False

    def __post_init__(self):
        if any(f.shape[1] != self.rank for f in self.factors):
            raise DimensionError("every factor matrix needs `rank` columns")
        if len(self.weights) != self.rank:
            raise DimensionError("weights length must equal rank")

    @property
    def shape(self):
        return tuple(f.shape[0] for f in self.factors)

    def to_dict(self):
        return {
            "version": CP_FORMAT_VERSION,
            "shape": list(self.shape),
            "rank": self.rank,
            "weights": [float(w) for w in self.weights],
            "factors": [f.tolist() for f in self.factors],
            "offset": self.offset,
            "scale": self.scale,
        }

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != CP_FORMAT_VERSION:
            raise ValueError(f"unsupported factor model version {d.get('version')!r}")
        factors = [np.asarray(f, dtype=float).reshape(s, d["rank"]) for f, s in zip(d["factors"], d["shape"])]
        return cls(int(d["rank"]), factors, np.asarray(d["weights"], dtype=float),
                   float(d.get("offset", 0.0)), float(d.get("scale", 1.0)))


def khatri_rao_except(factors, mode):
    """Rows of the Khatri-Rao product matching the columns of ``unfold(x, mode)``.

    Row ``j`` is the elementwise product of the factor rows selected by the
    multi-index of column ``j`` (lowest remaining mode varying fastest).
    """
    R = factors[0].shape[1]
    K = np.ones((1, R))
    for m, A in enumerate(factors):
        if m == mode:
            continue
        K = (K[:, None, :] * A[None, :, :]).reshape(-1, R, order="F")
    return K


def cp_reconstruct_array(m):
    shape = m.shape
    K = khatri_rao_except(m.factors, 0)
    core = fold((m.factors[0] * m.weights) @ K.T, 0, shape)
    return m.offset + m.scale * core


def cp_reconstruct(m):
    """Fully observed tensor of the model's values."""
    return PerformanceTensor.full(cp_reconstruct_array(m))


def _init_factors(t, cfg, rng):
    if cfg.init == "random_uniform":
        return [rng.random((n, cfg.rank)) for n in t.shape]
    obs = t.values[t.mask]
    filled = t.filled(obs.mean() if obs.size else 0.0)
    factors = []
    for mode, n in enumerate(t.shape):
        U, _, _ = np.linalg.svd(unfold(filled, mode), full_matrices=False)
        A = rng.random((n, cfg.rank))
        k = min(cfg.rank, U.shape[1])
        A[:, :k] = U[:, :k]
        factors.append(A)
    return factors


def _objective(Y, W, A0, K, factors, ridge):
    resid = Y - A0 @ K.T
    sse = float(np.sum(W * resid * resid))
    reg = ridge * sum(float(np.sum(A * A)) for A in factors)
    return sse, reg


def cp_fit(t, cfg=CpConfig(), check_monotone=True):
    """Masked alternating least squares.

    Rows of a factor whose slice has no observed cell cannot be identified;
    they keep their initial value and are listed in ``model.diagnostics``.
    With ``check_monotone`` the regularized objective (weighted SSE plus the
    ridge term, which is what each block update minimizes exactly) is asserted
    non-increasing across sweeps.
    """
    if t.order < 2:
        raise DimensionError("CP needs a tensor of order >= 2")
    rng = np.random.default_rng(cfg.seed)
    offset, scale = 0.0, 1.0
    values = t.filled(0.0)
    if cfg.standardize:
        obs = t.values[t.mask]
        if obs.size:
            offset = float(obs.mean())
            scale = float(obs.std()) or 1.0
        values = np.where(t.mask, (values - offset) / scale, 0.0)
    W = t.cell_weights()
    factors = _init_factors(t, cfg, rng)
    R = cfg.rank
    eye = cfg.ridge * np.eye(R)

    unf_Y = [unfold(values, m) for m in range(t.order)]
    unf_W = [unfold(W, m) for m in range(t.order)]
    diagnostics = []
    empty_rows = []
    for m in range(t.order):
        rows = np.nonzero(unf_W[m].sum(axis=1) == 0)[0]
        empty_rows.append(rows)
        diagnostics.extend(f"mode {m} index {int(i)} has no observed entries" for i in rows)

    total = float(np.sum(W * values * values))
    history = []
    sse, reg = _objective(unf_Y[0], unf_W[0], factors[0], khatri_rao_except(factors, 0), factors, cfg.ridge)
    prev = sse + reg
    converged = False
    sweep = 0
    for sweep in range(1, cfg.max_sweeps + 1):
        for m in range(t.order):
            K = khatri_rao_except(factors, m)
            Y, Wm = unf_Y[m], unf_W[m]
            G = np.einsum("ij,jr,js->irs", Wm, K, K) + eye
            b = (Wm * Y) @ K
            keep = np.ones(Y.shape[0], dtype=bool)
            keep[empty_rows[m]] = False
            if keep.any():
                sol = np.linalg.solve(G[keep], b[keep][..., None])[..., 0]
                factors[m][keep] = sol
        K = khatri_rao_except(factors, 0)
        sse, reg = _objective(unf_Y[0], unf_W[0], factors[0], K, factors, cfg.ridge)
        obj = sse + reg
        history.append(sse)
        if check_monotone and obj > prev + 1e-9 * max(1.0, abs(prev)):
            raise AssertionError(f"ALS objective increased at sweep {sweep}: {prev!r} -> {obj!r}")
        change = abs(prev - obj) / max(abs(prev), 1e-300)
        prev = obj
        if change < cfg.tolerance or sse <= 1e-28 * max(total, 1e-300):
            converged = True
            break

    norms = [np.linalg.norm(A, axis=0) for A in factors]
    weights = np.prod(norms, axis=0)
    unit = []
    for A, nrm in zip(factors, norms):
        safe = np.where(nrm > 0, nrm, 1.0)
        unit.append(A / safe)
    return FactorModel(R, unit, weights, offset, scale, history, diagnostics, sweep, converged)


# ----------------------------------------------------------------------------
# Robust PCA


@dataclass
class LowRankSparse:
    low_rank: np.ndarray
    sparse: np.ndarray
    mode: int
    shape: tuple
    converged: bool
    n_iter: int
    gap_history: List[float] = field(default_factory=list)

    def low_rank_tensor(self):
        return fold(self.low_rank, self.mode, self.shape)


def singular_value_threshold(X, tau):
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    k = int(np.count_nonzero(s))
    return (U[:, :k] * s[:k]) @ Vt[:k]


def soft_threshold(X, tau):
    return np.sign(X) * np.maximum(np.abs(X) - tau, 0.0)


def rpca_fit(t, cfg=RpcaConfig()):
    """Principal component pursuit by inexact ALM on the ``cfg.mode`` unfolding.

    Solves ``min lambda_lowrank*||L||_* + lam*||S||_1  s.t.  L + S = M`` on
    observed cells, where ``lam = lambda_sparse / sqrt(max(M.shape))``. The
    penalty ``mu`` starts at ``1.25/||M||_2`` and is multiplied by
    ``mu_growth`` every iteration.
    """
    if t.order < 2:
        raise DimensionError("RPCA needs a tensor of order >= 2")
    if not 0 <= cfg.mode < t.order:
        raise DimensionError(f"mode {cfg.mode} out of range for order-{t.order} tensor")
    M = unfold(t.filled(0.0), cfg.mode).astype(float)
    obs = unfold(t.mask, cfg.mode)
    miss = ~obs
    blind = int(np.count_nonzero(~obs.any(axis=0)))
    if blind:
        log.warning("%d column(s) of the mode-%d unfolding have no observed cell; "
                    "their low-rank estimate is unconstrained and shrinks toward 0", blind, cfg.mode)
    scale = 1.0
    if cfg.scale_input and obs.any():
        scale = float(M[obs].std()) or float(np.abs(M[obs]).max()) or 1.0
    M = M / scale
    norm_obs = float(np.linalg.norm(M[obs]))
    zeros = np.zeros_like(M)
    if norm_obs == 0.0:
        return LowRankSparse(zeros, zeros.copy(), cfg.mode, t.shape, True, 0, [0.0])

    tau_l = cfg.lambda_lowrank
    lam = cfg.lambda_sparse / np.sqrt(max(M.shape))
    op_norm = float(np.linalg.norm(M, 2))
    Y = M / max(op_norm / tau_l, float(np.abs(M).max()) / lam)
    mu = 1.25 / op_norm
    mu_max = mu * 1e7
    L = np.zeros_like(M)
    S = np.zeros_like(M)
    gaps = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        S = soft_threshold(M - L + Y / mu, lam / mu)
        S[miss] = 0.0
        L = singular_value_threshold(M - S + Y / mu, tau_l / mu)
        M[miss] = L[miss]
        Z = M - L - S
        Y = Y + mu * Z
        mu = min(mu * cfg.mu_growth, mu_max)
        gap = float(np.linalg.norm(Z[obs])) / norm_obs
        gaps.append(gap)
        if gap < cfg.tolerance:
            converged = True
            break
    if not converged:
        log.warning("RPCA did not converge in %d iterations (gap %.3g)", cfg.max_iters, gaps[-1])
    return LowRankSparse(L * scale, S * scale, cfg.mode, t.shape, converged, it, gaps)


def complete(t, method="cp", cfg=None, return_model=False):
    """Fill masked cells from a CP or RPCA fit; observed cells are kept verbatim."""
    if t.n_observed == t.size:
        out = PerformanceTensor.full(t.values)
        return (out, None) if return_model else out
    if method == "cp":
        model = cp_fit(t, cfg or CpConfig())
        est = cp_reconstruct_array(model)
    elif method == "rpca":
        model = rpca_fit(t, cfg or RpcaConfig())
        est = model.low_rank_tensor()
    else:
        raise ValueError(f"unknown completion method {method!r}")
    out = PerformanceTensor.full(np.where(t.mask, t.filled(0.0), est))
    return (out, model) if return_model else out


def require_identifiable(t):
    """Raise :class:`InfeasibleFitError` if any slice of any mode is fully masked."""
    for m in range(t.order):
        counts = unfold(t.mask, m).sum(axis=1)
        if np.any(counts == 0):
            idx = int(np.nonzero(counts == 0)[0][0])
            raise InfeasibleFitError(f"mode {m} index {idx} has no observed entries")
