"""Variance estimation and randomization inference for the Hajek estimator.

The Hajek estimator is the slope of a weighted regression of ``mu_i(Y_t)``
on the target-arm indicator.  Sandwich variances are computed from that
regression, with spatial (and optionally temporal) kernels in the meat.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import NoSupport
from .estimators import arm_terms, eate_hajek, eate_ht
from .panel import HistorySpec, PanelDataset, history_indicator
from .propensity import PropensityFit, PropensityTable
from .spatial import DistanceMatrix, SpilloverMapping

__all__ = [
    "WlsRepresentation",
    "VarianceEstimate",
    "FrtResult",
    "hajek_wls",
    "hc0",
    "spatial_hac",
    "twoway_hac",
    "confidence_interval",
    "randomization_test",
    "KERNELS",
]

KERNELS = ("uniform", "bartlett")


@dataclass(frozen=True)
class WlsRepresentation:
    """Weighted regression ``mu_i = alpha + tau * 1{target} + e_i``.

    Only units in one of the two arms (and inside the mapping support) carry
    weight; ``units`` indexes them in the panel.  Weights are signed: positive
    ``1/W_i(target)`` for target units and negative ``-1/W_i(reference)`` for
    reference units.
    """

    y: np.ndarray
    X: np.ndarray
    weights: np.ndarray
    coef: np.ndarray
    residuals: np.ndarray
    units: np.ndarray
    period: int
    d: float

    @property
    def alpha(self) -> float:
        return float(self.coef[0])

    @property
    def tau(self) -> float:
        return float(self.coef[1])

    @property
    def bread(self) -> np.ndarray:
        return np.linalg.inv((self.X * self.weights[:, None]).T @ self.X)

    @property
    def scores(self) -> np.ndarray:
        return self.X * (self.weights * self.residuals)[:, None]

    @property
    def influence(self) -> np.ndarray:
        """Per-unit contribution to ``tau``'s linearisation (sums to zero)."""
        return self.scores @ self.bread[1]


@dataclass(frozen=True)
class VarianceEstimate:
    var: float
    cov: np.ndarray | None
    hc0_var: float
    kernel: str
    cutoff: float
    time_cutoff: float | None = None
    n_pairs: int = 0
    floored: bool = False

    @property
    def se(self) -> float:
        return float(np.sqrt(self.var))


def hajek_wls(panel: PanelDataset, mapping: SpilloverMapping, h: HistorySpec, t: int,
              table: PropensityTable) -> WlsRepresentation:
    """Solve the weighted least-squares problem whose slope is the Hajek estimate."""
    a = arm_terms(panel, mapping, h, t, table)
    keep = a.target | a.reference
    if not a.target.any():
        raise NoSupport("target history has no supported units", arm="target")
    if not a.reference.any():
        raise NoSupport("reference history has no supported units", arm="reference")
    x = a.target[keep].astype(float)
    X = np.column_stack([np.ones(x.size), x])
    w = np.where(a.target[keep], 1.0 / np.where(a.target[keep], a.w_target[keep], 1.0),
                 -1.0 / np.where(a.reference[keep], a.w_reference[keep], 1.0))
    y = a.mu[keep]
    XtW = (X * w[:, None]).T
    A = XtW @ X
    if abs(np.linalg.det(A)) < 1e-300:
        raise NoSupport("weighted normal matrix is singular")
    coef = np.linalg.solve(A, XtW @ y)
    resid = y - X @ coef
    return WlsRepresentation(y, X, w, coef, resid, a.units[keep], t, mapping.d)


def hc0(rep: WlsRepresentation) -> np.ndarray:
    """Heteroskedasticity-robust sandwich, one outer product per unit."""
    B = rep.bread
    S = rep.scores
    meat = np.zeros((2, 2))
    for s in S:
        meat += np.outer(s, s)
    return B @ meat @ B.T


def _kernel(dist, cutoff, kernel):
    if kernel == "uniform":
        K = (dist < cutoff).astype(float)
    elif kernel == "bartlett":
        K = np.clip(1.0 - dist / cutoff, 0.0, None) if cutoff > 0 else np.zeros_like(dist)
    else:
        raise ValueError(f"unknown kernel {kernel!r}; choose from {KERNELS}")
    np.fill_diagonal(K, 1.0)
    return K


def spatial_hac(rep: WlsRepresentation, D: DistanceMatrix, cutoff: float,
                kernel: str = "uniform") -> VarianceEstimate:
    """Conley-type sandwich with pairs closer than ``cutoff`` in the meat.

    A unit is always paired with itself, so ``cutoff = 0`` is HC0.  A
    negative variance (possible with the uniform kernel) is replaced by the
    HC0 value and flagged.
    """
    if cutoff < 0:
        raise ValueError("cutoff must be non-negative")
    sub = D.dist[np.ix_(rep.units, rep.units)]
    K = _kernel(sub, cutoff, kernel)
    B = rep.bread
    S = rep.scores
    cov = B @ (S.T @ K @ S) @ B.T
    base = float(hc0(rep)[1, 1])
    var = float(cov[1, 1])
    floored = var < 0
    if floored:
        warnings.warn("negative HAC variance floored at the HC0 value", RuntimeWarning,
                      stacklevel=2)
        var = base
    return VarianceEstimate(var, cov, base, kernel, float(cutoff), None,
                            int((K != 0).sum()), floored)


def twoway_hac(reps: Sequence[WlsRepresentation], D: DistanceMatrix, dist_cutoff: float,
               time_cutoff: float, kernel: str = "uniform", rule: str = "union") -> VarianceEstimate:
    """Space-time sandwich for the average of per-period Hajek estimates.

    Every observation ``(i, t)`` contributes its influence on the period
    average.  With the default ``rule="union"`` two observations are paired
    when ``d_ij < dist_cutoff`` or ``|t - s| < time_cutoff``;
    ``rule="product"`` requires both.  Self pairs are always included.
    """
    if dist_cutoff < 0 or time_cutoff < 0:
        raise ValueError("cutoffs must be non-negative")
    if rule not in ("product", "union"):
        raise ValueError("rule must be 'product' or 'union'")
    P = len(reps)
    psi = np.concatenate([r.influence / P for r in reps])
    units = np.concatenate([r.units for r in reps])
    periods = np.concatenate([np.full(r.units.size, r.period) for r in reps])
    dist = D.dist[np.ix_(units, units)]
    if kernel == "uniform":
        Kd = (dist < dist_cutoff).astype(float)
    elif kernel == "bartlett":
        Kd = (np.clip(1.0 - dist / dist_cutoff, 0.0, None) if dist_cutoff > 0
              else np.zeros_like(dist))
    else:
        raise ValueError(f"unknown kernel {kernel!r}; choose from {KERNELS}")
    Kt = (np.abs(periods[:, None] - periods[None, :]) < time_cutoff).astype(float)
    K = Kd * Kt if rule == "product" else np.maximum(Kd, Kt)
    np.fill_diagonal(K, 1.0)
    var = float(psi @ K @ psi)
    base = float(psi @ psi)
    floored = var < 0
    if floored:
        warnings.warn("negative HAC variance floored at the HC0 value", RuntimeWarning,
                      stacklevel=2)
        var = base
    return VarianceEstimate(var, None, base, kernel, float(dist_cutoff), float(time_cutoff),
                            int((K != 0).sum()), floored)


def confidence_interval(tau: float, V: float, level: float = 0.95):
    """Normal interval ``tau +/- z * sqrt(V)``."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if V < 0:
        raise ValueError("variance must be non-negative")
    half = stats.norm.ppf(0.5 + level / 2) * np.sqrt(V)
    return tau - half, tau + half


@dataclass(frozen=True)
class FrtResult:
    p_value: float
    observed: float
    draws: np.ndarray
    n_draws: int
    low_draws: bool


def _batch_estimates(mu, support, Z, P, h, staggered, estimator, prev):
    """Vectorised HT/Hajek over a stack of assignment draws (B x N x T)."""
    block = Z[:, :, h.start - 1:h.end]
    tgt = (block == np.asarray(h.target)).all(axis=2)
    ref = (block == np.asarray(h.reference)).all(axis=2)
    wt = _history_products(P, h.target, h.start, staggered, prev)
    wr = _history_products(P, h.reference, h.start, staggered, prev)
    tgt &= support
    ref &= support
    it = np.where(tgt, 1.0 / np.where(tgt, wt, 1.0), 0.0)
    ir = np.where(ref, 1.0 / np.where(ref, wr, 1.0), 0.0)
    if estimator == "ht":
        n = support.sum()
        return (it @ mu - ir @ mu) / n
    st, sr = it.sum(axis=1), ir.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return (it @ mu) / st - (ir @ mu) / sr


def _history_products(P, hist, start, staggered, prev):
    B, n, _ = P.shape
    w = np.ones((B, n))
    prev = prev.copy()
    for k, zs in enumerate(hist):
        p = P[:, :, start - 1 + k]
        free = p if zs == 1 else 1.0 - p
        if staggered:
            w *= np.where(prev, float(zs == 1), free)
            prev = prev | bool(zs)
        else:
            w *= free
    return w


def randomization_test(panel: PanelDataset, fit: PropensityFit, h: HistorySpec,
                       mapping: SpilloverMapping, t: int, *, estimator: str = "hajek",
                       n_draws: int = 1000, seed: int = 0) -> FrtResult:
    """Fisher randomization test of the sharp null of no effect of the history.

    Outcomes are held fixed.  Assignments are redrawn period by period from
    the fitted model (draw ``b`` uses the generator seeded with
    ``(seed, b)``), the estimator is recomputed with the model's
    probabilities for the redrawn history, and the two-sided p-value is
    ``(1 + #{|tau*| >= |tau|}) / (n_draws + 1)``.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be positive")
    low = n_draws < 100
    if low:
        warnings.warn("fewer than 100 randomization draws; p-value is coarse", RuntimeWarning,
                      stacklevel=2)
    if estimator not in ("ht", "hajek"):
        raise ValueError("estimator must be 'ht' or 'hajek'")
    est = eate_hajek if estimator == "hajek" else eate_ht
    observed = est(panel, mapping, h, t, fit.table).tau
    Z, P = fit.sample(panel, n_draws, seed)
    mu = mapping.weights @ panel.outcomes[:, t - 1]
    mu = np.where(mapping.support, mu, 0.0)
    if h.start > 1:
        prev = Z[:, :, h.start - 2].astype(bool)
    else:
        prev = np.zeros(Z.shape[:2], dtype=bool)
    draws = _batch_estimates(mu, mapping.support, Z, P, h, fit.staggered, estimator, prev)
    valid = np.isfinite(draws)
    extreme = np.abs(draws[valid]) >= np.abs(observed) - 1e-12
    p = (1 + extreme.sum()) / (valid.sum() + 1)
    return FrtResult(float(p), float(observed), draws, n_draws, low)
