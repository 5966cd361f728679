"""Point estimators of expected average treatment effects under interference.

All estimators contrast two treatment histories of a unit and read the
outcome of the units around it through a spillover mapping ``mu``.  The
identity mapping (``d = 0``) gives the direct effect.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import InvalidHistory, Mismatch, NoSupport, RankDeficient
from .panel import HistorySpec, PanelDataset, _col, history_indicator
from .propensity import PropensityTable, coordinate_terms, history_propensity
from .spatial import DistanceMatrix, SpilloverMapping, default_bandwidth

__all__ = [
    "EffectEstimate",
    "ArmTerms",
    "DiffusionModel",
    "arm_terms",
    "eate_ht",
    "eate_hajek",
    "eate_augmented",
    "fit_diffusion_model",
    "did_estimate",
    "did_bias_oracle",
    "aggregate_periods",
    "gstat_contrast",
    "count_propensity",
    "ESTIMATE_COLUMNS",
]

ESTIMATE_COLUMNS = ("estimator", "d", "t", "tau", "var", "ci_lo", "ci_hi", "n_target", "n_reference")


@dataclass(frozen=True)
class EffectEstimate:
    estimator: str
    tau: float
    d: float
    t: int
    history: HistorySpec | None
    n_target: int
    n_reference: int
    n_supported: int
    weight_target: float = np.nan
    weight_reference: float = np.nan
    var: float = np.nan
    ci: tuple = (np.nan, np.nan)
    periods: tuple = ()

    def with_variance(self, var: float, ci) -> "EffectEstimate":
        return replace(self, var=float(var), ci=(float(ci[0]), float(ci[1])))

    def row(self) -> dict:
        return {
            "estimator": self.estimator,
            "d": self.d,
            "t": self.t,
            "tau": self.tau,
            "var": self.var,
            "ci_lo": self.ci[0],
            "ci_hi": self.ci[1],
            "n_target": self.n_target,
            "n_reference": self.n_reference,
        }


@dataclass(frozen=True)
class ArmTerms:
    """Per-unit ingredients shared by the weighting estimators.

    Rows outside the mapping support are dropped.
    """

    mu: np.ndarray
    target: np.ndarray
    reference: np.ndarray
    w_target: np.ndarray
    w_reference: np.ndarray
    units: np.ndarray

    @property
    def ipw_target(self) -> np.ndarray:
        return np.where(self.target, 1.0 / np.where(self.target, self.w_target, 1.0), 0.0)

    @property
    def ipw_reference(self) -> np.ndarray:
        return np.where(self.reference, 1.0 / np.where(self.reference, self.w_reference, 1.0), 0.0)


def arm_terms(panel: PanelDataset, mapping: SpilloverMapping, h: HistorySpec, t: int,
              table: PropensityTable, values=None) -> ArmTerms:
    """Collect ``mu_i(Y_t)``, arm indicators and history propensities.

    ``values`` overrides the cross-section fed to the mapping (e.g. residuals).
    """
    col = _col(panel, t)
    if t < h.end:
        raise InvalidHistory(f"outcome period {t} precedes the end of the history ({h.end})")
    if mapping.weights.shape[0] != panel.n_units:
        raise ValueError("mapping and panel disagree on the number of units")
    y = panel.outcomes[:, col] if values is None else np.asarray(values, dtype=float)
    mu = mapping.weights @ y
    tgt, ref = history_indicator(panel, h)
    wt, wr = history_propensity(table, h)
    s = mapping.support
    if (tgt & s & (wt <= 0)).any() or (ref & s & (wr <= 0)).any():
        raise ValueError("a realised history has zero propensity; the table is inconsistent")
    return ArmTerms(mu[s], tgt[s], ref[s], wt[s], wr[s], np.flatnonzero(s))


def _require_arms(a: ArmTerms):
    if not a.target.any() and not a.reference.any():
        raise NoSupport("neither history is realised among supported units", arm="both")


def eate_ht(panel: PanelDataset, mapping: SpilloverMapping, h: HistorySpec, t: int,
            table: PropensityTable, *, values=None) -> EffectEstimate:
    """Horvitz-Thompson estimator averaging over mapping-supported units."""
    a = arm_terms(panel, mapping, h, t, table, values)
    _require_arms(a)
    n = a.mu.size
    ipt, ipr = a.ipw_target, a.ipw_reference
    tau = float((ipt * a.mu).sum() / n - (ipr * a.mu).sum() / n)
    return EffectEstimate("ht", tau, mapping.d, t, h, int(a.target.sum()), int(a.reference.sum()),
                          n, float(ipt.sum()), float(ipr.sum()))


def eate_hajek(panel: PanelDataset, mapping: SpilloverMapping, h: HistorySpec, t: int,
               table: PropensityTable) -> EffectEstimate:
    """Self-normalised (Hajek) version of :func:`eate_ht`."""
    a = arm_terms(panel, mapping, h, t, table)
    ipt, ipr = a.ipw_target, a.ipw_reference
    st, sr = ipt.sum(), ipr.sum()
    if st <= 0:
        raise NoSupport("target history has no supported units", arm="target")
    if sr <= 0:
        raise NoSupport("reference history has no supported units", arm="reference")
    tau = float((ipt * a.mu).sum() / st - (ipr * a.mu).sum() / sr)
    return EffectEstimate("hajek", tau, mapping.d, t, h, int(a.target.sum()),
                          int(a.reference.sum()), a.mu.size, float(st), float(sr))


@dataclass
class DiffusionModel:
    """Linear outcome model with treated-neighbour counts per distance bin.

    ``Y_it = sum_b beta_b * #{j treated at t with d_ij in bin b} + nuisance``.
    The bin at ``d = 0`` is the unit's own treatment.
    """

    d_grid: tuple
    bandwidth: float
    beta: np.ndarray
    nuisance: dict
    names: tuple
    coef: np.ndarray
    fitted: np.ndarray  # N x T, NaN for periods outside the fit
    periods: tuple
    bins: np.ndarray  # N x N integer bin index, -1 outside every bin
    lag_depth: int
    zero: bool = False

    @property
    def residuals(self) -> np.ndarray:
        return self._y - self.fitted

    _y: np.ndarray = field(default=None, repr=False)

    @classmethod
    def null(cls, panel: PanelDataset) -> "DiffusionModel":
        """The model predicting zero everywhere."""
        n, T = panel.n_units, panel.n_periods
        return cls((), 0.0, np.zeros(0), {}, (), np.zeros(0), np.zeros((n, T)),
                   tuple(range(1, T + 1)), np.full((n, n), -1), 0, True, panel.outcomes)

    def spillover_matrix(self) -> np.ndarray:
        """``B_ki``: fitted contemporaneous effect of unit ``i``'s treatment on unit ``k``."""
        B = np.zeros(self.bins.shape)
        inside = self.bins >= 0
        B[inside] = self.beta[self.bins[inside]]
        return B

    def history_gain(self, h: HistorySpec, t: int):
        """Scalars ``(a, b)`` so that flipping a unit's history moves the
        prediction of unit ``k`` at ``t`` by ``a * B_ki + b * 1{k = i}``.

        Own-lag terms of the nuisance propagate the contrast through earlier
        periods of the history.
        """
        if t != h.end:
            raise InvalidHistory("the augmented estimator needs the outcome period to end the history")
        delta = {h.start + k: h.target[k] - h.reference[k] for k in range(h.length)}
        gy = [self.nuisance.get(_lag_name("y_lag", k, self.lag_depth), 0.0)
              for k in range(1, self.lag_depth + 1)]
        gz = [self.nuisance.get(_lag_name("z_lag", k, self.lag_depth), 0.0)
              for k in range(1, self.lag_depth + 1)]
        a, b = {}, {}
        for s in range(h.start, t + 1):
            a[s] = delta.get(s, 0) + sum(g * a.get(s - k, 0.0) for k, g in enumerate(gy, 1))
            b[s] = (sum(g * delta.get(s - k, 0) for k, g in enumerate(gz, 1))
                    + sum(g * b.get(s - k, 0.0) for k, g in enumerate(gy, 1)))
        return a[t], b[t]


def _lag_name(base, k, depth):
    return base if depth == 1 else f"{base}{k}"


def _distance_bins(D: DistanceMatrix, d_grid, bandwidth):
    n = D.n
    bins = np.full((n, n), -1, dtype=int)
    for b, d in enumerate(d_grid):
        if d == 0:
            mask = np.eye(n, dtype=bool)
        else:
            mask = np.abs(D.dist - d) <= bandwidth + 1e-9
            np.fill_diagonal(mask, False)
        if (mask & (bins >= 0)).any():
            raise ValueError("distance bins overlap; use a smaller bandwidth or a coarser grid")
        bins[mask] = b
    return bins


def fit_diffusion_model(panel: PanelDataset, D: DistanceMatrix, d_grid: Sequence[float], *,
                        bandwidth: float | None = None, lag_depth: int = 1,
                        lag_outcome: bool = True, lag_treatment: bool = True,
                        covariates: Sequence[str] | None = None, period_effects: bool = True,
                        unit_effects: bool = False, coord_poly_degree: int = 0) -> DiffusionModel:
    """OLS fit of outcomes on treated-neighbour counts per distance bin.

    Nuisance terms: own lags of ``Y`` and ``Z`` (``lag_depth`` of each),
    covariates, period and optional unit fixed effects, and an optional
    coordinate polynomial.  Periods without a full set of lags are left out.

    Raises
    ------
    RankDeficient
        The design is singular, e.g. no unit is ever treated in some bin.
    """
    d_grid = tuple(float(d) for d in d_grid)
    if not d_grid or any(not np.isfinite(d) or d < 0 for d in d_grid):
        raise ValueError("d_grid must be a non-empty list of finite non-negative distances")
    if list(d_grid) != sorted(set(d_grid)):
        raise ValueError("d_grid must be strictly increasing")
    bw = default_bandwidth(D) if bandwidth is None else float(bandwidth)
    bins = _distance_bins(D, d_grid, bw)
    n, T = panel.n_units, panel.n_periods
    uses_lags = lag_outcome or lag_treatment
    first = lag_depth + 1 if uses_lags else 1
    if first > T:
        raise RankDeficient("not enough periods for the requested lags")
    periods = tuple(range(first, T + 1))
    z = panel.treatments.astype(float)
    cols, names = [], []
    for b, d in enumerate(d_grid):
        M = (bins == b).astype(float)
        counts = M @ z  # N x T: treated units of unit i's bin
        cols.append(counts[:, first - 1:].ravel(order="F"))
        names.append(f"bin_{d:g}")
    n_bins = len(cols)
    for k in range(1, lag_depth + 1):
        if lag_outcome:
            cols.append(panel.outcomes[:, first - 1 - k:T - k].ravel(order="F"))
            names.append(_lag_name("y_lag", k, lag_depth))
        if lag_treatment:
            cols.append(z[:, first - 1 - k:T - k].ravel(order="F"))
            names.append(_lag_name("z_lag", k, lag_depth))
    cov_names = tuple(panel.covariates) if covariates is None else tuple(covariates)
    for name in cov_names:
        x = panel.covariates[name]
        if np.isnan(x).any():
            raise ValueError(f"covariate {name!r} has missing values")
        cols.append(x[:, first - 1:].ravel(order="F"))
        names.append(name)
    rows = n * len(periods)
    unit_idx = np.tile(np.arange(n), len(periods))
    period_idx = np.repeat(np.arange(len(periods)), n)
    cols.append(np.ones(rows))
    names.append("const")
    if period_effects:
        for j, p in enumerate(periods[1:], 1):
            cols.append((period_idx == j).astype(float))
            names.append(f"period_{p}")
    if unit_effects:
        for i in range(1, n):
            cols.append((unit_idx == i).astype(float))
            names.append(f"unit_{i}")
    elif coord_poly_degree:
        terms, tnames = coordinate_terms(panel.coords, coord_poly_degree)
        for j, nm in enumerate(tnames):
            cols.append(terms[unit_idx, j])
            names.append(nm)
    X = np.column_stack(cols)
    y = panel.outcomes[:, first - 1:].ravel(order="F")
    coef, _, rank, sv = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        raise RankDeficient(
            f"diffusion design has rank {rank} < {X.shape[1]} columns; use a coarser d_grid")
    fitted = np.full((n, T), np.nan)
    fitted[:, first - 1:] = (X @ coef).reshape((n, len(periods)), order="F")
    nuis = {nm: float(c) for nm, c in zip(names[n_bins:], coef[n_bins:])}
    return DiffusionModel(d_grid, bw, coef[:n_bins].copy(), nuis, tuple(names), coef, fitted,
                          periods, bins, lag_depth if uses_lags else 0, False, panel.outcomes)


def eate_augmented(panel: PanelDataset, mapping: SpilloverMapping, h: HistorySpec, t: int,
                   table: PropensityTable, model: DiffusionModel) -> EffectEstimate:
    """Horvitz-Thompson on model residuals plus the model's own contrast.

    For the linear diffusion model the marginalised contrast does not depend
    on the other units' assignments, so it is computed in closed form.
    """
    col = _col(panel, t)
    if model.zero:
        est = eate_ht(panel, mapping, h, t, table)
        return replace(est, estimator="augmented")
    if t not in model.periods:
        raise InvalidHistory(f"diffusion model was not fitted on period {t}")
    resid = panel.outcomes[:, col] - model.fitted[:, col]
    base = eate_ht(panel, mapping, h, t, table, values=resid)
    a, b = model.history_gain(h, t)
    B = model.spillover_matrix()
    W = mapping.weights
    gain = a * (W * B).sum(axis=1) + b * np.diag(W)
    marginal = float(gain[mapping.support].mean())
    return replace(base, estimator="augmented", tau=base.tau + marginal)


def _did_history(treat_period: int) -> HistorySpec:
    if treat_period < 2:
        raise InvalidHistory("difference-in-differences needs a pre-treatment period")
    return HistorySpec(treat_period - 1, treat_period, (0, 1), (0, 0))


def did_estimate(panel: PanelDataset, treat_period: int | None = None, *,
                 history: HistorySpec | None = None, post_period: int | None = None,
                 mapping: SpilloverMapping | None = None) -> EffectEstimate:
    """Difference-in-differences between units following two histories.

    With only ``treat_period`` this is the classic 2x2 comparison of units
    switching on at ``treat_period`` against units staying untreated.  With a
    ``history`` the pre period is the last one before the histories diverge
    and the post period defaults to the end of the history.  A ``mapping``
    replaces each unit's outcome by ``mu_i(Y)``.
    """
    if history is None:
        if treat_period is None:
            raise ValueError("give treat_period or history")
        history = _did_history(treat_period)
    k = next(k for k in range(history.length) if history.target[k] != history.reference[k])
    pre = history.start + k - 1
    if pre < 1:
        raise InvalidHistory("histories differ from the first panel period; no pre period")
    post = history.end if post_period is None else post_period
    if post < history.end:
        raise InvalidHistory("post period precedes the end of the history")
    y_pre = panel.outcomes[:, _col(panel, pre)]
    y_post = panel.outcomes[:, _col(panel, post)]
    tgt, ref = history_indicator(panel, history)
    d = 0.0
    if mapping is not None:
        y_pre, y_post = mapping.weights @ y_pre, mapping.weights @ y_post
        tgt, ref = tgt & mapping.support, ref & mapping.support
        d = mapping.d
    if not tgt.any():
        raise NoSupport("no unit follows the target history", arm="target")
    if not ref.any():
        raise NoSupport("no unit follows the reference history", arm="reference")
    change = y_post - y_pre
    tau = float(change[tgt].mean() - change[ref].mean())
    n_sup = int(panel.n_units if mapping is None else mapping.n_supported)
    return EffectEstimate("did", tau, d, post, history, int(tgt.sum()), int(ref.sum()), n_sup)


def did_bias_oracle(p, g_target, g_reference, q=None) -> float:
    """Large-sample bias of the DID contrast against the average effect.

    Parameters
    ----------
    p, q : array_like
        Per-unit probabilities of following the target / reference history.
        ``q`` defaults to ``1 - p`` (every unit in one of the two arms).
    g_target, g_reference : array_like
        Per-unit expected outcome change between the pre and post periods
        under each history.

    Returns
    -------
    float
        ``Cov(p, g1)/E[p] - Cov(q, g0)/E[q]``, which reduces to
        ``Cov(p, g1)/E[p] + Cov(p, g0)/E[1-p]`` when ``q = 1 - p``.
    """
    p = np.asarray(p, dtype=float)
    q = 1.0 - p if q is None else np.asarray(q, dtype=float)
    g1 = np.asarray(g_target, dtype=float)
    g0 = np.asarray(g_reference, dtype=float)

    def cov(a, b):
        return float(np.mean((a - a.mean()) * (b - b.mean())))

    return cov(p, g1) / p.mean() - cov(q, g0) / q.mean()


def aggregate_periods(estimates: Sequence[EffectEstimate]) -> EffectEstimate:
    """Unweighted mean of per-period estimates sharing estimator, history and distance."""
    if not estimates:
        raise ValueError("nothing to aggregate")
    first = estimates[0]
    for e in estimates[1:]:
        if (e.estimator, e.history, e.d) != (first.estimator, first.history, first.d):
            raise Mismatch("estimates differ in estimator, history or distance")
    periods = tuple(e.t for e in estimates)
    if len(set(periods)) != len(periods):
        raise Mismatch("duplicate periods in aggregation")
    tau = float(np.mean([e.tau for e in estimates]))
    return replace(first, tau=tau, t=max(periods), periods=periods, var=np.nan,
                   ci=(np.nan, np.nan))


def count_propensity(table: PropensityTable, start: int, end: int, g: int) -> np.ndarray:
    """Probability that a unit is treated in exactly ``g`` of the periods ``start..end``."""
    p = table.p
    n = p.shape[0]
    L = end - start + 1
    prev1 = (table.treatments[:, start - 2].astype(bool) if start > 1
             else np.zeros(n, dtype=bool))
    # prob[c, last] for each unit
    prob = np.zeros((L + 1, 2, n))
    prob[0, 1] = prev1
    prob[0, 0] = ~prev1
    for k in range(L):
        pk = p[:, start - 1 + k]
        new = np.zeros_like(prob)
        for last in (0, 1):
            if table.staggered and last == 1:
                on = np.ones(n)
            else:
                on = pk
            new[1:, 1] += prob[:-1, last] * on
            new[:, 0] += prob[:, last] * (1.0 - on)
        prob = new
    if not 0 <= g <= L:
        return np.zeros(n)
    return prob[g].sum(axis=0)


def gstat_contrast(panel: PanelDataset, mapping: SpilloverMapping, t: int, g: int, g_ref: int,
                   table: PropensityTable, start: int = 1) -> EffectEstimate:
    """Hajek contrast of units by their number of treated periods in ``start..t``."""
    col = _col(panel, t)
    counts = panel.treatments[:, start - 1:t].sum(axis=1)
    tgt, ref = counts == g, counts == g_ref
    s = mapping.support
    if not (tgt & s).any():
        raise NoSupport(f"no supported unit is treated {g} times", arm="target")
    if not (ref & s).any():
        raise NoSupport(f"no supported unit is treated {g_ref} times", arm="reference")
    mu = (mapping.weights @ panel.outcomes[:, col])[s]
    wt = count_propensity(table, start, t, g)[s]
    wr = count_propensity(table, start, t, g_ref)[s]
    tgt, ref = tgt[s], ref[s]
    it = np.where(tgt, 1.0 / np.where(tgt, wt, 1.0), 0.0)
    ir = np.where(ref, 1.0 / np.where(ref, wr, 1.0), 0.0)
    tau = float((it * mu).sum() / it.sum() - (ir * mu).sum() / ir.sum())
    return EffectEstimate("gstat", tau, mapping.d, t, None, int(tgt.sum()), int(ref.sum()),
                          int(s.sum()), float(it.sum()), float(ir.sum()))
