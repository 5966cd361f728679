"""Per-period treatment probabilities and history propensities.

The default model is a pooled logistic regression of ``Z_it`` on an
intercept, the covariates ``X_it``, the previous outcome and treatment, and
optionally a polynomial of the (standardised) unit coordinates.  Under
staggered adoption a unit leaves the risk set once treated; its later
probabilities are fixed at one and excluded from the fit.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg
from scipy.special import expit

from .errors import DegenerateResponse, InvalidHistory, SeparationError
from .panel import HistorySpec, PanelDataset, history_indicator
from .spatial import SpilloverMapping

__all__ = [
    "FeatureSpec",
    "FeatureFrame",
    "LogisticModel",
    "PropensitySpec",
    "PropensityTable",
    "PropensityFit",
    "build_features",
    "coordinate_terms",
    "fit_logistic_irls",
    "estimate_propensity",
    "history_propensity",
    "positivity_check",
    "is_staggered",
]


@dataclass(frozen=True)
class FeatureSpec:
    """Columns of the assignment model.

    ``covariates=None`` uses every covariate on the panel.  ``neighbor_lag``
    adds the mapped previous-period treatment of other units, a hook for
    contagious assignment; ``extra`` injects arbitrary N x T columns.
    """

    covariates: tuple | None = None
    lag_depth: int = 1
    lag_outcome: bool = True
    lag_treatment: bool = True
    coord_poly_degree: int = 0
    period_effects: bool = False
    neighbor_lag: SpilloverMapping | None = None
    extra: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lag_depth < 1:
            raise ValueError("lag_depth must be >= 1")
        if self.coord_poly_degree < 0:
            raise ValueError("coord_poly_degree must be >= 0")


@dataclass(frozen=True)
class FeatureFrame:
    X: np.ndarray
    names: tuple
    unit: np.ndarray
    period: np.ndarray  # 1-based

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]


def coordinate_terms(coords, degree: int):
    """Polynomial terms of the standardised coordinates up to ``degree``.

    Degree ``q`` gives ``(q+1)(q+2)/2 - 1`` columns ordered
    ``x1, x2, x1^2, x1 x2, x2^2, ...``.
    """
    c = np.asarray(coords, dtype=float)
    sd = c.std(axis=0)
    sd[sd == 0] = 1.0
    s = (c - c.mean(axis=0)) / sd
    cols, names = [], []
    for deg in range(1, degree + 1):
        for a in range(deg, -1, -1):
            b = deg - a
            cols.append(s[:, 0] ** a * s[:, 1] ** b)
            names.append(_mono("x1", a) + _mono("x2", b))
    if not cols:
        return np.empty((c.shape[0], 0)), ()
    return np.column_stack(cols), tuple(names)


def _mono(v, k):
    if k == 0:
        return ""
    return v if k == 1 else f"{v}^{k}"


def _feature_grids(panel: PanelDataset, spec: FeatureSpec, treatments=None):
    """Name -> (N, T) arrays for every non-constant column except period dummies."""
    n, T = panel.n_units, panel.n_periods
    z = panel.treatments if treatments is None else treatments
    grids = {}
    names = spec.covariates if spec.covariates is not None else tuple(panel.covariates)
    for name in names:
        x = panel.covariates[name]
        if np.isnan(x).any():
            raise ValueError(f"covariate {name!r} has missing values; impute upstream")
        grids[name] = x

    def lag(a, k):
        out = np.zeros((n, T))
        if k < T:
            out[:, k:] = a[:, :T - k]
        return out

    for k in range(1, spec.lag_depth + 1):
        sfx = "" if spec.lag_depth == 1 else str(k)
        if spec.lag_outcome:
            grids[f"y_lag{sfx}"] = lag(panel.outcomes, k)
        if spec.lag_treatment:
            grids[f"z_lag{sfx}"] = lag(np.asarray(z, dtype=float), k)
    if spec.neighbor_lag is not None:
        mz = spec.neighbor_lag.weights @ np.asarray(z, dtype=float)
        grids["nbr_z_lag"] = lag(mz, 1)
    for name, x in spec.extra.items():
        grids[name] = np.asarray(x, dtype=float)
    if spec.coord_poly_degree:
        terms, tnames = coordinate_terms(panel.coords, spec.coord_poly_degree)
        for j, nm in enumerate(tnames):
            grids[nm] = np.repeat(terms[:, j:j + 1], T, axis=1)
    return grids


def build_features(panel: PanelDataset, spec: FeatureSpec | None = None, *, rows=None,
                   lags: bool = True, periods_for_dummies: Sequence[int] = (),
                   treatments=None) -> FeatureFrame:
    """Design matrix for the assignment model.

    ``rows`` is a boolean (N, T) mask of observations to include; the default
    is every observation in periods 2..T.  With ``lags=False`` the lagged
    columns are dropped (used for period-1 assignment, which conditions on
    the covariates alone).
    """
    spec = spec or FeatureSpec()
    n, T = panel.n_units, panel.n_periods
    if rows is None:
        rows = np.zeros((n, T), dtype=bool)
        rows[:, 1:] = True
    grids = _feature_grids(panel, spec, treatments)
    lag_names = {k for k in grids if k.startswith(("y_lag", "z_lag", "nbr_z_lag"))}
    ui, ti = np.nonzero(rows)
    cols = [np.ones(ui.size)]
    names = ["const"]
    for name, g in grids.items():
        if not lags and name in lag_names:
            continue
        cols.append(g[ui, ti])
        names.append(name)
    if spec.period_effects:
        for p in list(periods_for_dummies)[1:]:
            cols.append((ti == p - 1).astype(float))
            names.append(f"period_{p}")
    X = np.column_stack(cols)
    return FeatureFrame(X, tuple(names), ui, ti + 1)


@dataclass
class LogisticModel:
    coef: np.ndarray
    names: tuple
    n_iter: int
    grad_norm: float
    converged: bool
    ridge: float
    tol: float

    def linear_predictor(self, X):
        return np.asarray(X, dtype=float) @ self.coef

    def predict_proba(self, X):
        return expit(self.linear_predictor(X))

    def to_dict(self) -> dict:
        return {
            "coefficients": {n: float(c) for n, c in zip(self.names, self.coef)},
            "iterations": self.n_iter,
            "grad_norm": self.grad_norm,
            "converged": self.converged,
            "ridge": self.ridge,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _loglik(X, z, beta, ridge):
    eta = X @ beta
    # log(1 + e^eta) computed stably
    return float(z @ eta - np.logaddexp(0.0, eta).sum() - 0.5 * ridge * beta @ beta)


def fit_logistic_irls(F, z, *, max_iter: int = 100, tol: float = 1e-8,
                      ridge: float = 1e-8, names: Sequence[str] | None = None) -> LogisticModel:
    """Ridge-penalised logistic regression by Newton-Raphson / IRLS.

    Maximises ``sum z*eta - log(1+exp(eta)) - ridge/2 |beta|^2`` until the
    largest absolute score component is at most ``tol``.

    Raises
    ------
    DegenerateResponse
        All responses equal.
    SeparationError
        The unpenalised likelihood has no finite maximiser.
    """
    if isinstance(F, FeatureFrame):
        X, names = F.X, F.names
    else:
        X = np.asarray(F, dtype=float)
        names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    z = np.asarray(z, dtype=float)
    if X.shape[0] != z.size:
        raise ValueError("feature rows and responses differ in length")
    if z.min() == z.max():
        raise DegenerateResponse("all responses are identical; the model is not estimable")
    k = X.shape[1]
    beta = np.zeros(k)
    ll = _loglik(X, z, beta, ridge)
    grad = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(X @ beta)
        score = X.T @ (z - p) - ridge * beta
        grad = float(np.abs(score).max())
        if grad <= tol:
            converged = True
            it -= 1
            break
        w = p * (1 - p)
        H = (X * w[:, None]).T @ X + ridge * np.eye(k)
        try:
            step = linalg.solve(H, score, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = np.linalg.lstsq(H, score, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = _loglik(X, z, cand, ridge)
            if ll_new >= ll - 1e-12 * max(1.0, abs(ll)) or t < 1e-10:
                break
            t *= 0.5
        beta, ll = cand, ll_new
        if ridge == 0 and np.abs(X @ beta).max() > 40:
            raise SeparationError(
                "responses are perfectly separated by the features; refit with ridge > 0")
    else:
        p = expit(X @ beta)
        score = X.T @ (z - p) - ridge * beta
        grad = float(np.abs(score).max())
        converged = grad <= tol
    if not converged:
        if ridge == 0 or np.abs(X @ beta).max() > 30:
            raise SeparationError(
                "IRLS did not converge and the linear predictor is diverging; "
                "refit with ridge > 0")
        warnings.warn(f"IRLS stopped after {max_iter} iterations (max|score|={grad:.3g})",
                      RuntimeWarning, stacklevel=2)
    return LogisticModel(beta, tuple(names), it, grad, converged, ridge, tol)


@dataclass(frozen=True)
class PropensitySpec:
    features: FeatureSpec = field(default_factory=FeatureSpec)
    staggered: bool | None = None  # None: infer from the data
    clip: tuple = (0.01, 0.99)
    ridge: float = 1e-8
    max_iter: int = 100
    tol: float = 1e-8


def is_staggered(treatments) -> bool:
    """True when no unit ever switches from treated back to control."""
    z = np.asarray(treatments)
    return bool((np.diff(z, axis=1) >= 0).all())


@dataclass(frozen=True)
class PropensityTable:
    """Per-observation probabilities ``p_it = P(Z_it = 1 | past)``.

    ``p_raw`` holds unclipped values; ``p`` the clipped ones.  Entries in
    ``deterministic`` are structural (0 or 1) and never clipped.
    """

    p_raw: np.ndarray
    deterministic: np.ndarray
    treatments: np.ndarray
    staggered: bool
    clip: tuple = (0.01, 0.99)

    def __post_init__(self):
        lo, hi = self.clip
        if not 0 <= lo < hi <= 1:
            raise ValueError("clip bounds must satisfy 0 <= lo < hi <= 1")
        for a in (self.p_raw, self.deterministic, self.treatments):
            np.asarray(a).setflags(write=False)

    @property
    def p(self) -> np.ndarray:
        lo, hi = self.clip
        return np.where(self.deterministic, self.p_raw, np.clip(self.p_raw, lo, hi))

    @property
    def clipped(self) -> np.ndarray:
        lo, hi = self.clip
        return ~self.deterministic & ((self.p_raw < lo) | (self.p_raw > hi))

    @classmethod
    def from_probabilities(cls, panel: PanelDataset, p, *, staggered: bool | None = None,
                           clip=(0.01, 0.99)) -> "PropensityTable":
        """Wrap externally estimated probabilities (e.g. from CBPS).

        Values exactly 0 or 1 are treated as structural.
        """
        p = np.array(p, dtype=float)
        if p.shape != (panel.n_units, panel.n_periods):
            raise ValueError("probability grid must be N x T")
        if not ((p >= 0) & (p <= 1)).all():
            raise ValueError("probabilities must lie in [0, 1]")
        stag = is_staggered(panel.treatments) if staggered is None else staggered
        det = (p == 0) | (p == 1)
        return cls(p, det, panel.treatments.copy(), stag, tuple(clip))

    def with_clip(self, clip) -> "PropensityTable":
        return replace(self, clip=tuple(clip))

    def history_product(self, history: Sequence[int], start: int) -> np.ndarray:
        """Probability of ``history`` over ``start..`` for every unit, given the realised past.

        Under staggered adoption, a history that is already treated in the
        previous period continues with factor 1 if it stays treated and 0 if
        it reverts.
        """
        p = self.p
        n = p.shape[0]
        w = np.ones(n)
        if start > 1:
            prev = self.treatments[:, start - 2].astype(bool)
        else:
            prev = np.zeros(n, dtype=bool)
        for k, zs in enumerate(history):
            col = start - 1 + k
            if self.staggered:
                free = np.where(zs == 1, p[:, col], 1.0 - p[:, col])
                stuck = np.full(n, 1.0 if zs == 1 else 0.0)
                w = w * np.where(prev, stuck, free)
                prev = prev | bool(zs)
            else:
                w = w * (p[:, col] if zs == 1 else 1.0 - p[:, col])
        return w


def history_propensity(table: PropensityTable, h: HistorySpec):
    """Return ``(W_target, W_reference)``, one history propensity per unit."""
    if h.end > table.p.shape[1]:
        raise InvalidHistory("history ends after the last period of the table")
    return table.history_product(h.target, h.start), table.history_product(h.reference, h.start)


def positivity_check(table: PropensityTable, clip=None, histories: Sequence[HistorySpec] = ()):
    """Re-clip ``table`` and summarise how many probabilities were bounded.

    Returns ``(diagnostics, clipped_table)``.
    """
    clip = tuple(table.clip if clip is None else clip)
    lo, hi = clip
    if not 0 < lo < hi < 1:
        raise ValueError("clip bounds must satisfy 0 < lo < hi < 1")
    out = table.with_clip(clip)
    free = ~out.deterministic
    diag = {
        "n_estimated": int(free.sum()),
        "n_clipped": int(out.clipped.sum()),
        "frac_clipped": float(out.clipped.sum() / max(free.sum(), 1)),
        "min_p": float(out.p_raw[free].min()) if free.any() else np.nan,
        "max_p": float(out.p_raw[free].max()) if free.any() else np.nan,
    }
    z = out.treatments
    for h in histories:
        tgt, ref = (history_indicator_from(z, h))
        wt, wr = history_propensity(out, h)
        vals = np.concatenate([wt[tgt], wr[ref]])
        diag[h.label()] = {
            "min_W": float(vals.min()) if vals.size else np.nan,
            "max_W": float(vals.max()) if vals.size else np.nan,
        }
    return diag, out


def history_indicator_from(z, h: HistorySpec):
    block = np.asarray(z)[:, h.start - 1:h.end]
    return (block == np.asarray(h.target)).all(axis=1), (block == np.asarray(h.reference)).all(axis=1)


@dataclass
class PropensityFit:
    """Fitted assignment model(s) plus the probability table they imply."""

    spec: PropensitySpec
    pooled: LogisticModel | None
    first_period: LogisticModel | None
    deterministic_periods: dict  # period -> constant probability for the risk set
    staggered: bool
    table: PropensityTable

    def predict(self, panel: PanelDataset, treatments=None) -> PropensityTable:
        """Probability table for ``panel`` (optionally with replaced treatments)."""
        z = panel.treatments if treatments is None else np.asarray(treatments)
        p, det = _predict_grid(panel, z, self)
        return PropensityTable(p, det, np.array(z, dtype=np.int8), self.staggered, self.spec.clip)

    def sample(self, panel: PanelDataset, n_draws: int, seed: int = 0):
        """Draw assignment histories period by period from the fitted model.

        Outcomes and covariates are held at their observed values.  Draw
        ``b`` uses ``numpy.random.default_rng((seed, b))``.

        Returns
        -------
        Z : (n_draws, N, T) int8 array
        P : (n_draws, N, T) clipped probabilities used for each draw
        """
        n, T = panel.n_units, panel.n_periods
        static, dyn = self._linear_parts(panel)
        U = np.stack([np.random.default_rng((seed, b)).random((n, T)) for b in range(n_draws)])
        Z = np.zeros((n_draws, n, T), dtype=np.int8)
        P = np.ones((n_draws, n, T))
        lo, hi = self.spec.clip
        for t in range(1, T + 1):
            if self.staggered and t > 1:
                at_risk = Z[:, :, t - 2] == 0
            else:
                at_risk = np.ones((n_draws, n), dtype=bool)
            if t in self.deterministic_periods:
                p = np.full((n_draws, n), self.deterministic_periods[t])
            else:
                eta = static[None, :, t - 1].repeat(n_draws, axis=0)
                if t > 1:
                    for name, coef in dyn.items():
                        eta = eta + coef * _dynamic_feature(name, Z, t, self.spec.features)
                p = np.clip(expit(eta), lo, hi)
            p = np.where(at_risk, p, 1.0)
            P[:, :, t - 1] = p
            Z[:, :, t - 1] = np.where(at_risk, U[:, :, t - 1] < p, 1).astype(np.int8)
        return Z, P

    def _linear_parts(self, panel):
        """Split the linear predictor into a fixed part and treatment-lag terms."""
        n, T = panel.n_units, panel.n_periods
        zero = np.zeros((n, T), dtype=np.int8)
        static = np.zeros((n, T))
        rows = np.ones((n, T), dtype=bool)
        if self.pooled is not None:
            F = build_features(panel, self.spec.features, rows=rows,
                               periods_for_dummies=_fit_periods(self), treatments=zero)
            static[F.unit, F.period - 1] = self.pooled.linear_predictor(F.X)
        if self.first_period is not None:
            mask = np.zeros((n, T), dtype=bool)
            mask[:, 0] = True
            F = build_features(panel, self.spec.features, rows=mask, lags=False)
            static[:, 0] = self.first_period.linear_predictor(F.X)
        dyn = {}
        if self.pooled is not None:
            for name, c in zip(self.pooled.names, self.pooled.coef):
                if name.startswith(("z_lag", "nbr_z_lag")):
                    dyn[name] = c
        return static, dyn


def _dynamic_feature(name, Z, t, spec: FeatureSpec):
    """Treatment-dependent feature for period ``t`` across a stack of draws."""
    if name == "nbr_z_lag":
        return Z[:, :, t - 2].astype(float) @ spec.neighbor_lag.weights.T
    k = int(name[5:] or 1)
    if t - k < 1:
        return np.zeros(Z.shape[:2])
    return Z[:, :, t - 1 - k].astype(float)


def _risk_set(z, staggered):
    n, T = z.shape
    at_risk = np.ones((n, T), dtype=bool)
    if staggered:
        at_risk[:, 1:] = z[:, :-1] == 0
    return at_risk


def _predict_grid(panel, z, fit: PropensityFit):
    n, T = z.shape
    at_risk = _risk_set(z, fit.staggered)
    p = np.ones((n, T))
    det = np.ones((n, T), dtype=bool)
    for t in range(1, T + 1):
        rows = at_risk[:, t - 1]
        if t in fit.deterministic_periods:
            p[rows, t - 1] = fit.deterministic_periods[t]
            continue
        det[rows, t - 1] = False
        mask = np.zeros((n, T), dtype=bool)
        mask[:, t - 1] = rows
        if t == 1:
            F = build_features(panel, fit.spec.features, rows=mask, lags=False, treatments=z)
            model = fit.first_period
        else:
            F = build_features(panel, fit.spec.features, rows=mask,
                               periods_for_dummies=_fit_periods(fit), treatments=z)
            model = fit.pooled
        p[F.unit, F.period - 1] = model.predict_proba(F.X)
    return p, det


def _fit_periods(fit):
    T = fit.table.p_raw.shape[1]
    return [t for t in range(2, T + 1) if t not in fit.deterministic_periods]


def estimate_propensity(panel: PanelDataset, spec: PropensitySpec | None = None) -> PropensityFit:
    """Fit the assignment model and tabulate ``p_it`` for every observation.

    Periods in which every unit of the risk set shares the same treatment are
    treated as structurally deterministic.  Period-1 assignment (if it varies)
    gets its own covariate-only fit; periods 2..T are pooled.
    """
    spec = spec or PropensitySpec()
    z = panel.treatments
    n, T = z.shape
    staggered = is_staggered(z) if spec.staggered is None else spec.staggered
    at_risk = _risk_set(z, staggered)
    deterministic = {}
    for t in range(1, T + 1):
        vals = z[at_risk[:, t - 1], t - 1]
        if vals.size == 0 or vals.min() == vals.max():
            deterministic[t] = float(vals[0]) if vals.size else 0.0
    fit_periods = [t for t in range(2, T + 1) if t not in deterministic]
    pooled = first = None
    if fit_periods:
        rows = np.zeros((n, T), dtype=bool)
        for t in fit_periods:
            rows[:, t - 1] = at_risk[:, t - 1]
        F = build_features(panel, spec.features, rows=rows, periods_for_dummies=fit_periods)
        pooled = fit_logistic_irls(F, z[F.unit, F.period - 1], max_iter=spec.max_iter,
                                   tol=spec.tol, ridge=spec.ridge)
    if 1 not in deterministic:
        rows = np.zeros((n, T), dtype=bool)
        rows[:, 0] = True
        F = build_features(panel, spec.features, rows=rows, lags=False)
        first = fit_logistic_irls(F, z[:, 0], max_iter=spec.max_iter, tol=spec.tol,
                                  ridge=spec.ridge)
    placeholder = PropensityTable(np.ones((n, T)), np.ones((n, T), dtype=bool), z.copy(),
                                  staggered, spec.clip)
    fit = PropensityFit(spec, pooled, first, deterministic, staggered, placeholder)
    fit.table = fit.predict(panel)
    return fit
