"""Simulated raster panels with spatial and temporal spillovers.

Units sit on a ``rows x cols`` lattice.  A smooth unit effect ``alpha`` is
interpolated from a few random anchor cells by kriging; untreated outcomes
follow a two-way fixed-effects model with two covariates; treatment is
adopted in a staggered way with probabilities driven by last period's
outcome and treatment.  Each treated unit emits an effect that decays with
distance, received effects are scaled up by the receiver's ``alpha`` and
carried over to the next period at a discount rate.

Replications are design based: the unit effects, covariates, period shocks
and idiosyncratic errors are drawn once from ``SimConfig.seed`` and only the
assignment noise is redrawn.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist
from scipy.special import expit

from .errors import ConfigError, NoSupport, RankDeficient, SeparationError
from .estimators import (
    did_estimate,
    eate_augmented,
    eate_hajek,
    eate_ht,
    fit_diffusion_model,
)
from .panel import HistorySpec, PanelDataset
from .propensity import FeatureSpec, PropensitySpec, PropensityTable, estimate_propensity
from .spatial import DistanceMatrix, SpilloverMapping, circle_mean_weights, distance_matrix
from .variance import confidence_interval, hajek_wls, spatial_hac

__all__ = [
    "SimConfig",
    "SimWorld",
    "SimPanel",
    "TrueEffectCurve",
    "EstimatorSpec",
    "ReplicationResult",
    "SCENARIOS",
    "grid_coords",
    "krige",
    "gp_surface",
    "effect_function",
    "build_world",
    "simulate_panel",
    "true_eate_mc",
    "direct_effect_mc",
    "replicate",
]

# streams of the per-config seed sequence
_BASE, _REPLICATE, _TRUTH, _DIRECT = 0, 1, 2, 3
_GH_NODES = 32


@dataclass(frozen=True)
class SimConfig:
    rows: int = 20
    cols: int = 20
    n_periods: int = 5
    mu: float = 5.0
    outcome_coefs: tuple = (0.3, 0.5)
    assign_coefs: tuple = (-2.0, 0.2, 0.2, 0.05, 0.4)
    nu_sd: float = 1.0
    confounding: float = 0.0
    start_period: int = 3
    staggered: bool = True
    n_anchors: int = 16
    kriging_range: float = 10.0
    kriging_kernel: str = "exponential"
    nugget: float = 0.0
    sill: float = 1.0
    alpha_loc: float = 0.5
    effect_shape: str = "exp"
    amplitude: float = 0.5
    decay: float = 0.7
    max_radius: float = 3.0
    heterogeneity: float = 1.0
    discount: float = 0.6
    y_bound: float = 1e3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "outcome_coefs", tuple(float(c) for c in self.outcome_coefs))
        object.__setattr__(self, "assign_coefs", tuple(float(c) for c in self.assign_coefs))
        if self.rows < 2 or self.cols < 2:
            raise ConfigError("rows/cols", "grid dimensions must be at least 2")
        if self.n_periods < 2:
            raise ConfigError("n_periods", "need at least 2 periods")
        if not 0 <= self.discount <= 1:
            raise ConfigError("discount", "must lie in [0, 1]")
        if not np.isfinite(self.amplitude):
            raise ConfigError("amplitude", "must be finite")
        if len(self.outcome_coefs) != 2:
            raise ConfigError("outcome_coefs", "expected coefficients on (X1, X2)")
        if len(self.assign_coefs) != 5:
            raise ConfigError("assign_coefs", "expected (intercept, X1, X2, Y lag, Z lag)")
        if self.n_anchors < 3 or self.n_anchors > self.rows * self.cols:
            raise ConfigError("n_anchors", "need 3 <= n_anchors <= number of cells")
        if self.effect_shape not in ("exp", "linear", "step"):
            raise ConfigError("effect_shape", "choose exp, linear or step")
        if self.kriging_kernel not in ("exponential", "gaussian"):
            raise ConfigError("kriging_kernel", "choose exponential or gaussian")
        if self.nugget < 0:
            raise ConfigError("nugget", "must be non-negative")
        if self.nu_sd < 0 or self.sill <= 0 or self.kriging_range <= 0:
            raise ConfigError("nu_sd/sill/kriging_range", "must be positive")
        if not 1 <= self.start_period <= self.n_periods:
            raise ConfigError("start_period", "must lie within the panel")

    @property
    def n_units(self) -> int:
        return self.rows * self.cols

    def to_dict(self) -> dict:
        d = asdict(self)
        d["outcome_coefs"] = list(self.outcome_coefs)
        d["assign_coefs"] = list(self.assign_coefs)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"sim.{sorted(extra)[0]}", "unknown field")
        if "scenario" in d:
            raise ConfigError("sim.scenario", "use SimConfig.scenario() for presets")
        return cls(**d)

    @classmethod
    def scenario(cls, name: str, **overrides) -> "SimConfig":
        if name not in SCENARIOS:
            raise ConfigError("scenario", f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
        return cls(**{**SCENARIOS[name], **overrides})


# Named parameter sets used by the replication studies.  ``default`` keeps
# assignment ignorable given the observed past; ``confounded`` lets alpha
# raise the assignment logit; ``homogeneous`` removes effect heterogeneity
# and every unit-level driver of assignment; ``additive`` switches off
# carryover and heterogeneity so a linear diffusion model is correct.
SCENARIOS = {
    "default": {},
    "confounded": {"confounding": 0.4, "kriging_kernel": "gaussian", "kriging_range": 24.0,
                   "nugget": 0.5},
    "homogeneous": {"heterogeneity": 0.0, "discount": 0.0,
                    "assign_coefs": (-1.3, 0.0, 0.0, 0.0, 0.0)},
    "additive": {"heterogeneity": 0.0, "discount": 0.0},
    "null": {"amplitude": 0.0},
    "strong": {"amplitude": 3.0, "decay": 4.0, "max_radius": 8.0,
               "assign_coefs": (-2.0, 0.2, 0.2, 0.0, 0.4)},
}


def grid_coords(rows: int, cols: int) -> np.ndarray:
    """Cell centres of a raster, unit ``r * cols + c`` at ``(c, r)``."""
    r, c = np.divmod(np.arange(rows * cols), cols)
    return np.column_stack([c, r]).astype(float)


def _covariance(h, range_, sill, kernel):
    if kernel == "exponential":
        return sill * np.exp(-h / range_)
    if kernel == "gaussian":
        return sill * np.exp(-(h / range_) ** 2)
    raise ValueError(f"unknown kriging kernel {kernel!r}")


def krige(anchor_xy, anchor_values, targets, range_: float, sill: float = 1.0,
          kernel: str = "exponential", nugget: float = 0.0) -> np.ndarray:
    """Ordinary kriging prediction at ``targets``.

    Without a nugget the predictor interpolates the anchors exactly; it
    always reproduces constant anchor values.  A nugget (in units of the
    sill) turns interpolation into smoothing.
    """
    A = np.asarray(anchor_xy, dtype=float)
    v = np.asarray(anchor_values, dtype=float)
    k = A.shape[0]
    M = np.zeros((k + 1, k + 1))
    M[:k, :k] = _covariance(cdist(A, A), range_, sill, kernel) + nugget * sill * np.eye(k)
    M[:k, k] = M[k, :k] = 1.0
    rhs = np.ones((k + 1, len(targets)))
    rhs[:k] = _covariance(cdist(A, np.asarray(targets, dtype=float)), range_, sill, kernel)
    lam = np.linalg.solve(M, rhs)[:k]
    return lam.T @ v


def gp_surface(rows: int, cols: int, n_anchors: int = 16, range_: float = 10.0,
               sill: float = 1.0, loc: float = 0.0, seed=0, kernel: str = "exponential",
               nugget: float = 0.0) -> np.ndarray:
    """Smooth random field on a raster kriged from random anchor cells.

    Anchor values are ``loc + sqrt(sill) * N(0, 1)`` at distinct uniformly
    chosen cells.
    """
    if n_anchors < 3:
        raise ValueError("n_anchors must be at least 3")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    xy = grid_coords(rows, cols)
    cells = rng.choice(rows * cols, size=n_anchors, replace=False)
    values = loc + np.sqrt(sill) * rng.standard_normal(n_anchors)
    return krige(xy[cells], values, xy, range_, sill, kernel, nugget)


def effect_function(cfg: SimConfig, d):
    """Effect emitted by one treated unit on a unit at distance ``d``."""
    d = np.asarray(d, dtype=float)
    inside = d <= cfg.max_radius + 1e-9
    if cfg.effect_shape == "exp":
        f = cfg.amplitude * np.exp(-d / cfg.decay)
    elif cfg.effect_shape == "linear":
        f = cfg.amplitude * np.clip(1.0 - d / (cfg.max_radius + 1.0), 0.0, None)
    else:
        f = np.full(d.shape, cfg.amplitude)
    return np.where(inside, f, 0.0)


@dataclass
class SimWorld:
    """Fixed baseline of a simulation: geography, unit effects and ``Y(0)``."""

    cfg: SimConfig
    coords: np.ndarray
    D: DistanceMatrix
    alpha: np.ndarray
    alpha_z: np.ndarray  # standardised alpha driving heterogeneity and confounding
    X1: np.ndarray
    X2: np.ndarray
    xi: np.ndarray
    eps: np.ndarray
    Y0: np.ndarray
    F: np.ndarray  # F[j, i]: effect of j's treatment on i
    scale: np.ndarray
    gh: tuple = field(repr=False, default=None)
    bound_hits: int = 0

    @property
    def n_units(self) -> int:
        return self.coords.shape[0]

    def noise(self, rng: np.random.Generator):
        """Assignment noise ``(nu, U)`` for one replication."""
        n, T = self.n_units, self.cfg.n_periods
        nu = self.cfg.nu_sd * rng.standard_normal((n, T))
        U = rng.random((n, T))
        return nu, U

    def marginal_p(self, eta):
        """``E_nu[expit(eta + nu)]`` by Gauss-Hermite quadrature."""
        x, w = self.gh
        return expit(eta[..., None] + self.cfg.nu_sd * x) @ w

    def eta(self, t: int, y_prev, z_prev):
        """Assignment linear predictor for period ``t`` (without ``nu``)."""
        c = self.cfg.assign_coefs
        col = t - 1
        base = c[0] + c[1] * self.X1[:, col] + c[2] * self.X2[:, col]
        base = base + self.cfg.confounding * self.alpha_z
        return base + c[3] * y_prev + c[4] * z_prev

    def run(self, nu, U, forced=None, own_probs: bool = False):
        """Simulate a batch of worlds sharing the assignment noise ``(nu, U)``.

        ``forced`` is an optional ``(B, T)`` array of own-treatment paths: in
        world ``b`` unit ``b`` follows ``forced[b, t]`` wherever it is not
        NaN, every other unit responds naturally.  Without ``forced`` a single
        natural world is simulated.

        Returns
        -------
        Z, Y : (B, N, T) arrays
            Treatments and observed outcomes.
        P : (B, N, T) array, or (B, T) with ``own_probs``
            True (noise-marginal) probabilities of treatment given the past;
            with ``own_probs`` only unit ``b``'s in world ``b``.
        """
        cfg = self.cfg
        n, T = self.n_units, cfg.n_periods
        B = 1 if forced is None else forced.shape[0]
        Z = np.zeros((B, n, T), dtype=np.int8)
        Y = np.zeros((B, n, T))
        P = np.zeros((B, T)) if own_probs else np.zeros((B, n, T))
        R = np.zeros((B, n))
        y_prev = np.zeros((B, n))
        z_prev = np.zeros((B, n))
        rows = np.arange(B)
        with np.errstate(divide="ignore"):
            logit_u = np.log(U) - np.log1p(-U)
        for t in range(1, T + 1):
            col = t - 1
            eta = self.eta(t, y_prev, z_prev)
            if t < cfg.start_period:
                z = np.zeros((B, n))
                p = 0.0
            else:
                z = (logit_u[:, col] < eta + nu[:, col]).astype(float)
                if own_probs:
                    p = self.marginal_p(eta[rows, rows])
                    if cfg.staggered:
                        p = np.where(z_prev[rows, rows] == 1, 1.0, p)
                else:
                    p = self.marginal_p(eta)
                    if cfg.staggered:
                        p = np.where(z_prev == 1, 1.0, p)
                if cfg.staggered:
                    z = np.maximum(z, z_prev)
            if forced is not None:
                f = forced[:, col]
                own = ~np.isnan(f)
                z[rows[own], rows[own]] = f[own]
            R = self.scale * (z @ self.F) + cfg.discount * R
            y = self.Y0[:, col] + R
            Z[:, :, col], Y[:, :, col] = z, y
            P[..., col] = p
            y_prev, z_prev = y, z
        hits = int((np.abs(Y) > cfg.y_bound).sum())
        if hits:
            self.bound_hits += hits
            warnings.warn(f"{hits} simulated outcomes exceed the bound {cfg.y_bound:g}",
                          RuntimeWarning, stacklevel=2)
        return Z, Y, P


def build_world(cfg: SimConfig) -> SimWorld:
    """Draw the fixed part of the design from ``cfg.seed``."""
    rng = np.random.default_rng((cfg.seed, _BASE))
    n, T = cfg.n_units, cfg.n_periods
    coords = grid_coords(cfg.rows, cfg.cols)
    D = distance_matrix(coords)
    alpha = gp_surface(cfg.rows, cfg.cols, cfg.n_anchors, cfg.kriging_range, cfg.sill,
                       cfg.alpha_loc, rng, cfg.kriging_kernel, cfg.nugget)
    X1 = rng.standard_normal((n, T))
    X2 = alpha[:, None] + rng.standard_normal((n, T))
    xi = rng.standard_normal(T)
    eps = rng.standard_normal((n, T))
    b1, b2 = cfg.outcome_coefs
    Y0 = cfg.mu + b1 * X1 + b2 * X2 + alpha[:, None] + xi[None, :] + eps
    F = effect_function(cfg, D.dist)
    z = (alpha - alpha.mean()) / alpha.std()
    scale = 1.0 + cfg.heterogeneity * expit(z)
    x, w = np.polynomial.hermite_e.hermegauss(_GH_NODES)
    gh = (x, w / w.sum())
    return SimWorld(cfg, coords, D, alpha, z, X1, X2, xi, eps, Y0, F, scale, gh)


@dataclass
class SimPanel:
    panel: PanelDataset
    p_true: np.ndarray
    world: SimWorld

    @property
    def true_table(self) -> PropensityTable:
        """Probability table built from the data-generating probabilities."""
        det = (self.p_true == 0) | (self.p_true == 1)
        return PropensityTable(self.p_true, det, self.panel.treatments.copy(),
                               self.world.cfg.staggered, (1e-12, 1 - 1e-12))


def simulate_panel(cfg_or_world, rep: int = 0) -> SimPanel:
    """One replication: fresh assignment noise on the fixed baseline."""
    world = cfg_or_world if isinstance(cfg_or_world, SimWorld) else build_world(cfg_or_world)
    cfg = world.cfg
    rng = np.random.default_rng((cfg.seed, _REPLICATE, rep))
    nu, U = world.noise(rng)
    Z, Y, P = world.run(nu, U)
    panel = PanelDataset(Y[0], Z[0], world.coords, {"x1": world.X1, "x2": world.X2})
    return SimPanel(panel, P[0], world)


def _mappings(world: SimWorld, d_grid, bandwidth=None):
    return [circle_mean_weights(world.D, d, bandwidth) for d in d_grid]


@dataclass
class TrueEffectCurve:
    """Monte-Carlo expected average effect of a history contrast by distance.

    ``p_target``/``p_reference`` are per-unit probabilities of following each
    history.  ``g_target``/``g_reference`` hold, per unit (rows) and distance
    (columns), the expected change of ``mu_i(Y)`` from the last period
    before the histories diverge to ``t`` when the unit follows each history.
    They feed :func:`~spillover.estimators.did_bias_oracle`.
    """

    d_grid: np.ndarray
    eate: np.ndarray
    mc_se: np.ndarray
    n_reps: int
    history: HistorySpec
    t: int
    p_target: np.ndarray
    p_reference: np.ndarray
    g_target: np.ndarray
    g_reference: np.ndarray
    support: np.ndarray
    per_rep: np.ndarray = field(repr=False, default=None)
    batches: list = field(repr=False, default_factory=list)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"d": self.d_grid, "eate": self.eate, "mc_se": self.mc_se,
                             "n_reps": self.n_reps})

    def oracle_bias(self) -> np.ndarray:
        """DID bias implied by the oracle ingredients at each distance."""
        return _oracle(self.p_target, self.p_reference, self.g_target, self.g_reference,
                       self.support)

    def oracle_se(self) -> np.ndarray:
        """Batch-means Monte-Carlo standard error of :meth:`oracle_bias`."""
        if len(self.batches) < 2:
            return np.full(len(self.d_grid), np.nan)
        vals = np.array([_oracle(*b, self.support) for b in self.batches])
        return vals.std(axis=0, ddof=1) / np.sqrt(len(vals))


def _oracle(pt, pr, gt, gr, support):
    from .estimators import did_bias_oracle

    out = []
    for j in range(support.shape[1]):
        s = support[:, j]
        out.append(did_bias_oracle(pt[s], gt[s, j], gr[s, j], pr[s]))
    return np.asarray(out)


def _forced_paths(h: HistorySpec, T: int, hist, n):
    f = np.full((n, T), np.nan)
    f[:, h.start - 1:h.end] = hist
    return f


def true_eate_mc(cfg_or_world, h: HistorySpec, d_grid: Sequence[float], t: int,
                 n_reps: int = 200, seed: int | None = None, bandwidth=None,
                 n_batches: int = 10) -> TrueEffectCurve:
    """Monte-Carlo ground truth for the expected average effect of ``h``.

    In every replication all units draw their natural assignment noise.  For
    each unit ``i`` the panel is re-simulated twice with ``i``'s history
    forced to the target and to the reference while the other units respond
    to the resulting outcomes as the design dictates.  The differences of
    ``mu_i(Y_t)`` are averaged over supported units and replications.

    The same runs give the ingredients of the DID bias oracle: the
    probability that unit ``i`` follows each history (the product of its own
    assignment probabilities along the forced path) and the expected change
    of ``mu_i(Y)`` since the last common period.
    """
    if n_reps < 2:
        raise ValueError("n_reps must be at least 2")
    world = cfg_or_world if isinstance(cfg_or_world, SimWorld) else build_world(cfg_or_world)
    cfg = world.cfg
    if not h.end <= t <= cfg.n_periods:
        raise ValueError("need history end <= t <= T")
    n, T = world.n_units, cfg.n_periods
    seed = cfg.seed if seed is None else seed
    maps = _mappings(world, d_grid, bandwidth)
    K = len(maps)
    Wd = np.stack([m.weights for m in maps])  # (K, N, N)
    support = np.stack([m.support for m in maps], axis=1)
    ft = _forced_paths(h, T, h.target, n)
    fr = _forced_paths(h, T, h.reference, n)
    k0 = next(k for k in range(h.length) if h.target[k] != h.reference[k])
    pre = h.start + k0 - 1
    per_rep = np.zeros((n_reps, K))
    n_batches = max(1, min(n_batches, n_reps))
    acc = [[np.zeros(n), np.zeros(n), np.zeros((n, K)), np.zeros((n, K)), 0]
           for _ in range(n_batches)]
    for r in range(n_reps):
        rng = np.random.default_rng((seed, _TRUTH, r))
        nu, U = world.noise(rng)
        _, Yt, Pt = world.run(nu, U, ft, own_probs=True)
        _, Yr, Pr = world.run(nu, U, fr, own_probs=True)
        # mu_i evaluated in world i
        mt = np.einsum("kij,ij->ik", Wd, Yt[:, :, t - 1])
        mr = np.einsum("kij,ij->ik", Wd, Yr[:, :, t - 1])
        diff = np.where(support, mt - mr, 0.0)
        per_rep[r] = diff.sum(axis=0) / support.sum(axis=0)
        b = acc[r * n_batches // n_reps]
        b[0] += _own_history_prob(Pt, h.target, h.start, cfg.staggered)
        b[1] += _own_history_prob(Pr, h.reference, h.start, cfg.staggered)
        if pre >= 1:
            mt = mt - np.einsum("kij,ij->ik", Wd, Yt[:, :, pre - 1])
            mr = mr - np.einsum("kij,ij->ik", Wd, Yr[:, :, pre - 1])
        b[2] += mt
        b[3] += mr
        b[4] += 1
    batches = [tuple(x / b[4] for x in b[:4]) for b in acc if b[4]]
    total = sum(b[4] for b in acc)
    pooled = [sum(b[j] for b in acc) / total for j in range(4)]
    eate = per_rep.mean(axis=0)
    se = per_rep.std(axis=0, ddof=1) / np.sqrt(n_reps)
    return TrueEffectCurve(np.asarray(d_grid, dtype=float), eate, se, n_reps, h, t,
                           *pooled, support, per_rep, batches)


def _own_history_prob(P_own, hist, start, staggered):
    """Probability of a unit's own forced history along its simulated path."""
    w = np.ones(P_own.shape[0])
    prev = np.zeros(P_own.shape[0], dtype=bool)
    for k, z in enumerate(hist):
        p = P_own[:, start - 1 + k]
        if staggered:
            w *= np.where(prev, float(z == 1), p if z else 1 - p)
            prev = prev | bool(z)
        else:
            w *= p if z else 1 - p
    return w


def direct_effect_mc(cfg_or_world, h: HistorySpec, t: int, n_reps: int = 100,
                     seed: int | None = None):
    """Expected average direct effect by forcing one unit at a time.

    Independent of :func:`true_eate_mc`: every unit gets its own single-world
    simulations and its own noise.  Returns ``(estimate, mc_se)``.
    """
    world = cfg_or_world if isinstance(cfg_or_world, SimWorld) else build_world(cfg_or_world)
    cfg = world.cfg
    n, T = world.n_units, cfg.n_periods
    seed = cfg.seed if seed is None else seed
    per_rep = np.zeros(n_reps)
    for r in range(n_reps):
        rng = np.random.default_rng((seed, _DIRECT, r))
        total = 0.0
        for i in range(n):
            nu, U = world.noise(rng)
            out = []
            for hist in (h.target, h.reference):
                f = np.full((1, T), np.nan)
                f[0, h.start - 1:h.end] = hist
                out.append(_run_single(world, nu, U, i, f))
            total += out[0][i, t - 1] - out[1][i, t - 1]
        per_rep[r] = total / n
    return float(per_rep.mean()), float(per_rep.std(ddof=1) / np.sqrt(n_reps))


def _run_single(world: SimWorld, nu, U, unit, forced_path):
    """Natural simulation with only ``unit``'s own path forced; returns Y (N, T)."""
    cfg = world.cfg
    n, T = world.n_units, cfg.n_periods
    R = np.zeros(n)
    y_prev = np.zeros(n)
    z_prev = np.zeros(n)
    Y = np.zeros((n, T))
    for t in range(1, T + 1):
        col = t - 1
        if t < cfg.start_period:
            z = np.zeros(n)
        else:
            eta = world.eta(t, y_prev, z_prev)
            z = (U[:, col] < expit(eta + nu[:, col])).astype(float)
            if cfg.staggered:
                z = np.maximum(z, z_prev)
        f = forced_path[0, col]
        if not np.isnan(f):
            z[unit] = f
        R = world.scale * (world.F.T @ z) + cfg.discount * R
        Y[:, col] = world.Y0[:, col] + R
        y_prev, z_prev = Y[:, col], z
    return Y


@dataclass(frozen=True)
class EstimatorSpec:
    """One estimator configuration evaluated in every replication.

    ``kind`` is ``ht``, ``hajek``, ``augmented`` or ``did``.  ``propensity``
    may be ``"fitted"`` (pooled logistic) or ``"true"`` (the simulation's own
    probabilities).  ``variance`` of ``hc0`` or ``spatial`` adds a Hajek
    sandwich interval using ``cutoff``.
    """

    kind: str = "hajek"
    label: str | None = None
    coord_poly_degree: int = 0
    covariates: tuple | None = None
    propensity: str = "fitted"
    clip: tuple = (0.01, 0.99)
    variance: str | None = None
    cutoff: float = 0.0
    kernel: str = "uniform"
    level: float = 0.95
    model_bins: tuple | None = None
    model_bandwidth: float | None = None
    model_unit_effects: bool = False
    model_lags: bool = True

    def __post_init__(self):
        if self.kind not in ("ht", "hajek", "augmented", "did"):
            raise ConfigError("estimator.kind", f"unknown estimator {self.kind!r}")
        if self.variance not in (None, "hc0", "spatial"):
            raise ConfigError("estimator.variance", "choose hc0 or spatial")
        if self.propensity not in ("fitted", "true"):
            raise ConfigError("estimator.propensity", "choose fitted or true")

    @property
    def name(self) -> str:
        return self.label or self.kind

    def propensity_spec(self) -> PropensitySpec:
        feats = FeatureSpec(covariates=self.covariates, coord_poly_degree=self.coord_poly_degree)
        return PropensitySpec(features=feats, clip=tuple(self.clip))


@dataclass
class ReplicationResult:
    specs: tuple
    d_grid: np.ndarray
    estimates: np.ndarray  # (reps, specs, d)
    covered: np.ndarray  # (reps, specs, d), NaN without interval
    ci_width: np.ndarray
    truth: TrueEffectCurve | None
    n_clipped: np.ndarray  # (reps,) clipped probabilities of the first fitted spec
    treated: np.ndarray  # (reps, T)

    @property
    def n_reps(self) -> int:
        return self.estimates.shape[0]

    def summary(self) -> pd.DataFrame:
        rows = []
        for s, spec in enumerate(self.specs):
            for k, d in enumerate(self.d_grid):
                est = self.estimates[:, s, k]
                ok = np.isfinite(est)
                m = float(est[ok].mean()) if ok.any() else np.nan
                se = float(est[ok].std(ddof=1) / np.sqrt(ok.sum())) if ok.sum() > 1 else np.nan
                truth = float(self.truth.eate[k]) if self.truth is not None else np.nan
                cov = self.covered[:, s, k]
                rows.append({
                    "estimator": spec.name,
                    "d": float(d),
                    "mean": m,
                    "truth": truth,
                    "bias": m - truth,
                    "mc_se": se,
                    "truth_se": float(self.truth.mc_se[k]) if self.truth is not None else np.nan,
                    "sd": float(est[ok].std(ddof=1)) if ok.sum() > 1 else np.nan,
                    "coverage": float(np.nanmean(cov)) if np.isfinite(cov).any() else np.nan,
                    "n_ok": int(ok.sum()),
                })
        return pd.DataFrame(rows)


def _estimate(spec: EstimatorSpec, sp: SimPanel, maps, h, t, cache):
    """Estimates and interval bounds of one spec on one simulated panel."""
    panel = sp.panel
    K = len(maps)
    est = np.full(K, np.nan)
    lo = np.full(K, np.nan)
    hi = np.full(K, np.nan)
    if spec.kind == "did":
        for k, m in enumerate(maps):
            try:
                est[k] = did_estimate(panel, history=h, post_period=t, mapping=m).tau
            except NoSupport:
                pass
        return est, lo, hi, None
    if spec.propensity == "true":
        table = sp.true_table
        n_clip = 0
    else:
        key = (spec.coord_poly_degree, spec.covariates, tuple(spec.clip))
        if key not in cache:
            try:
                cache[key] = estimate_propensity(panel, spec.propensity_spec()).table
            except SeparationError:
                cache[key] = None
        table = cache[key]
        if table is None:
            return est, lo, hi, None
        n_clip = int(table.clipped.sum())
    model = None
    if spec.kind == "augmented":
        mkey = ("model", spec.model_bins, spec.model_bandwidth, spec.model_unit_effects,
                spec.model_lags)
        if mkey not in cache:
            bins = spec.model_bins if spec.model_bins is not None else tuple(
                float(m.d) for m in maps)
            try:
                cache[mkey] = fit_diffusion_model(
                    panel, sp.world.D, bins, bandwidth=spec.model_bandwidth,
                    lag_outcome=spec.model_lags, lag_treatment=spec.model_lags,
                    unit_effects=spec.model_unit_effects)
            except RankDeficient:
                cache[mkey] = None
        model = cache[mkey]
        if model is None:
            return est, lo, hi, n_clip
    for k, m in enumerate(maps):
        try:
            if spec.kind == "ht":
                e = eate_ht(panel, m, h, t, table)
            elif spec.kind == "hajek":
                e = eate_hajek(panel, m, h, t, table)
            else:
                e = eate_augmented(panel, m, h, t, table, model)
        except NoSupport:
            continue
        est[k] = e.tau
        if spec.variance is not None and spec.kind == "hajek":
            rep = hajek_wls(panel, m, h, t, table)
            cutoff = 0.0 if spec.variance == "hc0" else spec.cutoff
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                v = spatial_hac(rep, sp.world.D, cutoff, spec.kernel)
            lo[k], hi[k] = confidence_interval(e.tau, v.var, spec.level)
    return est, lo, hi, n_clip


def replicate(cfg_or_world, specs: Sequence[EstimatorSpec], n_reps: int, h: HistorySpec,
              t: int, d_grid: Sequence[float], *, seed: int | None = None,
              truth: TrueEffectCurve | None = None, bandwidth=None,
              progress=None) -> ReplicationResult:
    """Run every estimator on ``n_reps`` replications sharing the same draws.

    Estimators are paired across specs (the same simulated panel feeds all
    of them).  ``seed`` overrides the configuration's seed for the
    assignment streams.
    """
    if n_reps < 2:
        raise ValueError("n_reps must be at least 2")
    world = cfg_or_world if isinstance(cfg_or_world, SimWorld) else build_world(cfg_or_world)
    if seed is not None and seed != world.cfg.seed:
        world = replace(world, cfg=replace(world.cfg, seed=seed))
    specs = tuple(specs)
    maps = _mappings(world, d_grid, bandwidth)
    K, S = len(maps), len(specs)
    est = np.full((n_reps, S, K), np.nan)
    covered = np.full((n_reps, S, K), np.nan)
    width = np.full((n_reps, S, K), np.nan)
    n_clip = np.zeros(n_reps, dtype=int)
    treated = np.zeros((n_reps, world.cfg.n_periods), dtype=int)
    for r in range(n_reps):
        sp = simulate_panel(world, r)
        treated[r] = sp.panel.treatments.sum(axis=0)
        cache = {}
        clip_seen = None
        for s, spec in enumerate(specs):
            e, lo, hi, nc = _estimate(spec, sp, maps, h, t, cache)
            est[r, s], width[r, s] = e, hi - lo
            if clip_seen is None and nc is not None:
                clip_seen = nc
            if truth is not None:
                ok = np.isfinite(lo)
                covered[r, s, ok] = (lo[ok] <= truth.eate[ok]) & (truth.eate[ok] <= hi[ok])
        n_clip[r] = clip_seen or 0
        if progress is not None:
            progress(r)
    return ReplicationResult(specs, np.asarray(d_grid, dtype=float), est, covered, width,
                             truth, n_clip, treated)
