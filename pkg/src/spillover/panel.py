"""Balanced time-series cross-sectional panels with unit coordinates.

Periods are addressed by their 1-based position (``1 .. n_periods``) after
sorting the original period labels; the labels themselves are kept on the
dataset for output.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DuplicateRow,
    InvalidHistory,
    InvalidTreatment,
    SpilloverError,
    UnbalancedPanel,
)

__all__ = [
    "PanelDataset",
    "HistorySpec",
    "PanelDiagnostics",
    "load_panel",
    "write_panel",
    "panel_to_frame",
    "history_indicator",
    "validate_panel",
]

DEFAULT_SCHEMA = {
    "unit": "unit",
    "period": "period",
    "y": "y",
    "z": "z",
    "coord1": "coord1",
    "coord2": "coord2",
}


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PanelDataset:
    """N units observed over T consecutive periods.

    Parameters
    ----------
    outcomes : ndarray, shape (N, T)
    treatments : ndarray, shape (N, T)
        Binary treatment status.
    coords : ndarray, shape (N, 2)
    covariates : mapping of name -> ndarray (N, T)
        May contain NaN; those cells are recorded in ``covariate_missing``.
    unit_ids, period_ids : sequences of labels
    """

    outcomes: np.ndarray
    treatments: np.ndarray
    coords: np.ndarray
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)
    unit_ids: tuple = ()
    period_ids: tuple = ()

    def __post_init__(self):
        y = _frozen(self.outcomes)
        if y.ndim != 2:
            raise UnbalancedPanel("outcomes must be an N x T matrix")
        n, t = y.shape
        if n < 1 or t < 1:
            raise UnbalancedPanel("panel needs at least one unit and one period")
        z_raw = np.asarray(self.treatments)
        if z_raw.shape != (n, t):
            raise UnbalancedPanel(f"treatments shape {z_raw.shape} != {(n, t)}")
        if np.isnan(y).any():
            raise UnbalancedPanel("outcomes contain missing cells")
        zf = np.asarray(z_raw, dtype=float)
        if np.isnan(zf).any() or not np.isin(zf, (0.0, 1.0)).all():
            raise InvalidTreatment("treatments must be 0/1")
        coords = _frozen(self.coords)
        if coords.shape != (n, 2):
            raise SpilloverError(f"coords shape {coords.shape} != {(n, 2)}")
        if not np.isfinite(coords).all():
            raise SpilloverError("coords must be finite")
        covs = {}
        for name, x in self.covariates.items():
            x = _frozen(x)
            if x.shape != (n, t):
                raise UnbalancedPanel(f"covariate {name!r} shape {x.shape} != {(n, t)}")
            covs[name] = x
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "treatments", _frozen(zf, dtype=np.int8))
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "covariates", covs)
        uids = tuple(self.unit_ids) if len(self.unit_ids) else tuple(range(n))
        pids = tuple(self.period_ids) if len(self.period_ids) else tuple(range(1, t + 1))
        if len(uids) != n or len(pids) != t:
            raise UnbalancedPanel("label vectors do not match panel dimensions")
        object.__setattr__(self, "unit_ids", uids)
        object.__setattr__(self, "period_ids", pids)

    @property
    def n_units(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_periods(self) -> int:
        return self.outcomes.shape[1]

    @property
    def covariate_missing(self) -> dict:
        return {k: np.isnan(v) for k, v in self.covariates.items()}

    def outcome(self, t: int) -> np.ndarray:
        """Cross-section of outcomes in period ``t`` (1-based)."""
        return self.outcomes[:, _col(self, t)]

    def replace(self, **changes) -> "PanelDataset":
        kw = dict(
            outcomes=self.outcomes,
            treatments=self.treatments,
            coords=self.coords,
            covariates=self.covariates,
            unit_ids=self.unit_ids,
            period_ids=self.period_ids,
        )
        kw.update(changes)
        return PanelDataset(**kw)


def _col(panel: PanelDataset, t: int) -> int:
    if not 1 <= t <= panel.n_periods:
        raise InvalidHistory(f"period {t} outside 1..{panel.n_periods}")
    return t - 1


@dataclass(frozen=True)
class HistorySpec:
    """Contrast between two treatment histories over periods ``start..end``.

    Both histories are tuples of 0/1 of length ``end - start + 1``.
    """

    start: int
    end: int
    target: tuple
    reference: tuple

    def __post_init__(self):
        target = tuple(int(v) for v in self.target)
        reference = tuple(int(v) for v in self.reference)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "reference", reference)
        if not (1 <= self.start <= self.end):
            raise InvalidHistory(f"need 1 <= start <= end, got {self.start}..{self.end}")
        length = self.end - self.start + 1
        if len(target) != length or len(reference) != length:
            raise InvalidHistory(f"histories must have length {length}")
        if any(v not in (0, 1) for v in target + reference):
            raise InvalidHistory("histories must be binary")
        if target == reference:
            raise InvalidHistory("target and reference histories are identical")

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    @classmethod
    def parse(cls, target: str, reference: str | None = None, end: int | None = None,
              start: int | None = None) -> "HistorySpec":
        """Build from strings such as ``"00111"``; reference defaults to all zeros."""
        tgt = tuple(int(c) for c in target.replace(",", "").strip())
        ref = (tuple(int(c) for c in reference.replace(",", "").strip())
               if reference else (0,) * len(tgt))
        if start is None and end is None:
            start = 1
        if start is None:
            start = end - len(tgt) + 1
        if end is None:
            end = start + len(tgt) - 1
        return cls(start, end, tgt, ref)

    @classmethod
    def cohort(cls, first_treated: int, end: int, start: int = 1) -> "HistorySpec":
        """Staggered-adoption cohort adopting at ``first_treated`` versus never treated."""
        tgt = tuple(int(p >= first_treated) for p in range(start, end + 1))
        return cls(start, end, tgt, (0,) * len(tgt))

    def label(self) -> str:
        t = "".join(map(str, self.target))
        r = "".join(map(str, self.reference))
        return f"{t}|{r}@{self.start}-{self.end}"


def history_indicator(panel: PanelDataset, h: HistorySpec):
    """Return boolean vectors marking units that realised ``h.target`` / ``h.reference``."""
    if h.end > panel.n_periods:
        raise InvalidHistory(f"history ends at {h.end} > T={panel.n_periods}")
    z = panel.treatments[:, h.start - 1:h.end]
    is_target = (z == np.asarray(h.target)).all(axis=1)
    is_reference = (z == np.asarray(h.reference)).all(axis=1)
    return is_target, is_reference


@dataclass
class PanelDiagnostics:
    treated_per_period: np.ndarray
    untreated_per_period: np.ndarray
    history_counts: dict
    zero_support: list
    duplicate_coords: int
    missing_covariates: dict

    @property
    def ok(self) -> bool:
        return not self.zero_support


def validate_panel(panel: PanelDataset, histories: Sequence[HistorySpec] = ()) -> PanelDiagnostics:
    """Empirical support check for each requested history contrast.

    Zero support in either arm is reported in ``zero_support``; it is not an error.
    """
    treated = panel.treatments.sum(axis=0).astype(int)
    counts = {}
    flagged = []
    for h in histories:
        tgt, ref = history_indicator(panel, h)
        counts[h] = (int(tgt.sum()), int(ref.sum()))
        if counts[h][0] == 0 or counts[h][1] == 0:
            flagged.append(h)
    _, inverse, multiplicity = np.unique(panel.coords, axis=0, return_inverse=True,
                                         return_counts=True)
    dup = int((multiplicity[np.ravel(inverse)] > 1).sum())
    missing = {k: int(v.sum()) for k, v in panel.covariate_missing.items() if v.any()}
    return PanelDiagnostics(
        treated_per_period=treated,
        untreated_per_period=panel.n_units - treated,
        history_counts=counts,
        zero_support=flagged,
        duplicate_coords=dup,
        missing_covariates=missing,
    )


def load_panel(path, schema: Mapping[str, object] | None = None) -> PanelDataset:
    """Read a long-format CSV (one row per unit-period) into a balanced panel.

    ``schema`` maps the roles ``unit, period, y, z, coord1, coord2`` to column
    names and may list ``covariates`` explicitly; by default every remaining
    column is a covariate.
    """
    sch = dict(DEFAULT_SCHEMA)
    if schema:
        sch.update(schema)
    df = pd.read_csv(path, float_precision="round_trip")
    roles = ["unit", "period", "y", "z", "coord1", "coord2"]
    missing_cols = [sch[r] for r in roles if sch[r] not in df.columns]
    if missing_cols:
        raise UnbalancedPanel(f"missing columns: {missing_cols}")
    cov_names = sch.get("covariates")
    if cov_names is None:
        used = {sch[r] for r in roles}
        cov_names = [c for c in df.columns if c not in used]
    return panel_from_frame(df, sch, list(cov_names))


def panel_from_frame(df: pd.DataFrame, schema: Mapping[str, object] | None = None,
                     covariates: Sequence[str] = ()) -> PanelDataset:
    sch = dict(DEFAULT_SCHEMA)
    if schema:
        sch.update(schema)
    u, p = sch["unit"], sch["period"]
    if df.duplicated([u, p]).any():
        dups = df.loc[df.duplicated([u, p], keep=False), [u, p]].head(3).values.tolist()
        raise DuplicateRow(f"duplicate (unit, period) rows, e.g. {dups}")
    units = np.sort(df[u].unique())
    periods = np.sort(df[p].unique())
    n, t = len(units), len(periods)
    if len(df) != n * t:
        raise UnbalancedPanel(f"{len(df)} rows for {n} units x {t} periods")
    df = df.sort_values([u, p], kind="mergesort").reset_index(drop=True)

    def grid(col):
        return df[col].to_numpy(dtype=float).reshape(n, t)

    y = grid(sch["y"])
    if np.isnan(y).any():
        raise UnbalancedPanel("missing outcome cells")
    zcol = pd.to_numeric(df[sch["z"]], errors="coerce").to_numpy(dtype=float)
    if np.isnan(zcol).any() or not np.isin(zcol, (0.0, 1.0)).all():
        bad = df.loc[~np.isin(zcol, (0.0, 1.0)), [u, p, sch["z"]]].head(3).values.tolist()
        raise InvalidTreatment(f"non-binary treatment values, e.g. {bad}")
    c1, c2 = grid(sch["coord1"]), grid(sch["coord2"])
    if not (np.allclose(c1, c1[:, :1], equal_nan=False) and np.allclose(c2, c2[:, :1])):
        raise SpilloverError("coordinates must be constant within each unit")
    covs = {name: grid(name) for name in covariates}
    return PanelDataset(
        outcomes=y,
        treatments=zcol.reshape(n, t),
        coords=np.column_stack([c1[:, 0], c2[:, 0]]),
        covariates=covs,
        unit_ids=tuple(units.tolist()),
        period_ids=tuple(periods.tolist()),
    )


def panel_to_frame(panel: PanelDataset) -> pd.DataFrame:
    n, t = panel.n_units, panel.n_periods
    cols = {
        "unit": np.repeat(np.asarray(panel.unit_ids, dtype=object), t),
        "period": np.tile(np.asarray(panel.period_ids, dtype=object), n),
        "y": panel.outcomes.ravel(),
        "z": panel.treatments.ravel().astype(int),
    }
    for name, x in panel.covariates.items():
        cols[name] = x.ravel()
    cols["coord1"] = np.repeat(panel.coords[:, 0], t)
    cols["coord2"] = np.repeat(panel.coords[:, 1], t)
    return pd.DataFrame(cols)


def write_panel(panel: PanelDataset, path) -> None:
    """Write ``panel`` as the long-format CSV accepted by :func:`load_panel`."""
    panel_to_frame(panel).to_csv(path, index=False, lineterminator="\n")
