"""Distances, spillover mappings and dependency-graph bounds."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from .errors import EmptyCircle, SpilloverError

__all__ = [
    "DistanceMatrix",
    "SpilloverMapping",
    "DependencyBound",
    "distance_matrix",
    "load_distance_csv",
    "default_bandwidth",
    "circle_mean_weights",
    "range_mean_weights",
    "custom_mapping",
    "apply_mapping",
    "dependency_bound",
]

# absolute slack when matching distances to a bin edge
_DIST_TOL = 1e-9


@dataclass(frozen=True)
class DistanceMatrix:
    dist: np.ndarray
    metric: str = "euclidean"

    def __post_init__(self):
        d = np.array(self.dist, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise SpilloverError("distance matrix must be square")
        if not np.isfinite(d).all() or (d < 0).any():
            raise SpilloverError("distances must be finite and non-negative")
        if not np.allclose(d, d.T, rtol=0, atol=1e-9):
            raise SpilloverError("distance matrix must be symmetric")
        if np.any(np.diag(d) != 0):
            raise SpilloverError("distance matrix must have a zero diagonal")
        d.setflags(write=False)
        object.__setattr__(self, "dist", d)

    @property
    def n(self) -> int:
        return self.dist.shape[0]

    @property
    def colocated_pairs(self) -> int:
        """Number of unordered distinct-unit pairs at distance zero."""
        off = self.dist[np.triu_indices(self.n, k=1)]
        return int((off == 0).sum())


def distance_matrix(coords) -> DistanceMatrix:
    """Euclidean pairwise distances between unit coordinates."""
    coords = np.asarray(coords, dtype=float)
    if not np.isfinite(coords).all():
        raise SpilloverError("coords must be finite")
    d = cdist(coords, coords)
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix(d, "euclidean")


def load_distance_csv(path) -> DistanceMatrix:
    """Read an N x N precomputed distance matrix (e.g. network path lengths).

    The file may carry a header row and an index column of unit labels; a
    purely numeric file without labels is accepted as well.
    """
    df = pd.read_csv(path, header=None)
    try:
        arr = df.to_numpy(dtype=float)
    except ValueError:
        df = pd.read_csv(path, index_col=0)
        arr = df.to_numpy(dtype=float)
    return DistanceMatrix(arr, "precomputed")


def default_bandwidth(D: DistanceMatrix) -> float:
    """Half of the smallest positive pairwise distance."""
    pos = D.dist[D.dist > 0]
    if pos.size == 0:
        return 0.0
    return 0.5 * float(pos.min())


@dataclass(frozen=True)
class SpilloverMapping:
    """Row-stochastic linear map mu_i(x) = sum_j w_ij x_j.

    Rows without any neighbour in the bin are all-zero and excluded through
    ``support``.
    """

    weights: np.ndarray
    kind: str
    d: float
    bandwidth: float
    support: np.ndarray

    @property
    def n_supported(self) -> int:
        return int(self.support.sum())

    def __call__(self, values):
        return apply_mapping(self, values)


def _mapping_from_mask(mask: np.ndarray, kind: str, d: float, bandwidth: float) -> SpilloverMapping:
    counts = mask.sum(axis=1)
    support = counts > 0
    if not support.any():
        raise EmptyCircle(f"no unit has a neighbour for {kind} mapping at d={d}")
    w = np.zeros(mask.shape, dtype=float)
    w[support] = mask[support] / counts[support, None]
    w.setflags(write=False)
    support.setflags(write=False)
    return SpilloverMapping(w, kind, float(d), float(bandwidth), support)


def circle_mean_weights(D: DistanceMatrix, d: float, bandwidth: float | None = None) -> SpilloverMapping:
    """Average over units whose distance to ``i`` lies within ``d +/- bandwidth``.

    ``d = 0`` is the identity map, so the indirect effect at distance zero is
    the unit's own (direct) effect.  ``bandwidth`` defaults to half of the
    smallest positive distance.
    """
    if d < 0:
        raise ValueError("d must be non-negative")
    bw = default_bandwidth(D) if bandwidth is None else float(bandwidth)
    if bw < 0:
        raise ValueError("bandwidth must be non-negative")
    if d == 0:
        return _mapping_from_mask(np.eye(D.n, dtype=bool), "circle", 0.0, bw)
    mask = np.abs(D.dist - d) <= bw + _DIST_TOL
    np.fill_diagonal(mask, False)
    return _mapping_from_mask(mask, "circle", d, bw)


def range_mean_weights(D: DistanceMatrix, d: float) -> SpilloverMapping:
    """Average over all other units with ``0 < d_ij <= d``."""
    if d < 0:
        raise ValueError("d must be non-negative")
    mask = (D.dist > 0) & (D.dist <= d + _DIST_TOL)
    return _mapping_from_mask(mask, "range", d, 0.0)


def custom_mapping(weights, d: float = np.nan) -> SpilloverMapping:
    """Row-normalise a user supplied non-negative weight matrix."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1] or (w < 0).any():
        raise SpilloverError("weights must be a square non-negative matrix")
    counts = w.sum(axis=1)
    support = counts > 0
    if not support.any():
        raise EmptyCircle("custom mapping has no supported row")
    out = np.zeros_like(w)
    out[support] = w[support] / counts[support, None]
    out.setflags(write=False)
    return SpilloverMapping(out, "custom", d, 0.0, support)


def apply_mapping(m: SpilloverMapping, values):
    """Evaluate the mapping on a cross-section (or on the columns of a matrix).

    Returns ``(mu, support)``; rows outside the support are NaN.
    """
    v = np.asarray(values, dtype=float)
    mu = m.weights @ v
    mu[~m.support] = np.nan
    return mu, m.support


@dataclass(frozen=True)
class DependencyBound:
    counts: np.ndarray
    max_count: int
    ratio_sqrt_n: float
    b_tilde: float | None = None


def dependency_bound(D: DistanceMatrix, effect_radius: float, d: float | SpilloverMapping,
                     bandwidth: float | None = None, b_tilde: float | None = None) -> DependencyBound:
    """Count, for each unit, the units it is dependent on in the mapping.

    Outcomes of ``k`` and ``l`` are dependent when one unit's treatment reaches
    the other (``d_kl <= effect_radius``) or both are reached by a common source.
    Units ``i`` and ``j`` are dependent in the mapping when some composer of
    ``mu_i`` and some composer of ``mu_j`` are dependent.
    """
    if effect_radius < 0:
        raise ValueError("effect_radius must be non-negative")
    m = d if isinstance(d, SpilloverMapping) else circle_mean_weights(D, d, bandwidth)
    reach = (D.dist <= effect_radius + _DIST_TOL).astype(float)
    dep_y = (reach @ reach) > 0
    comp = (m.weights > 0).astype(float)
    # unsupported rows have no composers; they still depend on themselves
    dep_mu = (comp @ dep_y.astype(float) @ comp.T) > 0
    np.fill_diagonal(dep_mu, True)
    counts = dep_mu.sum(axis=1).astype(int)
    mx = int(counts.max())
    if b_tilde is not None and not 1 <= b_tilde <= mx:
        raise ValueError(f"b_tilde must lie in [1, {mx}]")
    return DependencyBound(counts, mx, mx / np.sqrt(D.n), b_tilde)
