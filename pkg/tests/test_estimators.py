import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spillover.errors import InvalidHistory, Mismatch, NoSupport, RankDeficient
from spillover.estimators import (
    DiffusionModel,
    aggregate_periods,
    count_propensity,
    did_bias_oracle,
    did_estimate,
    eate_augmented,
    eate_hajek,
    eate_ht,
    fit_diffusion_model,
    gstat_contrast,
)
from spillover.panel import HistorySpec, PanelDataset
from spillover.propensity import PropensityTable
from spillover.spatial import circle_mean_weights, distance_matrix

from conftest import grid_coords, make_panel, random_instance


def test_ht_unbiased_by_enumeration_single_period():
    coords = grid_coords(2, 3)
    n = 6
    p = np.array([0.2, 0.5, 0.7, 0.4, 0.6, 0.3])
    base = np.array([1.0, -2.0, 0.5, 3.0, 0.0, 1.5])
    D = distance_matrix(coords).dist

    def outcome(z):
        near = (D <= 1.0) & (D > 0)
        return base + 2.0 * z + 0.7 * (near @ z) ** 2 - 0.3 * z * (near @ z)

    h = HistorySpec(1, 1, (1,), (0,))
    for d in (0.0, 1.0):
        m = circle_mean_weights(distance_matrix(coords), d)
        truth = 0.0
        expected = 0.0
        for zt in itertools.product((0, 1), repeat=n):
            zt = np.array(zt)
            prob = np.prod(np.where(zt == 1, p, 1 - p))
            y = outcome(zt)
            panel = make_panel(y[:, None], zt[:, None], coords)
            table = PropensityTable.from_probabilities(panel, p[:, None], staggered=False,
                                                       clip=(0.0, 1.0))
            try:
                expected += prob * eate_ht(panel, m, h, 1, table).tau
            except NoSupport:
                pass
            for i in np.flatnonzero(m.support):
                z1, z0 = zt.copy(), zt.copy()
                z1[i], z0[i] = 1, 0
                truth += prob * (m.weights[i] @ (outcome(z1) - outcome(z0)))
        truth /= m.n_supported
        assert expected == pytest.approx(truth, abs=1e-12)


def test_constant_outcomes_give_zero(rng):
    panel, table, h = random_instance(rng, n=40)
    panel = panel.replace(outcomes=np.full(panel.outcomes.shape, 3.0))
    m = circle_mean_weights(distance_matrix(panel.coords), 0.0)
    assert eate_hajek(panel, m, h, 3, table).tau == pytest.approx(0.0, abs=1e-12)


def test_hajek_with_equal_weights_is_difference_in_means():
    y = np.array([[1.0], [3.0], [10.0], [20.0], [7.0]])
    z = np.array([[1], [1], [0], [0], [0]])
    panel = make_panel(y, z)
    table = PropensityTable.from_probabilities(panel, np.full((5, 1), 0.5), staggered=False)
    m = circle_mean_weights(distance_matrix(panel.coords), 0.0)
    est = eate_hajek(panel, m, HistorySpec(1, 1, (1,), (0,)), 1, table)
    assert est.tau == pytest.approx(2.0 - 37 / 3)
    assert (est.n_target, est.n_reference) == (2, 3)


@given(st.integers(0, 10_000), st.floats(0.1, 100), st.floats(-5, 5))
def test_hajek_affine_equivariance(seed, scale, shift):
    rng = np.random.default_rng(seed)
    panel, table, h = random_instance(rng, n=30)
    m = circle_mean_weights(distance_matrix(panel.coords), 0.0)
    try:
        a = eate_hajek(panel, m, h, 3, table).tau
    except NoSupport:
        return
    moved = panel.replace(outcomes=scale * panel.outcomes + shift)
    b = eate_hajek(moved, m, h, 3, table).tau
    assert b == pytest.approx(scale * a, rel=1e-9, abs=1e-9)


def test_zero_distance_is_direct_effect(rng):
    panel, table, h = random_instance(rng, n=25)
    D = distance_matrix(panel.coords)
    a = eate_hajek(panel, circle_mean_weights(D, 0.0), h, 3, table).tau
    y = panel.outcomes[:, 2]
    tgt = (panel.treatments[:, 1:] == 1).all(axis=1)
    ref = (panel.treatments[:, 1:] == 0).all(axis=1)
    w1 = 1 / (table.p[:, 1] * table.p[:, 2])
    w0 = 1 / ((1 - table.p[:, 1]) * (1 - table.p[:, 2]))
    direct = (w1[tgt] @ y[tgt]) / w1[tgt].sum() - (w0[ref] @ y[ref]) / w0[ref].sum()
    assert a == pytest.approx(direct, abs=1e-12)


def test_history_must_end_by_outcome_period(rng):
    panel, table, h = random_instance(rng, n=20)
    m = circle_mean_weights(distance_matrix(panel.coords), 0.0)
    with pytest.raises(InvalidHistory):
        eate_ht(panel, m, h, 2, table)


def test_no_support_is_reported():
    panel = make_panel(np.ones((3, 1)), np.ones((3, 1), dtype=int))
    table = PropensityTable.from_probabilities(panel, np.full((3, 1), 0.5), staggered=False)
    m = circle_mean_weights(distance_matrix(panel.coords), 0.0)
    with pytest.raises(NoSupport) as e:
        eate_hajek(panel, m, HistorySpec(1, 1, (1,), (0,)), 1, table)
    assert e.value.arm == "reference"


def test_augmented_with_zero_model_is_ht(rng):
    panel, table, h = random_instance(rng, n=30)
    m = circle_mean_weights(distance_matrix(panel.coords), 1.0)
    ht = eate_ht(panel, m, h, 3, table).tau
    aug = eate_augmented(panel, m, h, 3, table, DiffusionModel.null(panel))
    assert aug.estimator == "augmented"
    assert aug.tau == ht


def _diffusion_panel(rng, n_side=8, T=4, beta=(1.5, 0.6, 0.2), noise=0.0):
    coords = grid_coords(n_side, n_side)
    D = distance_matrix(coords)
    n = n_side ** 2
    z = (rng.uniform(size=(n, T)) < 0.4).astype(int)
    alpha = rng.normal(size=n)
    y = np.zeros((n, T))
    masks = [np.eye(n), (np.abs(D.dist - 1) < 1e-9), (np.abs(D.dist - np.sqrt(2)) < 1e-9)]
    for t in range(T):
        y[:, t] = alpha + 0.3 * t + sum(b * (M @ z[:, t]) for b, M in zip(beta, masks))
        y[:, t] += noise * rng.normal(size=n)
    return PanelDataset(y, z, coords), D


def test_diffusion_model_recovers_noiseless_coefficients(rng):
    panel, D = _diffusion_panel(rng)
    model = fit_diffusion_model(panel, D, [0, 1, np.sqrt(2)], bandwidth=1e-6,
                                unit_effects=True, lag_outcome=False, lag_treatment=False)
    np.testing.assert_allclose(model.beta, [1.5, 0.6, 0.2], atol=1e-9)
    assert np.nanmax(np.abs(model.residuals)) < 1e-9


def test_augmented_is_exact_with_noiseless_correct_model(rng):
    panel, D = _diffusion_panel(rng)
    model = fit_diffusion_model(panel, D, [0, 1, np.sqrt(2)], bandwidth=1e-6,
                                unit_effects=True, lag_outcome=False, lag_treatment=False)
    p = np.full(panel.treatments.shape, 0.4)
    table = PropensityTable.from_probabilities(panel, p, staggered=False)
    h = HistorySpec(4, 4, (1,), (0,))
    # the effect of one unit's treatment on its circle mean at d = 1 is beta_1
    m = circle_mean_weights(D, 1.0, bandwidth=1e-6)
    est = eate_augmented(panel, m, h, 4, table, model)
    assert est.tau == pytest.approx(0.6, abs=1e-9)
    m0 = circle_mean_weights(D, 0.0)
    assert eate_augmented(panel, m0, h, 4, table, model).tau == pytest.approx(1.5, abs=1e-9)


def test_diffusion_model_without_treatment_is_rank_deficient():
    coords = grid_coords(3, 3)
    panel = PanelDataset(np.random.default_rng(0).normal(size=(9, 3)), np.zeros((9, 3), int),
                         coords)
    with pytest.raises(RankDeficient):
        fit_diffusion_model(panel, distance_matrix(coords), [0, 1])


def test_diffusion_grid_validation():
    coords = grid_coords(3, 3)
    panel = PanelDataset(np.zeros((9, 3)), np.zeros((9, 3), int), coords)
    D = distance_matrix(coords)
    with pytest.raises(ValueError):
        fit_diffusion_model(panel, D, [1, 0])
    with pytest.raises(ValueError):
        fit_diffusion_model(panel, D, [1, 1.2], bandwidth=0.5)


def test_augmented_requires_history_end():
    rng = np.random.default_rng(3)
    panel, D = _diffusion_panel(rng, noise=0.1)
    model = fit_diffusion_model(panel, D, [0, 1], bandwidth=1e-6)
    table = PropensityTable.from_probabilities(panel, np.full((64, 4), 0.4), staggered=False)
    with pytest.raises(InvalidHistory):
        eate_augmented(panel, circle_mean_weights(D, 0.0), HistorySpec(3, 3, (1,), (0,)), 4,
                       table, model)


def test_did_arithmetic():
    y = np.array([[0.0, 3.0], [0.0, 5.0], [1.0, 1.0], [2.0, 2.0]])
    z = np.array([[0, 1], [0, 1], [0, 0], [0, 0]])
    est = did_estimate(make_panel(y, z), 2)
    assert est.tau == pytest.approx(4.0)
    y2 = np.array([[1.0, 3.0], [0.0, 5.0], [1.0, 1.0], [2.0, 2.0]])
    assert did_estimate(make_panel(y2, z), 2).tau == pytest.approx(3.5)


def test_did_identical_trends_is_zero():
    y = np.array([[0.0, 1.0], [5.0, 6.0], [2.0, 3.0], [-1.0, 0.0]])
    z = np.array([[0, 1], [0, 1], [0, 0], [0, 0]])
    assert did_estimate(make_panel(y, z), 2).tau == pytest.approx(0.0)


def test_did_needs_pre_period():
    with pytest.raises(InvalidHistory):
        did_estimate(make_panel(np.zeros((2, 2)), [[1, 1], [0, 0]]), 1)


def test_did_with_history_and_mapping():
    y = np.arange(12, dtype=float).reshape(4, 3)
    z = np.array([[0, 1, 1], [0, 1, 1], [0, 0, 0], [0, 0, 0]])
    panel = make_panel(y, z)
    h = HistorySpec(2, 3, (1, 1), (0, 0))
    est = did_estimate(panel, history=h)
    assert est.t == 3
    m = circle_mean_weights(distance_matrix(panel.coords), 0.0)
    assert did_estimate(panel, history=h, mapping=m).tau == est.tau


def test_did_oracle_special_cases():
    p = np.array([0.2, 0.5, 0.8])
    assert did_bias_oracle(p, [1, 1, 1], [0, 0, 0]) == pytest.approx(0.0)
    assert did_bias_oracle([0.4] * 3, [1, 2, 3], [0, 5, 1]) == pytest.approx(0.0)
    # selection on a larger trend among likely-treated units is positive bias
    assert did_bias_oracle(p, [0, 1, 2], [0, 1, 2]) > 0


def test_did_oracle_matches_large_sample():
    rng = np.random.default_rng(11)
    n = 400_000
    p = rng.uniform(0.1, 0.9, size=n)
    g1 = 1 + 2 * p + rng.normal(size=n) * 0.1
    g0 = 3 * p
    z = rng.uniform(size=n) < p
    did = g1[z].mean() - g0[~z].mean()
    assert did - (g1 - g0).mean() == pytest.approx(did_bias_oracle(p, g1, g0), abs=0.01)


def test_aggregate_periods():
    panel, table, h = random_instance(np.random.default_rng(4), n=40, T=4, start=2)
    m = circle_mean_weights(distance_matrix(panel.coords), 0.0)
    h = HistorySpec(2, 2, (1,), (0,))
    ests = [eate_hajek(panel, m, h, t, table) for t in (2, 3, 4)]
    agg = aggregate_periods(ests)
    assert agg.tau == pytest.approx(np.mean([e.tau for e in ests]))
    assert agg.periods == (2, 3, 4)
    assert aggregate_periods(ests[:1]).tau == ests[0].tau
    with pytest.raises(Mismatch):
        aggregate_periods([ests[0], ests[0]])
    other = eate_ht(panel, m, h, 3, table)
    with pytest.raises(Mismatch):
        aggregate_periods([ests[0], other])


def test_count_propensity_sums_to_one(rng):
    panel, table, _ = random_instance(rng, n=10, T=4)
    total = sum(count_propensity(table, 1, 4, g) for g in range(5))
    np.testing.assert_allclose(total, 1.0, atol=1e-12)
    np.testing.assert_allclose(count_propensity(table, 1, 4, 0), np.prod(1 - table.p, axis=1))


def test_gstat_equal_counts_is_zero_and_staggered_cohorts():
    rng = np.random.default_rng(5)
    panel, table, _ = random_instance(rng, n=50, T=3)
    m = circle_mean_weights(distance_matrix(panel.coords), 0.0)
    assert gstat_contrast(panel, m, 3, 1, 1, table).tau == pytest.approx(0.0)

    # under staggered adoption, treated-count 3 and 0 over periods 1..3 are
    # exactly the always-treated and never-treated histories
    n = 30
    first = rng.integers(1, 5, size=n)  # 4 means never
    z = (np.arange(1, 4)[None, :] >= first[:, None]).astype(int)
    p = np.where(np.arange(1, 4)[None, :] > first[:, None], 1.0, 0.4)
    y = rng.normal(size=(n, 3)) + z
    panel = PanelDataset(y, z, rng.uniform(0, 5, size=(n, 2)))
    table = PropensityTable.from_probabilities(panel, p, staggered=True)
    m = circle_mean_weights(distance_matrix(panel.coords), 0.0)
    g = gstat_contrast(panel, m, 3, 3, 0, table)
    h = HistorySpec(1, 3, (1, 1, 1), (0, 0, 0))
    assert g.tau == pytest.approx(eate_hajek(panel, m, h, 3, table).tau, abs=1e-12)
