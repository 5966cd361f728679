import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spillover.errors import NoSupport
from spillover.estimators import eate_hajek
from spillover.panel import HistorySpec
from spillover.propensity import PropensityTable, estimate_propensity
from spillover.simulation import SimConfig, simulate_panel
from spillover.spatial import circle_mean_weights, distance_matrix
from spillover.variance import (
    confidence_interval,
    hajek_wls,
    hc0,
    randomization_test,
    spatial_hac,
    twoway_hac,
)

from conftest import make_panel, random_instance


def _wls(rng, n=40, d=0.0):
    panel, table, h = random_instance(rng, n=n)
    D = distance_matrix(panel.coords)
    return hajek_wls(panel, circle_mean_weights(D, d), h, 3, table), D, panel, table, h


def test_wls_slope_is_hajek(rng):
    rep, D, panel, table, h = _wls(rng)
    est = eate_hajek(panel, circle_mean_weights(D, 0.0), h, 3, table)
    assert rep.tau == pytest.approx(est.tau, abs=1e-10)


def test_equal_weights_intercept_is_reference_mean():
    y = np.array([[1.0], [3.0], [10.0], [20.0]])
    panel = make_panel(y, [[1], [1], [0], [0]])
    table = PropensityTable.from_probabilities(panel, np.full((4, 1), 0.5), staggered=False)
    rep = hajek_wls(panel, circle_mean_weights(distance_matrix(panel.coords), 0.0),
                    HistorySpec(1, 1, (1,), (0,)), 1, table)
    assert rep.alpha == pytest.approx(15.0)
    assert rep.tau == pytest.approx(-13.0)


def test_single_unit_arms_have_zero_residuals():
    panel = make_panel([[4.0], [9.0], [1.0]], [[1], [0], [1]])
    p = np.array([[0.5], [0.5], [0.5]])
    table = PropensityTable.from_probabilities(panel, p, staggered=False)
    D = distance_matrix(panel.coords)
    h = HistorySpec(1, 1, (1,), (0,))
    rep = hajek_wls(panel.replace(treatments=np.array([[1], [0], [0]]),
                                  outcomes=np.array([[4.0], [9.0], [9.0]])),
                    circle_mean_weights(D, 0.0), h, 1, table)
    np.testing.assert_allclose(rep.residuals, 0.0, atol=1e-12)
    assert hc0(rep)[1, 1] == pytest.approx(0.0, abs=1e-20)


def test_wls_requires_both_arms():
    panel = make_panel([[1.0], [2.0]], [[1], [1]])
    table = PropensityTable.from_probabilities(panel, np.full((2, 1), 0.5), staggered=False)
    with pytest.raises(NoSupport):
        hajek_wls(panel, circle_mean_weights(distance_matrix(panel.coords), 0.0),
                  HistorySpec(1, 1, (1,), (0,)), 1, table)


@given(st.integers(0, 10_000), st.sampled_from(["uniform", "bartlett"]))
def test_zero_cutoff_is_hc0(seed, kernel):
    rng = np.random.default_rng(seed)
    try:
        rep, D, *_ = _wls(rng, n=int(rng.integers(10, 60)))
    except NoSupport:
        return
    v = spatial_hac(rep, D, 0.0, kernel)
    np.testing.assert_allclose(v.cov, hc0(rep), rtol=0, atol=1e-12)
    assert v.var == v.hc0_var or abs(v.var - v.hc0_var) <= 1e-12


def test_signed_and_absolute_weights_give_same_sandwich(rng):
    rep, D, *_ = _wls(rng)
    B = np.linalg.inv((rep.X * np.abs(rep.weights)[:, None]).T @ rep.X)
    S = rep.X * (np.abs(rep.weights) * rep.residuals)[:, None]
    alt = B @ S.T @ S @ B.T
    assert alt[1, 1] == pytest.approx(hc0(rep)[1, 1], rel=1e-10)


def test_influences_sum_to_zero(rng):
    rep, *_ = _wls(rng)
    assert abs(rep.influence.sum()) < 1e-10


def test_uniform_pairs_are_nested(rng):
    rep, D, *_ = _wls(rng, n=60)
    counts = [spatial_hac(rep, D, c).n_pairs for c in (0.0, 1.0, 2.0, 4.0, 100.0)]
    assert counts == sorted(counts)
    assert counts[0] == rep.units.size
    assert counts[-1] == rep.units.size ** 2


def test_full_window_is_zero_and_floored(rng):
    # the influences sum to zero, so pairing everyone cancels the meat
    rep, D, *_ = _wls(rng, n=60)
    v = spatial_hac(rep, D, 1e6)
    assert abs(v.cov[1, 1]) < 1e-12


def test_negative_variance_is_floored():
    rng = np.random.default_rng(2)
    for _ in range(200):
        try:
            rep, D, *_ = _wls(rng, n=30)
        except NoSupport:
            continue
        for c in np.linspace(0.5, 15, 30):
            with warnings.catch_warnings(record=True) as w:
                warnings.simplefilter("always")
                v = spatial_hac(rep, D, c)
            if v.floored:
                assert v.var == v.hc0_var
                assert any("floored" in str(x.message) for x in w)
                return
    pytest.skip("no negative uniform-kernel variance found")


def test_confidence_interval():
    lo, hi = confidence_interval(0.0, 1.0)
    assert (lo, hi) == pytest.approx((-1.959964, 1.959964), abs=1e-6)
    assert confidence_interval(2.0, 0.0) == (2.0, 2.0)
    lo, hi = confidence_interval(0.0, 1.0, level=0.5)
    assert hi == pytest.approx(0.67449, abs=1e-5)
    a = confidence_interval(1.0, 0.25)
    b = confidence_interval(1.0, 1.0)
    assert (b[1] - 1.0) == pytest.approx(2 * (a[1] - 1.0))
    with pytest.raises(ValueError):
        confidence_interval(0.0, -1.0)
    with pytest.raises(ValueError):
        confidence_interval(0.0, 1.0, level=1.0)


def test_twoway_reduces_to_spatial_and_hc0(rng):
    rep, D, *_ = _wls(rng, n=50)
    single = twoway_hac([rep], D, 2.0, 1.0, rule="product")
    assert single.var == pytest.approx(spatial_hac(rep, D, 2.0).var, rel=1e-10)
    single = twoway_hac([rep], D, 2.0, 0.0)
    assert single.var == pytest.approx(spatial_hac(rep, D, 2.0).var, rel=1e-10)
    panel, table, _ = random_instance(np.random.default_rng(9), n=50, T=4)
    D = distance_matrix(panel.coords)
    m = circle_mean_weights(D, 0.0)
    h = HistorySpec(2, 2, (1,), (0,))
    reps = [hajek_wls(panel, m, h, t, table) for t in (2, 3, 4)]
    v = twoway_hac(reps, D, 0.0, 0.0)
    psi = np.concatenate([r.influence / 3 for r in reps])
    assert v.var == pytest.approx(float(psi @ psi), rel=1e-12)
    assert v.var == pytest.approx(v.hc0_var)
    union = twoway_hac(reps, D, 2.0, 2.0, rule="union")
    prod = twoway_hac(reps, D, 2.0, 2.0, rule="product")
    assert union.n_pairs >= prod.n_pairs
    with pytest.raises(ValueError):
        twoway_hac(reps, D, 1.0, 1.0, rule="other")


def test_bartlett_weights_are_bounded_by_uniform(rng):
    rep, D, *_ = _wls(rng, n=60)
    b = spatial_hac(rep, D, 3.0, "bartlett")
    assert b.n_pairs <= spatial_hac(rep, D, 3.0, "uniform").n_pairs
    with pytest.raises(ValueError):
        spatial_hac(rep, D, 3.0, "gaussian")
    with pytest.raises(ValueError):
        spatial_hac(rep, D, -1.0)


def test_hc0_coverage_with_independent_outcomes():
    rng = np.random.default_rng(12)
    n = 300
    coords = rng.uniform(0, 20, size=(n, 2))
    D = distance_matrix(coords)
    m = circle_mean_weights(D, 0.0)
    h = HistorySpec(1, 1, (1,), (0,))
    p = rng.uniform(0.3, 0.7, size=(n, 1))
    hits = 0
    for _ in range(2000):
        z = (rng.uniform(size=(n, 1)) < p).astype(int)
        panel = make_panel(rng.normal(size=(n, 1)), z, coords)
        table = PropensityTable.from_probabilities(panel, p, staggered=False)
        rep = hajek_wls(panel, m, h, 1, table)
        lo, hi = confidence_interval(rep.tau, hc0(rep)[1, 1])
        hits += lo <= 0 <= hi
    assert 0.93 <= hits / 2000 <= 0.97


def _null_setup(amplitude):
    sp = simulate_panel(SimConfig(rows=12, cols=12, amplitude=amplitude), 0)
    fit = estimate_propensity(sp.panel)
    D = distance_matrix(sp.panel.coords)
    return sp.panel, fit, circle_mean_weights(D, 0.0)


def test_frt_rejects_large_effect():
    panel, fit, m = _null_setup(0.0)
    h = HistorySpec.parse("00111")
    y = panel.outcomes.copy()
    treated = (panel.treatments[:, 2:] == 1).all(axis=1)
    y[treated, 4] += 10.0
    res = randomization_test(panel.replace(outcomes=y), fit, h, m, 5, n_draws=199, seed=1)
    assert res.p_value == pytest.approx(1 / 200)
    assert res.draws.shape == (199,)


def test_frt_is_deterministic_and_validates():
    panel, fit, m = _null_setup(0.0)
    h = HistorySpec.parse("00111")
    a = randomization_test(panel, fit, h, m, 5, n_draws=120, seed=4)
    b = randomization_test(panel, fit, h, m, 5, n_draws=120, seed=4)
    np.testing.assert_array_equal(a.draws, b.draws)
    assert 0 < a.p_value <= 1
    with pytest.raises(ValueError):
        randomization_test(panel, fit, h, m, 5, n_draws=0)
    with pytest.warns(RuntimeWarning, match="fewer than 100"):
        r = randomization_test(panel, fit, h, m, 5, n_draws=20)
    assert r.low_draws


def test_frt_draws_match_single_estimates():
    panel, fit, m = _null_setup(0.0)
    h = HistorySpec.parse("00111")
    res = randomization_test(panel, fit, h, m, 5, n_draws=120, seed=2)
    Z, P = fit.sample(panel, 120, 2)
    for b in (0, 7, 55):
        pb = panel.replace(treatments=Z[b])
        table = PropensityTable.from_probabilities(pb, P[b], staggered=True, clip=(0.0, 1.0))
        try:
            tau = eate_hajek(pb, m, h, 5, table).tau
        except NoSupport:
            continue
        assert res.draws[b] == pytest.approx(tau, abs=1e-10)
