import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from spillover.errors import DuplicateRow, InvalidHistory, InvalidTreatment, UnbalancedPanel
from spillover.panel import (
    HistorySpec,
    PanelDataset,
    history_indicator,
    load_panel,
    panel_to_frame,
    validate_panel,
    write_panel,
)

from conftest import make_panel


def _csv(tmp_path, rows, name="p.csv"):
    path = tmp_path / name
    pd.DataFrame(rows, columns=["unit", "period", "y", "z", "coord1", "coord2"]).to_csv(
        path, index=False)
    return path


SMALL = [
    ["a", 1, 1.0, 0, 0.0, 0.0],
    ["a", 2, 2.0, 1, 0.0, 0.0],
    ["b", 1, 3.0, 0, 1.0, 0.0],
    ["b", 2, 4.0, 0, 1.0, 0.0],
]


def test_load_smallest_balanced_panel(tmp_path):
    panel = load_panel(_csv(tmp_path, SMALL))
    assert (panel.n_units, panel.n_periods) == (2, 2)
    assert panel.unit_ids == ("a", "b")
    np.testing.assert_array_equal(panel.treatments, [[0, 1], [0, 0]])
    np.testing.assert_array_equal(panel.coords, [[0, 0], [1, 0]])


def test_missing_row_is_unbalanced(tmp_path):
    with pytest.raises(UnbalancedPanel):
        load_panel(_csv(tmp_path, SMALL[:3]))


def test_non_binary_treatment(tmp_path):
    rows = [r.copy() for r in SMALL]
    rows[1][3] = 2
    with pytest.raises(InvalidTreatment):
        load_panel(_csv(tmp_path, rows))


def test_duplicate_rows(tmp_path):
    with pytest.raises(DuplicateRow):
        load_panel(_csv(tmp_path, SMALL + [SMALL[0]]))


def test_schema_and_covariates(tmp_path):
    df = pd.DataFrame({"id": [1, 1, 2, 2], "yr": [2000, 2001, 2000, 2001],
                       "out": [1.0, 2, 3, 4], "d": [0, 1, 0, 0], "lon": [0, 0, 5, 5],
                       "lat": [1, 1, 1, 1], "x": [0.5, 0.1, 0.2, 0.3]})
    path = tmp_path / "s.csv"
    df.to_csv(path, index=False)
    schema = {"unit": "id", "period": "yr", "y": "out", "z": "d", "coord1": "lon", "coord2": "lat"}
    panel = load_panel(path, schema)
    assert panel.period_ids == (2000, 2001)
    np.testing.assert_allclose(panel.covariates["x"], [[0.5, 0.1], [0.2, 0.3]])


def test_round_trip(tmp_path):
    panel = load_panel(_csv(tmp_path, SMALL))
    out = tmp_path / "back.csv"
    write_panel(panel, out)
    again = load_panel(out)
    np.testing.assert_array_equal(again.outcomes, panel.outcomes)
    np.testing.assert_array_equal(again.treatments, panel.treatments)
    np.testing.assert_array_equal(again.coords, panel.coords)


@given(arrays(float, (4, 3), elements=st.floats(-1e6, 1e6)),
       arrays(np.int8, (4, 3), elements=st.integers(0, 1)))
def test_round_trip_property(tmp_path_factory, y, z):
    panel = make_panel(y, z, x1=y * 2)
    path = tmp_path_factory.mktemp("rt") / "p.csv"
    write_panel(panel, path)
    back = load_panel(path)
    np.testing.assert_array_equal(back.outcomes, panel.outcomes)
    np.testing.assert_array_equal(back.treatments, panel.treatments)
    np.testing.assert_array_equal(back.covariates["x1"], panel.covariates["x1"])


def test_history_indicator_direct_comparison():
    panel = make_panel(np.zeros((3, 2)), [[0, 1], [0, 0], [0, 1]])
    h = HistorySpec(2, 2, (1,), (0,))
    tgt, ref = history_indicator(panel, h)
    np.testing.assert_array_equal(tgt, [True, False, True])
    np.testing.assert_array_equal(ref, [False, True, False])


def test_history_indicator_staggered_cohort():
    z = np.array([[0, 0, 1, 1, 1],
                  [0, 1, 1, 1, 1],
                  [0, 0, 0, 0, 0],
                  [0, 0, 0, 1, 1],
                  [0, 0, 1, 1, 1]])
    panel = make_panel(np.zeros(z.shape), z)
    tgt, ref = history_indicator(panel, HistorySpec.parse("00111"))
    cohort3 = np.array([next((t for t in range(5) if row[t]), 99) == 2 for row in z])
    np.testing.assert_array_equal(tgt, cohort3)
    np.testing.assert_array_equal(ref, [False, False, True, False, False])
    assert HistorySpec.cohort(3, 5) == HistorySpec.parse("00111")


def test_identical_histories_rejected():
    with pytest.raises(InvalidHistory):
        HistorySpec(1, 2, (1, 0), (1, 0))
    with pytest.raises(InvalidHistory):
        HistorySpec(1, 2, (1,), (0,))


def test_history_parse_forms():
    h = HistorySpec.parse("011", "000", end=5)
    assert (h.start, h.end) == (3, 5)
    assert h.label() == "011|000@3-5"


def test_validate_zero_support_flagged():
    panel = make_panel(np.zeros((4, 1)), np.zeros((4, 1)))
    h = HistorySpec(1, 1, (1,), (0,))
    diag = validate_panel(panel, [h])
    assert diag.history_counts[h] == (0, 4)
    assert not diag.ok and diag.zero_support == [h]


def test_validate_counts_single_treated():
    panel = make_panel(np.zeros((2, 1)), [[1], [0]])
    h = HistorySpec(1, 1, (1,), (0,))
    diag = validate_panel(panel, [h])
    assert diag.history_counts[h] == (1, 1)
    assert diag.treated_per_period.tolist() == [1]


def test_duplicate_coordinates_reported():
    panel = make_panel(np.zeros((3, 1)), np.zeros((3, 1)), coords=[[0, 0], [0, 0], [1, 1]])
    assert validate_panel(panel).duplicate_coords == 2


@given(arrays(np.int8, (6, 3), elements=st.integers(0, 1)))
def test_indicators_disjoint_and_match_counts(z):
    panel = make_panel(np.zeros(z.shape), z)
    h = HistorySpec(2, 3, (1, 1), (0, 1))
    tgt, ref = history_indicator(panel, h)
    assert not (tgt & ref).any()
    assert validate_panel(panel, [h]).history_counts[h] == (tgt.sum(), ref.sum())


def test_panel_is_immutable():
    panel = make_panel(np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        panel.outcomes[0, 0] = 1.0


def test_outcome_accessor_is_one_based():
    panel = make_panel([[1, 2, 3]], [[0, 0, 1]])
    assert panel.outcome(3)[0] == 3
    with pytest.raises(InvalidHistory):
        panel.outcome(0)


def test_frame_columns_stable():
    panel = make_panel(np.ones((2, 2)), np.zeros((2, 2)), x=np.zeros((2, 2)))
    assert list(panel_to_frame(panel).columns) == ["unit", "period", "y", "z", "x", "coord1", "coord2"]
