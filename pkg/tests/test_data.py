import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cfhazard.data import (
    PanelDataset,
    PanelSchema,
    build_frame,
    frame_to_table,
    load_panel,
    subset_frame,
    truncate_after_failure,
)
from cfhazard.errors import DataError
from cfhazard.simulate import DgpConfig, generate_panel

SCHEMA = PanelSchema(endog=("x",), exog=("w",), instruments=("z",))

MINIMAL = b"""id,t,fail,x,w,z
1,1,0,0.1,1,0.5
1,2,0,0.2,1,0.4
1,3,1,0.3,0,0.3
2,1,0,0.4,0,0.2
2,2,0,0.5,1,0.1
2,3,0,0.6,0,0.0
"""


def test_minimal_panel():
    d = load_panel(MINIMAL, SCHEMA)
    assert len(d) == 6
    frame = build_frame(d)
    np.testing.assert_array_equal(frame.delta, [1, 0])
    np.testing.assert_array_equal(frame.s, [3, 3])


def test_unsorted_input_is_sorted():
    lines = MINIMAL.decode().strip().split("\n")
    shuffled = "\n".join([lines[0]] + lines[1:][::-1]).encode()
    assert load_panel(shuffled, SCHEMA).equals(load_panel(MINIMAL, SCHEMA))


def test_records_after_failure_rejected():
    bad = MINIMAL.replace(b"1,2,0,0.2", b"1,2,1,0.2").replace(b"1,3,1,0.3", b"1,3,0,0.3")
    with pytest.raises(DataError, match="records after failure") as err:
        load_panel(bad, SCHEMA)
    assert err.value.entity == 1
    assert err.value.period == 2


def test_truncate_flag_drops_trailing_records():
    bad = MINIMAL.replace(b"1,2,0,0.2", b"1,2,1,0.2")
    d = load_panel(bad, SCHEMA, truncate=True)
    assert len(d) == 5
    assert d.time[d.entity == 1].max() == 2


def test_empty_file():
    with pytest.raises(DataError, match="no records"):
        load_panel(b"", SCHEMA)
    with pytest.raises(DataError, match="no records"):
        load_panel(b"id,t,fail,x,w,z\n", SCHEMA)


def test_missing_column():
    with pytest.raises(DataError, match="missing column"):
        load_panel(MINIMAL, PanelSchema(endog=("x", "nope")))


def test_non_binary_fail():
    with pytest.raises(DataError, match="0 or 1") as err:
        load_panel(MINIMAL.replace(b"2,3,0,0.6", b"2,3,2,0.6"), SCHEMA)
    assert err.value.entity == 2


def test_duplicate_key():
    dup = MINIMAL + b"2,3,0,0.6,0,0.0\n"
    with pytest.raises(DataError, match="duplicate") as err:
        load_panel(dup, SCHEMA)
    assert (err.value.entity, err.value.period) == (2, 3)


def test_gap_names_entity_and_period():
    gap = MINIMAL.replace(b"2,2,0,0.5,1,0.1\n", b"")
    with pytest.raises(DataError, match="gap") as err:
        load_panel(gap, SCHEMA)
    assert (err.value.entity, err.value.period) == (2, 3)


def test_delayed_entry_rejected():
    late = MINIMAL.replace(b"2,1,0,0.4,0,0.2\n", b"")
    with pytest.raises(DataError, match="delayed entry"):
        load_panel(late, SCHEMA)


def test_missing_value_is_error():
    with pytest.raises(DataError, match="missing value"):
        load_panel(MINIMAL.replace(b"0.5,1,0.1", b"0.5,,0.1"), SCHEMA)


def test_file_like_and_path(tmp_path):
    p = tmp_path / "panel.csv"
    p.write_bytes(MINIMAL)
    assert load_panel(p, SCHEMA).equals(load_panel(io.BytesIO(MINIMAL), SCHEMA))


def _panel(entity, time, fail):
    n = len(entity)
    return PanelDataset(
        entity=np.asarray(entity),
        time=np.asarray(time),
        fail=np.asarray(fail, dtype=np.int8),
        endog=np.zeros((n, 1)),
        exog=np.zeros((n, 0)),
        instruments=np.zeros((n, 1)),
    )


def test_truncate_rule():
    d = _panel([1, 1, 1, 1, 2, 2], [1, 2, 3, 4, 1, 2], [0, 1, 0, 0, 0, 0])
    out = truncate_after_failure(d)
    np.testing.assert_array_equal(out.time, [1, 2, 1, 2])
    assert truncate_after_failure(out).equals(out)


def test_no_failure_unchanged():
    d = _panel([1, 1, 1], [1, 2, 3], [0, 0, 0])
    assert truncate_after_failure(d) is d


def test_frame_has_one_dummy_per_period_present():
    frame = build_frame(load_panel(MINIMAL, SCHEMA))
    assert frame.n_periods == 3
    np.testing.assert_array_equal(frame.time_dummies.sum(axis=1), np.ones(6))


def test_single_entity_failing_at_first_period():
    frame = build_frame(_panel([7], [1], [1]))
    assert frame.n_rows == 1
    assert frame.delta[0] == 1 and frame.s[0] == 1


def test_absent_period_gets_no_dummy():
    # every entity is observed in period 1 only
    frame = build_frame(_panel([1, 2, 3], [1, 1, 1], [0, 1, 0]))
    assert frame.time_dummy_names == ["psi_t1"]


def test_generated_row_count_matches_raw_scan():
    d = generate_panel(DgpConfig(n_entities=100, seed=5, censoring_rule="random"), 0)
    frame = build_frame(d)
    # independent recount straight from the records
    per_entity = {}
    for e in d.entity.tolist():
        per_entity[e] = per_entity.get(e, 0) + 1
    assert frame.n_rows == sum(per_entity.values()) == int(frame.s.sum())


@given(st.integers(0, 2**32 - 1), st.sampled_from(["administrative", "random"]))
def test_frame_invariants(seed, rule):
    d = generate_panel(DgpConfig(n_entities=30, T_max=5, psi=(-1.0,), seed=seed, censoring_rule=rule), 0)
    once = truncate_after_failure(d)
    assert truncate_after_failure(once).equals(once)
    frame = build_frame(once)
    assert frame.s.sum() == frame.n_rows
    assert frame.y.sum() == frame.delta.sum()
    np.testing.assert_array_equal(frame.time_dummies.sum(axis=1), 1.0)


@given(st.integers(0, 2**32 - 1))
def test_truncation_idempotent_on_untruncated_panels(seed):
    rng = np.random.default_rng(seed)
    n_ent = 5
    entity = np.repeat(np.arange(n_ent), 4)
    time = np.tile(np.arange(1, 5), n_ent)
    fail = (rng.random(n_ent * 4) < 0.3).astype(np.int8)
    d = _panel(entity, time, fail)
    once = truncate_after_failure(d)
    assert truncate_after_failure(once).equals(once)
    # at most one failure per entity, always at the entity's last record
    build_frame(once)


def test_subset_frame_recomputes_periods(endog_frame):
    sub = subset_frame(endog_frame, endog_frame.time_index != 3)
    assert 3 not in sub.periods
    assert sub.z1.shape[1] == endog_frame.z1.shape[1] - 1


def test_frame_to_table_roundtrip(endog_frame):
    table = frame_to_table(endog_frame)
    assert len(table) == endog_frame.n_rows
    assert list(table.columns[:3]) == ["id", "t", "fail"]
