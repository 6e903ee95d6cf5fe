"""Long-format panel ingestion, survival-structure validation and the
person-period estimation frame."""
from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import DataError


@dataclass(frozen=True)
class PanelSchema:
    """Column roles in a long-format input table."""

    entity: str = "id"
    time: str = "t"
    fail: str = "fail"
    endog: tuple[str, ...] = ()
    exog: tuple[str, ...] = ()
    instruments: tuple[str, ...] = ()
    carry: tuple[str, ...] = ()

    @classmethod
    def from_mapping(cls, mapping: Mapping) -> "PanelSchema":
        kw = dict(mapping)
        for key in ("endog", "exog", "instruments", "carry"):
            if key in kw:
                value = kw[key]
                kw[key] = (value,) if isinstance(value, str) else tuple(value)
        return cls(**kw)

    def columns(self) -> list[str]:
        cols = [self.entity, self.time, self.fail]
        cols += list(self.endog) + list(self.exog) + list(self.instruments)
        cols += [c for c in self.carry if c not in cols]
        return cols


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """One record per (entity, period), sorted by entity then period.

    ``endog``, ``exog`` and ``instruments`` are 2-D float arrays with one row
    per record. ``carry`` holds passthrough columns (e.g. a cluster id).
    """

    entity: np.ndarray
    time: np.ndarray
    fail: np.ndarray
    endog: np.ndarray
    exog: np.ndarray
    instruments: np.ndarray
    endog_names: tuple[str, ...] = ()
    exog_names: tuple[str, ...] = ()
    instrument_names: tuple[str, ...] = ()
    carry: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.time)

    def take(self, rows) -> "PanelDataset":
        rows = np.asarray(rows)
        return replace(
            self,
            entity=self.entity[rows],
            time=self.time[rows],
            fail=self.fail[rows],
            endog=self.endog[rows],
            exog=self.exog[rows],
            instruments=self.instruments[rows],
            carry={k: v[rows] for k, v in self.carry.items()},
        )

    def equals(self, other: "PanelDataset") -> bool:
        if len(self) != len(other):
            return False
        same = (
            np.array_equal(self.entity, other.entity)
            and np.array_equal(self.time, other.time)
            and np.array_equal(self.fail, other.fail)
            and np.array_equal(self.endog, other.endog)
            and np.array_equal(self.exog, other.exog)
            and np.array_equal(self.instruments, other.instruments)
        )
        return bool(same) and self.carry.keys() == other.carry.keys() and all(
            np.array_equal(v, other.carry[k]) for k, v in self.carry.items()
        )

    def to_frame(self) -> pd.DataFrame:
        out = {"id": self.entity, "t": self.time, "fail": self.fail}
        for names, block in (
            (self.endog_names, self.endog),
            (self.exog_names, self.exog),
            (self.instrument_names, self.instruments),
        ):
            for j, name in enumerate(names):
                out[name] = block[:, j]
        out.update(self.carry)
        return pd.DataFrame(out)

    def schema(self) -> PanelSchema:
        return PanelSchema(
            entity="id",
            time="t",
            fail="fail",
            endog=self.endog_names,
            exog=self.exog_names,
            instruments=self.instrument_names,
            carry=tuple(self.carry),
        )


@dataclass(frozen=True, eq=False)
class EstimationFrame:
    """Person-period design used by both estimation stages.

    ``z1`` holds the period dummies (first ``n_periods`` columns) followed by
    the exogenous regressors; ``z2`` holds the excluded instruments. Entities
    are coded ``0..n_entities-1`` in ``entity_index`` and ``delta``/``s`` are
    indexed by that code.
    """

    y: np.ndarray
    x_endog: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    entity_index: np.ndarray
    time_index: np.ndarray
    delta: np.ndarray
    s: np.ndarray
    periods: np.ndarray
    entity_ids: np.ndarray
    endog_names: tuple[str, ...]
    exog_names: tuple[str, ...]
    instrument_names: tuple[str, ...]
    carry: dict = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return len(self.y)

    @property
    def n_entities(self) -> int:
        return len(self.entity_ids)

    @property
    def n_periods(self) -> int:
        return len(self.periods)

    @property
    def time_dummies(self) -> np.ndarray:
        return self.z1[:, : self.n_periods]

    @property
    def exog(self) -> np.ndarray:
        return self.z1[:, self.n_periods :]

    @property
    def z(self) -> np.ndarray:
        """Full first-stage instrument matrix ``[z1, z2]``."""
        return np.hstack([self.z1, self.z2])

    @property
    def time_dummy_names(self) -> list[str]:
        return [f"psi_t{int(p)}" for p in self.periods]

    @property
    def entity_starts(self) -> np.ndarray:
        """Row offset of each entity's first record."""
        return np.flatnonzero(np.r_[True, np.diff(self.entity_index) != 0])


def load_panel(source, schema, truncate: bool = False, sep: str = ",") -> PanelDataset:
    """Read a delimited table with header into a validated :class:`PanelDataset`.

    Parameters
    ----------
    source : path, str, bytes or file-like
        Delimited text. Bytes and file-like objects are read directly.
    schema : PanelSchema or mapping
        Column roles.
    truncate : bool
        Drop records after each entity's first failure instead of rejecting them.
    sep : str
        Field delimiter.
    """
    if not isinstance(schema, PanelSchema):
        schema = PanelSchema.from_mapping(schema)
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    try:
        table = pd.read_csv(source, sep=sep, float_precision="round_trip")
    except pd.errors.EmptyDataError:
        raise DataError("no records: input is empty") from None
    if len(table) == 0:
        raise DataError("no records: input has a header but no rows")
    missing = [c for c in schema.columns() if c not in table.columns]
    if missing:
        raise DataError(f"missing column(s): {', '.join(missing)}")
    for col in schema.columns():
        nulls = table[col].isna().to_numpy()
        if nulls.any():
            row = int(np.flatnonzero(nulls)[0])
            raise DataError(
                f"missing value in column {col!r} (data row {row + 1})",
                entity=table[schema.entity].iloc[row],
            )

    fail = table[schema.fail].to_numpy()
    if not np.isin(fail, [0, 1]).all():
        bad = int(np.flatnonzero(~np.isin(fail, [0, 1]))[0])
        raise DataError(
            f"fail must be 0 or 1, got {fail[bad]!r}",
            entity=table[schema.entity].iloc[bad],
            period=table[schema.time].iloc[bad],
        )
    time = table[schema.time].to_numpy()
    if not np.issubdtype(time.dtype, np.number) or np.any(time != np.round(time)) or np.any(time < 1):
        raise DataError("time periods must be positive integers")

    def block(names):
        if not names:
            return np.zeros((len(table), 0))
        try:
            return table[list(names)].to_numpy(dtype=float)
        except ValueError as exc:
            raise DataError(f"non-numeric regressor column: {exc}") from None

    d = PanelDataset(
        entity=table[schema.entity].to_numpy(),
        time=time.astype(np.int64),
        fail=fail.astype(np.int8),
        endog=block(schema.endog),
        exog=block(schema.exog),
        instruments=block(schema.instruments),
        endog_names=tuple(schema.endog),
        exog_names=tuple(schema.exog),
        instrument_names=tuple(schema.instruments),
        carry={c: table[c].to_numpy() for c in schema.carry},
    )
    d = sort_panel(d)
    _check_keys(d)
    if truncate:
        d = truncate_after_failure(d)
    validate_panel(d)
    return d


def sort_panel(d: PanelDataset) -> PanelDataset:
    order = np.lexsort((d.time, d.entity))
    if np.array_equal(order, np.arange(len(d))):
        return d
    return d.take(order)


def _entity_starts(entity: np.ndarray) -> np.ndarray:
    if len(entity) == 0:
        return np.zeros(0, dtype=int)
    return np.flatnonzero(np.r_[True, entity[1:] != entity[:-1]])


def _check_keys(d: PanelDataset) -> None:
    same_entity = d.entity[1:] == d.entity[:-1]
    dup = np.flatnonzero(same_entity & (d.time[1:] == d.time[:-1]))
    if dup.size:
        k = dup[0] + 1
        raise DataError(
            f"duplicate record for entity {d.entity[k]!r} at period {d.time[k]}",
            entity=d.entity[k],
            period=int(d.time[k]),
        )


def validate_panel(d: PanelDataset) -> None:
    """Raise :class:`DataError` unless ``d`` satisfies the survival contract.

    Records must be sorted by (entity, period) with each entity starting at
    period 1, no gaps, and at most one failure which must be its last record.
    """
    if len(d) == 0:
        raise DataError("no records")
    n = len(d)
    for name, arr in (("endog", d.endog), ("exog", d.exog), ("instruments", d.instruments)):
        if arr.ndim != 2 or arr.shape[0] != n:
            raise DataError(f"{name} block has shape {arr.shape}, expected ({n}, k)")
        if not np.all(np.isfinite(arr)):
            raise DataError(f"{name} block contains non-finite values")
    if not np.isin(d.fail, [0, 1]).all():
        raise DataError("fail must be 0 or 1")
    _check_keys(d)
    starts = _entity_starts(d.entity)
    ends = np.r_[starts[1:], n] - 1
    if len(np.unique(d.entity)) != len(starts):
        raise DataError("records are not grouped by entity; sort the panel first")
    first_bad = np.flatnonzero(d.time[starts] != 1)
    if first_bad.size:
        k = starts[first_bad[0]]
        raise DataError(
            f"entity {d.entity[k]!r} enters at period {d.time[k]}; delayed entry is not supported",
            entity=d.entity[k],
            period=int(d.time[k]),
        )
    step = np.diff(d.time)
    within = np.ones(n - 1, dtype=bool)
    within[starts[1:] - 1] = False
    gaps = np.flatnonzero(within & (step != 1))
    if gaps.size:
        k = gaps[0]
        raise DataError(
            f"gap in time periods for entity {d.entity[k]!r} after period {d.time[k]}",
            entity=d.entity[k],
            period=int(d.time[k + 1]),
        )
    is_last = np.zeros(n, dtype=bool)
    is_last[ends] = True
    early = np.flatnonzero((d.fail == 1) & ~is_last)
    if early.size:
        k = early[0]
        raise DataError(
            f"records after failure: entity {d.entity[k]!r} fails at period {d.time[k]} "
            "but has later records",
            entity=d.entity[k],
            period=int(d.time[k]),
        )


def truncate_after_failure(d: PanelDataset) -> PanelDataset:
    """Drop every record that follows an entity's first failure."""
    d = sort_panel(d)
    n = len(d)
    if n == 0:
        return d
    starts = _entity_starts(d.entity)
    group = np.repeat(np.arange(len(starts)), np.diff(np.r_[starts, n]))
    # number of failures strictly before each record within its entity
    cum = np.cumsum(d.fail) - d.fail
    before = cum - cum[starts][group]
    keep = before == 0
    if keep.all():
        return d
    return d.take(np.flatnonzero(keep))


def build_frame(d: PanelDataset) -> EstimationFrame:
    """Expand a validated, truncated panel into the person-period design."""
    validate_panel(d)
    n = len(d)
    starts = _entity_starts(d.entity)
    ends = np.r_[starts[1:], n] - 1
    counts = ends - starts + 1
    entity_index = np.repeat(np.arange(len(starts)), counts)
    periods = np.unique(d.time)
    dummy_col = np.searchsorted(periods, d.time)
    dummies = np.zeros((n, len(periods)))
    dummies[np.arange(n), dummy_col] = 1.0
    return EstimationFrame(
        y=d.fail.astype(float),
        x_endog=np.asarray(d.endog, dtype=float),
        z1=np.hstack([dummies, d.exog]),
        z2=np.asarray(d.instruments, dtype=float),
        entity_index=entity_index,
        time_index=d.time.copy(),
        delta=d.fail[ends].astype(np.int8),
        s=d.time[ends].copy(),
        periods=periods,
        entity_ids=d.entity[starts],
        endog_names=tuple(d.endog_names),
        exog_names=tuple(d.exog_names),
        instrument_names=tuple(d.instrument_names),
        carry=dict(d.carry),
    )


def subset_frame(frame: EstimationFrame, rows=None, exog_keep: Sequence[int] | None = None) -> EstimationFrame:
    """Restrict a frame to ``rows`` and/or a subset of exogenous columns.

    Period dummies that lose all their rows are removed; entity bookkeeping is
    recomputed from the remaining rows.
    """
    if rows is None:
        rows = np.arange(frame.n_rows)
    rows = np.asarray(rows)
    if rows.dtype == bool:
        rows = np.flatnonzero(rows)
    exog = frame.exog[rows]
    exog_names = frame.exog_names
    if exog_keep is not None:
        exog_keep = list(exog_keep)
        exog = exog[:, exog_keep]
        exog_names = tuple(frame.exog_names[j] for j in exog_keep)
    time = frame.time_index[rows]
    periods = np.unique(time)
    dummies = (time[:, None] == periods[None, :]).astype(float)
    codes = frame.entity_index[rows]
    kept_entities, new_codes = np.unique(codes, return_inverse=True)
    ends = np.r_[np.flatnonzero(np.diff(new_codes) != 0), len(rows) - 1] if len(rows) else np.zeros(0, int)
    y = frame.y[rows]
    return EstimationFrame(
        y=y,
        x_endog=frame.x_endog[rows],
        z1=np.hstack([dummies, exog]),
        z2=frame.z2[rows],
        entity_index=new_codes,
        time_index=time,
        delta=y[ends].astype(np.int8),
        s=time[ends],
        periods=periods,
        entity_ids=frame.entity_ids[kept_entities],
        endog_names=frame.endog_names,
        exog_names=exog_names,
        instrument_names=frame.instrument_names,
        carry={k: v[rows] for k, v in frame.carry.items()},
    )


def frame_to_table(frame: EstimationFrame) -> pd.DataFrame:
    """Person-period table with explicit period dummies, for export."""
    out = {"id": frame.entity_ids[frame.entity_index], "t": frame.time_index, "fail": frame.y.astype(int)}
    for j, name in enumerate(frame.time_dummy_names):
        out[name] = frame.z1[:, j].astype(int)
    for j, name in enumerate(frame.exog_names):
        out[name] = frame.exog[:, j]
    for j, name in enumerate(frame.endog_names):
        out[name] = frame.x_endog[:, j]
    for j, name in enumerate(frame.instrument_names):
        out[name] = frame.z2[:, j]
    out.update(frame.carry)
    return pd.DataFrame(out)
