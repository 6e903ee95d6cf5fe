"""OLS auxiliary regressions of each endogenous variable on the instruments."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.stats

from .data import EstimationFrame
from .errors import EstimationError
from .numerics import DEFAULT_RANK_TOL, RankReport, pivoted_rank, scaled_lstsq

log = logging.getLogger(__name__)


@dataclass(eq=False)
class FirstStageFit:
    """Per-equation OLS fits.

    Attributes
    ----------
    coefs : list of ndarray
        ``coefs[j]`` is pi_hat for endogenous variable j over
        ``equation_columns[j]``.
    equation_columns : list of list of int
        Column indices into ``frame.z`` used by each equation.
    residuals : ndarray, shape (n_rows, kappa)
    instrument_columns : RankReport
        Screening of the full instrument matrix ``frame.z``.
    """

    coefs: list[np.ndarray]
    equation_columns: list[list[int]]
    residuals: np.ndarray
    instrument_columns: RankReport
    column_names: list[str]
    endog_names: list[str]
    per_equation_instruments: list[list[str]] | None = None

    @property
    def kappa(self) -> int:
        return len(self.coefs)

    @property
    def pi_hat(self) -> np.ndarray:
        """Coefficients as an L_Z x kappa matrix (zeros where an equation omits a column)."""
        out = np.zeros((len(self.column_names), self.kappa))
        for j, (cols, b) in enumerate(zip(self.equation_columns, self.coefs)):
            out[cols, j] = b
        return out

    @property
    def shares_instruments(self) -> bool:
        first = self.equation_columns[0]
        return all(c == first for c in self.equation_columns)

    def names(self) -> list[str]:
        """Labels ``pi_<endog>:<instrument>`` in stacked order."""
        return [
            f"pi_{self.endog_names[j]}:{self.column_names[c]}"
            for j, cols in enumerate(self.equation_columns)
            for c in cols
        ]

    def stacked(self) -> np.ndarray:
        return np.concatenate(self.coefs)


def _instrument_names(frame: EstimationFrame) -> list[str]:
    return frame.time_dummy_names + list(frame.exog_names) + list(frame.instrument_names)


def fit_first_stage(
    frame: EstimationFrame,
    per_eq_instruments: Sequence[Sequence[str]] | None = None,
    rel_tol: float = DEFAULT_RANK_TOL,
) -> FirstStageFit:
    """Regress each endogenous variable on ``[period dummies, exog, instruments]``.

    Collinear instrument columns are dropped (earliest kept). Every surviving
    exogenous regressor enters every equation; ``per_eq_instruments``
    optionally restricts the excluded instruments per equation by name.
    """
    kappa = frame.x_endog.shape[1]
    if kappa == 0:
        raise EstimationError("no endogenous regressors", module="firststage")
    z = frame.z
    names = _instrument_names(frame)
    n_z1 = frame.z1.shape[1]
    report = pivoted_rank(z, rel_tol)
    kept = report.kept_columns
    for c in report.dropped_columns:
        kind = "excluded instrument" if c >= n_z1 else "exogenous column"
        log.warning("dropping collinear %s %s from the first stage", kind, names[c])
    kept_z1 = [c for c in kept if c < n_z1]
    kept_z2 = [c for c in kept if c >= n_z1]

    if per_eq_instruments is None:
        eq_excluded = [kept_z2] * kappa
    else:
        if len(per_eq_instruments) != kappa:
            raise EstimationError(
                f"per-equation instrument lists: got {len(per_eq_instruments)}, need {kappa}",
                module="firststage",
            )
        eq_excluded = []
        for subset in per_eq_instruments:
            unknown = [s for s in subset if s not in frame.instrument_names]
            if unknown:
                raise EstimationError(f"unknown instrument(s) {unknown}", module="firststage")
            idx = [n_z1 + frame.instrument_names.index(s) for s in subset]
            eq_excluded.append([c for c in kept_z2 if c in idx])

    for j, cols in enumerate(eq_excluded):
        if not cols:
            raise EstimationError(
                f"order condition fails for {frame.endog_names[j]!r}: no excluded instrument "
                "survives collinearity screening; at least one is required per endogenous regressor",
                module="firststage",
                report=report,
            )
    if len(kept_z2) < kappa:
        raise EstimationError(
            f"order condition fails: {len(kept_z2)} usable excluded instrument(s) for "
            f"{kappa} endogenous regressor(s)",
            module="firststage",
            report=report,
        )

    coefs, eq_cols = [], []
    resid = np.empty((frame.n_rows, kappa))
    for j in range(kappa):
        cols = kept_z1 + list(eq_excluded[j])
        zj = z[:, cols]
        b = scaled_lstsq(zj, frame.x_endog[:, j])
        coefs.append(b)
        eq_cols.append(cols)
        resid[:, j] = frame.x_endog[:, j] - zj @ b
    return FirstStageFit(
        coefs=coefs,
        equation_columns=eq_cols,
        residuals=resid,
        instrument_columns=report,
        column_names=names,
        endog_names=list(frame.endog_names),
        per_equation_instruments=None if per_eq_instruments is None else [list(s) for s in per_eq_instruments],
    )


def residuals_at(fit: FirstStageFit, frame: EstimationFrame, coefs: Sequence[np.ndarray]) -> np.ndarray:
    """First-stage residuals at arbitrary coefficients (same column layout as ``fit``)."""
    z = frame.z
    return np.column_stack(
        [frame.x_endog[:, j] - z[:, cols] @ b for j, (cols, b) in enumerate(zip(fit.equation_columns, coefs))]
    )


def first_stage_row_scores(fit: FirstStageFit, frame: EstimationFrame, coefs=None) -> np.ndarray:
    """Per-row contributions ``z_it * v_it`` for every equation, stacked column-wise."""
    coefs = fit.coefs if coefs is None else coefs
    v = residuals_at(fit, frame, coefs)
    z = frame.z
    return np.hstack([z[:, cols] * v[:, [j]] for j, cols in enumerate(fit.equation_columns)])


def first_stage_score(fit: FirstStageFit, frame: EstimationFrame, coefs=None) -> np.ndarray:
    """Entity-level first-stage scores, shape (n_entities, sum of equation widths).

    Row i is ``sum_t z_it * v_it`` per equation; columns sum to ~0 at pi_hat.
    """
    rows = first_stage_row_scores(fit, frame, coefs)
    return np.add.reduceat(rows, frame.entity_starts, axis=0)


def excluded_f_stat(fit: FirstStageFit, frame: EstimationFrame, j: int = 0) -> tuple[float, float]:
    """Homoskedastic F test that equation ``j``'s excluded instruments are jointly zero.

    Returns ``(F, p_value)``.
    """
    z = frame.z
    n_z1 = frame.z1.shape[1]
    cols = fit.equation_columns[j]
    restricted = [c for c in cols if c < n_z1]
    q = len(cols) - len(restricted)
    x = frame.x_endog[:, j]
    rss_u = float(fit.residuals[:, j] @ fit.residuals[:, j])
    b_r = scaled_lstsq(z[:, restricted], x)
    e_r = x - z[:, restricted] @ b_r
    rss_r = float(e_r @ e_r)
    df = frame.n_rows - len(cols)
    f = ((rss_r - rss_u) / q) / (rss_u / df)
    return f, float(scipy.stats.f.sf(f, q, df))
