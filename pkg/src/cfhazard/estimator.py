"""End-to-end control-function cloglog estimation with the stacked sandwich VCE."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
import scipy.stats

from .cf import ControlFunctionSpec, Transform, apply_transforms, build_cf, parse_transform
from .cloglog import SecondStageFit, fit_cloglog, hessian_weight, score_weight, separation_scan
from .data import EstimationFrame, subset_frame
from .errors import EstimationError
from .firststage import FirstStageFit, fit_first_stage
from .numerics import RankReport, pivoted_rank
from .vce import (
    DEFAULT,
    EXACT,
    SandwichVce,
    StackedSystem,
    build_G,
    build_Omega,
    sandwich,
    stage2_only_vce,
)

log = logging.getLogger(__name__)


@dataclass(eq=False)
class EstimationResult:
    """Stacked estimate ``theta = (pi, psi, beta)`` with its sandwich variance."""

    names: list[str]
    theta: np.ndarray
    vce: SandwichVce
    system: StackedSystem
    first: FirstStageFit
    second: SecondStageFit
    diagnostics: dict = field(default_factory=dict)

    @property
    def V(self) -> np.ndarray:
        return self.vce.V_hat

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.V))

    @property
    def n_first(self) -> int:
        return self.system.n_first

    def index(self, name: str) -> int:
        return self.names.index(name)

    def coef(self, name: str) -> float:
        return float(self.theta[self.index(name)])

    def se(self, name: str) -> float:
        return float(self.std_errors[self.index(name)])

    def stage2_only_std_errors(self) -> np.ndarray:
        """Second-stage SEs that ignore first-stage estimation error."""
        v = stage2_only_vce(self.vce.G_hat, self.vce.Omega_hat, self.n_first)
        return np.sqrt(np.diag(v))

    def summary(self, level: float = 0.95) -> pd.DataFrame:
        return coefficient_table(self.names, self.theta, self.std_errors, level)


def coefficient_table(names, est, se, level: float = 0.95) -> pd.DataFrame:
    est = np.asarray(est, dtype=float)
    se = np.asarray(se, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = est / se
    crit = scipy.stats.norm.ppf(0.5 + level / 2)
    return pd.DataFrame(
        {
            "estimate": est,
            "std_error": se,
            "z": z,
            "p": 2 * scipy.stats.norm.sf(np.abs(z)),
            "ci_low": est - crit * se,
            "ci_high": est + crit * se,
        },
        index=pd.Index(list(names), name="name"),
    )


def degenerate_periods(frame: EstimationFrame) -> list[int]:
    """Periods in which every row fails or every row survives."""
    out = []
    for p in frame.periods:
        yp = frame.y[frame.time_index == p]
        if yp.size and (yp.min() == yp.max()):
            out.append(int(p))
    return out


def _as_transforms(transforms, endog_names) -> list[Transform] | None:
    if not transforms:
        return None
    return [t if isinstance(t, Transform) else parse_transform(t, endog_names) for t in transforms]


def prepare(frame: EstimationFrame, transforms=None):
    """Screen periods and single-column perfect predictors.

    Returns ``(frame, endog_terms, endog_term_names, diagnostics)`` where
    ``frame`` has degenerate-period rows and perfect-predictor exogenous
    columns removed.
    """
    diag: dict = {"dropped_periods": [], "perfect_predictors": []}
    bad_periods = degenerate_periods(frame)
    if bad_periods:
        log.warning("dropping rows of periods %s: outcome constant within period", bad_periods)
        keep = ~np.isin(frame.time_index, bad_periods)
        if not keep.any():
            raise EstimationError("no rows left after dropping degenerate periods", module="data")
        frame = subset_frame(frame, keep)
        diag["dropped_periods"] = bad_periods
    tr = _as_transforms(transforms, frame.endog_names)
    terms, term_names = apply_transforms(tr, frame.x_endog, frame.endog_names)
    k_exog = frame.exog.shape[1]
    candidates = np.hstack([frame.exog, terms])
    flagged = separation_scan(frame.y, candidates)
    if flagged:
        all_names = list(frame.exog_names) + term_names
        diag["perfect_predictors"] = [all_names[j] for j in flagged]
        log.warning("dropping perfect predictor(s) %s", diag["perfect_predictors"])
        exog_keep = [j for j in range(k_exog) if j not in flagged]
        term_keep = [j for j in range(terms.shape[1]) if j + k_exog not in flagged]
        frame = subset_frame(frame, None, exog_keep)
        terms = terms[:, term_keep]
        term_names = [term_names[j] for j in term_keep]
    return frame, terms, term_names, diag


def fit_ivcloglog(
    frame: EstimationFrame,
    cf: ControlFunctionSpec | None = None,
    transforms: Sequence[str | Transform] | None = None,
    per_eq_instruments: Sequence[Sequence[str]] | None = None,
    clusters=None,
    vce_mode: str = DEFAULT,
    g21: str = EXACT,
    df_correction: bool = False,
) -> EstimationResult:
    """Control-function cloglog estimator with the stacked sandwich VCE.

    Parameters
    ----------
    frame : EstimationFrame
    cf : ControlFunctionSpec
        Polynomial order and form; defaults to a linear control function.
    transforms : list of str, optional
        Second-stage functions of the endogenous variables (e.g.
        ``"1(x > 0)"``); the raw variables are used when omitted. The first
        stage always regresses the raw variables.
    per_eq_instruments : list of list of str, optional
        Excluded instruments per first-stage equation.
    clusters : array-like, optional
        Cluster label per entity of ``frame`` (before screening).
    vce_mode : {"default", "zero-tolerance"}
    g21 : {"exact", "expected"}
        Form of the lower-left Jacobian block, see :func:`cfhazard.vce.build_G`.
    df_correction : bool
        Apply ``c/(c-1)`` to the score outer product.
    """
    cf = cf or ControlFunctionSpec()
    entity_clusters = None
    if clusters is not None:
        clusters = np.asarray(clusters)
        if clusters.shape[0] != frame.n_entities:
            raise EstimationError(
                f"cluster map covers {clusters.shape[0]} entities, data has {frame.n_entities}",
                module="vce",
            )
        entity_clusters = dict(zip(frame.entity_ids.tolist(), clusters.tolist()))

    frame, terms, term_names, diag = prepare(frame, transforms)
    first = fit_first_stage(frame, per_eq_instruments)
    block = build_cf(first.residuals, cf)

    n_time = frame.n_periods
    base_all = np.hstack([frame.z1, terms])
    base_names_all = frame.time_dummy_names + list(frame.exog_names) + term_names
    xi_all = np.hstack([base_all, block.columns])
    names_all = base_names_all + block.names
    rank = pivoted_rank(xi_all)
    if rank.dropped_columns:
        log.warning("dropping collinear second-stage column(s) %s", [names_all[j] for j in rank.dropped_columns])
    kept = rank.kept_columns
    if any(j < n_time for j in rank.dropped_columns):
        # a dropped period dummy would silently redefine the baseline hazard
        n_time = sum(1 for j in kept if j < frame.n_periods)
    second = fit_cloglog(
        frame.y,
        xi_all[:, kept],
        column_names=[names_all[j] for j in kept],
        time_index=frame.time_index,
        periods=frame.periods[[j for j in kept if j < frame.n_periods]],
        n_time=n_time,
        screen=True,
    )
    kept = [kept[j] for j in second.kept]
    n_base_all = base_all.shape[1]
    base_cols = [j for j in kept if j < n_base_all]
    cf_cols = [j - n_base_all for j in kept if j >= n_base_all]
    diag["second_stage_rank"] = RankReport(
        rank=len(kept),
        kept_columns=kept,
        dropped_columns=[j for j in range(xi_all.shape[1]) if j not in kept],
        pivot_magnitudes=rank.pivot_magnitudes,
    )
    diag["dropped_second_stage"] = [names_all[j] for j in range(xi_all.shape[1]) if j not in kept]
    diag["perfect_predictors"] += [names_all[rank.kept_columns[j]] for j in second.dropped_perfect_predictors]
    diag["dropped_instruments"] = [first.column_names[c] for c in first.instrument_columns.dropped_columns]

    system = StackedSystem(
        frame=frame,
        first=first,
        spec=cf,
        descriptors=[block.term_descriptors[j] for j in cf_cols],
        base=base_all[:, base_cols],
        base_names=[base_names_all[j] for j in base_cols],
        gamma=second.gamma_hat,
        n_time=sum(1 for j in base_cols if j < frame.n_periods),
    )
    G = build_G(system, g21)
    scores = system.entity_scores()
    cl = None
    kind = "entity-clustered"
    if entity_clusters is not None:
        cl = np.array([entity_clusters[e] for e in frame.entity_ids.tolist()])
        kind = "custom-clustered"
    omega = build_Omega(scores, cl, df_correction)
    vce = sandwich(G, omega, vce_mode, omega_kind=kind)
    diag.update(
        iterations=second.iterations,
        loglik=second.loglik,
        converged=second.converged,
        solve_mode=vce_mode,
        g21=g21,
        n_rows=frame.n_rows,
        n_entities=frame.n_entities,
        n_failures=int(frame.y.sum()),
    )
    return EstimationResult(
        names=system.names,
        theta=system.theta,
        vce=vce,
        system=system,
        first=first,
        second=second,
        diagnostics=diag,
    )


@dataclass(eq=False)
class SimpleFit:
    """Second-stage-only fit (no first-stage uncertainty in the SEs)."""

    names: list[str]
    theta: np.ndarray
    V: np.ndarray
    second: SecondStageFit

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.V))

    def coef(self, name: str) -> float:
        return float(self.theta[self.names.index(name)])

    def se(self, name: str) -> float:
        return float(self.std_errors[self.names.index(name)])

    def summary(self, level: float = 0.95) -> pd.DataFrame:
        return coefficient_table(self.names, self.theta, self.std_errors, level)


def _plain_cloglog(frame: EstimationFrame, terms, term_names) -> SimpleFit:
    xi = np.hstack([frame.z1, terms])
    names = frame.time_dummy_names + list(frame.exog_names) + list(term_names)
    fit = fit_cloglog(
        frame.y,
        xi,
        column_names=names,
        time_index=frame.time_index,
        periods=frame.periods,
        n_time=frame.n_periods,
    )
    sub = xi[:, fit.kept]
    eta = sub @ fit.gamma_hat
    h = (sub * hessian_weight(frame.y, eta)[:, None]).T @ sub
    rows = sub * score_weight(frame.y, eta)[:, None]
    s = np.add.reduceat(rows, frame.entity_starts, axis=0)
    a = np.linalg.solve(h, s.T @ s)
    v = np.linalg.solve(h, a.T).T
    return SimpleFit(names=fit.column_names, theta=fit.gamma_hat, V=(v + v.T) / 2, second=fit)


def fit_naive_cloglog(frame: EstimationFrame, transforms=None) -> SimpleFit:
    """Cloglog that treats the endogenous terms as exogenous (entity-clustered SEs)."""
    frame, terms, term_names, _ = prepare(frame, transforms)
    return _plain_cloglog(frame, terms, term_names)


def fit_predictor_substitution(frame: EstimationFrame, transforms=None) -> SimpleFit:
    """Plug first-stage fitted values into the second stage (2SPS).

    Inconsistent in general for a nonlinear second stage; kept as a
    comparison estimator.
    """
    frame, _, term_names, _ = prepare(frame, transforms)
    first = fit_first_stage(frame)
    fitted = frame.x_endog - first.residuals
    tr = _as_transforms(transforms, frame.endog_names)
    terms, names = apply_transforms(tr, fitted, frame.endog_names)
    return _plain_cloglog(frame, terms, names)
