"""Complementary log-log quasi-MLE on person-period rows.

Row likelihood: ``F(eta) = 1 - exp(-exp(eta))`` is the probability of failure
in the period, ``eta = xi' gamma``. All weights are computed with expm1/log1p
so they stay accurate for hazards near 0 and near 1.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EstimationError
from .numerics import RankReport, pivoted_rank

log = logging.getLogger(__name__)

_TINY = np.finfo(float).tiny
_ONE_MINUS = np.nextafter(1.0, 0.0)

#: linear-index contribution beyond which a coefficient is treated as diverging
DIVERGENCE_ETA = 30.0


def cloglog_prob(eta):
    """Failure probability ``1 - exp(-exp(eta))``, kept strictly inside (0, 1)."""
    eta = np.asarray(eta, dtype=float)
    with np.errstate(over="ignore"):
        p = -np.expm1(-np.exp(eta))
    return np.clip(p, _TINY, _ONE_MINUS)


def row_loglik(y, eta) -> np.ndarray:
    """Per-row Bernoulli log-likelihood under the cloglog link."""
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    with np.errstate(over="ignore", divide="ignore"):
        h = np.exp(eta)
        # log(1 - exp(-h)); for tiny h this is eta - h/2 + h^2/24
        small = eta < -20
        hs = np.where(small, 1.0, h)
        # log1p keeps precision once exp(-h) is small (large eta)
        log_f = np.where(
            small,
            eta - h / 2 + h * h / 24,
            np.where(hs > np.log(2.0), np.log1p(-np.exp(-hs)), np.log(-np.expm1(-hs))),
        )
    return np.where(y > 0, log_f, -h)


def loglik(y, eta) -> float:
    return float(np.sum(row_loglik(y, eta)))


def score_weight(y, eta) -> np.ndarray:
    """d l / d eta per row: ``h/expm1(h)`` if y=1, ``-h`` if y=0, ``h = exp(eta)``."""
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        h = np.exp(eta)
        small = h < 1e-8
        w1 = np.where(small, 1.0 - h / 2, h / np.expm1(np.where(small, 1.0, h)))
        w1 = np.where(np.isinf(h), 0.0, w1)
    return np.where(y > 0, w1, -h)


def hessian_weight(y, eta) -> np.ndarray:
    """d^2 l / d eta^2 per row; strictly negative.

    y=1: ``h (e^h - 1 - h e^h) / (e^h - 1)^2``; y=0: ``-h``.
    """
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        h = np.exp(eta)
        small = h < 1e-3
        hs = np.where(small, 1.0, h)
        w = np.where(small, 1.0, hs / np.expm1(hs))
        # 1 - h / (1 - e^-h), series below 1e-3 to avoid cancellation
        bracket_big = 1.0 - hs / (-np.expm1(-hs))
        bracket_small = -(h / 2 + h * h / 12 - h**4 / 720)
        w_small = 1.0 - h / 2 + h * h / 12
        d1 = np.where(small, w_small * bracket_small, w * bracket_big)
        d1 = np.where(np.isinf(h), 0.0, d1)
    d = np.where(y > 0, d1, -h)
    return np.minimum(d, -_TINY)


def score_contribution(y, xi, gamma) -> np.ndarray:
    """Score of one row's log-likelihood w.r.t. ``gamma``."""
    xi = np.asarray(xi, dtype=float)
    eta = float(xi @ np.asarray(gamma, dtype=float))
    return float(score_weight(y, eta)) * xi


def separation_scan(y, x, candidates: Sequence[int] | None = None) -> list[int]:
    """Columns that perfectly predict ``y`` on their own.

    A column is flagged if ``y`` is constant over the rows where it is
    nonzero (the dummy-variable case), or if its sign splits the outcomes
    exactly (all failures on one side of zero, all survivals on the other).
    """
    y = np.asarray(y) > 0
    x = np.asarray(x, dtype=float)
    cols = range(x.shape[1]) if candidates is None else candidates
    flagged = []
    for j in cols:
        c = x[:, j]
        nz = c != 0
        if not nz.any() or nz.all() and np.all(c == c[0]):
            continue
        if np.all(y[nz]) or not np.any(y[nz]):
            flagged.append(j)
            continue
        pos = c > 0
        if (np.array_equal(pos, y) or np.array_equal(~pos, y)) and not (pos.all() or (~pos).all()):
            flagged.append(j)
    return flagged


def period_start_values(y, time_index, periods) -> np.ndarray:
    """Per-period method-of-moments intercepts ``log(-log(1 - rate_t))``."""
    y = np.asarray(y, dtype=float)
    out = np.empty(len(periods))
    for k, p in enumerate(periods):
        rows = time_index == p
        n = rows.sum()
        rate = (y[rows].sum() + 0.5) / (n + 1.0) if n else 0.5
        out[k] = np.log(-np.log1p(-rate))
    return out


@dataclass
class SecondStageFit:
    """Converged cloglog fit on the (screened) regressor matrix.

    ``gamma_hat`` aligns with ``column_names``; both exclude dropped columns.
    ``kept`` maps back to the columns of the matrix that was passed in.
    """

    gamma_hat: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    column_names: list[str]
    kept: list[int]
    dropped_regressors: RankReport | None = None
    dropped_perfect_predictors: list[int] = field(default_factory=list)
    loglik_trace: list[float] = field(default_factory=list)


def _newton_step(xi, sw, hw):
    grad = xi.T @ sw
    hess = (xi * hw[:, None]).T @ xi
    # symmetric diagonal scaling keeps badly scaled columns solvable
    scale = 1.0 / np.sqrt(np.maximum(-np.diag(hess), _TINY))
    h_scaled = -(hess * scale[:, None] * scale[None, :])
    try:
        step = np.linalg.solve(h_scaled, grad * scale) * scale
    except np.linalg.LinAlgError:
        step = np.linalg.lstsq(h_scaled, grad * scale, rcond=None)[0] * scale
    return grad, step


def newton_cloglog(y, xi, start, max_iter: int = 100, tol: float = 1e-8):
    """Maximize the cloglog log-likelihood by Newton with step halving.

    Returns ``(gamma, loglik, iterations, converged, trace)``.
    """
    y = np.asarray(y, dtype=float)
    gamma = np.asarray(start, dtype=float).copy()
    eta = xi @ gamma
    ll = loglik(y, eta)
    trace = [ll]
    converged = False
    it = 0
    polish = 0
    while it < max_iter:
        it += 1
        sw = score_weight(y, eta)
        hw = hessian_weight(y, eta)
        grad, step = _newton_step(xi, sw, hw)
        if np.max(np.abs(grad)) < tol * max(1.0, abs(ll)):
            # one extra full step drives the score to rounding level
            if polish:
                converged = True
                break
            polish = 1
        t = 1.0
        for _ in range(60):
            cand = gamma + t * step
            eta_c = xi @ cand
            ll_c = loglik(y, eta_c)
            if np.isfinite(ll_c) and ll_c >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            t *= 0.5
        else:
            break
        gain = ll_c - ll
        gamma, eta, ll = cand, eta_c, ll_c
        trace.append(ll)
        if polish and t == 1.0:
            converged = True
            break
        if t == 1.0 and abs(gain) < 1e-12 * max(1.0, abs(ll)) and np.max(np.abs(step)) < 1e-10 * max(1.0, np.max(np.abs(gamma))):
            converged = True
            break
    return gamma, ll, it, converged, trace


def fit_cloglog(
    y,
    xi,
    column_names: Sequence[str] | None = None,
    time_index=None,
    periods=None,
    n_time: int = 0,
    screen: bool = True,
    max_iter: int = 100,
    tol: float = 1e-8,
) -> SecondStageFit:
    """Fit a cloglog model of ``y`` on the columns of ``xi``.

    The first ``n_time`` columns are period dummies and get method-of-moments
    start values; everything else starts at zero. With ``screen=True``
    single-column perfect predictors and collinear columns are dropped first,
    and a coefficient whose linear-index contribution keeps growing past
    ``DIVERGENCE_ETA`` is dropped and the fit restarted.
    """
    y = np.asarray(y, dtype=float)
    xi = np.asarray(xi, dtype=float)
    n, k = xi.shape
    names = list(column_names) if column_names is not None else [f"x{j}" for j in range(k)]
    if y.sum() == 0:
        raise EstimationError("all-zero outcome: no failures, period effects diverge to -inf", module="cloglog")
    if y.sum() == n:
        raise EstimationError("all-one outcome: every row fails, period effects diverge to +inf", module="cloglog")

    perfect: list[int] = []
    cols = list(range(k))
    if screen:
        perfect = separation_scan(y, xi, candidates=range(n_time, k))
        cols = [j for j in cols if j not in perfect]
    rank = None
    if screen:
        sub_rank = pivoted_rank(xi[:, cols])
        pivots = np.zeros(k)
        pivots[cols] = sub_rank.pivot_magnitudes
        rank = RankReport(
            rank=sub_rank.rank,
            kept_columns=[cols[j] for j in sub_rank.kept_columns],
            dropped_columns=[cols[j] for j in sub_rank.dropped_columns],
            pivot_magnitudes=list(pivots),
        )
        cols = rank.kept_columns
    if not cols:
        raise EstimationError("empty regressor set after screening", module="cloglog")

    start = np.zeros(k)
    if n_time and time_index is not None and periods is not None:
        start[:n_time] = period_start_values(y, time_index, periods)
    watched = []
    while True:
        sub = xi[:, cols]
        gamma, ll, it, ok, trace = newton_cloglog(y, sub, start[cols], max_iter=max_iter, tol=tol)
        contrib = np.max(np.abs(sub * gamma[None, :]), axis=0)
        diverging = [cols[j] for j in range(len(cols)) if cols[j] >= n_time and contrib[j] > DIVERGENCE_ETA]
        if screen and diverging:
            worst = max(diverging, key=lambda j: contrib[cols.index(j)])
            log.warning("dropping diverging regressor %s", names[worst])
            watched.append(worst)
            cols = [j for j in cols if j != worst]
            if not cols:
                raise EstimationError("empty regressor set after screening", module="cloglog")
            continue
        break
    if not ok:
        raise EstimationError(
            f"cloglog did not converge in {max_iter} iterations (loglik {ll:.6g})",
            module="cloglog",
            trace=trace,
        )
    return SecondStageFit(
        gamma_hat=gamma,
        loglik=ll,
        iterations=it,
        converged=ok,
        column_names=[names[j] for j in cols],
        kept=cols,
        dropped_regressors=rank,
        dropped_perfect_predictors=sorted(perfect + watched),
        loglik_trace=trace,
    )
