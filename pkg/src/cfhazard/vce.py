"""Stacked first/second-stage moment system and its sandwich variance.

Parameter order is ``theta = (pi_1, ..., pi_kappa, gamma)`` where ``gamma``
follows the second-stage column order (period effects, exogenous regressors,
endogenous terms, control-function terms). Jacobian and score-outer-product
matrices are raw sums over rows (no 1/n factors), so ``V`` estimates
``Var(theta_hat)`` directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cf import ControlFunctionSpec, cf_jacobian, monomials, term_name
from .cloglog import hessian_weight, score_weight
from .data import EstimationFrame
from .errors import SingularMatrixError, VceError
from .firststage import FirstStageFit, residuals_at
from .numerics import ordered_cross, solve_spd

DEFAULT = "default"
ZERO_TOLERANCE = "zero-tolerance"

#: relative pivot tolerance of the default sandwich solve (scaled by dimension)
DEFAULT_PIVOT_TOL = np.finfo(float).eps

EXACT = "exact"
EXPECTED = "expected"


@dataclass(eq=False)
class StackedSystem:
    """Everything needed to evaluate the stacked moments at any ``theta``.

    ``base`` holds the second-stage columns that do not depend on the
    first-stage coefficients (period dummies, exogenous regressors,
    endogenous terms); control-function columns are rebuilt from residuals
    using ``descriptors``.
    """

    frame: EstimationFrame
    first: FirstStageFit
    spec: ControlFunctionSpec
    descriptors: list[tuple[int, ...]]
    base: np.ndarray
    base_names: list[str]
    gamma: np.ndarray
    n_time: int = 0

    @property
    def y(self) -> np.ndarray:
        return self.frame.y

    @property
    def kappa(self) -> int:
        return self.first.kappa

    @property
    def first_sizes(self) -> list[int]:
        return [len(c) for c in self.first.equation_columns]

    @property
    def n_first(self) -> int:
        return sum(self.first_sizes)

    @property
    def n_params(self) -> int:
        return self.n_first + len(self.gamma)

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.first.stacked(), self.gamma])

    @property
    def second_names(self) -> list[str]:
        return self.base_names + [term_name(e) for e in self.descriptors]

    @property
    def names(self) -> list[str]:
        return self.first.names() + self.second_names

    @property
    def beta3(self) -> np.ndarray:
        return self.gamma[self.base.shape[1]:]

    def split(self, theta):
        theta = np.asarray(theta, dtype=float)
        coefs, pos = [], 0
        for size in self.first_sizes:
            coefs.append(theta[pos : pos + size])
            pos += size
        return coefs, theta[pos:]

    def residuals(self, coefs=None) -> np.ndarray:
        if coefs is None:
            return self.first.residuals
        return residuals_at(self.first, self.frame, coefs)

    def xi(self, coefs=None) -> np.ndarray:
        if not self.descriptors:
            return self.base
        return np.hstack([self.base, monomials(self.residuals(coefs), self.descriptors)])

    def eta(self, theta=None) -> np.ndarray:
        if theta is None:
            return self.xi() @ self.gamma
        coefs, gamma = self.split(theta)
        return self.xi(coefs) @ gamma

    def row_moments(self, theta=None) -> np.ndarray:
        """Per-row stacked moment contributions, shape (n_rows, n_params)."""
        if theta is None:
            coefs, gamma = self.first.coefs, self.gamma
            v = self.first.residuals
        else:
            coefs, gamma = self.split(theta)
            v = self.residuals(coefs)
        z = self.frame.z
        first = [z[:, cols] * v[:, [j]] for j, cols in enumerate(self.first.equation_columns)]
        xi = self.base if not self.descriptors else np.hstack([self.base, monomials(v, self.descriptors)])
        sw = score_weight(self.y, xi @ gamma)
        return np.hstack(first + [xi * sw[:, None]])

    def moments(self, theta=None) -> np.ndarray:
        return self.row_moments(theta).sum(axis=0)

    def entity_scores(self, theta=None) -> np.ndarray:
        """Entity-level stacked scores ``g_i``, shape (n_entities, n_params)."""
        return np.add.reduceat(self.row_moments(theta), self.frame.entity_starts, axis=0)


def _g21_blocks(system: StackedSystem, form: str):
    """Lower-left blocks, one per equation, each (n_gamma, L_j)."""
    z = system.frame.z
    xi = system.xi()
    eta = xi @ system.gamma
    d = hessian_weight(system.y, eta)
    nb = system.base.shape[1]
    n_gamma = len(system.gamma)
    blocks = []
    if not system.descriptors:
        return [np.zeros((n_gamma, len(c))) for c in system.first.equation_columns], d, xi
    jac = cf_jacobian(system.first.residuals, system.descriptors)  # (n, terms, kappa)
    grad = np.einsum("ntk,t->nk", jac, system.beta3)
    sw = score_weight(system.y, eta) if form == EXACT else None
    for j, cols in enumerate(system.first.equation_columns):
        zj = z[:, cols]
        dbar = -d * grad[:, j]
        block = ordered_cross(xi, zj * dbar[:, None])
        if form == EXACT:
            # control-function columns of xi move with pi_j as well
            block[nb:] += ordered_cross(jac[:, :, j], zj * (-sw)[:, None])
        blocks.append(block)
    return blocks, d, xi


def build_G(system: StackedSystem, g21: str = EXACT) -> np.ndarray:
    """Jacobian of the stacked moment sums w.r.t. ``theta``, block lower triangular.

    ``g21="exact"`` differentiates the sample moments completely, including the
    dependence of the control-function regressors themselves on ``pi``; that
    extra piece has mean zero at the truth. ``g21="expected"`` omits it and
    keeps only the ``xi * dbar * z'`` term.
    """
    if g21 not in (EXACT, EXPECTED):
        raise ValueError(f"g21 must be {EXACT!r} or {EXPECTED!r}")
    z = system.frame.z
    sizes = system.first_sizes
    n_first = sum(sizes)
    p = system.n_params
    if system.frame.n_rows != len(system.first.residuals):
        raise VceError("first-stage residuals are not aligned with the frame")
    if system.base.shape[0] != system.frame.n_rows:
        raise VceError("second-stage regressors are not aligned with the frame")
    if system.base.shape[1] + len(system.descriptors) != len(system.gamma):
        raise VceError("second-stage coefficient vector does not match its regressors")
    g = np.zeros((p, p))
    pos = 0
    for cols in system.first.equation_columns:
        zj = z[:, cols]
        g[pos : pos + len(cols), pos : pos + len(cols)] = -ordered_cross(zj, zj)
        pos += len(cols)
    blocks, d, xi = _g21_blocks(system, g21)
    pos = 0
    for block in blocks:
        g[n_first:, pos : pos + block.shape[1]] = block
        pos += block.shape[1]
    g[n_first:, n_first:] = ordered_cross(xi, xi * d[:, None])
    return g


def build_G_kronecker(system: StackedSystem, g21: str = EXACT) -> np.ndarray:
    """Same Jacobian assembled in Kronecker form; needs identical instruments.

    ``G11 = I_kappa (x) -Z'Z`` and the lower-left block is built from the
    horizontally tiled ``1_kappa' (x) Z`` weighted per equation.
    """
    if not system.first.shares_instruments:
        raise ValueError("Kronecker form requires identical instruments in every equation")
    kappa = system.kappa
    z = system.frame.z[:, system.first.equation_columns[0]]
    lz = z.shape[1]
    n_first = kappa * lz
    g = np.zeros((system.n_params, system.n_params))
    g[:n_first, :n_first] = np.kron(np.eye(kappa), -ordered_cross(z, z))
    xi = system.xi()
    eta = xi @ system.gamma
    d = hessian_weight(system.y, eta)
    tiled = np.kron(np.ones((1, kappa)), z)
    if system.descriptors:
        jac = cf_jacobian(system.first.residuals, system.descriptors)
        grad = np.einsum("ntk,t->nk", jac, system.beta3)
        dbar = np.repeat(-d[:, None] * grad, lz, axis=1)
        lower = ordered_cross(xi, tiled * dbar)
        if g21 == EXACT:
            sw = score_weight(system.y, eta)
            nb = system.base.shape[1]
            jac_tiled = jac  # (n, terms, kappa)
            for j in range(kappa):
                lower[nb:, j * lz : (j + 1) * lz] += ordered_cross(
                    jac_tiled[:, :, j], tiled[:, j * lz : (j + 1) * lz] * (-sw)[:, None]
                )
        g[n_first:, :n_first] = lower
    g[n_first:, n_first:] = ordered_cross(xi, xi * d[:, None])
    return g


def build_Omega(scores, clusters=None, df_correction: bool = False) -> np.ndarray:
    """Outer-product estimate of the score variance.

    Parameters
    ----------
    scores : ndarray, shape (n_entities, n_params)
        Entity-level stacked scores.
    clusters : array-like, optional
        Cluster label for every entity; defaults to one cluster per entity.
    df_correction : bool
        Multiply by ``c / (c - 1)`` for ``c`` clusters.
    """
    s = np.asarray(scores, dtype=float)
    if clusters is not None:
        clusters = np.asarray(clusters)
        if clusters.shape[0] != s.shape[0]:
            raise VceError(
                f"cluster map covers {clusters.shape[0]} entities, data has {s.shape[0]}"
            )
        if clusters.dtype.kind in "fc" and np.isnan(clusters).any() or any(c is None for c in clusters.tolist()):
            raise VceError("cluster map has missing labels")
        _, codes = np.unique(clusters, return_inverse=True)
        summed = np.zeros((codes.max() + 1, s.shape[1]))
        np.add.at(summed, codes, s)
        s = summed
    omega = s.T @ s
    if df_correction:
        c = s.shape[0]
        if c < 2:
            raise VceError("degrees-of-freedom correction needs at least two clusters")
        omega *= c / (c - 1)
    return omega


@dataclass(eq=False)
class SandwichVce:
    G_hat: np.ndarray
    Omega_hat: np.ndarray
    V_hat: np.ndarray
    omega_kind: str = "entity-clustered"
    solve_mode: str = DEFAULT
    extras: dict = field(default_factory=dict)


def sandwich(G, Omega, mode: str = DEFAULT, omega_kind: str = "entity-clustered") -> SandwichVce:
    """``V = G^{-1} Omega G^{-T}`` by two LU solves; never forms the inverse.

    ``mode="zero-tolerance"`` accepts any pivot that is not exactly zero.
    """
    G = np.asarray(G, dtype=float)
    Omega = np.asarray(Omega, dtype=float)
    if mode == DEFAULT:
        tol = DEFAULT_PIVOT_TOL * G.shape[0]
    elif mode == ZERO_TOLERANCE:
        tol = 0.0
    else:
        raise ValueError(f"unknown solve mode {mode!r}")
    try:
        a = solve_spd(G, Omega, tol)
        v = solve_spd(G, a.T, tol).T
    except SingularMatrixError as err:
        raise VceError(
            f"Jacobian G is numerically singular at pivot {err.pivot + 1} ({mode} solve). "
            "G is invertible whenever the instrument matrix Z'Z and the second-stage "
            "regressor matrix Xi'Xi are; check collinearity screening, or retry with the "
            "zero-tolerance solve if columns are merely tiny",
            pivot=err.pivot,
        ) from err
    v = (v + v.T) / 2
    return SandwichVce(G_hat=G, Omega_hat=Omega, V_hat=v, omega_kind=omega_kind, solve_mode=mode)


def stage2_only_vce(G, Omega, n_first: int) -> np.ndarray:
    """Second-stage sandwich that treats the control-function regressors as known."""
    g22 = G[n_first:, n_first:]
    o22 = Omega[n_first:, n_first:]
    a = np.linalg.solve(g22, o22)
    v = np.linalg.solve(g22, a.T).T
    return (v + v.T) / 2


def numerical_jacobian(fun, x, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian with steps scaled to ``|x|``."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x))
    jac = np.empty((f0.size, x.size))
    for k in range(x.size):
        h = rel_step * max(1.0, abs(x[k]))
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        jac[:, k] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (xp[k] - xm[k])
    return jac
