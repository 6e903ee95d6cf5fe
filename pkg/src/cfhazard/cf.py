"""Polynomial control-function terms built from first-stage residuals, and
second-stage transforms f(x) of the first-stage dependent variables."""
from __future__ import annotations

import ast
import itertools
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SEPARATE = "separate"
FULL = "full"


@dataclass(frozen=True)
class ControlFunctionSpec:
    """Polynomial control function of order ``order``.

    ``form="separate"`` uses powers of each residual on its own;
    ``form="full"`` uses every monomial of total degree 1..order in all
    residuals jointly.
    """

    order: int = 1
    form: str = SEPARATE

    def __post_init__(self):
        if isinstance(self.order, bool) or int(self.order) != self.order or self.order < 1:
            raise ValueError(
                f"control function order must be a positive integer, got {self.order!r}; "
                "order 0 leaves the model uninstrumented"
            )
        if self.form not in (SEPARATE, FULL):
            raise ValueError(f"form must be {SEPARATE!r} or {FULL!r}, got {self.form!r}")

    def descriptors(self, n_resid: int) -> list[tuple[int, ...]]:
        """Exponent multi-indices, one per control-function column."""
        if n_resid < 1:
            raise ValueError("need at least one residual")
        out = []
        if self.form == SEPARATE or n_resid == 1:
            for j in range(n_resid):
                for q in range(1, self.order + 1):
                    e = [0] * n_resid
                    e[j] = q
                    out.append(tuple(e))
        else:
            for degree in range(1, self.order + 1):
                for combo in itertools.combinations_with_replacement(range(n_resid), degree):
                    e = [0] * n_resid
                    for j in combo:
                        e[j] += 1
                    out.append(tuple(e))
        return out


@dataclass(frozen=True, eq=False)
class CfBlock:
    columns: np.ndarray
    term_descriptors: list[tuple[int, ...]]

    @property
    def names(self) -> list[str]:
        return [term_name(e) for e in self.term_descriptors]


def term_name(exponents: Sequence[int]) -> str:
    """Stable column label, e.g. ``cf_v1^2`` or ``cf_v1^1*v2^1``."""
    parts = [f"v{j + 1}^{a}" for j, a in enumerate(exponents) if a]
    return "cf_" + "*".join(parts)


def monomials(residuals, descriptors) -> np.ndarray:
    v = np.atleast_2d(np.asarray(residuals, dtype=float))
    out = np.ones((v.shape[0], len(descriptors)))
    for k, e in enumerate(descriptors):
        for j, a in enumerate(e):
            if a:
                out[:, k] *= v[:, j] ** a
    return out


def build_cf(residuals, spec: ControlFunctionSpec) -> CfBlock:
    """Control-function regressors for each row of ``residuals`` (ñ×κ).

    Never emits a constant term; period dummies already span it.
    """
    r = np.asarray(residuals, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    if not np.all(np.isfinite(r)):
        raise ValueError("residuals contain non-finite values")
    desc = spec.descriptors(r.shape[1])
    return CfBlock(columns=monomials(r, desc), term_descriptors=desc)


def cf_jacobian(residuals, descriptors) -> np.ndarray:
    """Derivatives of every term w.r.t. every residual, shape (ñ, terms, κ)."""
    v = np.atleast_2d(np.asarray(residuals, dtype=float))
    n, kappa = v.shape
    out = np.zeros((n, len(descriptors), kappa))
    for k, e in enumerate(descriptors):
        for j in range(kappa):
            if e[j] == 0:
                continue
            col = e[j] * v[:, j] ** (e[j] - 1)
            for l, a in enumerate(e):
                if l != j and a:
                    col = col * v[:, l] ** a
            out[:, k, j] = col
    return out


def cf_gradient_factor(residuals_row, beta3, spec: ControlFunctionSpec) -> np.ndarray:
    """Gradient of ``c(v) = p(v)'beta3`` w.r.t. the residual vector at one row.

    For a single residual with the separate form this is
    ``sum_q q * beta3[q] * v**(q-1)`` (power rule included).
    """
    v = np.atleast_1d(np.asarray(residuals_row, dtype=float))
    desc = spec.descriptors(len(v))
    beta3 = np.asarray(beta3, dtype=float)
    if beta3.shape != (len(desc),):
        raise ValueError(f"beta3 has {beta3.size} entries, expected {len(desc)}")
    return cf_jacobian(v[None, :], desc)[0].T @ beta3


def cf_gradient_factors(residuals, descriptors, beta3) -> np.ndarray:
    """Row-wise version of :func:`cf_gradient_factor`, shape (ñ, κ)."""
    return np.einsum("ntk,t->nk", cf_jacobian(residuals, descriptors), np.asarray(beta3, dtype=float))


# --- f(x) transforms ---------------------------------------------------------

_FUNCS = {
    "ind": lambda a: np.asarray(a, dtype=bool).astype(float),
    "log": np.log,
    "exp": np.exp,
    "abs": np.abs,
    "sqrt": np.sqrt,
}
_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}
_CMPOPS = {
    ast.Gt: np.greater,
    ast.GtE: np.greater_equal,
    ast.Lt: np.less,
    ast.LtE: np.less_equal,
    ast.Eq: np.equal,
    ast.NotEq: np.not_equal,
}


@dataclass(frozen=True)
class Transform:
    """Second-stage regressor computed from first-stage dependent variables.

    Expressions use the endogenous column names with ``+ - * / ^``,
    comparisons (which yield 0/1), ``1(cond)`` or ``ind(cond)`` indicators,
    and ``log exp abs sqrt``. Example: ``"1(ltv > 1)"``, ``"x1*x2"``.
    """

    expr: str
    name: str
    _tree: ast.Expression

    def evaluate(self, x_endog, endog_names: Sequence[str]) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x_endog, dtype=float))
        env = {name: x[:, j] for j, name in enumerate(endog_names)}
        with np.errstate(all="ignore"):
            out = _eval(self._tree.body, env)
        out = np.broadcast_to(np.asarray(out, dtype=float), (x.shape[0],)).copy()
        return out


def parse_transform(expr: str, endog_names: Sequence[str], name: str | None = None) -> Transform:
    """Parse ``expr`` (optionally ``name=expr``) into a :class:`Transform`."""
    text = expr.strip()
    if name is None and re.match(r"^[A-Za-z_]\w*\s*=(?!=)", text):
        name, text = (part.strip() for part in text.split("=", 1))
    source = re.sub(r"(?<![\w.])1\s*\(", "ind(", text).replace("^", "**")
    try:
        tree = ast.parse(source, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse transform {expr!r}: {exc.msg}") from None
    _check(tree.body, set(endog_names), expr)
    return Transform(expr=text, name=name or text.replace(" ", ""), _tree=tree)


def _check(node, names, expr):
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        _check(node.left, names, expr)
        _check(node.right, names, expr)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        _check(node.operand, names, expr)
    elif isinstance(node, ast.Compare) and len(node.ops) == 1 and type(node.ops[0]) in _CMPOPS:
        _check(node.left, names, expr)
        _check(node.comparators[0], names, expr)
    elif isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
        if len(node.args) != 1 or node.keywords:
            raise ValueError(f"{node.func.id}() takes one argument in {expr!r}")
        _check(node.args[0], names, expr)
    elif isinstance(node, ast.Name):
        if node.id not in names:
            raise ValueError(f"unknown variable {node.id!r} in transform {expr!r}; "
                             f"endogenous variables are {sorted(names)}")
    elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        pass
    else:
        raise ValueError(f"unsupported syntax in transform {expr!r}")


def _eval(node, env):
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        val = _eval(node.operand, env)
        return -val if isinstance(node.op, ast.USub) else val
    if isinstance(node, ast.Compare):
        return _CMPOPS[type(node.ops[0])](_eval(node.left, env), _eval(node.comparators[0], env)).astype(float)
    if isinstance(node, ast.Call):
        return _FUNCS[node.func.id](_eval(node.args[0], env))
    if isinstance(node, ast.Name):
        return env[node.id]
    return float(node.value)


def apply_transforms(transforms: Sequence[Transform] | None, x_endog, endog_names) -> tuple[np.ndarray, list[str]]:
    """Second-stage endogenous block: raw columns when ``transforms`` is empty."""
    x = np.atleast_2d(np.asarray(x_endog, dtype=float))
    if not transforms:
        return x.copy(), list(endog_names)
    cols = [t.evaluate(x, endog_names) for t in transforms]
    return np.column_stack(cols), [t.name for t in transforms]
