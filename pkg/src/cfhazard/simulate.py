"""Latent-index data-generating processes for grouped-time survival data with
an endogenous regressor, and a Monte Carlo harness around the estimators.

Every replication draws from its own Philox stream keyed by ``(seed, rep)``,
so any single replication can be regenerated in isolation.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
import scipy.stats

from .cf import ControlFunctionSpec, apply_transforms, parse_transform
from .cloglog import cloglog_prob, row_loglik
from .data import PanelDataset, build_frame
from .errors import CfHazardError, HarnessError

log = logging.getLogger(__name__)

GUMBEL_SD = math.pi / math.sqrt(6.0)

_CENSORING = ("administrative", "random")
_CF_MODELS = ("polynomial", "copula")
_DISTS = ("normal", "uniform", "binary")


@dataclass(frozen=True)
class DgpConfig:
    """Parameters of the simulated panel.

    The latent index for entity i in period t is
    ``psi_t + exog'beta1 + f(x)'beta2 + u`` and the entity fails in the first
    period where it is positive. ``x = [exog, instruments] pi' + v``.

    ``cf_model="polynomial"``: ``u = p(v)'beta3_true_cf + e`` with ``e``
    standard Gumbel independent of ``v``, so a control function of the same
    order is exactly right. Without ``beta3_true_cf`` a linear term is used,
    scaled so that ``corr(u, v_1) = endogeneity_rho``.

    ``cf_model="copula"``: ``e`` is standard Gumbel marginally but linked to
    ``v_1`` by a Gaussian copula with parameter ``endogeneity_rho``; no finite
    polynomial is exactly right.
    """

    n_entities: int = 1000
    T_max: int = 8
    pi: tuple = ((0.5, 1.0),)
    psi: tuple = (-2.2, -2.1, -2.0, -2.0, -1.9, -1.9, -1.8, -1.8)
    beta1: tuple = (0.5,)
    beta2: tuple = (0.5,)
    beta3_true_cf: tuple | None = None
    endogeneity_rho: float = 0.0
    cf_model: str = "polynomial"
    sigma_v: float = 1.0
    instrument_dist: str = "normal"
    exog_dist: str = "normal"
    censoring_rule: str = "administrative"
    transforms: tuple | None = None
    seed: int = 12345

    def __post_init__(self):
        errors = self.problems()
        if errors:
            raise ValueError("invalid DgpConfig: " + "; ".join(errors))

    def problems(self) -> list[str]:
        out = []
        if not isinstance(self.n_entities, int) or self.n_entities < 1:
            out.append("n_entities: must be an integer >= 1")
        if not isinstance(self.T_max, int) or self.T_max < 1:
            out.append("T_max: must be an integer >= 1")
        if len(self.psi) not in (1, self.T_max if isinstance(self.T_max, int) else -1):
            out.append(f"psi: need 1 or T_max={self.T_max} values, got {len(self.psi)}")
        if not self.pi or len({len(row) for row in self.pi}) != 1:
            out.append("pi: need one equal-length row per endogenous variable")
        elif len(self.pi[0]) <= len(self.beta1):
            out.append("pi: rows need one entry per exogenous regressor plus at least one instrument")
        if not -1.0 <= self.endogeneity_rho <= 1.0:
            out.append("endogeneity_rho: must lie in [-1, 1]")
        if self.cf_model not in _CF_MODELS:
            out.append(f"cf_model: must be one of {_CF_MODELS}")
        if self.cf_model == "polynomial" and self.beta3_true_cf is None and abs(self.endogeneity_rho) >= 1:
            out.append("endogeneity_rho: |rho| < 1 required for the polynomial model")
        if self.censoring_rule not in _CENSORING:
            out.append(f"censoring_rule: must be one of {_CENSORING}")
        if self.instrument_dist not in _DISTS:
            out.append(f"instrument_dist: must be one of {_DISTS}")
        if self.exog_dist not in _DISTS:
            out.append(f"exog_dist: must be one of {_DISTS}")
        if self.sigma_v <= 0:
            out.append("sigma_v: must be positive")
        n_terms = len(self.transforms) if self.transforms else len(self.pi or ())
        if len(self.beta2) != n_terms:
            out.append(f"beta2: need {n_terms} values (one per second-stage endogenous term)")
        if self.beta3_true_cf is not None and self.pi and len(self.beta3_true_cf) % len(self.pi):
            out.append("beta3_true_cf: length must be a multiple of the number of endogenous variables")
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "DgpConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        kw = {}
        for key, value in raw.items():
            if key not in known:
                continue
            if key == "pi" and value is not None:
                value = tuple(tuple(row) if isinstance(row, (list, tuple)) else (row,) for row in value)
            elif isinstance(value, list):
                value = tuple(value)
            kw[key] = value
        problems = [f"{name}: unknown field" for name in unknown]
        try:
            cfg = cls(**kw)
        except (ValueError, TypeError) as exc:
            problems.append(str(exc).replace("invalid DgpConfig: ", ""))
        if problems:
            raise ValueError("invalid DgpConfig: " + "; ".join(problems))
        return cfg

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        return json.loads(json.dumps(out))

    def replace(self, **kw) -> "DgpConfig":
        return dataclasses.replace(self, **kw)

    # derived quantities
    @property
    def kappa(self) -> int:
        return len(self.pi)

    @property
    def n_exog(self) -> int:
        return len(self.beta1)

    @property
    def n_instruments(self) -> int:
        return len(self.pi[0]) - self.n_exog

    @property
    def endog_names(self) -> list[str]:
        return [f"x{j + 1}" for j in range(self.kappa)]

    @property
    def exog_names(self) -> list[str]:
        return [f"exog{j + 1}" for j in range(self.n_exog)]

    @property
    def instrument_names(self) -> list[str]:
        return [f"inst{j + 1}" for j in range(self.n_instruments)]

    @property
    def term_names(self) -> list[str]:
        if self.transforms:
            return [parse_transform(t, self.endog_names).name for t in self.transforms]
        return self.endog_names

    @property
    def psi_vector(self) -> np.ndarray:
        psi = np.asarray(self.psi, dtype=float)
        return np.repeat(psi, self.T_max) if psi.size == 1 else psi

    @property
    def true_cf_coefs(self) -> np.ndarray:
        """Separate-form coefficients on ``(v_1, ..., v_1^Q, v_2, ...)``."""
        if self.cf_model == "copula" and self.beta3_true_cf is None:
            return np.zeros(self.kappa)
        if self.beta3_true_cf is not None:
            return np.asarray(self.beta3_true_cf, dtype=float)
        rho = self.endogeneity_rho
        b = rho * GUMBEL_SD / (self.sigma_v * math.sqrt(1.0 - rho * rho))
        return np.r_[b, np.zeros(self.kappa - 1)] if self.kappa > 1 else np.array([b])

    @property
    def true_cf_order(self) -> int:
        return max(1, len(self.true_cf_coefs) // self.kappa)

    def truth(self) -> dict[str, float]:
        names = self.exog_names + self.term_names
        values = list(self.beta1) + list(self.beta2)
        return dict(zip(names, map(float, values)))


def load_dgp_config(path) -> DgpConfig:
    """Read a JSON DGP config, reporting every invalid field at once."""
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError("invalid DgpConfig: top level must be a JSON object")
    return DgpConfig.from_dict(raw)


def bundled_config(name: str) -> DgpConfig:
    """One of the configs shipped in ``cfhazard/configs`` (name without ``.json``)."""
    path = Path(__file__).parent / "configs" / f"{name}.json"
    return load_dgp_config(path)


def make_rng(seed: int, rep: int = 0) -> np.random.Generator:
    """Counter-based generator for replication ``rep`` of stream ``seed``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(rep)])
    return np.random.Generator(np.random.Philox(ss))


def discrete_survival(lambda_star) -> np.ndarray:
    """Survival ``S(0..tau)`` from per-period hazards; ``S(0) = 1``."""
    lam = np.asarray(lambda_star, dtype=float)
    if np.any(~np.isfinite(lam)) or np.any((lam < 0) | (lam > 1)):
        raise ValueError("hazards must lie in [0, 1]")
    return np.concatenate([[1.0], np.cumprod(1.0 - lam)])


def _draw(rng, dist, shape):
    if dist == "normal":
        return rng.standard_normal(shape)
    if dist == "uniform":
        return rng.uniform(-math.sqrt(3), math.sqrt(3), shape)
    return (rng.random(shape) < 0.5).astype(float)


def _cf_value(v, coefs, kappa):
    q = len(coefs) // kappa
    out = np.zeros(v.shape[:-1])
    for j in range(kappa):
        for k in range(q):
            out = out + coefs[j * q + k] * v[..., j] ** (k + 1)
    return out


def generate_panel(cfg: DgpConfig, rep: int = 0) -> PanelDataset:
    """Simulate one long-format panel (already truncated at failure)."""
    rng = make_rng(cfg.seed, rep)
    n, T, kappa = cfg.n_entities, cfg.T_max, cfg.kappa
    exog = _draw(rng, cfg.exog_dist, (n, T, cfg.n_exog))
    inst = _draw(rng, cfg.instrument_dist, (n, T, cfg.n_instruments))
    wv = rng.standard_normal((n, T, kappa))
    v = cfg.sigma_v * wv
    pi = np.asarray(cfg.pi, dtype=float)
    x = np.concatenate([exog, inst], axis=2) @ pi.T + v
    if cfg.cf_model == "copula":
        rho = cfg.endogeneity_rho
        we = rng.standard_normal((n, T))
        u01 = scipy.stats.norm.cdf(rho * wv[..., 0] + math.sqrt(1 - rho * rho) * we)
        u01 = np.clip(u01, 1e-300, np.nextafter(1.0, 0.0))
        e = -np.log(-np.log(u01))
        u = e + (_cf_value(v, cfg.true_cf_coefs, kappa) if cfg.beta3_true_cf is not None else 0.0)
    else:
        u01 = rng.random((n, T))
        u01 = np.clip(u01, 1e-300, None)
        e = -np.log(-np.log(u01))
        u = _cf_value(v, cfg.true_cf_coefs, kappa) + e
    terms = _terms(cfg, x.reshape(n * T, kappa)).reshape(n, T, -1)
    latent = (
        cfg.psi_vector[None, :]
        + exog @ np.asarray(cfg.beta1, dtype=float)
        + terms @ np.asarray(cfg.beta2, dtype=float)
        + u
    )
    event = latent > 0
    fail_t = np.where(event.any(axis=1), event.argmax(axis=1) + 1, T + 1)
    if cfg.censoring_rule == "random":
        cens = rng.integers(1, T + 1, size=n)
    else:
        cens = np.full(n, T)
    last = np.minimum(fail_t, cens)
    t_grid = np.arange(1, T + 1)
    keep = t_grid[None, :] <= last[:, None]
    failed = t_grid[None, :] == np.where(fail_t <= cens, fail_t, 0)[:, None]
    ent, per = np.nonzero(keep)
    return PanelDataset(
        entity=ent.astype(np.int64) + 1,
        time=(per + 1).astype(np.int64),
        fail=failed[ent, per].astype(np.int8),
        endog=x[ent, per],
        exog=exog[ent, per],
        instruments=inst[ent, per],
        endog_names=tuple(cfg.endog_names),
        exog_names=tuple(cfg.exog_names),
        instrument_names=tuple(cfg.instrument_names),
    )


def _terms(cfg: DgpConfig, x2d: np.ndarray) -> np.ndarray:
    tr = [parse_transform(t, cfg.endog_names) for t in cfg.transforms] if cfg.transforms else None
    return apply_transforms(tr, x2d, cfg.endog_names)[0]


def true_eta(d: PanelDataset, cfg: DgpConfig) -> np.ndarray:
    """Linear index at the true parameters for every record of ``d``."""
    pi = np.asarray(cfg.pi, dtype=float)
    v = d.endog - np.hstack([d.exog, d.instruments]) @ pi.T
    cf = _cf_value(v, cfg.true_cf_coefs, cfg.kappa) if cfg.cf_model == "polynomial" or cfg.beta3_true_cf else 0.0
    return (
        cfg.psi_vector[d.time - 1]
        + d.exog @ np.asarray(cfg.beta1, dtype=float)
        + _terms(cfg, d.endog) @ np.asarray(cfg.beta2, dtype=float)
        + cf
    )


def grouped_time_loglik(d: PanelDataset, eta) -> float:
    """Censored-product log-likelihood ``sum_i delta log f*(s) + (1-delta) log S*(s)``.

    ``f*(s) = lambda_s S*(s-1)``; hazards per record come from ``eta``.
    """
    lam = cloglog_prob(np.asarray(eta, dtype=float))
    starts = np.flatnonzero(np.r_[True, d.entity[1:] != d.entity[:-1]])
    ends = np.r_[starts[1:], len(d)]
    total = 0.0
    for a, b in zip(starts, ends):
        surv = discrete_survival(lam[a:b])
        if d.fail[b - 1]:
            total += math.log(lam[b - 1]) + math.log(surv[-2])
        else:
            total += math.log(surv[-1])
    return total


def rowwise_loglik(d: PanelDataset, eta) -> float:
    """Bernoulli cloglog log-likelihood summed over person-period rows."""
    return float(np.sum(row_loglik(d.fail, eta)))


# --- Monte Carlo harness -----------------------------------------------------

CF = "cf"
NAIVE = "naive"
SUBSTITUTION = "2sps"


@dataclass(frozen=True)
class EstimatorConfig:
    cf_order: int = 1
    cf_form: str = "separate"
    variants: tuple = (CF, NAIVE)
    vce_mode: str = "default"
    level: float = 0.95

    @classmethod
    def from_dict(cls, raw: dict) -> "EstimatorConfig":
        raw = dict(raw)
        if "variants" in raw:
            raw["variants"] = tuple(raw["variants"])
        return cls(**raw)


@dataclass(eq=False)
class McReport:
    """Per-replication estimates of the structural coefficients.

    ``estimates[variant]`` and ``std_errors[variant]`` are (reps x params)
    arrays with NaN rows for replications where that variant failed.
    ``stage2_std_errors`` holds the control-function estimator's
    second-stage-only SEs.
    """

    param_names: list[str]
    truth: np.ndarray
    estimates: dict[str, np.ndarray]
    std_errors: dict[str, np.ndarray]
    stage2_std_errors: np.ndarray | None
    failures: dict[str, int]
    level: float = 0.95
    config: dict = field(default_factory=dict)

    @property
    def n_reps(self) -> int:
        return next(iter(self.estimates.values())).shape[0]

    def _ok(self, variant):
        est = self.estimates[variant]
        return est[~np.isnan(est).any(axis=1)]

    def completed(self, variant: str) -> int:
        return self._ok(variant).shape[0]

    def mean(self, variant: str) -> np.ndarray:
        return self._ok(variant).mean(axis=0)

    def bias(self, variant: str) -> np.ndarray:
        return self.mean(variant) - self.truth

    def empirical_vars(self, variant: str) -> np.ndarray:
        est = self._ok(variant)
        if est.shape[0] < 2:
            return np.full(est.shape[1], np.nan)
        return est.var(axis=0, ddof=1)

    def mc_se(self, variant: str) -> np.ndarray:
        """Monte Carlo standard error of the mean estimate."""
        return np.sqrt(self.empirical_vars(variant) / self.completed(variant))

    def rmse(self, variant: str) -> np.ndarray:
        est = self._ok(variant)
        return np.sqrt(np.mean((est - self.truth) ** 2, axis=0))

    def vcov_means(self, variant: str) -> np.ndarray:
        se = self.std_errors[variant]
        ok = ~np.isnan(se).any(axis=1)
        return np.mean(se[ok] ** 2, axis=0)

    def coverage95(self, variant: str) -> np.ndarray:
        return self.coverage(variant, self.level)

    def coverage(self, variant: str, level: float = 0.95) -> np.ndarray:
        est, se = self.estimates[variant], self.std_errors[variant]
        ok = ~(np.isnan(est).any(axis=1) | np.isnan(se).any(axis=1))
        crit = scipy.stats.norm.ppf(0.5 + level / 2)
        return np.mean(np.abs(est[ok] - self.truth) <= crit * se[ok], axis=0)

    def summary(self) -> dict:
        out = {
            "param_names": self.param_names,
            "truth": self.truth.tolist(),
            "n_reps": self.n_reps,
            "failures": dict(self.failures),
            "level": self.level,
            "config": self.config,
            "variants": {},
        }
        for variant in self.estimates:
            single = self.completed(variant) < 2
            out["variants"][variant] = {
                "completed": self.completed(variant),
                "mean": _listify(self.mean(variant)),
                "bias": _listify(self.bias(variant)),
                "mc_se": _listify(self.mc_se(variant)),
                "rmse": _listify(self.rmse(variant)),
                "empirical_vars": _listify(self.empirical_vars(variant)),
                "vcov_means": _listify(self.vcov_means(variant)),
                "coverage95": _listify(self.coverage95(variant)),
                "variances_undefined": single,
            }
        return out

    def to_frame(self) -> pd.DataFrame:
        """One row per replication with ``<variant>:<param>`` and ``:se`` columns."""
        cols = {"rep": np.arange(self.n_reps)}
        for variant, est in self.estimates.items():
            for k, name in enumerate(self.param_names):
                cols[f"{variant}:{name}"] = est[:, k]
                cols[f"{variant}:{name}:se"] = self.std_errors[variant][:, k]
        if self.stage2_std_errors is not None:
            for k, name in enumerate(self.param_names):
                cols[f"{CF}:{name}:se_stage2"] = self.stage2_std_errors[:, k]
        return pd.DataFrame(cols)

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "replications.csv"
        json_path = out_dir / "summary.json"
        self.to_frame().to_csv(csv_path, index=False, float_format="%.17g")
        with open(json_path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)
        return csv_path, json_path


def _listify(a):
    return [None if not np.isfinite(x) else float(x) for x in np.asarray(a, dtype=float)]


def _one_rep(cfg: DgpConfig, est: EstimatorConfig, rep: int, names: Sequence[str]):
    from .estimator import fit_ivcloglog, fit_naive_cloglog, fit_predictor_substitution

    data = generate_panel(cfg, rep)
    frame = build_frame(data)
    k = len(names)
    out = {}
    s2 = np.full(k, np.nan)
    for variant in est.variants:
        row = np.full(k, np.nan)
        se = np.full(k, np.nan)
        try:
            if variant == CF:
                res = fit_ivcloglog(
                    frame,
                    ControlFunctionSpec(est.cf_order, est.cf_form),
                    transforms=cfg.transforms,
                    vce_mode=est.vce_mode,
                )
                s2_all = res.stage2_only_std_errors()
                for j, name in enumerate(names):
                    i = res.index(name)
                    row[j], se[j] = res.theta[i], res.std_errors[i]
                    s2[j] = s2_all[i - res.n_first]
            else:
                fitter = fit_naive_cloglog if variant == NAIVE else fit_predictor_substitution
                res = fitter(frame, transforms=cfg.transforms)
                for j, name in enumerate(names):
                    row[j], se[j] = res.coef(name), res.se(name)
        except (CfHazardError, np.linalg.LinAlgError, ValueError) as exc:
            log.info("replication %d, %s failed: %s", rep, variant, exc)
            row[:] = np.nan
            se[:] = np.nan
        out[variant] = (row, se)
    return out, s2


def run_monte_carlo(
    cfg: DgpConfig,
    estimator_config: EstimatorConfig | None = None,
    n_reps: int = 100,
    n_jobs: int = 1,
    max_failure_rate: float = 0.2,
) -> McReport:
    """Simulate ``n_reps`` panels and estimate each with every configured variant.

    Raises
    ------
    HarnessError
        When more than ``max_failure_rate`` of replications fail for any variant.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    est = estimator_config or EstimatorConfig()
    truth = cfg.truth()
    names = list(truth)
    if n_jobs == 1:
        results = [_one_rep(cfg, est, r, names) for r in range(n_reps)]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(_one_rep)(cfg, est, r, names) for r in range(n_reps))
    estimates = {v: np.vstack([r[0][v][0] for r in results]) for v in est.variants}
    ses = {v: np.vstack([r[0][v][1] for r in results]) for v in est.variants}
    s2 = np.vstack([r[1] for r in results]) if CF in est.variants else None
    failures = {v: int(np.isnan(estimates[v]).any(axis=1).sum()) for v in est.variants}
    for v, count in failures.items():
        if count > max_failure_rate * n_reps:
            raise HarnessError(
                f"{count} of {n_reps} replications failed for the {v} estimator; "
                "check the DGP and estimator configuration"
            )
    return McReport(
        param_names=names,
        truth=np.array([truth[n] for n in names]),
        estimates=estimates,
        std_errors=ses,
        stage2_std_errors=s2,
        failures=failures,
        level=est.level,
        config={"dgp": cfg.to_dict(), "estimator": dataclasses.asdict(est)},
    )
