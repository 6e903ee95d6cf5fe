import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfhazard.cloglog import cloglog_prob
from cfhazard.data import build_frame
from cfhazard.errors import HarnessError
from cfhazard.estimator import fit_naive_cloglog
from cfhazard.simulate import (
    DgpConfig,
    EstimatorConfig,
    bundled_config,
    discrete_survival,
    generate_panel,
    grouped_time_loglik,
    load_dgp_config,
    make_rng,
    rowwise_loglik,
    run_monte_carlo,
    true_eta,
)


def test_discrete_survival_examples():
    np.testing.assert_array_equal(discrete_survival([0.5, 0.5, 0.5]), [1, 0.5, 0.25, 0.125])
    np.testing.assert_array_equal(discrete_survival([0, 0, 0]), [1, 1, 1, 1])
    out = discrete_survival([1.0, 0.3, 0.9])
    assert out[1] == 0 and np.all(out[1:] == 0)


@pytest.mark.parametrize("bad", [[-0.1], [1.1], [np.nan]])
def test_discrete_survival_rejects_out_of_range(bad):
    with pytest.raises(ValueError):
        discrete_survival(bad)


def test_same_seed_same_bytes():
    cfg = DgpConfig(n_entities=300, endogeneity_rho=0.4, seed=2024)
    a, b = generate_panel(cfg, 3), generate_panel(cfg, 3)
    assert a.to_frame().to_csv().encode() == b.to_frame().to_csv().encode()
    assert not generate_panel(cfg, 4).equals(a)


def test_replication_stream_independent_of_order():
    x = make_rng(5, 7).random(4)
    make_rng(5, 6).random(100)
    np.testing.assert_array_equal(make_rng(5, 7).random(4), x)


def test_half_hazard_null_model():
    psi = float(np.log(-np.log(0.5)))
    cfg = DgpConfig(n_entities=10000, T_max=3, psi=(psi,), beta1=(0.0,), beta2=(0.0,), seed=8)
    d = generate_panel(cfg, 0)
    for t in (1, 2, 3):
        rows = d.time == t
        n = rows.sum()
        rate = d.fail[rows].mean()
        assert abs(rate - 0.5) < 3 * np.sqrt(0.25 / n)


def test_failure_frequencies_match_hazard():
    cfg = DgpConfig(n_entities=10000, endogeneity_rho=0.5, seed=31)
    d = generate_panel(cfg, 0)
    lam = cloglog_prob(true_eta(d, cfg))
    groups = [d.time == t for t in np.unique(d.time)]
    edges = np.quantile(lam, np.linspace(0, 1, 11))
    bins = np.clip(np.searchsorted(edges, lam, side="right") - 1, 0, 9)
    groups += [bins == b for b in range(10)]
    for rows in groups:
        sd = np.sqrt((lam[rows] * (1 - lam[rows])).sum())
        assert abs(d.fail[rows].sum() - lam[rows].sum()) <= 4 * sd


def test_copula_error_is_marginally_gumbel():
    psi = float(np.log(-np.log(0.5)))
    cfg = DgpConfig(
        n_entities=10000, T_max=1, psi=(psi,), beta1=(0.0,), beta2=(0.0,),
        endogeneity_rho=0.8, cf_model="copula", seed=12,
    )
    d = generate_panel(cfg, 0)
    assert abs(d.fail.mean() - 0.5) < 3 * np.sqrt(0.25 / len(d))


@settings(max_examples=25)
@given(st.integers(0, 2**63 - 1), st.sampled_from(["administrative", "random"]), st.floats(-0.9, 0.9))
def test_grouped_time_likelihood_equals_rowwise(seed, rule, rho):
    cfg = DgpConfig(n_entities=150, endogeneity_rho=rho, censoring_rule=rule, seed=seed)
    d = generate_panel(cfg, 0)
    eta = true_eta(d, cfg)
    a, b = grouped_time_loglik(d, eta), rowwise_loglik(d, eta)
    assert abs(a - b) <= 1e-10 * abs(b)


def test_random_censoring_produces_censored_entities():
    d = generate_panel(DgpConfig(n_entities=500, censoring_rule="random", seed=3), 0)
    frame = build_frame(d)
    assert (frame.s[frame.delta == 0] < 8).any()


def test_config_validation_lists_fields():
    with pytest.raises(ValueError) as err:
        DgpConfig.from_dict({"n_entities": 0, "endogeneity_rho": 2.0, "bogus": 1})
    msg = str(err.value)
    for field in ("n_entities", "endogeneity_rho", "bogus"):
        assert field in msg


def test_config_json_roundtrip(tmp_path):
    cfg = bundled_config("indicator_dgp")
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert load_dgp_config(p) == cfg


@pytest.mark.parametrize("name", ["null_dgp", "endogenous_dgp", "exact_polynomial_dgp", "indicator_dgp"])
def test_bundled_configs_load(name):
    cfg = bundled_config(name)
    assert cfg.truth()


def test_linear_cf_scale_gives_target_correlation():
    cfg = DgpConfig(endogeneity_rho=0.6)
    b = cfg.true_cf_coefs[0]
    # corr(b v + e, v) with var(e) = pi^2/6
    corr = b / np.sqrt(b * b + np.pi**2 / 6)
    assert corr == pytest.approx(0.6, rel=1e-12)


def test_naive_recovers_beta2_without_endogeneity():
    cfg = DgpConfig(n_entities=1000, endogeneity_rho=0.0, seed=55)
    est = np.array([fit_naive_cloglog(build_frame(generate_panel(cfg, r))).coef("x1") for r in range(100)])
    mc_se = est.std(ddof=1) / np.sqrt(len(est))
    assert abs(est.mean() - 0.5) < 3 * mc_se


def test_single_replication_flags_undefined_variances():
    rep = run_monte_carlo(DgpConfig(n_entities=300, seed=1), n_reps=1)
    assert rep.estimates["cf"].shape[0] == 1
    summary = rep.summary()
    assert summary["variants"]["cf"]["variances_undefined"]
    assert summary["variants"]["cf"]["empirical_vars"] == [None, None]


def test_report_fields_and_files(tmp_path):
    rep = run_monte_carlo(DgpConfig(n_entities=300, seed=2, endogeneity_rho=0.3), EstimatorConfig(variants=("cf", "naive", "2sps")), n_reps=6)
    for v in ("cf", "naive", "2sps"):
        cov = rep.coverage95(v)
        assert np.all((0 <= cov) & (cov <= 1))
        assert rep.estimates[v].shape == (6, 2)
    csv_path, json_path = rep.write(tmp_path)
    summary = json.loads(json_path.read_text())
    assert "coverage95" in summary["variants"]["cf"]
    assert csv_path.read_text().count("\n") == 7


def test_parallel_matches_serial():
    cfg = DgpConfig(n_entities=200, seed=4)
    a = run_monte_carlo(cfg, n_reps=3)
    b = run_monte_carlo(cfg, n_reps=3, n_jobs=2)
    np.testing.assert_array_equal(a.estimates["cf"], b.estimates["cf"])


def test_excessive_failures_raise():
    # two entities cannot support period effects plus regressors
    with pytest.raises(HarnessError, match="replications failed"):
        run_monte_carlo(DgpConfig(n_entities=2, seed=1), n_reps=5)
