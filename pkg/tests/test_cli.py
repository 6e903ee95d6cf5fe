import argparse
import json

import numpy as np
import pandas as pd
import pytest

from cfhazard.cli import EstimateReport, main, sweep_table
from cfhazard.data import PanelDataset, build_frame
from cfhazard.simulate import DgpConfig, bundled_config, generate_panel

ROLES = ["--endog", "x1", "--exog", "exog1", "--instruments", "inst1"]


def _write(d, path):
    d.to_frame().to_csv(path, index=False, float_format="%.17g")
    return str(path)


@pytest.fixture(scope="module")
def csv_path(tmp_path_factory):
    d = generate_panel(DgpConfig(n_entities=400, endogeneity_rho=0.5, seed=21), 0)
    return _write(d, tmp_path_factory.mktemp("cli") / "panel.csv")


def test_estimate_json_roundtrip_bit_exact(csv_path, tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["estimate", csv_path, *ROLES, "--json", str(out)]) == 0
    text = out.read_text()
    report = EstimateReport.from_json(text)
    assert report.to_json() == text
    again = EstimateReport.from_json(report.to_json())
    for a, b in zip(report.coefficients, again.coefficients):
        for k in ("estimate", "std_error", "z", "p", "ci_low", "ci_high"):
            assert np.float64(a[k]).tobytes() == np.float64(b[k]).tobytes()
    assert "x1" in capsys.readouterr().out
    # the file reproduces the in-memory estimates exactly
    from cfhazard.data import load_panel, PanelSchema
    from cfhazard.estimator import fit_ivcloglog

    schema = PanelSchema(endog=("x1",), exog=("exog1",), instruments=("inst1",))
    res = fit_ivcloglog(build_frame(load_panel(csv_path, schema)))
    assert np.array_equal([c["estimate"] for c in report.coefficients], res.theta)
    assert np.array_equal([c["std_error"] for c in report.coefficients], res.std_errors)


def test_reported_se_is_sqrt_of_dumped_V(csv_path, tmp_path):
    out = tmp_path / "r.json"
    mats = tmp_path / "m"
    assert main(["estimate", csv_path, *ROLES, "--json", str(out), "--dump-matrices", str(mats)]) == 0
    report = EstimateReport.from_json(out.read_text())
    V = pd.read_csv(mats / "V.csv", float_precision="round_trip")
    names = list(V.columns)
    assert [c["name"] for c in report.coefficients] == names
    se = np.sqrt(np.diag(V.to_numpy()))
    assert np.array_equal(se, [c["std_error"] for c in report.coefficients])
    for m in ("G", "Omega"):
        assert pd.read_csv(mats / f"{m}.csv").shape == (len(names), len(names))


def test_cf_order_zero_is_usage_error(csv_path):
    with pytest.raises(SystemExit) as err:
        main(["estimate", csv_path, *ROLES, "--cf-order", "0"])
    assert err.value.code == 2


def test_missing_instruments_is_estimation_error(csv_path, capsys):
    assert main(["estimate", csv_path, "--endog", "x1", "--exog", "exog1"]) == 4
    err = capsys.readouterr().err
    assert "firststage" in err and "order condition" in err


def test_data_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("id,t,fail,x1,exog1,inst1\n1,1,1,0,0,0\n1,2,0,0,0,0\n")
    assert main(["estimate", str(p), *ROLES]) == 3
    assert "records after failure" in capsys.readouterr().err
    assert main(["estimate", str(tmp_path / "absent.csv"), *ROLES]) == 3


def test_difficult_vce(tmp_path):
    d = generate_panel(DgpConfig(n_entities=400, endogeneity_rho=0.5, seed=11), 0)
    groups = d.entity % 13
    dums = np.column_stack([(groups == g) * 2.0**-40 for g in range(1, 13)])
    tiny = PanelDataset(
        entity=d.entity, time=d.time, fail=d.fail, endog=d.endog,
        exog=np.column_stack([d.exog, dums]), instruments=d.instruments,
        endog_names=d.endog_names, exog_names=d.exog_names + tuple(f"g{g}" for g in range(1, 13)),
        instrument_names=d.instrument_names,
    )
    path = _write(tiny, tmp_path / "tiny.csv")
    roles = ["--endog", "x1", "--exog", ",".join(tiny.exog_names), "--instruments", "inst1"]
    assert main(["estimate", path, *roles]) == 5
    assert main(["estimate", path, *roles, "--difficult-vce"]) == 0


def test_cluster_column(tmp_path):
    d = generate_panel(DgpConfig(n_entities=300, seed=6), 0)
    frame = d.to_frame()
    frame["region"] = frame["id"] % 10
    p = tmp_path / "c.csv"
    frame.to_csv(p, index=False)
    out = tmp_path / "r.json"
    assert main(["estimate", str(p), *ROLES, "--cluster", "region", "--json", str(out)]) == 0
    frame["region"] = np.arange(len(frame))
    frame.to_csv(p, index=False)
    assert main(["estimate", str(p), *ROLES, "--cluster", "region"]) == 3


def test_transform_flag(csv_path, tmp_path):
    out = tmp_path / "r.json"
    assert main(["estimate", csv_path, *ROLES, "--transform", "xpos=1(x1 > 0)", "--json", str(out)]) == 0
    names = [c["name"] for c in json.loads(out.read_text())["coefficients"]]
    assert "xpos" in names


def test_level_flag(csv_path, tmp_path):
    out = tmp_path / "r.json"
    assert main(["estimate", csv_path, *ROLES, "--level", "0.9", "--json", str(out)]) == 0
    rep = EstimateReport.from_json(out.read_text())
    assert rep.level == 0.9


def test_sweep_single_order_matches_estimate(csv_path, tmp_path, capsys):
    assert main(["estimate", csv_path, *ROLES, "--cf-order", "2"]) == 0
    single = capsys.readouterr().out
    assert main(["sweep", csv_path, *ROLES, "--orders", "2"]) == 0
    assert capsys.readouterr().out == single
    assert main(["estimate", csv_path, *ROLES, "--cf-sweep", "2"]) == 0
    assert capsys.readouterr().out == single


def test_sweep_table_and_json(csv_path, tmp_path, capsys):
    out = tmp_path / "s.json"
    assert main(["estimate", csv_path, *ROLES, "--cf-sweep", "1,2,3", "--json", str(out)]) == 0
    text = capsys.readouterr().out
    assert "max pairwise drift of x1" in text
    rows = json.loads(out.read_text())["rows"]
    assert [r["cf_order"] for r in rows] == [1, 2, 3]


def _sweep_args(**kw):
    base = dict(cluster=None, cf_form="separate", transform=None, difficult_vce=False, df_correction=False)
    base.update(kw)
    return argparse.Namespace(**base)


def test_sweep_failure_recorded_per_row(monkeypatch):
    import cfhazard.cli as cli
    from cfhazard.errors import EstimationError

    real = cli._fit

    def flaky(frame, args, order):
        if order == 3:
            raise EstimationError("cloglog did not converge", module="cloglog")
        return real(frame, args, order)

    monkeypatch.setattr(cli, "_fit", flaky)
    d = generate_panel(DgpConfig(n_entities=200, seed=3), 0)
    table, drift = sweep_table(build_frame(d), _sweep_args(), [1, 2, 3, 4])
    assert table.loc[3, "status"].startswith("cloglog")
    assert (table.drop(index=3)["status"] == "ok").all()
    assert np.isfinite(drift["x1"])


def _drifts(cfg, reps):
    out = []
    for rep in range(reps):
        table, _ = sweep_table(build_frame(generate_panel(cfg, rep)), _sweep_args(), [1, 2, 3, 4])
        out.append(table)
    return out


def test_sweep_stabilizes_at_true_order():
    cfg = bundled_config("exact_polynomial_dgp")
    tables = _drifts(cfg, 20)
    d12 = np.mean([abs(t.loc[1, "x1"] - t.loc[2, "x1"]) for t in tables])
    d234 = np.mean([max(abs(t.loc[a, "x1"] - t.loc[b, "x1"]) for a, b in ((2, 3), (2, 4), (3, 4))) for t in tables])
    assert d234 < d12


def test_sweep_stable_under_exogeneity():
    cfg = bundled_config("null_dgp")
    for t in _drifts(cfg, 10):
        ref = t.loc[1]
        for q in (2, 3, 4):
            assert abs(t.loc[q, "x1"] - ref["x1"]) < 2 * ref["x1:se"]


def test_simulate_bundled(tmp_path, capsys):
    out = tmp_path / "mc"
    assert main(["simulate", "--bundled", "null_dgp", "--reps", "3", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert "coverage95" in summary["variants"]["cf"]
    assert "bias/mc_se" in capsys.readouterr().out


def test_simulate_endogenous_comparison_table(tmp_path, capsys):
    out = tmp_path / "mc"
    assert main(["simulate", "--bundled", "endogenous_dgp", "--reps", "4", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "naive" in text and "cf" in text


def test_simulate_missing_and_malformed_config(tmp_path, capsys):
    assert main(["simulate", str(tmp_path / "nope.json")]) != 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n_entities": -1, "T_max": 0, "colour": "red"}))
    assert main(["simulate", str(bad)]) == 2
    err = capsys.readouterr().err
    for field in ("n_entities", "T_max", "colour"):
        assert field in err


def test_expand(csv_path, tmp_path):
    out = tmp_path / "pp.csv"
    assert main(["expand", csv_path, *ROLES, "-o", str(out)]) == 0
    table = pd.read_csv(out)
    dummies = [c for c in table.columns if c.startswith("psi_t")]
    assert (table[dummies].sum(axis=1) == 1).all()
