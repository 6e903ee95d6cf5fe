"""Command-line interface: ``expand``, ``estimate``, ``sweep`` and ``simulate``.

Exit codes: 0 success, 2 usage, 3 data validation, 4 estimation, 5 VCE.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .cf import ControlFunctionSpec
from .data import PanelSchema, build_frame, frame_to_table, load_panel
from .errors import CfHazardError, DataError
from .estimator import EstimationResult, fit_ivcloglog
from .simulate import EstimatorConfig, bundled_config, load_dgp_config, run_monte_carlo
from .vce import DEFAULT, ZERO_TOLERANCE

log = logging.getLogger("cfhazard")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_ESTIMATION = 4
EXIT_VCE = 5

_EXIT_BY_MODULE = {"data": EXIT_DATA, "vce": EXIT_VCE, "numerics": EXIT_VCE}

COEF_FIELDS = ("estimate", "std_error", "z", "p", "ci_low", "ci_high")


def exit_code_for(err: CfHazardError) -> int:
    return _EXIT_BY_MODULE.get(getattr(err, "module", ""), EXIT_ESTIMATION)


@dataclass
class EstimateReport:
    """Labelled coefficient table plus diagnostics; JSON round-trips exactly."""

    coefficients: list[dict]
    diagnostics: dict = field(default_factory=dict)
    level: float = 0.95

    @classmethod
    def from_result(cls, res: EstimationResult, level: float = 0.95) -> "EstimateReport":
        table = res.summary(level)
        coefs = [{"name": name, **{k: float(row[k]) for k in COEF_FIELDS}} for name, row in table.iterrows()]
        return cls(coefficients=coefs, diagnostics=_jsonable(res.diagnostics), level=level)

    def table(self) -> pd.DataFrame:
        return pd.DataFrame(self.coefficients).set_index("name")

    def to_dict(self) -> dict:
        return {"coefficients": self.coefficients, "diagnostics": self.diagnostics, "level": self.level}

    def to_json(self) -> str:
        # float repr is the shortest string that reads back to the same double
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EstimateReport":
        raw = json.loads(text)
        return cls(raw["coefficients"], raw.get("diagnostics", {}), raw.get("level", 0.95))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


# --- argument parsing -------------------------------------------------------


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _order_list(text: str) -> list[int]:
    return [_positive_int(t) for t in text.replace(" ", "").split(",") if t]


def _level(text: str) -> float:
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError("level must lie strictly between 0 and 1")
    return value


def _names(values) -> tuple[str, ...]:
    out: list[str] = []
    for v in values or ():
        out += [s for s in v.split(",") if s]
    return tuple(out)


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("data", help="long-format CSV, one row per entity and period")
    p.add_argument("--id", default="id", help="entity column (default: id)")
    p.add_argument("--time", default="t", help="period column (default: t)")
    p.add_argument("--fail", default="fail", help="failure indicator column (default: fail)")
    p.add_argument("--endog", action="append", help="endogenous regressor(s), comma separated")
    p.add_argument("--exog", action="append", help="exogenous regressor(s), comma separated")
    p.add_argument("--instruments", action="append", help="excluded instrument(s), comma separated")
    p.add_argument("--sep", default=",", help="field delimiter (default: ,)")
    p.add_argument("--truncate", action="store_true", help="drop records after each entity's failure instead of rejecting them")


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cf-order", type=_positive_int, default=1, help="control-function polynomial order (default: 1)")
    p.add_argument("--cf-form", choices=("separate", "full"), default="separate")
    p.add_argument("--cluster", help="cluster column, constant within entity (default: entity)")
    p.add_argument("--df-correction", action="store_true", help="scale the score outer product by c/(c-1)")
    p.add_argument("--difficult-vce", action="store_true", help="zero-tolerance solve for the sandwich variance")
    p.add_argument("--transform", action="append", metavar="EXPR", help="second-stage term, e.g. 'xpos=1(x > 0)'")
    p.add_argument("--level", type=_level, default=0.95, help="confidence level (default: 0.95)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfhazard", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("expand", help="validate a panel and write the person-period frame")
    _add_data_args(p)
    p.add_argument("-o", "--output", help="output CSV (default: stdout)")

    p = sub.add_parser("estimate", help="control-function cloglog estimate")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--json", metavar="PATH", help="write the report as JSON")
    p.add_argument("--dump-matrices", metavar="DIR", help="write G, Omega and V as CSV")
    p.add_argument("--cf-sweep", type=_order_list, metavar="Q1,Q2,...", help="re-estimate for each order and report drift")
    p.add_argument("--coef", action="append", help="coefficients tracked by --cf-sweep (default: second-stage endogenous terms)")

    p = sub.add_parser("sweep", help="re-estimate across control-function orders")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--orders", type=_order_list, default=[1, 2, 3, 4], metavar="Q1,Q2,...")
    p.add_argument("--coef", action="append", help="coefficients to track (default: second-stage endogenous terms)")
    p.add_argument("--json", metavar="PATH", help="write the sweep table as JSON")

    p = sub.add_parser("simulate", help="Monte Carlo run from a DGP config")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("config", nargs="?", help="DGP config JSON")
    src.add_argument("--bundled", help="name of a shipped config, e.g. null_dgp")
    p.add_argument("--reps", type=_positive_int, default=100)
    p.add_argument("--out", default="mc_out", help="output directory (default: mc_out)")
    p.add_argument("--n-jobs", type=int, default=1)
    p.add_argument("--cf-order", type=_positive_int, default=1)
    p.add_argument("--cf-form", choices=("separate", "full"), default="separate")
    p.add_argument("--variants", default="cf,naive", help="comma separated subset of cf,naive,2sps")
    return parser


# --- commands ---------------------------------------------------------------


def _schema(args) -> PanelSchema:
    carry = (args.cluster,) if getattr(args, "cluster", None) else ()
    return PanelSchema(
        entity=args.id,
        time=args.time,
        fail=args.fail,
        endog=_names(args.endog),
        exog=_names(args.exog),
        instruments=_names(args.instruments),
        carry=carry,
    )


def _load_frame(args):
    with open(args.data, "rb") as fh:
        data = load_panel(fh, _schema(args), truncate=args.truncate, sep=args.sep)
    return build_frame(data)


def _entity_clusters(frame, column):
    values = frame.carry[column]
    starts = frame.entity_starts
    ends = np.r_[starts[1:], frame.n_rows]
    out = []
    for e, (a, b) in enumerate(zip(starts, ends)):
        block = values[a:b]
        if not np.all(block == block[0]):
            raise DataError(f"cluster column {column!r} varies within entity {frame.entity_ids[e]!r}", entity=frame.entity_ids[e])
        out.append(block[0])
    return np.asarray(out)


def _fit(frame, args, order: int) -> EstimationResult:
    clusters = _entity_clusters(frame, args.cluster) if args.cluster else None
    return fit_ivcloglog(
        frame,
        ControlFunctionSpec(order, args.cf_form),
        transforms=args.transform,
        clusters=clusters,
        vce_mode=ZERO_TOLERANCE if args.difficult_vce else DEFAULT,
        df_correction=args.df_correction,
    )


def _print_table(table: pd.DataFrame, out=None) -> None:
    out = out or sys.stdout
    with pd.option_context("display.max_rows", None, "display.width", 120):
        print(table.to_string(float_format=lambda v: f"{v:.6g}"), file=out)


def dump_matrices(res: EstimationResult, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    header = ",".join(res.names)
    for name, m in (("G", res.vce.G_hat), ("Omega", res.vce.Omega_hat), ("V", res.V)):
        np.savetxt(d / f"{name}.csv", m, delimiter=",", fmt="%.17g", header=header, comments="")


def cmd_expand(args) -> int:
    frame = _load_frame(args)
    table = frame_to_table(frame)
    if args.output:
        table.to_csv(args.output, index=False, float_format="%.17g")
    else:
        table.to_csv(sys.stdout, index=False, float_format="%.17g")
    return EXIT_OK


def cmd_estimate(args) -> int:
    if args.cf_sweep and len(args.cf_sweep) > 1:
        args.orders = args.cf_sweep
        return cmd_sweep(args)
    order = args.cf_sweep[0] if args.cf_sweep else args.cf_order
    frame = _load_frame(args)
    res = _fit(frame, args, order)
    report = EstimateReport.from_result(res, args.level)
    _print_table(report.table())
    diag = report.diagnostics
    print(
        f"\nrows {diag['n_rows']}  entities {diag['n_entities']}  failures {diag['n_failures']}  "
        f"loglik {diag['loglik']:.6f}  iterations {diag['iterations']}  solve {diag['solve_mode']}"
    )
    for key in ("dropped_periods", "perfect_predictors", "dropped_instruments", "dropped_second_stage"):
        if diag.get(key):
            print(f"{key.replace('_', ' ')}: {', '.join(map(str, diag[key]))}")
    if args.json:
        Path(args.json).write_text(report.to_json())
    if args.dump_matrices:
        dump_matrices(res, args.dump_matrices)
    return EXIT_OK


def sweep_table(frame, args, orders, coefs=None) -> tuple[pd.DataFrame, dict]:
    """Estimate once per order; failures are recorded in the ``status`` column."""
    rows = []
    tracked = list(coefs) if coefs else None
    for q in orders:
        row = {"cf_order": q, "status": "ok"}
        try:
            res = _fit(frame, args, q)
        except CfHazardError as err:
            row["status"] = f"{err.module}: {err}"
            rows.append(row)
            continue
        if tracked is None:
            tracked = [n for n in res.system.base_names[res.system.n_time:] if n not in frame.exog_names]
        for name in tracked:
            row[name] = res.coef(name) if name in res.names else np.nan
            row[f"{name}:se"] = res.se(name) if name in res.names else np.nan
        rows.append(row)
    table = pd.DataFrame(rows).set_index("cf_order")
    drift = {}
    for name in tracked or []:
        ok = table[name].dropna()
        pairs = list(itertools.combinations(ok.index, 2))
        drift[name] = max((abs(ok[a] - ok[b]) for a, b in pairs), default=0.0)
    return table, drift


def cmd_sweep(args) -> int:
    frame = _load_frame(args)
    coefs = _names(args.coef) or None
    if len(args.orders) == 1:
        args.cf_order, args.cf_sweep, args.dump_matrices = args.orders[0], None, None
        args.json = getattr(args, "json", None)
        return cmd_estimate(args)
    table, drift = sweep_table(frame, args, args.orders, coefs)
    _print_table(table)
    print()
    for name, value in drift.items():
        print(f"max pairwise drift of {name}: {value:.6g}")
    if getattr(args, "json", None):
        out = {
            "rows": json.loads(table.reset_index().to_json(orient="records", double_precision=15)),
            "max_pairwise_drift": drift,
        }
        Path(args.json).write_text(json.dumps(out, indent=2))
    failed = (table["status"] != "ok").all()
    return EXIT_ESTIMATION if failed else EXIT_OK


def cmd_simulate(args) -> int:
    cfg = bundled_config(args.bundled) if args.bundled else load_dgp_config(args.config)
    est = EstimatorConfig(
        cf_order=args.cf_order,
        cf_form=args.cf_form,
        variants=tuple(v for v in args.variants.split(",") if v),
    )
    report = run_monte_carlo(cfg, est, n_reps=args.reps, n_jobs=args.n_jobs)
    csv_path, json_path = report.write(args.out)
    rows = []
    for v in est.variants:
        for k, name in enumerate(report.param_names):
            rows.append(
                {
                    "variant": v,
                    "param": name,
                    "truth": report.truth[k],
                    "mean": report.mean(v)[k],
                    "bias": report.bias(v)[k],
                    "bias/mc_se": report.bias(v)[k] / report.mc_se(v)[k],
                    "coverage": report.coverage95(v)[k],
                }
            )
    _print_table(pd.DataFrame(rows).set_index(["variant", "param"]))
    print(f"\nfailures: {report.failures}\nwrote {csv_path} and {json_path}")
    return EXIT_OK


_COMMANDS = {"expand": cmd_expand, "estimate": cmd_estimate, "sweep": cmd_sweep, "simulate": cmd_simulate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except CfHazardError as err:
        print(f"error [{err.module}]: {err}", file=sys.stderr)
        return exit_code_for(err)
    except ValueError as err:
        # malformed DGP config and similar input problems
        print(f"error [input]: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as err:
        print(f"error [io]: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
