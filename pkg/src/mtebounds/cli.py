"""Batch command-line front end.

Subcommands:

* ``bounds``  - compute a (method x target x restriction x sigma x v_dim)
  grid of bound intervals; JSON records to stdout or ``--output``.
* ``tables``  - recompute one golden table and diff against the stored
  reference values; exit 0 iff every cell passes.
* ``mc``      - run the Monte Carlo coverage harness from a config file and
  write the coverage CSV.

Every command is deterministic given its config and seed. ``--figure PATH``
renders a matplotlib chart next to the delimited output. Exit codes: 0 on
success, 2 on validation/usage errors, 3 on solver failures.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from concurrent.futures import ProcessPoolExecutor

from .assemble import RestrictionSet
from .bounds import cvr_bounds, hv_bounds, manski_bounds, mst_bounds
from .dgp import dgp_factory
from .golden import TABLE_IDS, cached_moments, run_table, table_info
from .inference import coverage_experiment
from .model import SolverFailure, SpecificationError, validate_spec
from .weights import TARGET_KINDS, TargetSpec

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3

METHODS = ("cvr", "mst", "manski", "hv")


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _grid_from_args(args) -> list[dict]:
    cells = []
    for dgp_name in _split(args.dgp):
        for v_dim in _split(args.vdim):
            for sigma in _split(args.sigma):
                for method in _split(args.method):
                    for target in _split(args.target):
                        for restr in _split(args.restrictions):
                            cells.append(
                                {
                                    "dgp": dgp_name,
                                    "v_dim": int(v_dim),
                                    "sigma": float(sigma),
                                    "method": method,
                                    "target": target,
                                    "restrictions": restr,
                                }
                            )
    return cells


def _compute_bounds_cell(cell: dict) -> dict:
    if cell["method"] not in METHODS:
        raise SpecificationError(f"unknown method {cell['method']!r}; choose from {METHODS}")
    if cell["target"] not in TARGET_KINDS:
        raise SpecificationError(f"unknown target {cell['target']!r}")
    dgp = dgp_factory(cell["dgp"], cell["v_dim"], cell["sigma"])
    report = validate_spec(dgp=dgp)
    if not report.ok:
        raise SpecificationError("; ".join(report.violations))
    moments = cached_moments(cell["dgp"], cell["v_dim"], cell["sigma"])
    target = TargetSpec(cell["target"])
    restrictions = RestrictionSet.from_name(cell["restrictions"])
    if cell["method"] == "manski":
        result = manski_bounds(moments)
    elif cell["method"] == "hv":
        result = hv_bounds(moments)
    elif cell["method"] == "mst":
        result = mst_bounds(moments, target, restrictions)
    else:
        result = cvr_bounds(moments, target, restrictions, v_dim_assumed=cell["v_dim"])
    return result.to_record(**cell)


def _write_or_print(text: str, output: str | None) -> None:
    if output:
        with open(output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_bounds(args) -> int:
    cells = _grid_from_args(args)
    if not cells:
        print("error: empty grid", file=sys.stderr)
        return EXIT_VALIDATION
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            records = list(pool.map(_compute_bounds_cell, cells))
    else:
        records = [_compute_bounds_cell(c) for c in cells]
    text = json.dumps(records, sort_keys=True, indent=2) + "\n"
    _write_or_print(text, args.output)
    if args.figure:
        from .plots import plot_bounds_records

        plot_bounds_records(records, args.figure)
    return EXIT_OK


def cmd_tables(args) -> int:
    rows = run_table(args.table)
    info = table_info(args.table)
    n_fail = 0
    print(f"table {args.table} ({info['model']} model, {info['target']})")
    for r in rows:
        if r["expected"] == "empty":
            exp = "empty"
        else:
            exp = f"[{r['expected'][0]:.3f}, {r['expected'][1]:.3f}]"
        if r["status"] == "bounded":
            got = f"[{r['lower']:.4f}, {r['upper']:.4f}]"
        else:
            got = r["status"]
        flag = "PASS" if r["ok"] else "FAIL"
        n_fail += 0 if r["ok"] else 1
        print(
            f"  v_dim={r['v_dim']} sigma={r['sigma']:g} {r['method']:>6s} {r['restrictions']:>4s}: "
            f"computed {got:>22s} expected {exp:>16s} {flag}"
        )
    print(f"table {args.table}: {len(rows) - n_fail}/{len(rows)} cells pass")
    if args.output:
        lines = ["table,v_dim,sigma,method,restrictions,status,lower,upper,expected,ok"]
        for r in rows:
            exp = "empty" if r["expected"] == "empty" else f"{r['expected'][0]}|{r['expected'][1]}"
            lo = "" if r["lower"] is None else f"{r['lower']:.6f}"
            hi = "" if r["upper"] is None else f"{r['upper']:.6f}"
            lines.append(
                f"{r['table']},{r['v_dim']},{r['sigma']:g},{r['method']},{r['restrictions']},"
                f"{r['status']},{lo},{hi},{exp},{int(r['ok'])}"
            )
        _write_or_print("\n".join(lines) + "\n", args.output)
    if args.figure:
        from .plots import plot_table_rows

        plot_table_rows(rows, args.figure)
    return EXIT_OK if n_fail == 0 else 1


def _read_config(path: str) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    read = cfg.read(path)
    if not read:
        raise SpecificationError(f"config file not found: {path}")
    return cfg


def cmd_mc(args) -> int:
    cfg = _read_config(args.config)
    try:
        model = cfg.get("dgp", "model")
        v_dim = cfg.getint("dgp", "v_dim")
        sigma = cfg.getfloat("dgp", "sigma")
        target = TargetSpec(cfg.get("target", "kind"))
        restrictions = RestrictionSet.from_name(cfg.get("method", "restrictions", fallback="none"))
        ns = [int(t) for t in _split(cfg.get("inference", "n"))]
        reps = cfg.getint("inference", "replications")
        alpha = cfg.getfloat("inference", "alpha", fallback=0.05)
        seed = cfg.getint("inference", "seed", fallback=0)
    except (configparser.Error, ValueError) as exc:
        raise SpecificationError(f"malformed config: {exc}") from exc
    dgp = dgp_factory(model, v_dim, sigma)
    report = validate_spec(dgp=dgp, target=target)
    if not report.ok:
        raise SpecificationError("; ".join(report.violations))
    reports = [
        coverage_experiment(
            dgp,
            target,
            restrictions,
            n=n,
            replications=reps,
            alpha=alpha,
            master_seed=seed,
            jobs=args.jobs,
        )
        for n in ns
    ]
    lines = [reports[0].CSV_HEADER] + [r.csv_row() for r in reports]
    _write_or_print("\n".join(lines) + "\n", args.output)
    for r in reports:
        print(
            f"n={r.n}: coverage {r.coverage:.3f}, mean width {r.mean_width:.3f}, "
            f"failures {r.failures}/{r.replications}",
            file=sys.stderr,
        )
    if args.figure:
        from .plots import plot_coverage_reports

        plot_coverage_reports(reports, args.figure)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtebounds",
        description="Bounds and uniformly valid confidence intervals for policy relevant treatment effects.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_bounds = sub.add_parser(
        "bounds",
        help="compute a grid of bound intervals (JSON)",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=(
            "output schema: JSON array of records\n"
            '  {"dgp", "v_dim", "sigma", "method", "target", "restrictions",\n'
            '   "status": "bounded"|"empty"|"unbounded", "lower", "upper"}\n'
            "sorted keys, deterministic given flags; empty results carry null endpoints."
        ),
    )
    p_bounds.add_argument("--config", default=None, help="INI config; flags override its values")
    p_bounds.add_argument("--dgp", default="local", help="comma list: local,random")
    p_bounds.add_argument("--vdim", default="1", help="comma list of heterogeneity dimensions")
    p_bounds.add_argument("--sigma", default="0.1", help="comma list of departure scales")
    p_bounds.add_argument("--method", default="cvr", help=f"comma list from {','.join(METHODS)}")
    p_bounds.add_argument("--target", default="ate", help=f"comma list from {','.join(TARGET_KINDS)}")
    p_bounds.add_argument("--restrictions", default="none", help="comma list: none,r1,r2,r3")
    p_bounds.add_argument("--output", default=None, help="write JSON here instead of stdout")
    p_bounds.add_argument("--figure", default=None, help="render an interval chart to this file")
    p_bounds.add_argument("--seed", type=int, default=0, help="unused for population grids; kept for schema stability")
    p_bounds.add_argument("--jobs", type=int, default=1)
    p_bounds.set_defaults(func=cmd_bounds)

    p_tables = sub.add_parser("tables", help="reproduce a golden table and diff it")
    p_tables.add_argument("table", type=int, choices=TABLE_IDS)
    p_tables.add_argument("--output", default=None, help="write the diff as CSV")
    p_tables.add_argument("--figure", default=None, help="render computed-vs-reference chart")
    p_tables.set_defaults(func=cmd_tables)

    p_tables.epilog = (
        "CSV schema (--output): table,v_dim,sigma,method,restrictions,status,"
        "lower,upper,expected,ok ; exit code 0 iff every cell passes."
    )

    p_mc = sub.add_parser(
        "mc",
        help="Monte Carlo coverage experiment (CSV)",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=(
            "config sections: [dgp] model, v_dim, sigma; [target] kind;\n"
            "[method] restrictions; [inference] n (comma list), replications, alpha, seed.\n"
            "CSV schema: n,sigma,v_dim,target,coverage,mean_width,failures,M,seed\n"
            "(one row per sample size; deterministic given config and seed)."
        ),
    )
    p_mc.add_argument("--config", required=True)
    p_mc.add_argument("--output", default=None, help="write the CSV here instead of stdout")
    p_mc.add_argument("--figure", default=None, help="render coverage/width curves")
    p_mc.add_argument("--jobs", type=int, default=1)
    p_mc.set_defaults(func=cmd_mc)
    return parser


def _apply_config_defaults(args) -> None:
    if getattr(args, "config", None) and args.command == "bounds":
        cfg = _read_config(args.config)
        mapping = {
            "dgp": ("dgp", "model"),
            "vdim": ("dgp", "v_dim"),
            "sigma": ("dgp", "sigma"),
            "target": ("target", "kind"),
            "method": ("method", "name"),
            "restrictions": ("method", "restrictions"),
        }
        defaults = build_parser().parse_args(["bounds"])
        for attr, (section, key) in mapping.items():
            if cfg.has_option(section, key) and getattr(args, attr) == getattr(defaults, attr):
                setattr(args, attr, cfg.get(section, key))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_defaults(args)
        return args.func(args)
    except SpecificationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
