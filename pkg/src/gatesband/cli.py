"""Command-line entry point: analyze, calibrate, simulate, demo-correlation.

Every run is driven by a single integer seed.  When ``--seed`` is omitted
one is drawn, echoed on stderr and embedded in the outputs.  Failures print
one JSON line ``{"error": ..., "message": ...}`` on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import secrets
import sys
import warnings
from dataclasses import dataclass
from typing import Sequence

from .calibration import (
    BandCoefficients,
    CalibrationCache,
    CalibrationError,
    band_lower_bound,
    calibrate,
    independent_seed,
    validate,
)
from .dataset import ColumnMap, DatasetError, load_csv, sort_by_score
from .estimator import (
    StatisticFamily,
    gates_curve,
    pointwise_band,
    write_curve_csv,
    write_curve_json,
)
from .process import EngineConfig, write_sample_paths
from .selection import (
    characterize,
    default_constraint,
    dumps,
    format_report_table,
    select_argmax_lower,
    select_argmax_point,
    select_threshold,
)
from .simulation import (
    DgpSpec,
    LinearScore,
    NoisyOracle,
    coverage_study,
    correlation_demo,
    default_score_rule,
    fit_linear_score,
)

FAMILIES = {"min-area": "min_area", "k": "k_family", "bridge": "bridge"}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


@dataclass
class RunConfig:
    """Resolved options shared by the subcommands."""

    subcommand: str
    alpha: float = 0.05
    family: str = "min_area"
    k: float | None = None
    p_min: float = 0.0
    trials: int = 10_000
    grid: int = 10_000
    seed: int = 0
    step: float | None = None
    workers: int = 1
    out_dir: str = "."
    threshold: float | None = None
    cache_path: str | None = None

    @property
    def engine(self) -> EngineConfig:
        return EngineConfig(self.trials, self.grid, self.seed, self.workers)

    def band_settings(self) -> dict:
        return {
            "alpha": self.alpha,
            "family": self.family,
            "k": self.k,
            "p_min": self.p_min,
            "trials": self.trials,
            "grid": self.grid,
            "seed": self.seed,
            "step": self.step,
        }


def _add_band_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--family", choices=sorted(FAMILIES), default="min-area")
    p.add_argument("--k", type=float, default=None, help="exponent for --family k, 0 <= k < 1/2")
    p.add_argument("--p-min", type=float, default=0.0,
                   help="lower end of the area objective and floor of the selection range")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--grid", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--cache-path", default=None)
    p.add_argument("--out-dir", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gatesband", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    an = sub.add_parser("analyze", help="curve, uniform band, subgroup selection for a CSV")
    an.add_argument("--input", required=True)
    an.add_argument("--col-outcome", default="outcome")
    an.add_argument("--col-treatment", default="treatment")
    an.add_argument("--col-score", default="score")
    an.add_argument("--col-id", default=None)
    an.add_argument("--cols-covariates", default="",
                    help="comma-separated covariate columns")
    an.add_argument("--threshold", type=float, default=None)
    an.add_argument("--characterize", default="",
                    help="covariate indices or names to bound, e.g. 0,2 or age,psa")
    an.add_argument("--dump-paths", default=None, metavar="CSV",
                    help="also write 20 calibration sample paths")
    _add_band_args(an)

    cal = sub.add_parser("calibrate", help="Monte Carlo calibration of band coefficients")
    cal.add_argument("--dump-paths", default=None, metavar="CSV")
    cal.add_argument("--no-validate", action="store_true")
    _add_band_args(cal)

    sim = sub.add_parser("simulate", help="coverage study on a synthetic DGP")
    sim.add_argument("--config", default=None, help="JSON file with any of the flags below")
    sim.add_argument("--dgp", choices=("correlation", "acic28"), default="correlation")
    sim.add_argument("--n", type=int, default=100)
    sim.add_argument("--r", type=float, default=0.5)
    sim.add_argument("--reps", type=int, default=500)
    sim.add_argument("--score", choices=("default", "noisy-oracle", "linear"), default="default")
    sim.add_argument("--noise-sd", type=float, default=2.0)
    sim.add_argument("--threshold", type=float, default=0.0)
    sim.add_argument("--oracle-population", type=int, default=2_000_000)
    _add_band_args(sim)

    demo = sub.add_parser("demo-correlation",
                          help="mean covariance of adjacent score-sorted effect proxies")
    demo.add_argument("--r-grid", default="-0.9:0.9:0.3", help="start:stop:step, inclusive")
    demo.add_argument("--n", type=int, default=100)
    demo.add_argument("--trials", type=int, default=10_000)
    demo.add_argument("--seed", type=int, default=None)
    demo.add_argument("--assignment", choices=("bernoulli", "complete"), default="bernoulli")
    demo.add_argument("--proxy", choices=("ipw", "effect"), default="ipw")
    demo.add_argument("--out-dir", default=None)
    return parser


def parse_r_grid(text: str) -> list[float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"--r-grid must be start:stop:step, got {text!r}")
    start, stop, step = (float(x) for x in parts)
    if step <= 0 or stop < start:
        raise UsageError(f"--r-grid needs step > 0 and stop >= start, got {text!r}")
    count = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 12) + 0.0 for i in range(count)]


def _parse_characterize(text: str, names: Sequence[str]) -> tuple[int, ...]:
    out = []
    for tok in (t.strip() for t in text.split(",")):
        if not tok:
            continue
        if tok.lstrip("-").isdigit():
            j = int(tok)
        elif tok in names:
            j = list(names).index(tok)
        else:
            raise UsageError(f"--characterize: unknown covariate {tok!r}")
        if not 0 <= j < len(names):
            raise UsageError(f"--characterize: index {j} out of range for {len(names)} covariates")
        out.append(j)
    return tuple(out)


def _resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    seed = secrets.randbelow(2**31)
    print(f"seed: {seed}", file=sys.stderr)
    return seed


def _run_config(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        subcommand=args.subcommand,
        alpha=args.alpha,
        family=FAMILIES[args.family],
        k=args.k,
        p_min=args.p_min,
        trials=args.trials,
        grid=args.grid,
        seed=_resolve_seed(args.seed),
        step=args.step,
        workers=args.workers,
        out_dir=args.out_dir or ".",
        threshold=getattr(args, "threshold", None),
        cache_path=None if args.no_cache else (args.cache_path or CalibrationCache.default_path()),
    )


def _coefficients(cfg: RunConfig, family: str | None = None, trace: list | None = None) -> BandCoefficients:
    if not 0 <= cfg.p_min < 1:
        raise UsageError(f"--p-min must lie in [0, 1), got {cfg.p_min}")
    fam = family or cfg.family
    if fam == "k_family" and cfg.k is None:
        raise UsageError("--family k needs --k")
    cache = CalibrationCache(cfg.cache_path) if cfg.cache_path else None
    return calibrate(fam, cfg.alpha, cfg.engine, k=cfg.k, p_l=cfg.p_min,
                     step=cfg.step, cache=cache, trace=trace)


def _write_json(path: str, obj: dict) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(obj))


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------- analyze


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    columns = ColumnMap(
        outcome=args.col_outcome,
        treatment=args.col_treatment,
        score=args.col_score,
        covariates=tuple(c.strip() for c in args.cols_covariates.split(",") if c.strip()),
        id=args.col_id,
    )
    data = load_csv(args.input, columns, tie_seed=cfg.seed)
    js = _parse_characterize(args.characterize, data.covariate_names)
    if js and cfg.family == "bridge":
        raise UsageError("--characterize needs --family min-area or k (covariate curves are not mean-adjusted)")
    s = sort_by_score(data)
    coeffs = _coefficients(cfg)
    family = StatisticFamily.mean_adjusted() if cfg.family == "bridge" else StatisticFamily.plain()
    curve = gates_curve(s, family)
    band = band_lower_bound(curve, coeffs)
    pw = pointwise_band(curve, cfg.alpha)
    constraint = default_constraint(curve, cfg.p_min)

    reports = [select_argmax_lower(curve, band, constraint), select_argmax_point(curve, band, constraint)]
    labels = ["argmax_lower", "argmax_point"]
    if cfg.threshold is not None:
        reports.append(select_threshold(curve, band, cfg.threshold))
        labels.append(f"threshold({cfg.threshold:g})")

    os.makedirs(cfg.out_dir, exist_ok=True)
    out = cfg.out_dir
    write_curve_csv(curve, os.path.join(out, "curve.csv"), cfg.alpha)
    write_curve_json(curve, os.path.join(out, "curve.json"), cfg.alpha)
    with open(os.path.join(out, "band.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["p", "estimate", "pointwise_lower", "uniform_lower"])
        for row in zip(curve.grid, curve.values, pw, band.lower):
            writer.writerow([_fmt(v) for v in row])

    report = {
        "input": os.path.basename(args.input),
        "n": curve.n,
        "n1": curve.n1,
        "n0": curve.n0,
        "statistic": curve.family.label,
        "tie_jitter_applied": s.jitter_applied,
        "settings": cfg.band_settings(),
        "coefficients": coeffs.to_dict(),
        "selection": {
            label: (None if rep is None else rep.to_dict()) for label, rep in zip(labels, reports)
        },
    }
    if cfg.threshold is not None and reports[-1] is None:
        report["selection"][labels[-1]] = "none"
    text = [format_report_table(reports, labels, cfg.alpha)]
    if js:
        char = characterize(s, js, coeffs, curve, band)
        p_sel = reports[0].p_selected
        table = char.table_at(p_sel)
        report["characterization"] = {
            "p": p_sel,
            "joint_level": char.joint_level,
            "covariates": table,
        }
        with open(os.path.join(out, "characterization.csv"), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            head = ["p"]
            for c in char.covariates:
                head += [f"{c.name}_estimate", f"{c.name}_lower", f"{c.name}_upper"]
            writer.writerow(head)
            for i, p in enumerate(char.grid):
                row = [_fmt(p)]
                for c in char.covariates:
                    row += [_fmt(c.estimate[i]), _fmt(c.lower[i]), _fmt(c.upper[i])]
                writer.writerow(row)
        text.append("")
        text.append(f"covariates of the top {100 * p_sel:.1f}% "
                    f"(joint level {100 * char.joint_level:g}%)")
        text.append(f"{'covariate':<16}{'estimate':>12}{'lower':>12}{'upper':>12}{'all units':>12}")
        for row in table:
            text.append(f"{row['name']:<16}{row['estimate']:>12.4g}{row['lower']:>12.4g}"
                        f"{row['upper']:>12.4g}{row['population_mean']:>12.4g}")
    _write_json(os.path.join(out, "report.json"), report)
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write("\n".join(text) + "\n")
    if args.dump_paths:
        process = "bridge" if cfg.family == "bridge" else "wiener"
        write_sample_paths(cfg.engine, process, args.dump_paths)
    print(text[0])
    return 0


# ---------------------------------------------------------------- calibrate


def cmd_calibrate(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    trace: list = []
    coeffs = _coefficients(cfg, trace=trace)
    names = {"min_area": ("beta0", "beta1"), "bridge": ("delta0", "delta1"), "k_family": ("gamma",)}
    record = {"coefficients": coeffs.to_dict(), "trace": trace}
    lines = [f"family: {coeffs.family}" + (f" (k={coeffs.k:g})" if coeffs.k is not None else ""),
             f"alpha: {coeffs.alpha:g}"]
    lines += [f"{name}: {value:.4f}" for name, value in zip(names[coeffs.family], coeffs.coeffs)]
    lines.append(f"corner: {coeffs.corner:.4f}")
    lines.append(f"achieved_prob: {coeffs.achieved_prob:.4f} (se {coeffs.achieved_se:.4f})")
    if coeffs.family != "k_family":
        lines.append(f"area: {coeffs.area:.4f}")
    if not args.no_validate:
        vseed = independent_seed(cfg.seed)
        prob, se = validate(coeffs, vseed, cfg.workers)
        record["validation"] = {"seed": vseed, "prob": prob, "se": se}
        lines.append(f"validation (seed {vseed}): {prob:.4f} (se {se:.4f})")
    if trace:
        lines.append("search trace (constant, shape, area):")
        for row in trace:
            tag = "  corner" if row["corner"] else ""
            lines.append(f"  {row['c0']:.4f} {row['c1']:.4f} {row['area']:.4f}{tag}")
    else:
        lines.append("search trace: none (cached result)" if cfg.cache_path else "search trace: none")
    print("\n".join(lines))
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        _write_json(os.path.join(args.out_dir, "calibration.json"), record)
    if args.dump_paths:
        write_sample_paths(cfg.engine, coeffs.boundary().process, args.dump_paths)
    return 0


# ---------------------------------------------------------------- simulate


def _load_study_config(path: str, parser: argparse.ArgumentParser) -> None:
    """Set simulate-parser defaults from a JSON study file; explicit flags still win."""
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise UsageError(f"{path}: study config must be a JSON object")
    known = {a.dest for a in parser._actions}
    defaults = {}
    for key, value in data.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "help"):
            raise UsageError(f"{path}: unknown study config key {key!r}")
        defaults[dest] = value
    parser.set_defaults(**defaults)


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    spec = DgpSpec(kind=args.dgp, n=args.n, r=args.r,
                   oracle_population=args.oracle_population, seed=cfg.seed)
    if args.score == "linear":
        rule = fit_linear_score(spec, seed=cfg.seed + 1)
    elif args.score == "noisy-oracle":
        rule = NoisyOracle(args.noise_sd)
    else:
        rule = default_score_rule(spec)
    coeffs = _coefficients(cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = coverage_study(spec, coeffs, replications=args.reps, score_rule=rule,
                                threshold=args.threshold, workers=cfg.workers)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    summary = {
        "dgp": {"kind": spec.kind, "n": spec.n, "r": spec.r, "seed": spec.seed,
                "score": type(rule).__name__},
        "settings": cfg.band_settings(),
        "coefficients": coeffs.to_dict(),
        **result.to_dict(),
    }
    if isinstance(rule, LinearScore):
        summary["dgp"]["linear_score"] = {"intercept": rule.intercept, "coef": list(rule.coef)}
    os.makedirs(cfg.out_dir, exist_ok=True)
    _write_json(os.path.join(cfg.out_dir, "simulation.json"), summary)
    rows = [(f"coverage:{k}", v) for k, v in result.coverage.items()]
    rows += [(f"width_ratio:{k}", v) for k, v in result.width_ratio.items()]
    rows += [(f"selection:{k}", v) for k, v in result.selection.items()]
    with open(os.path.join(cfg.out_dir, "simulation.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["quantity", "value", "replications", "n", "alpha"])
        for name, value in rows:
            writer.writerow([name, _fmt(value), result.replications, result.n, result.alpha])
    width = max(len(name) for name, _ in rows)
    print("\n".join(f"{name:<{width}}  {value:.4f}" for name, value in rows))
    return 0


# ---------------------------------------------------------------- demo


def cmd_demo(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args.seed)
    grid = parse_r_grid(args.r_grid)
    rows = correlation_demo(grid, n=args.n, trials=args.trials, seed=seed,
                            assignment=args.assignment, proxy=args.proxy)
    out = args.out_dir or "."
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "correlation.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["r", "mean_cov", "se", "score_effect_corr"])
        for row in rows:
            writer.writerow([_fmt(row.r), _fmt(row.mean_cov), _fmt(row.se), _fmt(row.score_effect_corr)])
    _write_json(os.path.join(out, "correlation.json"), {
        "n": args.n, "trials": args.trials, "seed": seed,
        "assignment": args.assignment, "proxy": args.proxy,
        "rows": [{"r": r.r, "mean_cov": r.mean_cov, "se": r.se,
                  "score_effect_corr": r.score_effect_corr} for r in rows],
    })
    print(f"{'r':>6}{'mean cov':>12}{'se':>10}")
    for row in rows:
        print(f"{row.r:>6.2f}{row.mean_cov:>12.4f}{row.se:>10.4f}")
    return 0


COMMANDS = {
    "analyze": cmd_analyze,
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "demo-correlation": cmd_demo,
}


def _error_line(exc: BaseException) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc)})


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # argparse would read a leading "-0.9:..." as an option; bind it to the flag
    joined, i = [], 0
    while i < len(argv):
        if argv[i] == "--r-grid" and i + 1 < len(argv):
            joined.append(f"--r-grid={argv[i + 1]}")
            i += 2
        else:
            joined.append(argv[i])
            i += 1
    argv = joined
    parser = build_parser()
    try:
        if argv and argv[0] == "simulate" and "--config" in argv:
            sim_parser = parser._subparsers._group_actions[0].choices["simulate"]  # type: ignore[union-attr]
            idx = argv.index("--config")
            if idx + 1 >= len(argv):
                raise UsageError("--config needs a path")
            _load_study_config(argv[idx + 1], sim_parser)
        args = parser.parse_args(argv)
        return COMMANDS[args.subcommand](args)
    except (UsageError, DatasetError, CalibrationError, ValueError, OSError, MemoryError,
            IndexError, json.JSONDecodeError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
