"""Command-line interface: ``tdpaf simulate | estimate | study``.

Exit codes: 0 success, 2 argument error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
import warnings

import numpy as np

from .cohort import CohortFormatError, LandmarkGrid, read_cohort, write_cohort
from .estimators import (BootstrapError, CounterfactualPAF, CrudePAF, LandmarkPAF,
                         ObservablePAF, bootstrap_band)
from .glm import UndefinedEstimandError
from .hazards import Constant, HazardSet, TRANSITIONS, Weibull
from .paf import ConvergenceError, InfeasibleGridError
from .simulation import Scenario, scenario_registry, simulate_cohort
from .study import run_study, time_grid, write_summaries

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
RESULT_HEADER = ("estimand", "time_or_landmark", "estimate", "lower", "upper", "model")


class UsageError(Exception):
    pass


def parse_params(path) -> Scenario:
    """Read a ``key = value`` scenario file.

    Each transition line names a family and its parameters, positionally or
    by name::

        a01 = constant 0.05
        a02 = weibull 1.4 0.08
        a03 = weibull shape=0.9 scale=0.05
        window = 8
    """
    specs, window, label = {}, None, str(path)
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CohortFormatError("expected key = value", line=lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                if key in TRANSITIONS:
                    specs[key] = _parse_spec(value)
                elif key == "window":
                    window = float(value)
                elif key == "label":
                    label = value
                else:
                    raise ValueError(f"unknown key {key!r}")
            except ValueError as exc:
                raise CohortFormatError(str(exc), line=lineno) from None
    missing = [k for k in TRANSITIONS if k not in specs]
    if missing:
        raise CohortFormatError(f"params file lacks transitions {missing}")
    hs = HazardSet.from_mapping(specs)
    if window is None:
        window = 30.0 if all(s.family == "constant" for s in specs.values()) else 8.0
    return Scenario(0, hs, label, window)


def _parse_spec(text):
    family, *args = text.split()
    family = family.lower()
    named = dict(a.split("=", 1) for a in args if "=" in a)
    positional = [float(a) for a in args if "=" not in a]
    if family == "constant":
        rate = float(named.get("rate", positional[0] if positional else "nan"))
        return Constant(rate)
    if family == "weibull":
        shape = float(named.get("shape", positional[0] if positional else "nan"))
        scale = float(named.get("scale", positional[1] if len(positional) > 1 else "nan"))
        return Weibull(shape, scale)
    raise ValueError(f"unknown hazard family {family!r}")


def _scenario(args) -> Scenario:
    if args.params:
        return parse_params(args.params)
    if args.scenario is None:
        raise UsageError("give --scenario ID or --params FILE")
    try:
        return scenario_registry(args.scenario)
    except LookupError as exc:
        raise UsageError(str(exc)) from None


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return "" if np.isnan(x) else repr(x)


# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    scenario = _scenario(args)
    cohort = simulate_cohort(scenario, args.n, args.seed, stream=args.stream)
    write_cohort(cohort, args.out)
    s = cohort.summary()
    print(f"n={s['n']} infected={s['infected']} deaths={s['deaths']} tau={s['tau']!r}")
    return EXIT_OK


def _estimate_rows(cohort, args):
    wanted = ("crude", "paf_o", "paf_c", "paf_lm") if args.estimand == "all" else (args.estimand,)
    covs = [c for c in (args.covariates or "").split(",") if c]
    # integer grid plus tau itself, so the curve's final value is always reported
    times = np.union1d(time_grid(cohort.tau), [cohort.tau])
    boot = dict(B=args.bootstrap, level=args.level, seed=args.seed)
    rows = []

    def add(name, est, points, model=""):
        values = est.predict(points)
        if args.bootstrap:
            band = bootstrap_band(est, cohort, points=points, **boot)
            lower, upper = band.lower, band.upper
        else:
            lower = upper = np.full(len(points), np.nan)
        for p, v, lo, hi in zip(points, values, lower, upper):
            if np.isfinite(v):
                rows.append((name, p, v, lo, hi, model))

    censored_msg = ("cohort has censored patients: the crude PAF is undefined; "
                    "use --estimand paf_o and read its value at tau")
    if "crude" in wanted and np.any(cohort.censored):
        if args.estimand == "crude":
            raise UndefinedEstimandError(censored_msg)
        print(f"crude skipped: {censored_msg}", file=sys.stderr)
        wanted = wanted[1:]
    if "crude" in wanted:
        est = CrudePAF(covariates=covs or None).fit(cohort)
        add("crude", est, np.array([cohort.tau]))
    if "paf_o" in wanted:
        add("paf_o", ObservablePAF().fit(cohort), times)
    if "paf_c" in wanted:
        add("paf_c", CounterfactualPAF(covariates=covs or None).fit(cohort), times)
    if "paf_lm" in wanted:
        if args.window is None or args.landmarks is None:
            raise UsageError("paf_lm needs --window and --landmarks")
        try:
            grid = LandmarkGrid.from_spec(args.landmarks, args.window)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        for method in ("separate", "supermodel"):
            est = LandmarkPAF(window=args.window, landmarks=grid.landmarks,
                              covariates=covs or None, min_cell=args.min_cell,
                              method=method, basis=args.basis).fit(cohort)
            for l, why in est.skipped_:
                print(f"paf_lm {method}: skipped landmark {l:g}: {why}", file=sys.stderr)
            add("paf_lm", est, np.asarray(est.landmarks_), model=method)
    return rows


def cmd_estimate(args) -> int:
    cohort = read_cohort(args.input)
    if len(cohort) == 0:
        raise UndefinedEstimandError("input cohort is empty")
    rows = _estimate_rows(cohort, args)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_HEADER)
        for name, p, v, lo, hi, model in rows:
            writer.writerow([name, _fmt(p), _fmt(v), _fmt(lo), _fmt(hi), model])
    return EXIT_OK


def default_landmarks(window: float) -> str:
    step = max(1, int(round(window / 10)))
    return f"0:{int(round(2 * window))}:{step}"


def cmd_study(args) -> int:
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    scenario = _scenario(args)
    window = args.window if args.window is not None else scenario.window
    try:
        grid = LandmarkGrid.from_spec(args.landmarks or default_landmarks(window), window)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        summaries = run_study(scenario, args.reps, args.n, args.seed, grid, basis=args.basis,
                              min_cell=args.min_cell, threads=args.threads)
    write_summaries(summaries, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tdpaf",
        description="Population-attributable fractions for a time-dependent exposure "
                    "with competing risks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a cohort file")
    p.add_argument("--scenario", type=int)
    p.add_argument("--params", help="key=value scenario file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--stream", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate PAFs from a cohort file")
    p.add_argument("--input", required=True)
    p.add_argument("--estimand", choices=("crude", "paf_o", "paf_c", "paf_lm", "all"),
                   default="all")
    p.add_argument("--window", type=float)
    p.add_argument("--landmarks", help="A:B:STEP, inclusive")
    p.add_argument("--covariates", help="comma-separated covariate columns")
    p.add_argument("--bootstrap", type=int, default=0, help="bootstrap replicates (0 = none)")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--basis", default="quadratic",
                   choices=("constant", "linear", "quadratic", "saturated"))
    p.add_argument("--min-cell", type=float, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("study", help="replicated Monte-Carlo study")
    p.add_argument("--scenario", type=int)
    p.add_argument("--params")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--window", type=float)
    p.add_argument("--landmarks")
    p.add_argument("--basis", default="quadratic",
                   choices=("constant", "linear", "quadratic", "saturated"))
    p.add_argument("--min-cell", type=float, default=5)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"tdpaf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, BootstrapError) as exc:
        print(f"tdpaf: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InfeasibleGridError as exc:
        print(f"tdpaf: data error: {exc}", file=sys.stderr)
        for l, why in exc.skipped:
            print(f"  skipped landmark {l:g}: {why}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError, LookupError) as exc:
        print(f"tdpaf: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
