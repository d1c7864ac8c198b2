"""Command-line interface: ``gamchain <subcommand> ...``.

Exit codes: 0 success, 1 input or usage error, 2 EM did not converge.
Reports go to ``--out``, else ``$GAMCHAIN_REPORT_DIR``, else ``./reports``.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DomainError, GamChainError, InputError, NumericalError
from .fitting import ENGINES, FitConfig

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2
REPORT_DIR_ENV = "GAMCHAIN_REPORT_DIR"

# config-file keys that are not FitConfig fields
_EXTRA_KEYS = {"alpha"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def report_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(REPORT_DIR_ENV) or "reports")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _coerce(key: str, raw: str):
    defaults = FitConfig()
    if key == "alpha":
        return float(raw)
    current = getattr(defaults, key)
    if isinstance(current, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if key == "trajectories":
        return None if raw.strip().lower() in ("", "none") else int(raw)
    if isinstance(current, int):
        return int(raw)
    return float(raw)


def read_config_file(path: str | Path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: config file not found")
    allowed = set(FitConfig.field_names()) | _EXTRA_KEYS
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}: line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in allowed:
            raise InputError(f"{path}: line {lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError as exc:
            raise InputError(f"{path}: line {lineno}: {exc}") from None
    return out


_FLAG_TO_KEY = {
    "seed": "seed", "particles": "particles", "max_rounds": "max_rounds", "tol_a": "tol_a",
    "paper_literal": "paper_literal", "sweeps": "sweeps", "damping": "damping",
    "trajectories": "trajectories", "alpha": "alpha",
}


def resolve_config(args) -> tuple[FitConfig, float]:
    """Merge defaults, config file and flags (flags win)."""
    from .evaluation import DEFAULT_ALPHA

    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for attr, key in _FLAG_TO_KEY.items():
        v = getattr(args, attr, None)
        if v is not None and v is not False:
            values[key] = v
    alpha = values.pop("alpha", DEFAULT_ALPHA)
    try:
        return FitConfig(**values), alpha
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None


def _add_fit_flags(p):
    p.add_argument("--engine", choices=ENGINES, required=True, help="c1, c2, c3 or c4")
    p.add_argument("--seed", type=int)
    p.add_argument("--particles", type=int)
    p.add_argument("--trajectories", type=int)
    p.add_argument("--max-rounds", dest="max_rounds", type=int)
    p.add_argument("--tol-a", dest="tol_a", type=float)
    p.add_argument("--sweeps", type=int)
    p.add_argument("--damping", type=float)
    p.add_argument("--paper-literal", dest="paper_literal", action="store_true")
    p.add_argument("--config", help="flat key=value file")
    p.add_argument("--out", help="report directory")


def _stem(series_id: str, engine: str) -> str:
    return f"{series_id}.{engine}"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    from .evaluation import fit_posterior
    from .ingest import load_series
    from .storage import write_json, write_posterior_csv

    config, _ = resolve_config(args)
    series = load_series(args.input)
    report, posterior = fit_posterior(series, args.engine, config)
    out = report_dir(args.out)
    stem = _stem(series.instrument_id, args.engine)
    payload = report.to_dict()
    payload["instrument_id"] = series.instrument_id
    payload["length"] = len(series)
    payload["config"] = {k: getattr(config, k) for k in FitConfig.field_names()}
    write_json(payload, out / f"{stem}.report.json")
    write_json(report.timing_dict(), out / f"{stem}.timing.json")
    write_posterior_csv(posterior, out / f"{stem}.posterior.csv")
    print(f"{args.engine} {series.instrument_id}: {report.parameter_name}={report.parameter:.6g} "
          f"after {report.iterations} rounds, converged={report.converged}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_simulate(args) -> int:
    from .simulate import simulate, write_dataset

    if args.model == "gam":
        if args.a is None:
            raise UsageError("simulate --model gam needs --a")
        parameter = args.a
    else:
        if args.s2 is None:
            raise UsageError("simulate --model logn needs --s2")
        parameter = args.s2
    dataset = simulate(args.model, parameter, args.t, args.seed, u0=args.u0)
    csv_path, sidecar = write_dataset(dataset, args.output)
    print(f"wrote {csv_path} and {sidecar}")
    return EXIT_OK


def cmd_residuals(args) -> int:
    from .evaluation import qq_pairs, residual_report
    from .ingest import load_series
    from .numerics import default_rng
    from .storage import read_posterior_csv, write_json

    _, alpha = resolve_config(args)
    series = load_series(args.input)
    out = report_dir(args.out)
    stem = _stem(series.instrument_id, args.engine)
    posterior = read_posterior_csv(out / f"{stem}.posterior.csv")
    seed = args.seed if args.seed is not None else 0
    rng = default_rng(seed)
    from .evaluation import draw_residuals, ks_test_standard_normal

    e = draw_residuals(posterior, series, rng)
    rep = ks_test_standard_normal(e, alpha, instrument_id=series.instrument_id, engine=args.engine)
    write_json(rep.to_dict() | {"alpha": alpha, "seed": seed}, out / f"{stem}.residuals.json")
    with (out / f"{stem}.qq.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theoretical", "empirical"])
        for a, b in qq_pairs(e):
            w.writerow([repr(float(a)), repr(float(b))])
    print(f"KS D={rep.ks_statistic:.4f} p={rep.p_value:.4g} passed={rep.passed}")
    return EXIT_OK


def parse_grid(text: str) -> np.ndarray:
    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise UsageError(f"grid must look like LO:HI:N, got {text!r}") from None
    if not (0 < lo <= hi) or n < 1:
        raise UsageError("grid needs 0 < LO <= HI and N >= 1")
    return np.linspace(lo, hi, n)


def cmd_moments(args) -> int:
    from .model import GamChainParams, increment_kurtosis, increment_variance, marginal_return_kurtosis

    grid = parse_grid(args.a_grid)
    if args.log_spaced:
        grid = np.geomspace(grid[0], grid[-1], grid.size)
    path = Path(args.output) if args.output else report_dir(args.out) / "moments.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["A", "V", "K", "return_kurtosis"])
        for a in grid:
            p = GamChainParams(float(a))
            rk = marginal_return_kurtosis(p) if a > 2 else float("nan")
            w.writerow([repr(float(a)), repr(increment_variance(p)), repr(increment_kurtosis(p)), repr(rk)])
    print(f"wrote {path} ({grid.size} rows)")
    return EXIT_OK


def cmd_stats(args) -> int:
    from .evaluation import series_stats
    from .ingest import load_series
    from .storage import write_json

    series = load_series(args.input)
    stats = series_stats(series)
    path = write_json(stats.to_dict() | {"instrument_id": series.instrument_id},
                      report_dir(args.out) / f"{series.instrument_id}.stats.json")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import run_benchmark, write_bench_csv
    from .ingest import load_series

    engines = [e.strip() for e in args.engines.split(",") if e.strip()]
    lengths = [int(float(x)) for x in args.lengths.split(",")]
    series = load_series(args.input) if args.input else None
    reports = run_benchmark(engines, lengths, args.particles, iterations=args.iterations,
                            repetitions=args.repetitions, series=series, seed=args.seed or 0)
    path = write_bench_csv(reports, Path(args.output) if args.output else report_dir(args.out) / "bench.csv")
    for r in reports:
        print(f"{r.engine} T={r.sequence_length}: estep {r.estep_seconds:.4f}s total {r.total_seconds:.4f}s")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_time_functions(args) -> int:
    from .numerics import TIMED_FUNCTIONS, time_function

    path = Path(args.output) if args.output else report_dir(args.out) / "function_times.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["function", "seconds_per_call", "evaluations"])
        for name in TIMED_FUNCTIONS:
            rec = time_function(name, args.evaluations)
            w.writerow([name, repr(rec.mean_eval_time), rec.sample_count])
            print(f"{name:10s} {rec.mean_eval_time * 1e9:8.2f} ns")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_derivations(args) -> int:
    from .derivations import render_markdown, run_all

    checks = run_all()
    text = render_markdown(checks)
    path = Path(args.output) if args.output else report_dir(args.out) / "derivations.md"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    print(text)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_INPUT


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gamchain", description="Gamma-chain stochastic volatility toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit one series with an engine")
    p.add_argument("input", help="bars CSV (timestamp,close,volume) or returns CSV (timestamp,return)")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="simulate a synthetic series")
    p.add_argument("--model", choices=("gam", "logn"), default="gam")
    p.add_argument("--a", type=float, help="shape A (gam)")
    p.add_argument("--s2", type=float, help="step variance S^2 (logn)")
    p.add_argument("--t", type=int, required=True, help="number of returns")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--u0", type=float, default=1.0)
    p.add_argument("--output", required=True, help="returns CSV path; a .json sidecar is written next to it")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("residuals", help="KS test of residuals from a previous fit")
    p.add_argument("input")
    p.add_argument("--engine", choices=ENGINES, required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_residuals)

    p = sub.add_parser("moments", help="V(A) and K(A) table")
    p.add_argument("--a-grid", dest="a_grid", default="0.1:10:50", help="LO:HI:N")
    p.add_argument("--log-spaced", action="store_true")
    p.add_argument("--output")
    p.add_argument("--out")
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("stats", help="summary statistics of a series")
    p.add_argument("input")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("bench", help="fixed-iteration timing of the engines")
    p.add_argument("--engines", default="c1,c2,c3,c4")
    p.add_argument("--lengths", default="10000,20000,40000")
    p.add_argument("--particles", type=int, default=2)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--input")
    p.add_argument("--seed", type=int)
    p.add_argument("--output")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("time-functions", help="per-call time of the E-step building blocks")
    p.add_argument("--evaluations", type=int, default=1_000_000)
    p.add_argument("--output")
    p.add_argument("--out")
    p.set_defaults(func=cmd_time_functions)

    p = sub.add_parser("derivations", help="run the derivation checks")
    p.add_argument("--output")
    p.add_argument("--out")
    p.set_defaults(func=cmd_derivations)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_INPUT
    except (InputError, DomainError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except GamChainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
