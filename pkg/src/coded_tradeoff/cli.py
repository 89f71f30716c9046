"""Command-line entry point: ``coded-tradeoff <verb> [flags]``.

Exit codes: 0 ok, 1 validation error, 2 check mismatch / failed verification,
3 internal consistency failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import analysis
from .codec import (DEFAULT_SUBSET_CAP, ParamError, PlanError, SchemeParams, StoragePlan,
                    as_fraction, build_storage_plan, verify_decodability)
from .gf import DEFAULT_W, FieldError
from .shuffle import ShuffleConsistencyError
from .sim import MONTE_CARLO, SINGLE, SimConfig, SimulationError, run
from .stragglers import LatencyModel

EXIT_OK, EXIT_VALIDATION, EXIT_MISMATCH, EXIT_INTERNAL = 0, 1, 2, 3
TRIAL_COLUMNS = ("trial", "Q", "makespan", "load", "correct", "coded_symbols", "uncoded_symbols", "strategy")

PRESETS = {
    "sec4-example": {
        "verb": "simulate",
        "params": dict(K=6, q=4, mu="1/2", m=20, n=4, N=12),
        "expect": {"load": Fraction(21, 5), "coded_symbols": 36, "uncoded_symbols": 48},
    },
    "min-bandwidth-example": {
        "verb": "simulate",
        "params": dict(K=4, q=4, mu="1/2", m=12, n=4, N=4),
        "expect": {"load": Fraction(1), "D": Fraction(37, 6)},
    },
    "min-latency-example": {
        "verb": "simulate",
        "params": dict(K=4, q=2, mu="1/2", m=12, n=4, N=4),
        "expect": {"load": Fraction(2), "D": Fraction(19, 6)},
    },
    "fig1": {
        "verb": "tradeoff",
        "params": dict(K=14, mu="1/2", N=840),
        "expect": {"L_first": Fraction(420), "L_last": Fraction(60)},
    },
    "fig3": {
        "verb": "tradeoff",
        "params": dict(K=18, mu="1/3", N=180),
        "expect": {"gap_q": {3: Fraction(4, 3), 18: Fraction(8, 3)}, "max_gap_at_most": Fraction(21, 5),
                   "envelope": {120: 43, 240: 23}, "envelope_tol": 1,
                   "envelope_ratio": (1.87, 0.05)},
    },
}


class CheckFailed(Exception):
    pass


def _fraction(text: str) -> Fraction:
    try:
        return as_fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not an exact fraction: {text!r}") from exc


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


def _check_line(name: str, ok: bool, detail: str) -> bool:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}", file=sys.stderr)
    return ok


def _apply_preset(args, verb: str) -> dict:
    if not getattr(args, "preset", None):
        return {}
    preset = PRESETS[args.preset]
    if preset["verb"] != verb:
        raise ParamError("preset", f"preset {args.preset!r} is for '{preset['verb']}', not '{verb}'")
    for key, value in preset["params"].items():
        if getattr(args, key, None) is None:
            setattr(args, key, as_fraction(value) if key == "mu" else value)
    return preset["expect"]


def _require(args, *names):
    missing = [f"--{n}" for n in names if getattr(args, n, None) is None]
    if missing:
        raise ParamError("missing_flag", f"required: {' '.join(missing)}")


def _model(args) -> LatencyModel:
    default = args.mu * args.N
    if args.latency:
        return LatencyModel.parse(args.latency, default_mu_N=default)
    return LatencyModel.shifted_exponential(default)


def _params(args) -> SchemeParams:
    _require(args, "K", "q", "mu", "m", "n", "N")
    return SchemeParams(K=args.K, q=args.q, mu=args.mu, m=args.m, n=args.n, N=args.N, w=args.w)


# ---- verbs ----

def cmd_tradeoff(args) -> int:
    expect = _apply_preset(args, "tradeoff")
    _require(args, "K", "mu", "N")
    if not Fraction(1, args.K) <= args.mu <= 1:
        raise ParamError("storage_range", f"need 1/K <= mu <= 1, got mu={args.mu}, K={args.K}")
    curve = analysis.tradeoff_curve(args.K, args.mu, args.N, _model(args))
    if args.format == "json":
        text = json.dumps(analysis.curve_to_dict(curve, args.precision, args.rational), indent=1)
    else:
        text = analysis.curve_to_csv(curve, args.precision, args.rational)
    _emit(text, args.out)
    if args.check:
        return _check_tradeoff(curve, expect)
    return EXIT_OK


def _check_tradeoff(curve, expect) -> int:
    if not expect:
        raise ParamError("check", "--check needs a --preset with reference values")
    ok = True
    by_q = {p.q: p for p in curve.points}
    if "L_first" in expect:
        ok &= _check_line("min-latency endpoint load", curve.points[0].L_ach == expect["L_first"],
                          f"{curve.points[0].L_ach} vs {expect['L_first']}")
        ok &= _check_line("max-latency endpoint load", curve.points[-1].L_ach == expect["L_last"],
                          f"{curve.points[-1].L_ach} vs {expect['L_last']}")
    for q, g in expect.get("gap_q", {}).items():
        ok &= _check_line(f"gap at q={q}", by_q[q].gap == g, f"{by_q[q].gap} vs {g}")
    if "max_gap_at_most" in expect:
        ok &= _check_line("max gap", curve.max_gap <= expect["max_gap_at_most"],
                          f"{float(curve.max_gap):.4f} <= {float(expect['max_gap_at_most'])}")
    env = {}
    for d, ref in expect.get("envelope", {}).items():
        env[d] = float(curve.envelope_ach(Fraction(d)))
        ok &= _check_line(f"envelope at D={d}", abs(env[d] - ref) <= expect["envelope_tol"],
                          f"{env[d]:.3f} vs {ref}")
    if "envelope_ratio" in expect:
        target, tol = expect["envelope_ratio"]
        lo, hi = sorted(env)
        ratio = env[lo] / env[hi]
        ok &= _check_line("envelope drop ratio", abs(ratio - target) <= tol, f"{ratio:.3f} vs {target}±{tol}")
    return EXIT_OK if ok else EXIT_MISMATCH


def cmd_bound(args) -> int:
    _require(args, "K", "mu", "N")
    if not Fraction(1, args.K) <= args.mu <= 1:
        raise ParamError("storage_range", f"need 1/K <= mu <= 1, got mu={args.mu}, K={args.K}")
    first = -(-args.mu.denominator // args.mu.numerator)
    qs = [args.q] if args.q is not None else list(range(first, args.K + 1))
    rows = []
    for q in qs:
        if not first <= q <= args.K:
            raise ParamError("wait_range", f"need ceil(1/mu)={first} <= q <= K={args.K}, got q={q}")
        rows.append({"q": q, "t": analysis.lower_bound_maximizer(args.K, q, args.mu),
                     "L_lb": analysis.lower_bound_load(args.K, q, args.mu, args.N),
                     "L_ach": analysis.achievable_load(args.K, q, args.mu, args.N)})
    fmt = (lambda x: str(x)) if args.rational else (lambda x: f"{float(x):.{args.precision}f}")
    if args.format == "json":
        text = json.dumps([{**r, "L_lb": fmt(r["L_lb"]), "L_ach": fmt(r["L_ach"])} for r in rows], indent=1)
    else:
        lines = ["q,t,L_lb,L_ach"] + [f"{r['q']},{'' if r['t'] is None else r['t']},{fmt(r['L_lb'])},{fmt(r['L_ach'])}"
                                      for r in rows]
        text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    return EXIT_OK


def _load_matrix(path: str) -> np.ndarray:
    if path.endswith(".npy"):
        return np.load(path)
    return np.asarray(json.loads(Path(path).read_text(encoding="utf-8")), dtype=np.int64)


def cmd_simulate(args) -> int:
    expect = _apply_preset(args, "simulate")
    params = _params(args)
    mode = MONTE_CARLO if args.trials > 1 else SINGLE
    config = SimConfig(params, _model(args), seed=args.seed, trials=args.trials, mode=mode,
                       verify=not args.no_verify, shuffle_trials=args.shuffle_trials,
                       random_mds_seed=args.random_mds)
    A = _load_matrix(args.matrix_file) if args.matrix_file else None
    report = run(config, A=A)
    _emit(_trials_csv(report) if args.format == "csv" else report.to_json(indent=1), args.out)
    if args.transcript and report.transcript is not None:
        report.transcript.write_jsonl(args.transcript)
    if args.check:
        return _check_simulation(report, expect)
    return EXIT_OK


def _trials_csv(report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRIAL_COLUMNS)
    for t in report.trials:
        d = t.to_dict()
        d["Q"] = " ".join(map(str, t.Q))
        writer.writerow(["" if d[c] is None else d[c] for c in TRIAL_COLUMNS])
    return buf.getvalue()


def _check_simulation(report, expect) -> int:
    if not expect:
        raise ParamError("check", "--check needs a --preset with reference values")
    t0 = report.trials[0]
    ok = _check_line("outputs decoded exactly", report.all_correct and t0.correct is True,
                     "all y_j == A x_j" if report.all_correct else "mismatch")
    if "load" in expect:
        ok &= _check_line("load", t0.load == expect["load"] and report.analytic_L == expect["load"],
                          f"simulated {t0.load}, analytic {report.analytic_L}, expected {expect['load']}")
    if "D" in expect:
        ok &= _check_line("latency D(q)", report.analytic_D == expect["D"],
                          f"{report.analytic_D} vs {expect['D']}")
    for key in ("coded_symbols", "uncoded_symbols"):
        if key in expect:
            got = getattr(t0, key)
            ok &= _check_line(key.replace("_", " "), got == expect[key], f"{got} vs {expect[key]}")
    return EXIT_OK if ok else EXIT_MISMATCH


def cmd_plan(args) -> int:
    plan = build_storage_plan(_params(args), args.random_mds, subset_cap=args.cap)
    _emit(plan.to_json(indent=1), args.out)
    return EXIT_OK


def cmd_verify_plan(args) -> int:
    if args.plan:
        plan = StoragePlan.load(args.plan)
    else:
        plan = build_storage_plan(_params(args), args.random_mds, subset_cap=args.cap)
    report = verify_decodability(plan, cap=args.cap, samples=args.sample, seed=args.seed)
    _emit(json.dumps(report.to_dict(), indent=1), args.out)
    return EXIT_OK if report.passed else EXIT_MISMATCH


def cmd_example(args) -> int:
    preset = PRESETS[args.name]
    argv = [preset["verb"], "--preset", args.name]
    if args.check:
        argv.append("--check")
    if args.format:
        argv += ["--format", args.format]
    return main(argv)


# ---- parser ----

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coded-tradeoff",
        description="Coded distributed matrix multiplication: latency-load tradeoff and simulation.")
    sub = parser.add_subparsers(dest="verb", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--K", type=int, help="number of servers")
    common.add_argument("--mu", type=_fraction, help="storage fraction, e.g. 1/3")
    common.add_argument("--N", type=int, help="number of input/output vectors")
    common.add_argument("--latency", help="shifted-exp:muN=<v> or table:<file.json> (default muN=mu*N)")
    common.add_argument("--out", help="write output here instead of stdout")

    table = argparse.ArgumentParser(add_help=False)
    table.add_argument("--format", choices=("csv", "json"), default="csv")
    table.add_argument("--rational", action="store_true", help="exact p/q values instead of decimals")
    table.add_argument("--precision", type=int, default=6)

    scheme = argparse.ArgumentParser(add_help=False)
    scheme.add_argument("--q", type=int, help="servers waited for in the Map phase")
    scheme.add_argument("--m", type=int, help="rows of A")
    scheme.add_argument("--n", type=int, help="columns of A")
    scheme.add_argument("--w", type=int, default=DEFAULT_W, help="field exponent, GF(2^w)")
    scheme.add_argument("--seed", type=int, default=0)
    scheme.add_argument("--random-mds", type=int, metavar="SEED",
                        help="random generator instead of Vandermonde (verified before use)")
    scheme.add_argument("--cap", type=int, default=DEFAULT_SUBSET_CAP,
                        help="exhaustive decodability check up to this many q-subsets")

    p = sub.add_parser("tradeoff", parents=[common, table], help="achievable and lower-bound curves")
    p.add_argument("--preset", choices=[k for k, v in PRESETS.items() if v["verb"] == "tradeoff"])
    p.add_argument("--check", action="store_true", help="compare against the preset's reference values")
    p.set_defaults(func=cmd_tradeoff)

    p = sub.add_parser("bound", parents=[common, table], help="converse bound per q")
    p.add_argument("--q", type=int)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("simulate", parents=[common, scheme], help="run Map/Shuffle/Reduce end to end")
    p.add_argument("--preset", choices=[k for k, v in PRESETS.items() if v["verb"] == "simulate"])
    p.add_argument("--check", action="store_true")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--shuffle-trials", type=int, default=None,
                   help="trials that run the data pipeline (default all)")
    p.add_argument("--no-verify", action="store_true", help="skip the reduce/compare step")
    p.add_argument("--matrix-file", help="A as .npy or JSON list of rows")
    p.add_argument("--transcript", help="write trial 0's shuffle messages as JSON lines")
    p.add_argument("--format", choices=("json", "csv"), default="json",
                   help="full JSON report, or one CSV row per trial")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plan", parents=[common, scheme], help="write a storage plan as JSON")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("verify-plan", parents=[common, scheme], help="check q-subset decodability")
    p.add_argument("plan", nargs="?", help="plan JSON file (or give scheme flags)")
    p.add_argument("--sample", type=int, help="check this many random q-subsets instead")
    p.set_defaults(func=cmd_verify_plan)

    p = sub.add_parser("example", help="reproduce a worked example")
    p.add_argument("name", choices=sorted(PRESETS))
    p.add_argument("--check", action="store_true")
    p.add_argument("--format", choices=("csv", "json"))
    p.set_defaults(func=cmd_example)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ShuffleConsistencyError, SimulationError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (PlanError, FieldError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
