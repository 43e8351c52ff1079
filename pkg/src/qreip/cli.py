"""Command-line interface: ``qreip {solve,gen,qkd,bench}``.

Exit codes: 0 optimal, 1 solver finished without an optimal status,
2 input error (bad file, bad parameters).  Errors are reported as a JSON
object on stdout.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .cones import is_interior
from .errors import BadParams, NotInterior, ParseError, QreError
from .generators import generate
from .ipm import NO_HEURISTIC, SolverOptions, Status, find_interior, initial_point, solve, solve_shifted
from .problem import BuiltModel, ResultFile, build_model, load_problem
from .qkd import load_protocol, qkd_rate
from .twophase import two_phase_solve

EXIT_OK, EXIT_NONOPTIMAL, EXIT_INPUT = 0, 1, 2

BENCH_SUITES = ("nearcorr", "twophase", "sqre", "qkd-toy")


def options_from(args) -> SolverOptions:
    kw = {"tol": args.tol}
    if args.max_iter is not None:
        kw["max_iters"] = args.max_iter
    return SolverOptions(**kw)


def start_point(built: BuiltModel, opts):
    """File-supplied point, family heuristic, phase-I search; None if all fail."""
    model = built.model
    if built.initial_point is not None:
        x = built.initial_point
        if is_interior(model, x) and (model.equalities is None or
                                      np.allclose(model.equalities[0] @ x, model.equalities[1], atol=1e-9)):
            return x
    x = initial_point(model)
    if x is not NO_HEURISTIC:
        return x
    try:
        return find_interior(model, None, opts)
    except (NotInterior, QreError):
        return None


def run_model(built: BuiltModel, opts: SolverOptions, two_phase: str = "off", fr_rounds: int = 1):
    """Solve a built model; returns (SolveResult, phase report dict)."""
    t0 = time.perf_counter()
    if two_phase != "off":
        res, rep = two_phase_solve(built.model, two_phase, opts, fr_rounds=fr_rounds)
        return res, rep.as_dict()
    x0 = start_point(built, opts)
    if x0 is None:
        res = solve_shifted(built.model, None, opts)
        return res, {"start": "shifted", "final_shift": res.shift_final, "seconds": time.perf_counter() - t0}
    return solve(built.model, x0, opts), {"start": "interior"}


def result_file(res, built: BuiltModel | None, phases, seconds, seed, extra=None) -> ResultFile:
    x = res.x if built is None else built.trim(res.x)
    return ResultFile(
        status=res.status.value, objective=float(res.objective), x=[float(v) for v in x],
        iterations=int(res.iterations), newton_steps=int(res.newton_steps), mu_final=float(res.mu_final),
        wall_seconds=float(seconds), seed=seed, phases=phases or {}, message=res.message, extra=extra or {},
    )


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text + ("" if text.endswith("\n") else "\n"), encoding="utf-8")
    else:
        sys.stdout.write(text + ("" if text.endswith("\n") else "\n"))


def _error(exc: Exception) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    loc = getattr(exc, "location", None)
    if loc:
        payload["location"] = loc
    inv = getattr(exc, "invariant", None)
    if inv:
        payload["invariant"] = inv
    sys.stdout.write(json.dumps(payload) + "\n")
    return EXIT_INPUT


def cmd_solve(args) -> int:
    built = load_problem(args.path)
    opts = options_from(args)
    t0 = time.perf_counter()
    res, phases = run_model(built, opts, args.two_phase, args.fr_rounds)
    rf = result_file(res, built, phases, time.perf_counter() - t0, args.seed)
    _emit(rf.dumps(), args.out)
    return EXIT_OK if res.status is Status.OPTIMAL else EXIT_NONOPTIMAL


def cmd_gen(args) -> int:
    params = {"n": args.n, "r": args.r, "k": args.k, "m": args.m, "M": args.M, "structure": args.structure,
              "gamma": args.gamma, "lower": args.lower}
    problem, side = generate(args.family, seed=args.seed, **params)
    if not args.out:
        _emit(json.dumps({"problem": problem, "meta": side}, indent=1), None)
        return EXIT_OK
    out = Path(args.out)
    if args.family == "sqre-pair":
        for key, data in problem.items():
            target = out.with_name(f"{out.stem}_{key}{out.suffix or '.json'}")
            target.write_text(json.dumps(data), encoding="utf-8")
    else:
        out.write_text(json.dumps(problem), encoding="utf-8")
    out.with_name(out.stem + ".meta.json").write_text(json.dumps(side, indent=1), encoding="utf-8")
    return EXIT_OK


def cmd_qkd(args) -> int:
    prob = load_protocol(args.path)
    opts = options_from(args)
    t0 = time.perf_counter()
    rate, p_opt, rep = qkd_rate(prob, opts, facial_reduction=not args.no_phase1)
    res = rep.result
    rf = result_file(res, None, {"reduction": rep.as_dict()}, time.perf_counter() - t0, args.seed,
                     extra={"rate": rate, "p_opt": p_opt, "delta_EC": prob.delta_EC, "protocol": prob.meta})
    _emit(rf.dumps(), args.out)
    return EXIT_OK if res.status is Status.OPTIMAL else EXIT_NONOPTIMAL


# -- bench ----------------------------------------------------------------------


def _bench_instances(suite, sizes, seed):
    if suite == "nearcorr":
        return [("nearcorr", dict(n=n, M="2I"), seed) for n in (sizes or [10, 25])]
    if suite == "twophase":
        pairs = sizes or [25, 50]
        return [("twophase-synth", dict(n=n, r=5), seed) for n in pairs]
    if suite == "sqre":
        return [("sqre-pair", dict(n=n), seed) for n in (sizes or [5, 10])]
    if suite == "qkd-toy":
        return [("qkd-toy", dict(q=q), seed) for q in (sizes or [0.0, 0.25, 0.5])]
    raise BadParams(f"unknown bench suite '{suite}' (choose from {', '.join(BENCH_SUITES)})")


def _bench_one(job):
    family, params, seed, opts, two_phase = job
    rows = []
    if family == "qkd-toy":
        from .qkd import toy_protocol

        prob = toy_protocol(coherence=0.5 * (1 - params["q"]))
        t0 = time.perf_counter()
        rate, p, rep = qkd_rate(prob, opts)
        rows.append({"suite": "qkd-toy", "instance": f"q={params['q']}", "n": 2, "variant": "rate",
                     "iterations": rep.iterations, "newton_steps": rep.newton_steps,
                     "seconds": round(time.perf_counter() - t0, 4), "objective": p, "status": rep.status})
        return rows
    problem, side = generate(family, seed=seed, **params)
    variants = problem.items() if family == "sqre-pair" else [("direct", problem)]
    for name, data in variants:
        built = build_model(data)
        modes = ["off", "primal"] if family == "twophase-synth" else ["off" if two_phase == "off" else two_phase]
        for mode in modes:
            t0 = time.perf_counter()
            res, _ = run_model(built, opts, mode)
            rows.append({"suite": family, "instance": json.dumps(params, sort_keys=True),
                         "n": side.get("n"), "variant": name if mode == "off" else f"two-phase:{mode}",
                         "iterations": res.iterations, "newton_steps": res.newton_steps,
                         "seconds": round(time.perf_counter() - t0, 4), "objective": res.objective,
                         "status": res.status.value})
    return rows


def cmd_bench(args) -> int:
    opts = options_from(args)
    jobs = [(f, p, s, opts, args.two_phase) for f, p, s in _bench_instances(args.suite, args.sizes, args.seed)]
    if args.jobs and args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            rows = [r for part in ex.map(_bench_one, jobs) for r in part]
    else:
        rows = [r for job in jobs for r in _bench_one(job)]
    buf = io.StringIO()
    fields = ["suite", "instance", "n", "variant", "iterations", "newton_steps", "seconds", "objective", "status"]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------


def _global_flags(p, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--tol", type=float, default=d(1e-8), help="stopping tolerance (default 1e-8)")
    p.add_argument("--max-iter", type=int, default=d(None), help="predictor iteration cap")
    p.add_argument("--two-phase", choices=["off", "primal", "dual"], default=d("off"))
    p.add_argument("--fr-rounds", type=int, default=d(1), help="facial-reduction passes")
    p.add_argument("--seed", type=int, default=d(0))
    p.add_argument("--out", default=d(None), help="output file (default stdout)")
    p.add_argument("--jobs", type=int, default=d(1), help="parallel bench instances")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qreip", description="Interior-point solver for quantum relative entropy programs")
    parser.add_argument("--version", action="version", version=f"qreip {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a problem file")
    _global_flags(p, suppress=True)
    p.add_argument("path")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("gen", help="generate an instance")
    _global_flags(p, suppress=True)
    p.add_argument("family", choices=["nearcorr", "qre-lp", "qre-kl", "twophase-synth", "sqre-pair"])
    p.add_argument("--n", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--M", choices=["2I", "higham1", "higham2"])
    p.add_argument("--structure", choices=["tridiag", "full"])
    p.add_argument("--gamma", type=float)
    p.add_argument("--lower", type=float)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("qkd", help="key rate for a protocol file")
    _global_flags(p, suppress=True)
    p.add_argument("path")
    p.add_argument("--no-phase1", action="store_true", help="skip facial reduction of rho")
    p.set_defaults(func=cmd_qkd)

    p = sub.add_parser("bench", help="run a benchmark suite, CSV output")
    _global_flags(p, suppress=True)
    p.add_argument("suite", choices=BENCH_SUITES)
    p.add_argument("--sizes", type=float, nargs="*", help="override instance sizes")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "sizes", None):
        args.sizes = [int(s) if float(s).is_integer() and args.suite != "qkd-toy" else s for s in args.sizes]
    try:
        return args.func(args)
    except (ParseError, BadParams, QreError, ValueError, OSError) as exc:
        return _error(exc)


if __name__ == "__main__":
    sys.exit(main())
