"""Command line entry point ``mlsc``.

Subcommands: ``metrics``, ``sample``, ``pursue``, ``oracle`` and
``experiment``.  File formats are those of :mod:`mlsc.io`.  Exit status
is 2 when a signal cannot be sampled (degenerate configuration).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .experiment import ExperimentConfig, emit_report, run_experiment
from .metrics import metrics_report
from .model import RepresentationStack
from .oracle import (
    monte_carlo_errors,
    oracle_constants,
    oracle_holistic,
    oracle_layered,
    oracle_projection,
)
from .pursuit import SolverParams, holistic_pursuit, layered_pursuit, projection_pursuit
from .sampler import DegenerateModelError, NoiseSpec, SamplerConfig, add_noise, sample_model, sample_signal

EXIT_DEGENERATE = 2


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _emit(obj, out):
    if out:
        io.write_json(out, obj)
    else:
        print(json.dumps(obj, indent=2, default=io._jsonable))


def _load_stack(directory, depth):
    d = Path(directory)
    gammas = tuple(io.read_vector(d / f"gamma{i}.csv") for i in range(1, depth + 1))
    return RepresentationStack(io.read_vector(d / "x.csv"), gammas)


def cmd_metrics(args):
    model = io.load_model(args.model)
    stack = _load_stack(args.signal, model.depth) if args.signal else None
    rep = metrics_report(model, stack, eps=args.eps, max_order=args.max_order, mode=args.mode, rng=args.seed)
    _emit(rep, args.out)
    return 0


def cmd_sample(args):
    if (args.snr_db is None) == (args.sigma is None):
        args.sigma = 0.0 if args.snr_db is None else None
    rng = np.random.default_rng(args.seed)
    if args.model:
        model = io.load_model(args.model)
        dims = model.dims
    else:
        dims = tuple(_ints(args.dims))
    cfg = SamplerConfig(dims, args.sparsity, tuple(_ints(args.cosparsity)) if args.cosparsity else (),
                        gamma_min=args.gamma_min)
    if not args.model:
        model = sample_model(cfg, rng)
    stack, con = sample_signal(model, cfg, rng)
    y, sigma, snr = add_noise(stack.x, NoiseSpec(sigma=args.sigma, snr_db=args.snr_db), rng)
    out = Path(args.out)
    io.save_model(model, out / "model")
    io.write_vector(out / "x.csv", stack.x)
    io.write_vector(out / "y.csv", y)
    for i, g in enumerate(stack.gammas, start=1):
        io.write_vector(out / f"gamma{i}.csv", g)
    pattern = stack.pattern(1e-9)
    io.write_json(out / "signal.json", {
        "dims": list(model.dims),
        "seed": args.seed,
        "sigma": sigma,
        "snr_db_target": args.snr_db,
        "snr_db_realized": snr,
        "supports": [io.to_one_based(s) for s in pattern.supports],
        "cosupports": [io.to_one_based(c) for c in pattern.cosupports[:-1]],
        "rank": con.rank,
        "gamma_min": list(cfg.gamma_mins),
    })
    return 0


def _result_json(res, algo):
    d = {
        "algo": algo,
        "status": res.status,
        "eta": res.eta,
        "residuals": list(res.residuals),
        "log": [
            {"layer": r.layer, "row": r.row + 1, "residual": r.residual, "eta": r.eta,
             "violation": r.violation, "dof": r.dof}
            for r in res.log
        ],
    }
    if res.cosupports is not None:
        d["cosupports"] = [io.to_one_based(c) for c in res.cosupports]
    if res.support_recovered is not None:
        d["support_recovered"] = res.support_recovered
    return d


def cmd_pursue(args):
    model = io.load_model(args.model)
    y = io.read_vector(args.y)
    truth = _load_stack(args.truth, model.depth) if args.truth else None
    params = SolverParams(rho=args.rho, max_iters=args.max_iters)
    algo = args.algo
    if algo == "layered-thr":
        res = layered_pursuit(model, y, "thresholding", sparsities=_ints(args.sparsity), truth=truth)
    elif algo == "layered-bp":
        res = layered_pursuit(model, y, "bp", budgets=_floats(args.lambdas), params=params, truth=truth)
    elif algo == "projection-thr":
        res = projection_pursuit(model, y, "thresholding", sparsity=_ints(args.sparsity)[-1], truth=truth)
    elif algo == "projection-bp":
        budget = _floats(args.lambdas)[-1] if args.lambdas else None
        res = projection_pursuit(model, y, "bp", budget=budget, eta=args.eta,
                                 sigma=None if budget is not None or args.eta is not None else args.sigma,
                                 params=params, truth=truth)
    else:
        sigma = None if args.eta is not None else args.sigma
        res = holistic_pursuit(model, y, _ints(args.cosparsity), eta=args.eta, sigma=sigma, params=params,
                               truth=truth, eta_schedule=args.eta_schedule)
    out = Path(args.out)
    for i, g in enumerate(res.gammas, start=1):
        io.write_vector(out / f"gamma{i}_hat.csv", g)
    io.write_json(out / "result.json", _result_json(res, algo))
    return 0


def cmd_oracle(args):
    model = io.load_model(args.model)
    y = io.read_vector(args.y)
    info = json.loads(Path(args.supports).read_text(encoding="utf-8"))
    supports = [io.from_one_based(s) for s in info["supports"]]
    constants = None
    if not args.no_bounds:
        constants = oracle_constants(model, [len(s) for s in supports], mode=args.mode, rng=args.seed)
    if args.approach == "layered":
        est = oracle_layered(model, y, supports, args.sigma, constants)
    elif args.approach == "projection":
        est = oracle_projection(model, y, supports, args.sigma, constants)
    else:
        cos = [io.from_one_based(c) for c in info["cosupports"]] if "cosupports" in info else None
        est = oracle_holistic(model, y, supports, cos, args.sigma, constants)
    rep = {"approach": args.approach, "sigma": args.sigma, "analytic": list(est.expected)}
    if est.bounds is not None:
        rep["bounds"] = [list(b) for b in est.bounds]
        rep["constants_sampled"] = constants.sampled
    if args.mc and args.signal:
        stack = _load_stack(args.signal, model.depth)
        rng = np.random.default_rng(args.seed)
        rep["monte_carlo"] = []
        for U, g in zip(est.estimators, stack.gammas):
            err = np.sum(monte_carlo_errors(U, stack.x, g, args.sigma, args.mc, rng) ** 2, axis=1)
            rep["monte_carlo"].append({"mean": float(err.mean()), "stderr": float(err.std(ddof=1) / np.sqrt(err.size))})
    out = Path(args.out) if args.out else None
    if out:
        for i, g in enumerate(est.gammas, start=1):
            io.write_vector(out / f"gamma{i}_oracle.csv", g)
        io.write_json(out / "oracle.json", rep)
    else:
        _emit(rep, None)
    return 0


def cmd_experiment(args):
    cfg = ExperimentConfig.from_json(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.trials is not None:
        cfg.trials = args.trials

    def progress(done, total):
        if done % max(1, total // 20) == 0 or done == total:
            print(f"{done}/{total} trials", file=sys.stderr)

    records = run_experiment(cfg, workers=args.workers, progress=None if args.quiet else progress)
    summary = emit_report(records, cfg, args.out, figures=not args.no_figures)
    for r in summary["ratios"]:
        print(f"ell1={r['ell1']} s2={r['s2']} snr={r['snr_db']}: holistic/projection = {r['ratio']:.3f} "
              f"+- {r['stderr']:.3f}")
    if summary["degenerate_cells"]:
        print(f"degenerate cells: {summary['degenerate_cells']}", file=sys.stderr)
        return EXIT_DEGENERATE
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mlsc", description="Multi-layer sparse coding toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("metrics", help="coherence, spark, RIP constants and condition checks")
    m.add_argument("--model", required=True)
    m.add_argument("--signal", help="directory written by 'sample' for stack-dependent checks")
    m.add_argument("--eps", type=float)
    m.add_argument("--max-order", type=int, default=4)
    m.add_argument("--mode", choices=["exhaustive", "sampled"], default="exhaustive")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out")
    m.set_defaults(func=cmd_metrics)

    s = sub.add_parser("sample", help="draw a model and a noisy signal")
    s.add_argument("--dims", default="50,100,50", help="n,m1,...,mk")
    s.add_argument("--model", help="reuse dictionaries from this directory")
    s.add_argument("--sparsity", type=int, required=True, help="deepest-layer sparsity")
    s.add_argument("--cosparsity", default="", help="mid-layer co-sparsities, comma separated")
    s.add_argument("--gamma-min", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--snr-db", type=float)
    s.add_argument("--sigma", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    q = sub.add_parser("pursue", help="run a pursuit on measurements")
    q.add_argument("--model", required=True)
    q.add_argument("--y", required=True)
    q.add_argument("--algo", required=True,
                   choices=["layered-thr", "layered-bp", "projection-thr", "projection-bp", "holistic"])
    q.add_argument("--sparsity", help="per-layer sparsities (thresholding variants)")
    q.add_argument("--lambdas", help="per-layer l1 budgets (BP variants)")
    q.add_argument("--cosparsity", help="mid-layer co-sparsities (holistic)")
    q.add_argument("--eta", type=float)
    q.add_argument("--sigma", type=float, default=0.0)
    q.add_argument("--rho", type=float, default=1.0)
    q.add_argument("--max-iters", type=int, default=5000)
    q.add_argument("--eta-schedule", choices=["every", "ends"], default="every")
    q.add_argument("--truth", help="directory written by 'sample', for support flags")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_pursue)

    o = sub.add_parser("oracle", help="known-support estimators, expected errors and bounds")
    o.add_argument("--model", required=True)
    o.add_argument("--y", required=True)
    o.add_argument("--supports", required=True, help="JSON with 1-based 'supports' (e.g. signal.json)")
    o.add_argument("--approach", choices=["layered", "projection", "holistic"], required=True)
    o.add_argument("--sigma", type=float, required=True)
    o.add_argument("--signal", help="directory with the clean stack, enables --mc")
    o.add_argument("--mc", type=int, default=0, help="Monte Carlo noise draws")
    o.add_argument("--mode", choices=["exhaustive", "sampled"], default="exhaustive")
    o.add_argument("--no-bounds", action="store_true")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle)

    e = sub.add_parser("experiment", help="Monte Carlo sweep from a JSON config")
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--seed", type=int)
    e.add_argument("--trials", type=int)
    e.add_argument("--no-figures", action="store_true")
    e.add_argument("--quiet", action="store_true")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DegenerateModelError as err:
        print(f"degenerate configuration: {err}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
