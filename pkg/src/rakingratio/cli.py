"""Command-line entry point ``rrx``.

Exit status: 0 on success, 1 on a domain or input error, 2 on a usage error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from itertools import cycle, islice

import numpy as np

from . import appendix
from .gaussian_limit import GaussianLimitModel, is_psd
from .io import (
    InputError,
    Model,
    atomic_write,
    csv_text,
    model_from_dict,
    read_model,
    read_table_csv,
    read_targets,
    to_jsonable,
)
from .montecarlo import (
    A3_COVARIANCE,
    A3_THRESHOLDS,
    BivariateNormalGenerator,
    DiscreteGenerator,
    ExperimentConfig,
    berry_esseen_check,
    ecdf_experiment,
    run_raking_experiment,
)
from .raking import rake_until_converged
from .two_marginal import (
    TwoMarginalModel,
    covariance_decay,
    envelope_constant,
    g_infinity_covariance,
    gn_two_marginal_covariance,
    limit_s,
    s_decay,
    s_matrices_finite,
    spectral_gap,
)


class UsageError(Exception):
    pass


def _emit(payload, path, fmt, csv_rows=None):
    """Write a report as JSON or CSV to ``path``, or stdout when ``path`` is None."""
    if fmt == "csv":
        if csv_rows is None:
            raise UsageError("this report has no CSV form; use --format json")
        text = csv_text(*csv_rows)
    else:
        text = json.dumps(to_jsonable(payload), indent=2) + "\n"
    if path:
        atomic_write(path, text)
    else:
        sys.stdout.write(text)


def _seed(args, config=None) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    if config and "seed" in config:
        return int(config["seed"])
    env = os.environ.get("RRX_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"RRX_SEED must be an integer, got {env!r}") from None
    return 0


def cmd_rake(args):
    grid = read_table_csv(args.table)
    targets = read_targets(args.targets, grid)
    result = rake_until_converged(grid, targets, tol=args.tol, max_iters=args.max_iters)
    names = [f"{grid.cell_labels(c)[0]}:{grid.cell_labels(c)[1]}" for c in range(grid.n_cells)]
    part_names = [t.partition.name for t in targets]
    header = ["N", *names, *(f"residual_{p}" for p in part_names), "kl_increment"]
    rows = []
    for st in result.trace:
        kl = st.kl_history[-1] if st.kl_history else 0.0
        rows.append([st.iteration, *map(float, st.mass),
                     *(float(st.margin_residuals[p]) for p in part_names), float(kl)])
    if args.trace:
        if args.format == "csv":
            atomic_write(args.trace, csv_text(header, rows))
        else:
            atomic_write(args.trace, json.dumps(
                [dict(zip(header, r)) for r in rows], indent=2) + "\n")
    final = result.state.measure.table()
    print(f"iterations: {result.iterations}  converged: {result.converged}")
    print("        " + "  ".join(f"{c:>6}" for c in grid.partitions[1].labels))
    for label, row in zip(grid.partitions[0].labels, final):
        print(f"{label:>6}  " + "  ".join(f"{v:6.3f}" for v in row))
    if not result.converged:
        worst = max(result.state.margin_residuals.values())
        print(f"rrx: no convergence after {args.max_iters} steps "
              f"(max residual {worst:.3g})", file=sys.stderr)
        return 1
    return 0


def _schedule(model: Model, text: str | None, n_max: int) -> list[int]:
    grid = model.grid
    if text:
        names = [s.strip() for s in text.split(",") if s.strip()]
    else:
        names = [p.name for p in grid.partitions]
    idx = [grid.partition_index(s) for s in names]
    if len(idx) < n_max:
        idx = list(islice(cycle(idx), n_max))
    return idx


def cmd_limit_cov(args):
    model = read_model(args.model)
    funcs = model.select(args.functions)
    sched = _schedule(model, args.schedule, args.n_max)
    glm = GaussianLimitModel(model.grid, sched)
    sigma0 = glm.covariance_matrix(funcs, 0)
    per_n = []
    for N in range(args.n_max + 1):
        sigma = glm.covariance_matrix(funcs, N)
        var = np.diag(sigma)
        per_n.append({
            "N": N,
            "partition": None if N == 0 else model.grid.partitions[sched[N - 1]].name,
            "variance": dict(zip([f.name for f in funcs], var)),
            "reduction": dict(zip([f.name for f in funcs], np.diag(sigma0) - var)),
            "risk_ratio": {f.name: (v / s if s > 0 else None)
                           for f, v, s in zip(funcs, var, np.diag(sigma0))},
            "covariance": sigma,
            "psd_reduction": is_psd(sigma0 - sigma),
        })
    rows = [[r["N"], f.name, r["variance"][f.name], r["reduction"][f.name],
             r["risk_ratio"][f.name] if r["risk_ratio"][f.name] is not None else "",
             int(r["psd_reduction"])] for r in per_n for f in funcs]
    _emit({"schedule": [model.grid.partitions[k].name for k in sched], "results": per_n},
          args.out, args.format,
          (["N", "function", "variance", "reduction", "risk_ratio", "psd"], rows))
    return 0


def cmd_two_margin(args):
    model = read_model(args.model)
    funcs = model.select(args.functions)
    a, b = (args.partitions.split(",") if args.partitions else (0, 1))
    tm = TwoMarginalModel.from_grid(model.grid, a, b)
    lam = spectral_gap(tm)
    out = {"lambda": lam, "functions": {}}
    rows = []
    for f in funcs:
        traj = [s_matrices_finite(tm, f, N) for N in range(args.n_max + 1)]
        lim = limit_s(tm, f)
        cov_fit = covariance_decay(tm, f, f, n_max=args.n_max)
        var_inf = g_infinity_covariance(tm, f, f)
        out["functions"][f.name] = {
            "s_trajectory": [s._asdict() for s in traj],
            "s_limit": lim._asdict(),
            "s_decay_rate": s_decay(tm, f, n_max=args.n_max).rate,
            "g_inf_variance": var_inf,
            "variance_by_N": [gn_two_marginal_covariance(tm, f, f, N)
                              for N in range(args.n_max + 1)],
            "covariance_decay": {
                "rate": cov_fit.rate,
                "constant": cov_fit.constant,
                "r2": cov_fit.r2,
                "envelope_constant": envelope_constant(tm, cov_fit),
            },
        }
        rows += [[N, f.name, v] for N, v in enumerate(out["functions"][f.name]["variance_by_N"])]
        rows.append(["inf", f.name, var_inf])
    _emit(out, args.out, args.format, (["N", "function", "variance"], rows))
    return 0


def _config_from_json(data: dict, args) -> ExperimentConfig:
    seed = _seed(args, data)
    threads = args.threads or int(data.get("threads", 1))
    kind = data.get("generator", "discrete")
    if kind == "bivariate_normal":
        gen = BivariateNormalGenerator(
            cov=tuple(map(tuple, data.get("cov", A3_COVARIANCE))),
            thresholds=tuple(data.get("thresholds", A3_THRESHOLDS)),
        )
        return ExperimentConfig(gen, n=int(data["n"]), reps=int(data["reps"]), seed=seed,
                                threads=threads, steps=int(data.get("steps", 10)))
    if kind != "discrete":
        raise UsageError(f"unknown generator {kind!r}")
    model_spec = data["model"]
    if isinstance(model_spec, str):
        base = os.path.dirname(os.path.abspath(args.config))
        model = read_model(os.path.join(base, model_spec))
    else:
        model = model_from_dict(model_spec)
    funcs = model.select(data.get("functions", "all"))
    sched = [model.grid.partition_index(s) for s in data["schedule"]]
    return ExperimentConfig(DiscreteGenerator(model.grid, funcs), n=int(data["n"]),
                            reps=int(data["reps"]), schedule=sched, functions=funcs,
                            seed=seed, threads=threads)


def cmd_simulate(args):
    with open(args.config) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.config}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        config = _config_from_json(data, args)
    except KeyError as exc:
        raise InputError(f"{args.config}: missing field {exc}") from exc
    if isinstance(config.generator, BivariateNormalGenerator):
        report = ecdf_experiment(config)
        payload = {"config": data, "seed": config.seed, **report.to_dict()}
        rows = [[z, key, v] for z in report.D for key, v in report.D[z].items()]
        _emit(payload, args.out, args.format, (["coordinate", "N", "D"], rows))
        return 0
    report = run_raking_experiment(config)
    payload = {"config": data, **report.to_dict()}
    ks = {}
    for N in range(len(config.schedule) + 1):
        for f in config.functions:
            try:
                ks[f"{f.name}@{N}"] = berry_esseen_check(config, f, N, report=report)
            except ValueError:
                ks[f"{f.name}@{N}"] = None
    payload["ks_distance"] = ks
    rows = []
    for N in range(report.values.shape[1]):
        for i, name in enumerate(report.functions):
            rows.append([N, name, report.bias[N, i], report.bias_se[N, i],
                         report.ncov[N, i, i], report.nvar_se[N, i], report.theory[N, i, i]])
    _emit(payload, args.out, args.format,
          (["N", "function", "bias", "bias_se", "n_var", "n_var_se", "theory_var"], rows))
    return 0


def cmd_verify_appendix(args):
    if args.which == "a1":
        res = appendix.verify_a1()
        for N, table in res["tables"].items():
            print(f"N={N}  max |computed - printed| = {res['max_abs_diff'][N]:.4f}")
            for row in table:
                print("   " + "  ".join(f"{v:.3f}" for v in row))
        print(f"converged after {res['iterations']} iterations (tol 5e-4)")
        return 0
    if args.which == "a2":
        res = appendix.verify_a2()
        print("N  variance  reduction  published")
        for N, v in res["variances"].items():
            red = res["reductions"].get(N, 0.0)
            pub = res["published_reductions"].get(N)
            print(f"{N}  {v:.6f}  {red:.3f}      {'' if pub is None else f'{pub:.3f}'}")
        for name, ok in res["orderings"].items():
            print(f"{name}: {'yes' if ok else 'no'}")
        return 0
    rep = appendix.verify_a3(reps=args.reps, seed=_seed(args), threads=args.threads or 1)
    print(f"reps kept {rep.reps - rep.dropped}/{rep.reps}")
    for z in ("X", "Y"):
        pub = appendix.A3_PUBLISHED[z]
        print(f"{z}: D0 {rep.D[z]['0']:.3f} ({pub['D0']})  D10 {rep.D[z]['10']:.3f} "
              f"({pub['D10']})  Dinf {rep.D[z]['inf']:.3f} ({pub['Dinf']})  "
              f"p10 {rep.p[z]['10']:.3f} ({pub['p10']})  pinf {rep.p[z]['inf']:.3f} "
              f"({pub['pinf']})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rrx", description="Raking-ratio toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_format(p):
        p.add_argument("--format", choices=("json", "csv"), default="json")

    p = sub.add_parser("rake", help="rake a two-way table to target margins")
    p.add_argument("--table", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--trace")
    p.add_argument("--format", choices=("json", "csv"), default="csv")
    p.set_defaults(func=cmd_rake)

    p = sub.add_parser("limit-cov", help="covariance of the raked Gaussian limit")
    p.add_argument("--model", required=True)
    p.add_argument("--schedule")
    p.add_argument("--functions", default="all")
    p.add_argument("--n-max", type=int, default=6)
    p.add_argument("--out")
    add_format(p)
    p.set_defaults(func=cmd_limit_cov)

    p = sub.add_parser("two-margin", help="two-partition limits and spectral gap")
    p.add_argument("--model", required=True)
    p.add_argument("--functions", default="all")
    p.add_argument("--partitions")
    p.add_argument("--n-max", type=int, default=100)
    p.add_argument("--out")
    add_format(p)
    p.set_defaults(func=cmd_two_margin)

    p = sub.add_parser("simulate", help="Monte Carlo raking experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out")
    add_format(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify-appendix", help="re-run the worked examples")
    p.add_argument("--which", choices=("a1", "a2", "a3"), required=True)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_verify_appendix)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"rrx: usage error: {exc}", file=sys.stderr)
        return 2
    except (InputError, OSError) as exc:
        print(f"rrx: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, RuntimeError, ZeroDivisionError) as exc:
        print(f"rrx: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
