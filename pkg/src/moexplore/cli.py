"""Command-line entry point: ``moexplore <command> ...``.

Exit status is 0 on success, 1 when a check or run fails, 2 on bad input.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .bounds import bounds_report
from .experiment import (
    SWEEP_PARAMETERS,
    ablation_sweep,
    packaged_config_names,
    resolve_config,
    run_experiment,
    summary_rows,
    SUMMARY_FIELDS,
)
from .gridworld import (
    CANONICAL,
    GridSpec,
    build_model,
    calibrate_sigma2,
    gaussian,
    load_spec,
    resolve_environment,
    save_spec,
    canonical_spec,
)
from .entropy import mean_observation_function_entropy
from .plotting import emit_plot_data, read_plot_csv
from .pomdp import load_model, save_model
from .policy import SoftmaxPolicy, load_policy
from .verify import SCOPES, verify_suite

OK, FAILED, BAD_INPUT = 0, 1, 2


def _override(config, args):
    changes = {}
    if getattr(args, "jobs", None):
        changes["jobs"] = args.jobs
    if getattr(args, "master_seed", None) is not None:
        changes["master_seed"] = args.master_seed
    if getattr(args, "runs", None):
        changes["num_runs"] = args.runs
    return replace(config, **changes) if changes else config


def cmd_run(args) -> int:
    config = _override(resolve_config(args.config), args)
    result = run_experiment(config, output_dir=args.out)
    print(",".join(SUMMARY_FIELDS))
    for row in summary_rows(result):
        print(",".join(str(v) for v in row))
    print(f"wrote {result.output_dir}")
    for f in result.failures:
        print(f"run failed: {f.algorithm} run {f.run_index} seed {f.seed}: {f.error}", file=sys.stderr)
    return FAILED if result.failures else OK


def _parse_values(text: str) -> list[float]:
    return [float(v) for v in text.replace(" ", "").split(",") if v]


def cmd_sweep(args) -> int:
    config = _override(resolve_config(args.config), args)
    sweep = ablation_sweep(config, args.param, _parse_values(args.values), output_dir=args.out)
    print("parameter,value,algorithm,final_state_entropy,half_width")
    for r in sweep.table():
        print(f"{r['parameter']},{r['value']!r},{r['algorithm']},{r['final_state_entropy']!r},{r['half_width']!r}")
    failed = [f for res in sweep.results for f in res.failures]
    for f in failed:
        print(f"run failed: {f.algorithm} run {f.run_index} seed {f.seed}: {f.error}", file=sys.stderr)
    return FAILED if failed else OK


def cmd_bounds_report(args) -> int:
    if args.model in CANONICAL or args.model.endswith(".toml"):
        _, model = resolve_environment(args.model)
    else:
        model = load_model(args.model)
    if args.policy == "uniform":
        cond = args.conditioning or "observation"
        policy = SoftmaxPolicy.uniform(model.support_size(cond), model.num_actions, cond)
    else:
        policy = load_policy(args.policy)
    report = bounds_report(model, policy, args.conditioning)
    sys.stdout.write(report.to_text())
    return FAILED if report.violations else OK


def cmd_verify(args) -> int:
    report = verify_suite(args.scope, args.seed, args.instances)
    sys.stdout.write(report.to_text(args.show))
    return OK if report.passed else FAILED


def cmd_plot(args) -> int:
    curves = read_plot_csv(args.curves)
    for path in emit_plot_data(curves, args.out, title=args.title):
        print(f"wrote {path}")
    return OK


def _layout_spec(ref: str) -> GridSpec:
    if ref in CANONICAL:
        return canonical_spec(ref)
    path = Path(ref)
    if path.suffix == ".toml":
        return load_spec(path)
    # plain ASCII map, one Gaussian region
    return GridSpec(path.read_text(encoding="utf-8"), observation={".": gaussian(1.0)}, name=path.stem)


def cmd_calibrate_sigma(args) -> int:
    spec = _layout_spec(args.layout)
    if not any(o.kind == "gaussian_manhattan" for o in spec.observation.values()):
        print("layout has no Gaussian observation region", file=sys.stderr)
        return BAD_INPUT
    sigma2 = calibrate_sigma2(spec, args.target_entropy, args.lo, args.hi)
    calibrated = spec.with_sigma2(sigma2)
    model = build_model(calibrated)
    print(f"sigma2 = {sigma2!r}")
    print(f"mean_observation_entropy = {mean_observation_function_entropy(model.observation)!r}")
    print(f"states = {model.num_states}")
    if args.write:
        save_spec(calibrated, args.write)
        print(f"wrote {args.write}")
    return OK


def cmd_export_model(args) -> int:
    _, model = resolve_environment(args.environment)
    save_model(model, args.out)
    print(f"wrote {args.out} ({model.num_states} states, {model.num_observations} observations)")
    return OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="moexplore", description="Observation-entropy exploration experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train every algorithm over all runs of a config")
    run.add_argument("config", help=f"TOML file or packaged name ({', '.join(packaged_config_names())})")
    run.add_argument("--out", help="output directory (default: the config's output_dir)")
    run.add_argument("--jobs", type=int, help="worker processes")
    run.add_argument("--runs", type=int, help="override num_runs")
    run.add_argument("--master-seed", type=int)
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="ablation over alpha, beta or sigma2")
    sw.add_argument("config")
    sw.add_argument("--param", required=True, choices=SWEEP_PARAMETERS)
    sw.add_argument("--values", required=True, help="comma separated, e.g. 0.1,0.5,0.9")
    sw.add_argument("--out")
    sw.add_argument("--jobs", type=int)
    sw.add_argument("--runs", type=int)
    sw.add_argument("--master-seed", type=int)
    sw.set_defaults(func=cmd_sweep)

    br = sub.add_parser("bounds-report", help="entropy gap and bounds for one model and policy")
    br.add_argument("model", help="model file, GridSpec TOML or canonical environment name")
    br.add_argument("policy", help="policy file, or 'uniform'")
    br.add_argument("--conditioning", choices=("observation", "latent_state"))
    br.set_defaults(func=cmd_bounds_report)

    ve = sub.add_parser("verify", help="randomised oracle checks")
    ve.add_argument("scope", choices=SCOPES)
    ve.add_argument("--instances", type=int, help="instances per suite (default depends on suite)")
    ve.add_argument("--seed", type=int, default=0)
    ve.add_argument("--show", type=int, default=10, help="failures listed per check")
    ve.set_defaults(func=cmd_verify)

    pl = sub.add_parser("plot", help="render SVG charts from a curves CSV")
    pl.add_argument("curves")
    pl.add_argument("--out", required=True)
    pl.add_argument("--title")
    pl.set_defaults(func=cmd_plot)

    cs = sub.add_parser("calibrate-sigma", help="sigma2 hitting a target mean observation entropy")
    cs.add_argument("layout", help="canonical name, GridSpec TOML or ASCII map file")
    cs.add_argument("--target-entropy", type=float, required=True)
    cs.add_argument("--lo", type=float, default=1e-3)
    cs.add_argument("--hi", type=float, default=1e4)
    cs.add_argument("--write", help="save the calibrated GridSpec here")
    cs.set_defaults(func=cmd_calibrate_sigma)

    ex = sub.add_parser("export-model", help="write an environment in the model text format")
    ex.add_argument("environment")
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=cmd_export_model)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError, OSError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
