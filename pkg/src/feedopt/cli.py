"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 divergence, 4 assumption
violation.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings

from . import harness
from .analysis import PlannerInput, plan_constrained, plan_unconstrained, rate_mu
from .exceptions import AssumptionViolation, ConfigurationError, FeedoptError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_ASSUMPTION = 4

_PLAN_KEYS = {"M", "M_x", "M_g", "M_y", "alpha1", "alpha2", "alpha3", "p", "T", "epsilon",
              "kappa", "constrained", "D"}


def _add_overrides(parser):
    parser.add_argument("--outdir", help="output directory (default: the config's output_path)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--horizon", type=int)
    parser.add_argument("--replicates", type=int)
    parser.add_argument("--threads", type=int, default=1, help="worker threads; 1 is the reproducible reference")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feedopt", description="Model-free feedback optimization experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a config file or a preset")
    run.add_argument("config", nargs="?", help="JSON experiment config")
    run.add_argument("--preset", choices=sorted(harness.PRESETS))
    _add_overrides(run)
    run.add_argument("--eta", type=float, help="step size for every controller")
    run.add_argument("--delta", type=float, help="smoothing radius for every model-free controller")

    plan = sub.add_parser("plan", help="compute a step-size plan from constants")
    plan.add_argument("constants", nargs="?", help="JSON file with M, M_x, M_g, M_y, alpha1-3, p, T, epsilon")
    plan.add_argument("--instance-seed", type=int, help="measure the constants on the seeded instance instead")
    plan.add_argument("--T", type=int, default=10_000, help="horizon used with --instance-seed")
    plan.add_argument("--epsilon", type=float, default=0.1, help="precision used with --instance-seed")
    plan.add_argument("--constrained", action="store_true", help="plan the Frank-Wolfe controller")
    plan.add_argument("--format", choices=("labeled", "columns"), default="labeled")

    rep = sub.add_parser("reproduce", help="run a figure preset")
    rep.add_argument("figure", help="one of " + ", ".join(sorted(harness.PRESETS)))
    _add_overrides(rep)

    val = sub.add_parser("validate-config", help="check a config without running it")
    val.add_argument("config")

    sub.add_parser("list-presets", help="list built-in presets")
    return parser


def _die(code, msg):
    print(f"error: {msg}", file=sys.stderr)
    return code


def _execute(config, outdir, threads, tag):
    results = harness.run_experiment(config, threads=threads)
    summary = harness.write_outputs(config, results, outdir, preset=tag)
    failed = []
    for name, entry in summary["controllers"].items():
        n_div = len(entry["diverged"])
        if n_div:
            print(f"{name}: {n_div}/{config.replicates} replicates diverged", file=sys.stderr)
        if n_div == config.replicates:
            failed.append(name)
        elif "final_gap_mean" in entry:
            print(f"{name}: final mean optimality gap {entry['final_gap_mean']:.6g}")
    print(f"wrote outputs to {outdir}")
    if failed:
        return _die(EXIT_DIVERGED, "all replicates diverged for " + ", ".join(failed))
    return EXIT_OK


def cmd_run(args) -> int:
    if (args.config is None) == (args.preset is None):
        return _die(EXIT_CONFIG, "give exactly one of a config path or --preset")
    if args.preset:
        config = harness.preset_config(args.preset, seed=args.seed, horizon=args.horizon,
                                       replicates=args.replicates, eta=args.eta, delta=args.delta)
        tag = args.preset
    else:
        config = harness.load_config(args.config)
        data = config.to_dict()
        for key in ("seed", "horizon", "replicates"):
            if getattr(args, key) is not None:
                data[key] = getattr(args, key)
        for key in ("eta", "delta"):
            if getattr(args, key) is not None:
                for c in data["controllers"]:
                    if key == "eta" or c["mode"] not in harness.FIRST_ORDER_MODES:
                        c[key] = getattr(args, key)
        config = harness.validate_config(data)
        tag = None
    return _execute(config, args.outdir or config.output_path, args.threads, tag)


def cmd_reproduce(args) -> int:
    if args.figure not in harness.PRESETS:
        return _die(EXIT_CONFIG, f"unknown figure {args.figure!r}; choose from {', '.join(sorted(harness.PRESETS))}")
    config = harness.preset_config(args.figure, seed=args.seed, horizon=args.horizon,
                                   replicates=args.replicates)
    return _execute(config, args.outdir or config.output_path, args.threads, args.figure)


def cmd_validate(args) -> int:
    config = harness.load_config(args.config)
    print(f"ok: {len(config.controllers)} controller(s), horizon {config.horizon}, "
          f"{config.replicates} replicate(s)")
    return EXIT_OK


def cmd_list_presets(args) -> int:
    for name in sorted(harness.PRESETS):
        data = harness.PRESETS[name]
        ctrl = ", ".join(c["name"] for c in data["controllers"])
        print(f"{name}: horizon {data['horizon']}, replicates {data['replicates']}; controllers: {ctrl}")
    return EXIT_OK


def _constants_from_file(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read constants ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected an object")
    unknown = sorted(set(data) - _PLAN_KEYS)
    if unknown:
        raise ConfigurationError(f"{path}: unknown key(s) {', '.join(unknown)}")
    missing = sorted((_PLAN_KEYS - {"kappa", "constrained", "D"}) - set(data))
    if missing:
        raise ConfigurationError(f"{path}: missing key(s) {', '.join(missing)}")
    for key in ("p", "T"):
        if isinstance(data[key], bool) or not isinstance(data[key], int):
            raise ConfigurationError(f"{path}: {key} must be an integer")
    try:
        inp = PlannerInput(**{k: data[k] for k in _PLAN_KEYS - {"kappa", "constrained", "D"}})
    except TypeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return inp, data.get("kappa"), bool(data.get("constrained", False)), data.get("D")


def _constants_from_instance(seed, T, epsilon, constrained):
    from .objective import estimate_lipschitz_constants

    inst = harness.build_paper_instance(seed)
    box = inst.box if constrained else None
    u_star = inst.reference_for(constrained)[0]
    # working region: the box, else a ball of radius 10 ||w0|| + 10 (w0 = 0) around u*
    consts = estimate_lipschitz_constants(inst.objective, inst.plant, harness.make_rng(seed, 5),
                                          box=box, center=u_star, radius=10.0)
    cert = inst.certificate
    inp = PlannerInput(M=consts.M, M_x=consts.M_x, M_g=consts.M_g, M_y=consts.M_y,
                       alpha1=cert.alpha1, alpha2=cert.alpha2, alpha3=cert.alpha3,
                       p=inst.plant.p, T=T, epsilon=epsilon)
    return inp, None, constrained, inst.box.diameter if constrained else None


def cmd_plan(args) -> int:
    if (args.constants is None) == (args.instance_seed is None):
        return _die(EXIT_CONFIG, "give exactly one of a constants file or --instance-seed")
    if args.constants:
        inp, kappa, constrained, D = _constants_from_file(args.constants)
        constrained = constrained or args.constrained
    else:
        inp, kappa, constrained, D = _constants_from_instance(args.instance_seed, args.T, args.epsilon,
                                                              args.constrained)
    try:
        mu = rate_mu(inp.alpha1, inp.alpha2, inp.alpha3)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    fields = {"mu": mu}
    if constrained:
        if D is None:
            raise ConfigurationError("constrained plan needs the box diameter D")
        cp = plan_constrained(inp, D, kappa)
        fields.update(delta=cp.delta, eta=cp.eta, kappa=cp.kappa, kappa_limit=cp.kappa_limit,
                      feasible=cp.eta < 1)
    else:
        sp = plan_unconstrained(inp, kappa)
        fields.update(delta=sp.delta, eta=sp.eta, eta_max=sp.eta_max, kappa=sp.kappa,
                      kappa_star=sp.kappa_star, rho=sp.rho, zeta1=sp.zeta1, zeta2=sp.zeta2,
                      zeta3=sp.zeta3, c11=sp.c11, c12=sp.c12, c21=sp.c21, c22=sp.c22,
                      d1=sp.d1, d2=sp.d2, L=sp.L, feasible=sp.feasible)

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        return f"{v:.17g}" if args.format == "columns" else f"{v:.6g}"

    if args.format == "columns":
        print(",".join(fields))
        print(",".join(fmt(v) for v in fields.values()))
    else:
        width = max(map(len, fields))
        for k, v in fields.items():
            print(f"{k:<{width}} = {fmt(v)}")
    return EXIT_OK


_COMMANDS = {"run": cmd_run, "plan": cmd_plan, "reproduce": cmd_reproduce,
             "validate-config": cmd_validate, "list-presets": cmd_list_presets}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return _COMMANDS[args.command](args)
    except AssumptionViolation as exc:
        return _die(EXIT_ASSUMPTION, str(exc))
    except ConfigurationError as exc:
        return _die(EXIT_CONFIG, str(exc))
    except FeedoptError as exc:
        return _die(EXIT_CONFIG, str(exc))


if __name__ == "__main__":
    sys.exit(main())
