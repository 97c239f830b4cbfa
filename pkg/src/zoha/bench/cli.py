"""``zoha`` command line: run configs, verify bounds, attack fixtures, list presets.

Exit codes: 0 on success, 1 when a verification fails, 2 on configuration
errors (bad files, unknown presets, invalid arguments).
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import PRESETS, ConfigError, get_preset, parse_config, render, variant_items
from .runner import THREADS_ENV, run_experiment
from .verify import SUITES, verify_bounds

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _emit(result, out, quiet):
    if not quiet:
        print(result.summary_text(), file=out)


def cmd_run(args, out) -> int:
    cfg = parse_config(args.config)
    if args.output:
        cfg = replace(cfg, output=args.output)
    res = run_experiment(cfg, threads=args.threads)
    if not cfg.output:
        out.write(res.csv_text)
    _emit(res, sys.stderr if not cfg.output else out, args.quiet)
    return EXIT_OK


def cmd_verify(args, out) -> int:
    suites = SUITES if args.suite == "all" else (args.suite,)
    ok = True
    for s in suites:
        rep = verify_bounds(s, args.seed)
        print(rep.text(), file=out)
        ok &= rep.passed
    return EXIT_OK if ok else EXIT_FAIL


def cmd_attack(args, out) -> int:
    overrides = {"classifier": args.classifier}
    if args.epsilon is not None:
        overrides["epsilon"] = args.epsilon
    if args.n_inputs is not None:
        overrides["n_inputs"] = args.n_inputs
    if args.seeds:
        overrides["seeds"] = args.seeds
    if args.output:
        overrides["output"] = args.output
    cfg = get_preset(args.preset, **overrides)
    if args.variants:
        known = {v.name: v for v in cfg.variants}
        missing = [n for n in args.variants if n not in known]
        if missing:
            raise ConfigError(f"preset {args.preset!r} has no variant(s) {missing}; known: {list(known)}")
        cfg = replace(cfg, variants=[known[n] for n in args.variants])
    res = run_experiment(cfg, threads=args.threads)
    print(
        f"{cfg.mode} attack on {args.classifier}: epsilon={cfg.epsilon}, {cfg.n_inputs} inputs, "
        f"query cap {cfg.query_cap}",
        file=out,
    )
    print(res.summary_text(), file=out)
    return EXIT_OK


def cmd_presets(args, out) -> int:
    if args.name:
        print(render(get_preset(args.name)), end="", file=out)
        return EXIT_OK
    for name, cfg in PRESETS.items():
        print(f"{name}: {cfg.mode}, epsilon={cfg.epsilon}, query cap {cfg.query_cap}", file=out)
        for v in cfg.variants:
            items = variant_items(v)
            shown = ", ".join(f"{k}={items[k]}" for k in ("backend", "b", "mu", "eta") if k in items)
            extra = [f"{k}={items[k]}" for k in ("nu", "dc_beta", "dc_delta_b", "estimator") if k in items]
            print(f"  {v.name:<14} {shown}, {', '.join(extra)}", file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zoha", description=__doc__.splitlines()[0])
    p.add_argument(
        "--threads", type=int, default=None, help=f"worker threads (default: ${THREADS_ENV} or min(4, cpus))"
    )
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run an experiment config and write its CSV")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="CSV path (overrides the config's output)")
    r.add_argument("-q", "--quiet", action="store_true", help="skip the summary table")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="check estimator and model bounds numerically")
    v.add_argument("suite", choices=SUITES + ("all",))
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    a = sub.add_parser("attack", help="attack a classifier with a preset")
    a.add_argument("classifier", help="fixture name (linear3, mlp64) or classifier file")
    a.add_argument("preset", help="one of: " + ", ".join(PRESETS))
    a.add_argument("--epsilon", type=float)
    a.add_argument("--n-inputs", type=int)
    a.add_argument("--seeds", type=int, nargs="+")
    a.add_argument("--variants", nargs="+", help="subset of the preset's variants")
    a.add_argument("-o", "--output", help="also write the CSV here")
    a.set_defaults(func=cmd_attack)

    s = sub.add_parser("presets", help="list presets or print one as a config file")
    s.add_argument("name", nargs="?")
    s.set_defaults(func=cmd_presets)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    if args.threads is not None and args.threads < 1:
        print("zoha: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args, out)
    except ConfigError as e:
        print(f"zoha: configuration error:\n{e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, KeyError) as e:
        print(f"zoha: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
