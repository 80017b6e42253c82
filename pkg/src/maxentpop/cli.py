"""Command-line entry point: ``maxentpop generate | solve | experiment``.

Exit codes: 0 success, 2 invalid input, 3 enumeration infeasible, 4 solver divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io
from .errors import EnumerationInfeasibleError, InvalidInputError
from .exact import DEFAULT_MAX_ENUM
from .experiments import (
    EXPERIMENTS,
    METHODS,
    ExperimentConfig,
    build_instance,
    default_config,
    make_run_dir,
    output_root,
    run_cell,
    run_experiment,
    write_records,
)
from .generators import (
    PlantedFamilySpec,
    WuInstanceSpec,
    a0_spec,
    a1a_spec,
    a1c_ternary_spec,
    planted_family_generate,
    synistat_spec,
    synistat_targets,
    wu_generate,
)
from .generators.synistat import DATA_FILE, implied_marginal_report, published_table_deltas
from .model import ConstraintSet

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_DIVERGED = 0, 2, 3, 4
WU_PRESETS = {"a0": lambda seed: a0_spec(1 + seed), "a1a": a1a_spec, "a1c-ternary": a1c_ternary_spec}
_ARITY_NAMES = {1: "unary", 2: "binary", 3: "ternary"}


def instance_summary(cs: ConstraintSet, tables: int | None = None) -> str:
    counts = {}
    for a in cs.arities:
        counts[int(a)] = counts.get(int(a), 0) + 1
    by_arity = ", ".join(f"{_ARITY_NAMES.get(a, f'{a}-way')}={n}" for a, n in sorted(counts.items()))
    head = f"K={cs.schema.K}, log10|X|≈{cs.schema.log10_space_size:.2f}"
    if tables is not None:
        head += f", tables={tables}"
    return f"{head}, m={cs.m} ({by_arity})"


def _load_spec(path: str) -> dict:
    try:
        return io.load_json(path)
    except FileNotFoundError:
        raise InvalidInputError(f"{path}: no such file") from None


def cmd_generate(args) -> int:
    kind = args.kind
    out = make_run_dir(output_root(args.out), f"generate-{kind}", args.seed)
    if kind == "synistat":
        spec = synistat_spec()
        cs = synistat_targets(spec)
        io.write_constraint_set(cs, out / "constraints.json")
        with open(out / "ground_truth.json", "x") as f:
            json.dump(
                {
                    "kind": "bayesnet",
                    "data_file": DATA_FILE,
                    "version": spec.version,
                    "implied_marginals": implied_marginal_report(spec),
                    "published_table_deltas": published_table_deltas(spec),
                },
                f,
                indent=1,
            )
        print(instance_summary(cs, tables=len(cs.groups)))
    elif kind == "wu":
        if args.spec:
            doc = _load_spec(args.spec)
            try:
                spec = WuInstanceSpec.from_dict(doc)
            except KeyError as exc:
                raise InvalidInputError(f"{args.spec}: missing field {exc}") from None
        else:
            if args.preset not in WU_PRESETS:
                raise InvalidInputError(f"--preset must be one of {', '.join(WU_PRESETS)}")
            spec = WU_PRESETS[args.preset](args.seed)
        cs, states = wu_generate(spec)
        io.write_constraint_set(cs, out / "constraints.json")
        with open(out / "instance_spec.json", "x") as f:
            json.dump(spec.to_dict(), f, indent=1)
        io.write_population(cs.schema, states, out / "ground_truth_sample.csv")
        print(instance_summary(cs))
    elif kind == "planted":
        if not args.spec:
            raise InvalidInputError("planted instances need --spec")
        doc = _load_spec(args.spec)
        try:
            spec = PlantedFamilySpec.from_dict(doc)
        except KeyError as exc:
            raise InvalidInputError(f"{args.spec}: missing field {exc}") from None
        cs, lam_star = planted_family_generate(spec, args.max_enum)
        io.write_constraint_set(cs, out / "constraints.json")
        with open(out / "instance_spec.json", "x") as f:
            json.dump(spec.to_dict(), f, indent=1)
        io.write_lambda(cs, lam_star, out / "lambda_star.csv")
        print(instance_summary(cs))
    print(f"wrote {out}")
    return EXIT_OK


def _instance_desc(arg: str) -> dict:
    """A constraint-set file path, or a built-in name such as ``a0`` or ``synistat:train``."""
    path = Path(arg)
    if path.exists():
        return {"file": str(path.resolve())}
    name, _, rest = arg.partition(":")
    if name == "synistat":
        return {"name": "synistat", "split": rest or "full"}
    if name == "a2":
        return {"name": "a2", "K": int(rest or 12), "seed": 0}
    if name in ("a0",):
        return {"name": "a0", "seed": 1}
    if name in ("a1a", "a1b", "a1c-binary", "a1c-ternary"):
        return {"name": name, "seed": 0}
    raise InvalidInputError(f"{arg}: neither a file nor a known instance name")


def cmd_solve(args) -> int:
    desc = _instance_desc(args.instance)
    inst = build_instance(desc)
    overrides = {}
    if args.method == "pcd":
        overrides = dict(pool_size=args.pool_size, sweeps=args.sweeps, learning_rate=args.lr, max_iters=args.max_iters, threads=args.threads)
    elif args.method == "raking":
        overrides = dict(pool_size=args.pool_size, max_cycles=args.max_iters)
    elif args.method == "exact":
        overrides = dict(max_iters=args.max_iters, max_enum=args.max_enum)
    config = default_config(args.method, inst.cs, args.seed, **overrides)
    rec, art = run_cell("solve", desc, args.method, config, args.seed, args.max_enum)
    out = make_run_dir(output_root(args.out), f"solve-{args.method}", args.seed)
    write_records(out / "record.csv", [rec], {"argv": sys.argv[1:]})
    columns, rows = art["trace"]
    io.write_rows(out / "trace.csv", columns, rows)
    if "lam" in art:
        io.write_lambda(inst.cs, art["lam"], out / "lambda.csv")
    if "states" in art:
        io.write_population(inst.cs.schema, art["states"], out / "population.csv", weights=art.get("weights"))
    shown = {k: v for k, v in rec.metrics.items() if k in ("mre", "kl", "iterations", "n_eff_ratio", "entropy")}
    print(f"{args.method}: {rec.stop_reason}; " + ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in shown.items()))
    print(f"wrote {out}")
    return EXIT_DIVERGED if rec.stop_reason == "diverged" else EXIT_OK


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig(
        experiment=args.experiment,
        pool_sizes=args.pool_size,
        sweeps=args.sweeps,
        Ks=args.K,
        n_data=args.n_data,
        learning_rate=args.lr,
        max_iters=args.max_iters,
        seed=args.seed,
        out=args.out,
        max_enum=args.max_enum,
        threads=args.threads,
    )

    def progress(rec):
        print(f"  {rec.method:7s} {json.dumps(rec.instance, sort_keys=True)} mre={rec.metrics.get('mre')} ({rec.wall_seconds:.1f}s)")

    run_dir = run_experiment(cfg, progress)
    print(f"wrote {run_dir}")
    return EXIT_OK


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maxentpop", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, multi: bool):
        nargs = {"action": "append"} if multi else {}
        p.add_argument("--pool-size", type=_positive_int, **nargs, help="pool / sample size N")
        p.add_argument("--sweeps", type=_positive_int, **nargs, help="Gibbs sweeps per step s")
        p.add_argument("--lr", type=float, help="Adam learning rate")
        p.add_argument("--max-iters", type=_positive_int, help="outer iterations / raking cycles")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="output root (default $MAXENTPOP_OUT or ./runs)")
        p.add_argument("--max-enum", type=float, default=DEFAULT_MAX_ENUM, help="enumeration budget in tuples")
        p.add_argument("--threads", type=_positive_int, default=1)

    g = sub.add_parser("generate", help="write a benchmark instance")
    g.add_argument("kind", choices=("synistat", "wu", "planted"))
    g.add_argument("--spec", help="instance spec file (JSON)")
    g.add_argument("--preset", default="a0", help="wu preset when no --spec: " + ", ".join(WU_PRESETS))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.add_argument("--max-enum", type=float, default=DEFAULT_MAX_ENUM)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="run one solver on one instance")
    s.add_argument("instance", help="constraint-set file, or a0 | a1a | a1b | a1c-ternary | a2:K | synistat[:train]")
    s.add_argument("--method", choices=METHODS, required=True)
    common(s, multi=False)
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("experiment", help="run an experiment grid")
    e.add_argument("--experiment", choices=EXPERIMENTS, required=True)
    common(e, multi=True)
    e.add_argument("--K", type=_positive_int, action="append", help="attribute counts (a2)")
    e.add_argument("--n-data", type=_positive_int, help="ground-truth sample size for Wu instances")
    e.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EnumerationInfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
