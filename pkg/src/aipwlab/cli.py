"""Command-line entry point: ``aipwlab {gen,estimate,bench,report}``.

Exit codes: 0 success, 2 usage or validation error, 3 data error,
4 runtime failure. Diagnostics go to stderr only.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from . import harness
from .aipw import DEFAULT_CLIP, estimate_ate, learner_from_dict
from .dgp import DgpSpec, generate, read_dataset, true_ate, write_dataset
from .errors import InvalidInputError, InvalidParameterError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
GEN_KEYS = ("dgp", "n", "seed")


class UsageError(Exception):
    pass


def preset_names() -> list[str]:
    files = resources.files("aipwlab") / "presets"
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    path = resources.files("aipwlab") / "presets" / f"{name}.json"
    if not path.is_file():
        raise UsageError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return json.loads(path.read_text())


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config: dict, assignments) -> dict:
    """Apply ``key.sub=value`` assignments; values are parsed as JSON when possible."""
    config = json.loads(json.dumps(config))
    for item in assignments or ():
        if "=" not in item:
            raise UsageError(f"override {item!r} must look like key=value")
        key, value = item.split("=", 1)
        parts = key.split(".")
        node = config
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = _parse_value(value)
    return config


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: line {exc.lineno}: invalid JSON: {exc.msg}") from None


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    config = _read_json(args.config) if args.config else {}
    config.setdefault("dgp", {})
    for flag, key in (("kind", "kind"), ("p", "p"), ("noise_sd", "noise_sd")):
        if getattr(args, flag) is not None:
            config["dgp"][key] = getattr(args, flag)
    if args.n is not None:
        config["n"] = args.n
    if args.seed is not None:
        config["seed"] = args.seed
    config = apply_overrides(config, args.set)
    unknown = set(config) - set(GEN_KEYS)
    if unknown:
        raise InvalidParameterError(f"unknown gen key(s) {sorted(unknown)}; valid keys: {list(GEN_KEYS)}")
    for key in GEN_KEYS:
        if key not in config:
            raise InvalidParameterError(f"gen config is missing required field {key!r}")
    spec = DgpSpec.from_dict(config["dgp"])
    n, seed = int(config["n"]), int(config["seed"])
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    data = generate(spec, n, seed)
    write_dataset(data, args.out)
    print(f"n={data.n} p={data.p} treated_frequency={data.D.mean():.4f} true_ate={true_ate(spec)[0]!r}")
    print(f"wrote {args.out}")
    return EXIT_OK


def _learner_config(args) -> dict:
    if args.learner == "forest":
        base = {"num_trees": args.num_trees}
        cfg = {"kind": "forest", "base": base, "cv_folds": args.cv_folds,
               "cv_num_trees": args.cv_num_trees}
        if args.no_tune:
            cfg["grid"] = [{}]
        return cfg
    if args.learner == "glm":
        return {"kind": "glm"}
    return {"kind": "oracle"}


def cmd_estimate(args) -> int:
    if args.k_folds == 1 and args.split_fraction is None:
        raise UsageError("--k-folds 1 requires --split-fraction")
    if not 0.0 < args.ci_level < 1.0:
        raise UsageError(f"--ci-level must lie in (0, 1), got {args.ci_level}")
    data = read_dataset(args.dataset)
    if args.learner == "oracle" and data.spec is None:
        raise InvalidInputError(f"{args.dataset}: the oracle learner needs the .meta.json sidecar")
    learner = learner_from_dict(_learner_config(args), data.spec)
    est = estimate_ate(data, learner, k_folds=args.k_folds, clip=tuple(args.clip),
                       ci_level=args.ci_level, rng=args.seed,
                       split_fraction=args.split_fraction, paper_literal=args.paper_literal)
    print(est.to_json())
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.config and args.preset:
        raise UsageError("give either --config or --preset, not both")
    if args.config:
        config = _read_json(args.config)
    elif args.preset:
        config = load_preset(args.preset)
    else:
        raise UsageError("bench needs --config or --preset")
    for flag, key in (("replications", "replications"), ("parallelism", "parallelism"),
                      ("master_seed", "master_seed"), ("output_dir", "output_dir")):
        if getattr(args, flag) is not None:
            config[key] = getattr(args, flag)
    config = apply_overrides(config, args.set)
    exp = harness.ExperimentConfig.from_dict(config)
    out = exp.output_dir or f"runs/{exp.name}"
    report = harness.run_experiment(exp)
    harness.write_report(report, out)
    print(harness.format_summary(report))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        report = harness.read_report(args.output_dir)
    except OSError as exc:
        raise InvalidInputError(f"cannot read report in {args.output_dir}: {exc}") from None
    print(harness.format_summary(report))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="aipwlab", formatter_class=fmt,
                     description="Cross-fitted AIPW estimation with honest random forests.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", formatter_class=fmt, help="generate a synthetic dataset",
                       description="Draw a dataset and write CSV plus a .meta.json sidecar.")
    g.add_argument("--config", help="JSON file {dgp: {...}, n: int, seed: int}")
    g.add_argument("--kind", choices=["example1", "example2"], help="design (overrides config)")
    g.add_argument("--p", type=int, help="covariate dimension (overrides config)")
    g.add_argument("--n", type=int, help="sample size (overrides config)")
    g.add_argument("--seed", type=int, help="random seed (overrides config)")
    g.add_argument("--noise-sd", type=float, help="outcome noise sd (overrides config)")
    g.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                   help="override a dotted config key, e.g. dgp.propensity_form=model_mix")
    g.add_argument("--out", required=True, help="output CSV path")
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("estimate", formatter_class=fmt, help="estimate the ATE of a dataset",
                       description="Run the cross-fitted AIPW estimator on a dataset CSV.")
    e.add_argument("dataset", help="CSV written by 'aipwlab gen' (x1..xp,d,y[,y0,y1])")
    e.add_argument("--learner", choices=["forest", "glm", "oracle"], default="forest",
                   help="nuisance learner; oracle needs the dataset's .meta.json")
    e.add_argument("--k-folds", type=int, default=2, help="cross-fitting folds; 1 = single split")
    e.add_argument("--split-fraction", type=float, default=None,
                   help="fitting share of the single split (required with --k-folds 1)")
    e.add_argument("--clip", type=float, nargs=2, default=list(DEFAULT_CLIP), metavar=("LO", "HI"),
                   help="propensity clipping bounds")
    e.add_argument("--ci-level", type=float, default=0.95, help="confidence level")
    e.add_argument("--seed", type=int, default=0, help="random seed")
    e.add_argument("--paper-literal", action="store_true",
                   help="use the propensity of the received arm as the residual baseline")
    e.add_argument("--num-trees", type=int, default=500, help="trees per forest")
    e.add_argument("--cv-folds", type=int, default=5, help="folds for hyperparameter tuning")
    e.add_argument("--cv-num-trees", type=int, default=None,
                   help="trees per forest during tuning; None uses --num-trees")
    e.add_argument("--no-tune", action="store_true", help="skip cross-validated tuning")
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("bench", formatter_class=fmt, help="run a Monte Carlo coverage experiment",
                       description="Run an experiment config or preset and write report files.")
    b.add_argument("--config", help="ExperimentConfig JSON file")
    b.add_argument("--preset", help="bundled preset name (see 'aipwlab bench --list-presets')")
    b.add_argument("--list-presets", action="store_true", help="print preset names and exit")
    b.add_argument("--replications", type=int, default=None, help="override replications")
    b.add_argument("--parallelism", type=int, default=None, help="override worker processes")
    b.add_argument("--master-seed", type=int, default=None, help="override master seed")
    b.add_argument("--output-dir", default=None, help="override output directory")
    b.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                   help="override a dotted config key, e.g. learner.base.num_trees=200")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("report", formatter_class=fmt, help="print the summary of a finished run",
                       description="Print the coverage table stored in OUTPUT_DIR/report.json.")
    r.add_argument("output_dir", help="directory written by 'aipwlab bench'")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "bench" and args.list_presets:
            print("\n".join(preset_names()))
            return EXIT_OK
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s: %(message)s", stream=sys.stderr)
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (InvalidInputError, OSError) as exc:
        print(f"aipwlab: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvalidParameterError as exc:
        print(f"aipwlab: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        print(f"aipwlab: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
