"""Command line entry point: ``mpssl {pretrain-foundation,train,ablate,plot,verify}``.

Exit status is 0 on success, 1 when a run or check fails and 2 for an invalid
configuration.  Outputs go under ``--out`` or, by default, under
``$MPSSL_OUT_ROOT`` (``runs/`` when unset).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config, validate, with_overrides
from .metrics import MetricsError

EXIT_OK, EXIT_RUN_FAILURE, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("mpssl")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else validate(ExperimentConfig())
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seeds"] = (args.seed,)
    if getattr(args, "method", None) is not None:
        over["method"] = args.method
    return with_overrides(cfg, **over) if over else cfg


def _out(args, cfg: ExperimentConfig, suffix: str = "") -> Path:
    from .runner import default_out_root

    return Path(args.out) if args.out else default_out_root() / (cfg.name + suffix)


def cmd_pretrain_foundation(args) -> int:
    from .runner import pretrain_foundation

    cfg = _config(args)
    paths = pretrain_foundation(cfg, _out(args, cfg, "-foundation"))
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .runner import run_experiment

    cfg = _config(args)
    res = run_experiment(cfg, _out(args, cfg))
    acc = res.summary["test_accuracy"]
    print(f"{cfg.method}: test accuracy {acc['mean']:.4f} +- {acc['std']:.4f} over {acc['n']} seed(s) -> {res.out_dir}")
    for seed, msg in res.failures.items():
        print(f"seed {seed} failed: {msg}", file=sys.stderr)
    return EXIT_OK if res.ok else EXIT_RUN_FAILURE


def cmd_ablate(args) -> int:
    from .ablation import format_table, get_preset, run_ablation

    preset = get_preset(args.preset)
    cfg = _config(args)
    out = Path(args.out) if args.out else _out(args, cfg, f"-{preset.name}")
    table = run_ablation(preset.name, cfg, out)
    print(format_table(table), end="")
    return EXIT_RUN_FAILURE if any(c["failures"] for c in table["cells"]) else EXIT_OK


def cmd_plot(args) -> int:
    from .plots import emit_plots

    out = Path(args.out) if args.out else Path(args.runs[0]) / "plots"
    try:
        written = emit_plots(args.runs, out)
    except MetricsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILURE
    for path in written:
        print(path)
    return EXIT_OK


def cmd_verify(args) -> int:
    from ..verify import CHECKS, run_checks

    names = args.check or list(CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ConfigError(f"unknown check(s) {unknown}; choose from {list(CHECKS)}")
    results = run_checks(names)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUN_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpssl", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, method=True):
        p.add_argument("--config", help="experiment config file (INI, [experiment] section)")
        p.add_argument("--out", help="output directory")
        if seed:
            p.add_argument("--seed", type=int, help="run only this seed")
        if method:
            p.add_argument("--method", help="override the method tag")
        return p

    common(sub.add_parser("pretrain-foundation", help="build and save the foundation generator and classifier"),
           seed=False, method=False).set_defaults(fn=cmd_pretrain_foundation)
    common(sub.add_parser("train", help="train one method over the configured seeds")).set_defaults(fn=cmd_train)
    p = common(sub.add_parser("ablate", help="run an ablation preset and write its table"), method=False)
    p.add_argument("--preset", required=True, help="ablation preset name")
    p.set_defaults(fn=cmd_ablate)
    p = sub.add_parser("plot", help="emit plots from run or ablation directories")
    p.add_argument("runs", nargs="+", help="run or ablation output directories")
    p.add_argument("--out", help="plot directory (default: <first run>/plots)")
    p.set_defaults(fn=cmd_plot)
    p = sub.add_parser("verify", help="run the oracle and gradient-check suite")
    p.add_argument("--check", action="append", help="run only this check (repeatable)")
    p.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
