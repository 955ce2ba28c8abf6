"""Command line: generate, oracle, train, eval, report.

Exit codes: 0 on success, 1 on invalid input, 2 on a runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from typing import Optional, Sequence

from .config import ConfigError, parse_config
from .data import LogFormatError, SynthesisSpec, generate_synthetic, parse_log, write_log
from .episode import episode_budget
from .experiment import ExperimentError, emit_plot_data, evaluate_model, run_experiment
from .oracle import optimal_lambda_greedy

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Invalid(Exception):
    pass


def _read_spec(path: str) -> SynthesisSpec:
    """Synthesis spec file: an INI ``[synthesis]`` section of SynthesisSpec fields."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        with open(path) as f:
            cp.read_file(f)
    except configparser.Error as exc:
        raise _Invalid(f"{path}: {exc}") from None
    if not cp.has_section("synthesis"):
        raise _Invalid(f"{path}: missing [synthesis] section")
    ints = {"episodes", "T", "shift_slot"}
    kwargs = {}
    for key, value in cp.items("synthesis"):
        if key not in SynthesisSpec.__dataclass_fields__:
            raise _Invalid(f"{path}: unknown key {key!r}")
        try:
            kwargs[key] = int(value) if key in ints else float(value)
        except ValueError:
            raise _Invalid(f"{path}: {key} has bad value {value!r}") from None
    spec = SynthesisSpec(**kwargs)
    try:
        spec.validate()
    except ValueError as exc:
        raise _Invalid(f"{path}: {exc}") from None
    return spec


def _load_log(path: str, T: int):
    with open(path, newline="") as f:
        return parse_log(f, T)


def cmd_generate(args) -> None:
    episodes = generate_synthetic(_read_spec(args.spec), args.seed)
    with open(args.out, "w", newline="") as f:
        write_log(episodes, f)


def cmd_oracle(args) -> None:
    if not 0 < args.budget_ratio <= 1:
        raise _Invalid("--budget-ratio must be in (0, 1]")
    out = sys.stdout
    out.write("episode_id,budget,lambda_star,r_star,spend\n")
    for ep in _load_log(args.data, args.T):
        budget = episode_budget(ep, args.budget_ratio)
        res = optimal_lambda_greedy(ep.impressions, budget)
        out.write(f"{ep.episode_id},{budget!r},{res.lambda_star!r},{res.r_star!r},{res.spend!r}\n")


def cmd_train(args) -> None:
    with open(args.config, encoding="utf-8") as f:
        text = f.read()
    cfg = parse_config(text, os.path.dirname(os.path.abspath(args.config)))
    run_experiment(cfg, args.out_dir)
    emit_plot_data(args.out_dir)


def cmd_eval(args) -> None:
    with open(args.model, encoding="utf-8") as f:
        text = f.read()
    try:
        T = int(json.loads(text).get("T", 96))
    except (ValueError, AttributeError):
        raise _Invalid(f"{args.model}: not a policy bundle") from None
    try:
        records = evaluate_model(text, _load_log(args.data, T), args.out_dir)
    except (KeyError, TypeError) as exc:
        raise _Invalid(f"{args.model}: {exc}") from None
    print(f"evaluated {len(records)} episodes -> {args.out_dir}")


def cmd_report(args) -> None:
    conv, dist = emit_plot_data(args.run_dir)
    print(conv)
    print(dist)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drlb", description="Budget-constrained bidding by λ control")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a seeded synthetic impression log")
    g.add_argument("--spec", required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    o = sub.add_parser("oracle", help="hindsight-optimal λ* and R* per episode")
    o.add_argument("--data", required=True)
    o.add_argument("--budget-ratio", type=float, required=True)
    o.add_argument("--T", type=int, default=96)
    o.set_defaults(func=cmd_oracle)

    t = sub.add_parser("train", help="run an experiment config into a run directory")
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a saved policy on a log")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out-dir", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="emit tidy plot CSVs for a run directory")
    r.add_argument("--run-dir", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad usage; that is a validation error here
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    try:
        args.func(args)
    except (_Invalid, ConfigError, LogFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ExperimentError as exc:
        code = EXIT_INVALID if isinstance(exc.__cause__, (LogFormatError, FileNotFoundError)) \
            else EXIT_RUNTIME
        print(f"error: {exc}", file=sys.stderr)
        return code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - the CLI contract maps everything else to 2
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
