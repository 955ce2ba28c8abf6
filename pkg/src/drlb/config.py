"""Experiment configuration: a small ``key = value`` format with ``[section]`` headers.

Every problem found while parsing is collected, so a bad file reports all
of its invalid keys at once, each with the line it came from.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from typing import Any, Callable, Optional

from .agent import AgentConfig
from .baselines import BaselineConfig
from .bidder import Norms
from .data import SynthesisSpec

METHODS = ("drlb", "flb", "bslb")
TRAIN_LAMBDA0 = ("fixed", "previous_oracle", "oracle_deviation")
EVAL_LAMBDA0 = ("fixed", "previous_oracle", "deviations")


class ConfigError(ValueError):
    def __init__(self, problems: list[tuple[Optional[int], str]]):
        self.problems = problems
        lines = [f"line {n}: {msg}" if n is not None else msg for n, msg in problems]
        super().__init__("invalid config:\n  " + "\n  ".join(lines))


@dataclass(frozen=True)
class Lambda0Settings:
    train_policy: str = "oracle_deviation"
    value: float = 1.0
    dev_low: float = 0.0
    dev_high: float = 0.0
    eval_policy: str = "deviations"
    eval_deviations: tuple[float, ...] = (0.0,)


@dataclass(frozen=True)
class ExperimentConfig:
    method: str
    data_path: Optional[str] = None
    synthesis: Optional[SynthesisSpec] = None
    synthesis_seed: int = 0
    budget_ratio: float = 1 / 16
    T: int = 96
    seeds: tuple[int, ...] = (0,)
    train_fraction: float = 0.7
    checkpoint_every: int = 10
    convergence_eval: bool = True
    agent: AgentConfig = field(default_factory=AgentConfig)
    baseline_delta: tuple[float, float] = (0.1, 10.0)
    norms: Optional[Norms] = None
    lambda0: Lambda0Settings = field(default_factory=Lambda0Settings)

    def baseline(self, lambda0: float) -> BaselineConfig:
        return BaselineConfig(lambda0, *self.baseline_delta)


# --- value converters -------------------------------------------------------

def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _list(conv: Callable[[str], Any]) -> Callable[[str], tuple]:
    def parse(s: str) -> tuple:
        items = [x.strip() for x in s.split(",") if x.strip()]
        if not items:
            raise ValueError("expected a non-empty comma-separated list")
        return tuple(conv(x) for x in items)
    return parse


def _choice(*options: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s
    return parse


def _int(s: str) -> int:
    return int(s)


def _float(s: str) -> float:
    return float(s)


_SCHEMA: dict[str, dict[str, Callable[[str], Any]]] = {
    "experiment": {
        "method": _choice(*METHODS),
        "budget_ratio": _float,
        "T": _int,
        "seeds": _list(_int),
        "train_fraction": _float,
        "checkpoint_every": _int,
        "convergence_eval": _bool,
    },
    "data": {"path": str},
    "synthesis": {
        "seed": _int, "episodes": _int, "impressions_per_slot": _float,
        "value_alpha": _float, "value_beta": _float, "value_scale": _float,
        "price_mu": _float, "price_sigma": _float, "correlation": _float,
        "value_ramp": _float, "shift_slot": _int, "shift_factor": _float,
        "episode_price_jitter": _float,
    },
    "lambda0": {
        "train_policy": _choice(*TRAIN_LAMBDA0),
        "value": _float,
        "dev_low": _float,
        "dev_high": _float,
        "eval_policy": _choice(*EVAL_LAMBDA0),
        "eval_deviations": _list(_float),
    },
    "agent": {
        "reward": _choice("rewardnet", "immediate"),
        "episodes": _int, "gamma": _float, "epsilon_floor": _float, "epsilon_cap": _float,
        "adaptive": _bool, "adaptive_epsilon_min": _float, "anneal_rate": _float,
        "target_sync": _int, "rates": _list(_float), "hidden": _list(_int),
        "learning_rate": _float, "momentum": _float, "batch_size": _int,
        "replay_capacity": _int, "reward_store_capacity": _int,
        "reward_replay_capacity": _int, "lrfu_decay": _float, "key_grid": _float,
        "return_ref": _float, "relabel_rewards": _bool,
    },
    "baseline": {"delta_min": _float, "delta_max": _float},
    "norms": {"cpm_ref": _float, "value_ref": _float},
}

_REQUIRED = (("experiment", "method"),)


def _scan(text: str, problems: list) -> dict[tuple[str, str], tuple[Any, int]]:
    """Tokenize and type-convert; returns ``{(section, key): (value, line)}``."""
    out: dict[tuple[str, str], tuple[Any, int]] = {}
    section: Optional[str] = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                problems.append((n, f"malformed section header {raw.strip()!r}"))
                section = None
                continue
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                problems.append((n, f"unknown section [{section}]"))
            continue
        if "=" not in line:
            problems.append((n, f"expected 'key = value', got {raw.strip()!r}"))
            continue
        key, value = (p.strip() for p in line.split("=", 1))
        if section is None:
            problems.append((n, f"key {key!r} appears before any section"))
            continue
        if section not in _SCHEMA:
            continue
        if key not in _SCHEMA[section]:
            problems.append((n, f"unknown key {key!r} in [{section}]"))
            continue
        if (section, key) in out:
            first = out[(section, key)][1]
            problems.append((n, f"duplicate key {key!r} in [{section}] (lines {first} and {n})"))
            continue
        try:
            out[(section, key)] = (_SCHEMA[section][key](value), n)
        except ValueError as exc:
            problems.append((n, f"{section}.{key}: {exc}"))
            out[(section, key)] = (None, n)
    return out


def parse_config(text: str, base_dir: Optional[str] = None) -> ExperimentConfig:
    """Parse and validate; raises :class:`ConfigError` listing every problem."""
    problems: list[tuple[Optional[int], str]] = []
    raw = _scan(text, problems)
    bad = {k for k, (v, _) in raw.items() if v is None}

    def section(name: str) -> dict[str, Any]:
        return {k: v for (s, k), (v, _) in raw.items() if s == name and (s, k) not in bad}

    def line_of(sec: str, key: str) -> Optional[int]:
        return raw[(sec, key)][1] if (sec, key) in raw else None

    for sec, key in _REQUIRED:
        if (sec, key) not in raw:
            problems.append((None, f"missing required key {key!r} in [{sec}]"))

    exp = section("experiment")
    checks = [
        ("budget_ratio", lambda v: 0 < v <= 1, "budget_ratio must be in (0, 1]"),
        ("T", lambda v: v >= 1, "T must be >= 1"),
        ("train_fraction", lambda v: 0 < v < 1, "train_fraction must be in (0, 1)"),
        ("checkpoint_every", lambda v: v >= 1, "checkpoint_every must be >= 1"),
    ]
    for key, ok, msg in checks:
        if key in exp and not ok(exp[key]):
            problems.append((line_of("experiment", key), msg))

    data_path = section("data").get("path")
    # a bare [synthesis] header means "generate with defaults"
    has_synth = _section_line(text, "synthesis") is not None
    if (data_path is None) == (not has_synth):
        problems.append((None, "exactly one data source is required: [data] path or a [synthesis] section"))
    if data_path is not None and base_dir is not None and not os.path.isabs(data_path):
        data_path = os.path.join(base_dir, data_path)

    synth = None
    synth_kw = section("synthesis")
    synth_seed = synth_kw.pop("seed", 0)
    if has_synth:
        synth = _build(SynthesisSpec, dict(synth_kw, T=exp.get("T", 96)), "synthesis",
                       problems, lambda: _section_line(text, "synthesis"))

    agent_kw = section("agent")
    agent = _build(AgentConfig, agent_kw, "agent", problems,
                   lambda: _section_line(text, "agent")) or AgentConfig()

    base = section("baseline")
    delta = (base.get("delta_min", 0.1), base.get("delta_max", 10.0))
    if not 0 < delta[0] < delta[1]:
        problems.append((line_of("baseline", "delta_min") or line_of("baseline", "delta_max"),
                         "need 0 < delta_min < delta_max"))

    norms = None
    nkw = section("norms")
    if nkw:
        if set(nkw) != {"cpm_ref", "value_ref"}:
            problems.append((_section_line(text, "norms"), "[norms] needs both cpm_ref and value_ref"))
        else:
            norms = _build(Norms, nkw, "norms", problems, lambda: _section_line(text, "norms"))

    lam = section("lambda0")
    lambda0 = Lambda0Settings(**lam)
    if lambda0.train_policy == "fixed" or lambda0.eval_policy == "fixed":
        if not lambda0.value > 0:
            problems.append((line_of("lambda0", "value"), "lambda0 value must be > 0"))
    if not -1 < lambda0.dev_low <= lambda0.dev_high:
        problems.append((line_of("lambda0", "dev_low"), "need -1 < dev_low <= dev_high"))
    if any(not d > -1 for d in lambda0.eval_deviations):
        problems.append((line_of("lambda0", "eval_deviations"), "eval deviations must be > -1"))

    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(
        method=exp["method"], data_path=data_path, synthesis=synth, synthesis_seed=synth_seed,
        budget_ratio=exp.get("budget_ratio", 1 / 16), T=exp.get("T", 96),
        seeds=exp.get("seeds", (0,)), train_fraction=exp.get("train_fraction", 0.7),
        checkpoint_every=exp.get("checkpoint_every", 10),
        convergence_eval=exp.get("convergence_eval", True),
        agent=agent, baseline_delta=delta, norms=norms, lambda0=lambda0)


def _section_line(text: str, name: str) -> Optional[int]:
    for n, raw in enumerate(text.splitlines(), start=1):
        if raw.split("#", 1)[0].strip() == f"[{name}]":
            return n
    return None


def _build(cls, kwargs: dict, name: str, problems: list, where: Callable[[], Optional[int]]):
    """Construct ``cls`` and turn its own validation failure into a config problem."""
    known = {f.name for f in fields(cls)}
    try:
        obj = cls(**{k: v for k, v in kwargs.items() if k in known})
        if hasattr(obj, "validate"):
            obj.validate()
        return obj
    except (ValueError, TypeError) as exc:
        problems.append((where(), f"[{name}] {exc}"))
        return None
