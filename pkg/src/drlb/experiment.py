"""Run directory production: training, evaluation by λ-deviation group, plot data.

A run directory holds::

    run.json                      run metadata
    training_log_seed<S>.csv      per-episode training log (drlb only)
    checkpoints/seed<S>/*.ckpt    Q (and RewardNet) weights every N episodes
    models/seed<S>.json           final policy bundle usable by ``evaluate_model``
    eval_episodes.csv             one row per evaluated (seed, episode, λ0)
    summary.csv                   mean R/R* per deviation group plus Average
    convergence_raw.csv           per-seed test R/R* at every checkpoint
    reward_steps.csv              per-step r_t/R* on the reference episode
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .agent import AgentConfig, DRLBAgent, Lambda0Policy, run_training
from .baselines import run_baseline_episode
from .bidder import Norms
from .config import ExperimentConfig, Lambda0Settings
from .data import generate_synthetic, parse_log
from .env import EpisodeData, run_fixed_lambda
from .episode import EpisodeReport, episode_budget, reports_csv
from .nn import CheckpointFormatError, load_checkpoint, save_checkpoint
from .oracle import DEVIATION_GROUPS, OracleResult, deviation_group, lambda_deviation, \
    optimal_lambda_greedy

EVAL_FIELDS = ("seed", "episode", "lambda0", "lambda_star", "deviation", "group",
               "total_reward", "total_cost", "r_star", "r_over_rstar")
SUMMARY_FIELDS = ("group", "episodes", "r_over_rstar")
CONVERGENCE_FIELDS = ("checkpoint_episode", "r_over_rstar")
DISTRIBUTION_FIELDS = ("step", "r_t_over_rstar", "series")


class ExperimentError(RuntimeError):
    def __init__(self, component: str, cause: BaseException):
        super().__init__(f"{component}: {cause}")
        self.component = component


class _Stage:
    """Context manager that re-raises failures tagged with the component name."""

    def __init__(self, component: str):
        self.component = component

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, ExperimentError):
            raise ExperimentError(self.component, exc) from exc
        return False


@dataclass(frozen=True)
class EvalRecord:
    seed: int
    episode: str
    lambda0: float
    lambda_star: float
    total_reward: float
    total_cost: float
    r_star: float

    @property
    def deviation(self) -> float:
        return lambda_deviation(self.lambda0, self.lambda_star)

    @property
    def group(self) -> str:
        return deviation_group(self.lambda0, self.lambda_star).label

    @property
    def r_over_rstar(self) -> float:
        return self.total_reward / self.r_star if self.r_star > 0 else float("nan")

    def row(self) -> list[str]:
        return [str(self.seed), self.episode, repr(self.lambda0), repr(self.lambda_star),
                repr(self.deviation), self.group, repr(self.total_reward),
                repr(self.total_cost), repr(self.r_star), repr(self.r_over_rstar)]


@dataclass
class Dataset:
    train: list[EpisodeData]
    test: list[EpisodeData]
    train_budgets: list[float]
    test_budgets: list[float]
    train_oracles: list[OracleResult]
    test_oracles: list[OracleResult]


# episode, budget, λ0, oracle -> report
Player = Callable[[EpisodeData, float, float, OracleResult], EpisodeReport]


def load_episodes(cfg: ExperimentConfig) -> list[EpisodeData]:
    if cfg.data_path is not None:
        with open(cfg.data_path, newline="") as f:
            return parse_log(f, cfg.T)
    return generate_synthetic(cfg.synthesis, cfg.synthesis_seed)


def split_dataset(episodes: Sequence[EpisodeData], train_fraction: float,
                  budget_ratio: float) -> Dataset:
    """First ``train_fraction`` of episodes train, the rest evaluate."""
    n_train = int(math.floor(train_fraction * len(episodes)))
    if n_train < 1 or n_train >= len(episodes):
        raise ValueError(f"{len(episodes)} episodes cannot be split into non-empty train and "
                         f"test sets at fraction {train_fraction}")
    budgets = [episode_budget(ep, budget_ratio) for ep in episodes]
    oracles = [optimal_lambda_greedy(ep.impressions, b) for ep, b in zip(episodes, budgets)]
    return Dataset(list(episodes[:n_train]), list(episodes[n_train:]), budgets[:n_train],
                   budgets[n_train:], oracles[:n_train], oracles[n_train:])


def derive_norms(episodes: Sequence[EpisodeData], oracles: Sequence[OracleResult]) -> Norms:
    """CPM reference from mean market price, value reference from mean R* per step."""
    prices = np.concatenate([ep.market_prices for ep in episodes])
    cpm = 1000.0 * float(np.mean(prices)) if prices.size else 1.0
    per_step = math.fsum(o.r_star / ep.T for ep, o in zip(episodes, oracles)) / len(episodes)
    return Norms(cpm_ref=cpm if cpm > 0 else 1.0, value_ref=per_step if per_step > 0 else 1.0)


def eval_lambda0s(settings: Lambda0Settings, oracles: Sequence[OracleResult],
                  previous: Optional[OracleResult]) -> list[list[float]]:
    """Starting λ values for every evaluation episode under the configured protocol."""
    out = []
    prev = previous
    for o in oracles:
        if settings.eval_policy == "fixed":
            out.append([settings.value])
        elif settings.eval_policy == "previous_oracle":
            out.append([(prev or o).lambda_star])
        else:
            out.append([o.lambda_star * (1.0 + d) for d in settings.eval_deviations])
        prev = o
    return out


def evaluate(play: Player, data: Dataset, settings: Lambda0Settings, seed: int
             ) -> tuple[list[EvalRecord], list[EpisodeReport]]:
    previous = data.train_oracles[-1] if data.train_oracles else None
    records, reports = [], []
    starts = eval_lambda0s(settings, data.test_oracles, previous)
    for ep, budget, oracle, lams in zip(data.test, data.test_budgets, data.test_oracles, starts):
        for lam0 in lams:
            rep = play(ep, budget, lam0, oracle)
            reports.append(rep)
            records.append(EvalRecord(seed, ep.episode_id, lam0, oracle.lambda_star,
                                      rep.total_reward, rep.total_cost, oracle.r_star))
    return records, reports


def mean_r_over_rstar(records: Sequence[EvalRecord]) -> float:
    vals = [r.r_over_rstar for r in records if not math.isnan(r.r_over_rstar)]
    return math.fsum(vals) / len(vals) if vals else float("nan")


def summarize(records: Sequence[EvalRecord]) -> list[tuple[str, int, float]]:
    """Nine deviation-group rows followed by an Average row over all records."""
    by_group: dict[str, list[EvalRecord]] = defaultdict(list)
    for r in records:
        by_group[r.group].append(r)
    rows = [(g.label, len(by_group[g.label]), mean_r_over_rstar(by_group[g.label]))
            for g in DEVIATION_GROUPS]
    rows.append(("Average", len(records), mean_r_over_rstar(records)))
    return rows


def _csv(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def _write(path: str, text: str | bytes) -> None:
    mode = "wb" if isinstance(text, bytes) else "w"
    with open(path, mode, **({} if mode == "wb" else {"newline": ""})) as f:
        f.write(text)


def summary_csv(records: Sequence[EvalRecord]) -> str:
    return _csv(SUMMARY_FIELDS, [(g, str(n), _num(m)) for g, n, m in summarize(records)])


def eval_csv(records: Sequence[EvalRecord]) -> str:
    return _csv(EVAL_FIELDS, [r.row() for r in records])


def reward_steps_rows(report: EpisodeReport, series: str) -> list[list[str]]:
    return [[str(t), repr(r / report.r_star), series]
            for t, r in enumerate(report.step_rewards, start=1)]


def oracle_report(data: EpisodeData, budget: float, oracle: OracleResult) -> EpisodeReport:
    """Constant-λ* replay, the ideal per-step reward distribution."""
    state, outcomes = run_fixed_lambda(data, budget, oracle.lambda_star)
    rep = EpisodeReport(data.episode_id, state.t, state.cumulative_value, state.spent,
                        oracle.r_star, oracle.lambda_star, oracle.lambda_star)
    rep.step_rewards = [o.reward for o in outcomes]
    rep.step_costs = [o.cost for o in outcomes]
    return rep


# --- policy bundles -------------------------------------------------------------

def model_bundle(agent: DRLBAgent, cfg: ExperimentConfig) -> str:
    doc = {
        "format": "drlb-policy v1",
        "rates": list(agent.cfg.rates),
        "norms": {"cpm_ref": agent.norms.cpm_ref, "value_ref": agent.norms.value_ref},
        "T": cfg.T,
        "budget_ratio": cfg.budget_ratio,
        "train_fraction": cfg.train_fraction,
        "lambda0": asdict(cfg.lambda0),
        "qnet": save_checkpoint(agent.qnet).decode("ascii"),
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def load_model_bundle(text: str) -> tuple[DRLBAgent, dict]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != "drlb-policy v1":
        raise ValueError("model file lacks the 'drlb-policy v1' format marker")
    try:
        qnet = load_checkpoint(doc["qnet"].encode("ascii"))
        norms = Norms(**doc["norms"])
        cfg = AgentConfig(rates=tuple(doc["rates"]), hidden=tuple(qnet.layer_sizes[1:-1]),
                          reward="immediate", episodes=0)
    except KeyError as exc:
        raise ValueError(f"model file is missing {exc}") from None
    except CheckpointFormatError as exc:
        raise ValueError(f"embedded Q network: {exc}") from None
    agent = DRLBAgent(cfg, norms, 0, n_state=qnet.n_in)
    if qnet.layer_sizes != agent.qnet.layer_sizes:
        raise ValueError("Q network output size does not match the action space")
    agent.qnet.copy_from(qnet)
    return agent, doc


def greedy_player(agent: DRLBAgent) -> Player:
    return lambda ep, budget, lam0, oracle: agent.run_episode(ep, budget, lam0, False, oracle)


def baseline_player(strategy: str, cfg: ExperimentConfig) -> Player:
    return lambda ep, budget, lam0, oracle: run_baseline_episode(
        strategy, ep, budget, cfg.baseline(lam0), oracle)


# --- full runs ------------------------------------------------------------------

@dataclass
class SeedResult:
    seed: int
    records: list[EvalRecord]
    reference: Optional[EpisodeReport]
    convergence: list[tuple[int, float]]
    training_log: Optional[str] = None


def _train_lambda0_policy(s: Lambda0Settings) -> Lambda0Policy:
    return Lambda0Policy(kind=s.train_policy, value=s.value, dev_low=s.dev_low,
                         dev_high=s.dev_high)


def run_seed(cfg: ExperimentConfig, data: Dataset, norms: Norms, seed: int,
             out_dir: Optional[str] = None) -> SeedResult:
    """Train (drlb) and evaluate one seed; checkpoints go under ``out_dir`` when given."""
    convergence: list[tuple[int, float]] = []
    if cfg.method != "drlb":
        with _Stage(f"evaluation ({cfg.method})"):
            records, reports = evaluate(baseline_player(cfg.method, cfg), data, cfg.lambda0, seed)
        return SeedResult(seed, records, reports[0] if reports else None, convergence)

    agent_cfg = replace(cfg.agent)
    ckpt_dir = os.path.join(out_dir, "checkpoints", f"seed{seed}") if out_dir else None
    if ckpt_dir:
        os.makedirs(ckpt_dir, exist_ok=True)

    def on_episode(k: int, agent: DRLBAgent, report: EpisodeReport) -> None:
        if k % cfg.checkpoint_every:
            return
        if ckpt_dir:
            with _Stage("checkpoint"):
                _write(os.path.join(ckpt_dir, f"q_ep{k:06d}.ckpt"), save_checkpoint(agent.qnet))
                if agent.rewardnet is not None:
                    _write(os.path.join(ckpt_dir, f"rewardnet_ep{k:06d}.ckpt"),
                           save_checkpoint(agent.rewardnet.net))
        if cfg.convergence_eval:
            with _Stage("checkpoint evaluation"):
                recs, _ = evaluate(greedy_player(agent), data, cfg.lambda0, seed)
            convergence.append((k, mean_r_over_rstar(recs)))

    with _Stage("training"):
        agent, log = run_training(data.train, cfg.budget_ratio, agent_cfg, norms,
                                  _train_lambda0_policy(cfg.lambda0), seed, data.train_oracles,
                                  on_episode)
    with _Stage("evaluation (drlb)"):
        records, reports = evaluate(greedy_player(agent), data, cfg.lambda0, seed)
    if out_dir:
        os.makedirs(os.path.join(out_dir, "models"), exist_ok=True)
        _write(os.path.join(out_dir, "models", f"seed{seed}.json"), model_bundle(agent, cfg))
    return SeedResult(seed, records, reports[0] if reports else None, convergence,
                      reports_csv(log.reports))


def run_experiment(cfg: ExperimentConfig, out_dir: str) -> list[SeedResult]:
    os.makedirs(out_dir, exist_ok=True)
    with _Stage("data"):
        episodes = load_episodes(cfg)
        for ep in episodes:
            if ep.T != cfg.T:
                raise ValueError(f"episode {ep.episode_id} has T={ep.T}, config says {cfg.T}")
    with _Stage("oracle"):
        data = split_dataset(episodes, cfg.train_fraction, cfg.budget_ratio)
    norms = cfg.norms or derive_norms(data.train, data.train_oracles)

    results = [run_seed(cfg, data, norms, seed, out_dir) for seed in cfg.seeds]

    with _Stage("report"):
        records = [r for res in results for r in res.records]
        _write(os.path.join(out_dir, "eval_episodes.csv"), eval_csv(records))
        _write(os.path.join(out_dir, "summary.csv"), summary_csv(records))
        conv = [[str(res.seed), str(k), _num(v)] for res in results for k, v in res.convergence]
        _write(os.path.join(out_dir, "convergence_raw.csv"),
               _csv(("seed", "checkpoint_episode", "r_over_rstar"), conv))
        steps: list[list[str]] = []
        for res in results:
            if res.reference is not None:
                steps += reward_steps_rows(res.reference, f"{cfg.method}-seed{res.seed}")
            if res.training_log is not None:
                _write(os.path.join(out_dir, f"training_log_seed{res.seed}.csv"), res.training_log)
        if data.test:
            ref = oracle_report(data.test[0], data.test_budgets[0], data.test_oracles[0])
            steps += reward_steps_rows(ref, "oracle")
        _write(os.path.join(out_dir, "reward_steps.csv"), _csv(DISTRIBUTION_FIELDS, steps))
        meta = {"method": cfg.method, "seeds": list(cfg.seeds), "T": cfg.T,
                "budget_ratio": cfg.budget_ratio, "checkpoint_every": cfg.checkpoint_every,
                "episodes": cfg.agent.episodes if cfg.method == "drlb" else 0,
                "train_episodes": len(data.train), "test_episodes": len(data.test),
                "norms": {"cpm_ref": norms.cpm_ref, "value_ref": norms.value_ref}}
        _write(os.path.join(out_dir, "run.json"), json.dumps(meta, sort_keys=True, indent=1) + "\n")
    return results


def evaluate_model(model_text: str, episodes: Sequence[EpisodeData], out_dir: str) -> list[EvalRecord]:
    """Evaluate a saved policy bundle on the held-out part of ``episodes``."""
    agent, doc = load_model_bundle(model_text)
    settings = Lambda0Settings(**{k: tuple(v) if isinstance(v, list) else v
                                  for k, v in doc["lambda0"].items()})
    data = split_dataset(episodes, doc["train_fraction"], doc["budget_ratio"])
    records, reports = evaluate(greedy_player(agent), data, settings, 0)
    os.makedirs(out_dir, exist_ok=True)
    _write(os.path.join(out_dir, "eval_episodes.csv"), eval_csv(records))
    _write(os.path.join(out_dir, "summary.csv"), summary_csv(records))
    return records


# --- plot data ------------------------------------------------------------------

def _read_csv(path: str) -> list[dict[str, str]]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing run artifact {os.path.basename(path)}")
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def emit_plot_data(run_dir: str) -> tuple[str, str]:
    """Write ``convergence.csv`` and ``reward_distribution.csv`` into ``run_dir``."""
    if not os.path.exists(os.path.join(run_dir, "run.json")):
        raise FileNotFoundError(f"{run_dir} is not a completed run (no run.json)")
    raw = _read_csv(os.path.join(run_dir, "convergence_raw.csv"))
    by_ckpt: dict[int, list[float]] = defaultdict(list)
    for row in raw:
        if row["r_over_rstar"]:
            by_ckpt[int(row["checkpoint_episode"])].append(float(row["r_over_rstar"]))
    conv_rows = [[str(k), repr(math.fsum(v) / len(v))] for k, v in sorted(by_ckpt.items())]
    conv_path = os.path.join(run_dir, "convergence.csv")
    _write(conv_path, _csv(CONVERGENCE_FIELDS, conv_rows))

    steps = _read_csv(os.path.join(run_dir, "reward_steps.csv"))
    dist_path = os.path.join(run_dir, "reward_distribution.csv")
    _write(dist_path, _csv(DISTRIBUTION_FIELDS,
                           [[r["step"], r["r_t_over_rstar"], r["series"]] for r in steps]))
    return conv_path, dist_path
