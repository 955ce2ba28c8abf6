"""Impression logs: CSV reading/writing and seeded synthetic generation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Optional, TextIO

import numpy as np
from scipy import stats

from .env import EpisodeData, Impression

LOG_HEADER = ("episode_id", "slot", "value", "market_price", "click")


class LogFormatError(ValueError):
    def __init__(self, message: str, row: Optional[int] = None):
        where = f"row {row}: " if row is not None else ""
        super().__init__(where + message)
        self.row = row


def parse_log(stream: TextIO, T: int = 96) -> list[EpisodeData]:
    """Read an impression log; rows are numbered from 1 for the header."""
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != LOG_HEADER:
        raise LogFormatError(f"expected header {','.join(LOG_HEADER)}", 1)

    episodes: list[EpisodeData] = []
    current_id: Optional[str] = None
    rows: list[Impression] = []
    seen: set[str] = set()

    def flush():
        if current_id is not None:
            episodes.append(EpisodeData(current_id, T, tuple(rows)))

    for n, fields in enumerate(reader, start=2):
        if not fields:
            continue
        if len(fields) != len(LOG_HEADER):
            raise LogFormatError(f"expected {len(LOG_HEADER)} fields, got {len(fields)}", n)
        ep, slot_s, value_s, price_s, click_s = (f.strip() for f in fields)
        try:
            slot = int(slot_s)
            value = float(value_s)
            price = float(price_s)
            click = int(click_s) if click_s else None
        except ValueError as exc:
            raise LogFormatError(str(exc), n) from None
        if not 0 <= slot < T:
            raise LogFormatError(f"slot {slot} outside [0, {T})", n)
        try:
            imp = Impression(slot, value, price, click)
        except ValueError as exc:
            raise LogFormatError(str(exc), n) from None
        if ep != current_id:
            if ep in seen:
                raise LogFormatError(f"episode {ep!r} is not contiguous", n)
            flush()
            seen.add(ep)
            current_id, rows = ep, []
        elif rows and slot < rows[-1].slot:
            raise LogFormatError("rows must be sorted by slot within an episode", n)
        rows.append(imp)
    flush()
    return episodes


def write_log(episodes: Iterable[EpisodeData], stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(LOG_HEADER)
    for ep in episodes:
        for imp in ep.impressions:
            click = "" if imp.click is None else str(imp.click)
            w.writerow([ep.episode_id, imp.slot, repr(imp.value), repr(imp.market_price), click])


def log_to_string(episodes: Iterable[EpisodeData]) -> str:
    buf = io.StringIO()
    write_log(episodes, buf)
    return buf.getvalue()


@dataclass(frozen=True)
class SynthesisSpec:
    """Generator settings.

    ``correlation`` is the Spearman rank correlation between value and
    market price; it is induced with a Gaussian copula, which makes the
    rank correlation exact in expectation regardless of the marginals.
    ``value_ramp`` scales values linearly from 1 at the first slot to
    ``1 + value_ramp`` at the last, so later traffic is denser in value.
    """

    episodes: int = 10
    T: int = 96
    impressions_per_slot: float = 50.0
    value_alpha: float = 2.0
    value_beta: float = 50.0
    value_scale: float = 1.0
    price_mu: float = 0.0
    price_sigma: float = 0.5
    correlation: float = 0.0
    value_ramp: float = 0.0
    shift_slot: Optional[int] = None
    shift_factor: float = 1.0
    episode_price_jitter: float = 0.0

    def validate(self) -> None:
        problems = []
        if self.episodes < 1:
            problems.append("episodes must be >= 1")
        if self.T < 1:
            problems.append("T must be >= 1")
        if not self.impressions_per_slot > 0:
            problems.append("impressions_per_slot must be > 0")
        if not (self.value_alpha > 0 and self.value_beta > 0 and self.value_scale > 0):
            problems.append("value distribution parameters must be > 0")
        if not self.price_sigma >= 0:
            problems.append("price_sigma must be >= 0")
        if not -1 <= self.correlation <= 1:
            problems.append("correlation must be in [-1, 1]")
        if not self.value_ramp > -1:
            problems.append("value_ramp must be > -1")
        if self.shift_slot is not None and not 0 <= self.shift_slot < self.T:
            problems.append("shift_slot must be in [0, T)")
        if not self.shift_factor > 0:
            problems.append("shift_factor must be > 0")
        if not self.episode_price_jitter >= 0:
            problems.append("episode_price_jitter must be >= 0")
        if problems:
            raise ValueError("; ".join(problems))


def generate_synthetic(spec: SynthesisSpec, seed: int) -> list[EpisodeData]:
    spec.validate()
    rng = np.random.default_rng(seed)
    # Pearson ρ of the copula that yields Spearman ρ_s for Gaussian marginals
    rho = 2.0 * math.sin(math.pi * spec.correlation / 6.0)
    episodes = []
    for e in range(spec.episodes):
        counts = rng.poisson(spec.impressions_per_slot, size=spec.T)
        n = int(counts.sum())
        slots = np.repeat(np.arange(spec.T), counts)
        z1 = rng.standard_normal(n)
        z2 = rho * z1 + math.sqrt(max(1.0 - rho * rho, 0.0)) * rng.standard_normal(n)
        u = np.clip(stats.norm.cdf(z1), 1e-12, 1 - 1e-12)
        values = stats.beta.ppf(u, spec.value_alpha, spec.value_beta) * spec.value_scale
        values *= 1.0 + spec.value_ramp * slots / max(spec.T - 1, 1)
        day_scale = math.exp(spec.episode_price_jitter * rng.standard_normal())
        prices = np.exp(spec.price_mu + spec.price_sigma * z2) * day_scale
        if spec.shift_slot is not None:
            prices[slots >= spec.shift_slot] *= spec.shift_factor
        clicks = (rng.random(n) < np.minimum(values, 1.0)).astype(int)
        imps = tuple(Impression(int(s), float(v), float(p), int(c))
                     for s, v, p, c in zip(slots, values, prices, clicks))
        episodes.append(EpisodeData(f"ep{e:04d}", spec.T, imps))
    return episodes
