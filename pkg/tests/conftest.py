import os

import pytest
from hypothesis import HealthCheck, settings

from drlb.env import EpisodeData, Impression

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def episode(slots, T=None, episode_id="ep"):
    """Build EpisodeData from a list of slots, each a list of (value, market_price)."""
    imps = [Impression(t, v, p) for t, slot in enumerate(slots) for v, p in slot]
    return EpisodeData(episode_id, T if T is not None else max(len(slots), 1), tuple(imps))


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; printed in the terminal summary."""
    def record(number, title, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] criterion {number:2d}: {title}"
        _CRITERIA[number] = line + (f" ({detail})" if detail else "")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
