import os
import sys

import pytest
from hypothesis import HealthCheck, settings, strategies as st

from pbisim.model import SparseModel

settings.register_profile("default", max_examples=150, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=500, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def normalise(weights):
    total = sum(weights)
    return [w / total for w in weights]


@st.composite
def small_models(draw, max_states=8, max_actions=3, max_fanout=4, weights=(1, 4)):
    """Random MDPs with probabilities k/d for small integers k."""
    n = draw(st.integers(1, max_states))
    choices = []
    for _ in range(n):
        acts = []
        for _ in range(draw(st.integers(1, max_actions))):
            targets = draw(st.lists(st.integers(0, n - 1), min_size=1,
                                    max_size=min(max_fanout, n), unique=True))
            w = [draw(st.integers(*weights)) for _ in targets]
            acts.append(sorted(zip(targets, normalise(w))))
        choices.append(acts)
    goal = draw(st.sets(st.integers(0, n - 1)))
    return SparseModel.from_choices(choices, goal=goal, initial=0)


def chain(n):
    """0 -> 1 -> ... -> n-1, goal at the end."""
    choices = [[[(s + 1, 1.0)]] for s in range(n - 1)] + [[[(n - 1, 1.0)]]]
    return SparseModel.from_choices(choices, goal=[n - 1])


def gambler(p=0.5):
    """State 0 wins with p and retries with 1-p; reaches goal with probability 1."""
    return SparseModel.from_choices([[[(0, 1 - p), (1, p)]], [[(1, 1.0)]]], goal=[1])


@pytest.fixture
def tmp_model(tmp_path):
    def write(model, name="m"):
        from pbisim.model import write_model
        tra, lab = write_model(model)
        (tmp_path / f"{name}.tra").write_text(tra)
        (tmp_path / f"{name}.lab").write_text(lab)
        return str(tmp_path / f"{name}.tra"), str(tmp_path / f"{name}.lab")
    return write


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
