"""Shared fixtures: seeded generators, skeleton graphs and a tiny dataset."""

import numpy as np
import pytest

from lccsign.data import SyntheticSpec, default_graphs, even_groups, generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def graphs():
    return default_graphs()


@pytest.fixture(scope="session")
def tiny_spec():
    """Four classes, two concept groups, short clips; generates in milliseconds."""
    return SyntheticSpec(
        num_classes=4,
        T=16,
        signal_window=(4, 8),
        concept_groups=even_groups(4, 2),
        n_train=8,
        n_val=4,
        n_test=4,
        seed=3,
    )


@pytest.fixture(scope="session")
def tiny_data(tiny_spec):
    return generate_synthetic(tiny_spec)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts, one line per criterion, after the run."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", None) != "call":
                continue
            lines += [v for k, v in getattr(rep, "user_properties", []) if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
