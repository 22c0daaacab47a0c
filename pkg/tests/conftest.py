from __future__ import annotations

import numpy as np
import pytest

from artifact.model import SystemModel, builtin_example


@pytest.fixture(scope="session")
def example():
    """The built-in example: (model, initial data, settings)."""
    return builtin_example()


@pytest.fixture(scope="session")
def example_model(example) -> SystemModel:
    return example[0]


@pytest.fixture(scope="session")
def transport_model() -> SystemModel:
    """Unit-speed transport with identity reflection and no sources."""
    return SystemModel.from_strings("1", "1", "0", "0", "v", "0", name="transport")


def sin2_profile(x: np.ndarray) -> np.ndarray:
    return 0.5 + 0.2 * np.sin(np.pi * np.asarray(x)) ** 2


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
