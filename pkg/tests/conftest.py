import numpy as np
import pytest

from distopt.netgraph import Graph, connected_random_geometric, metropolis_weights
from distopt.objectives import LogisticProblem, QuadraticProblem, generate_logistic_data, random_quadratic, solve_reference

ACCEPTANCE_LINES = []


@pytest.fixture
def two_node_weight():
    return metropolis_weights(Graph.path(2))


@pytest.fixture
def two_quadratics():
    """f_1 = (x - 1)^2 / 2 and f_2 = (x + 1)^2 / 2 up to constants; x* = 0."""
    return QuadraticProblem(np.ones((2, 1, 1)), np.array([[-1.0], [1.0]]))


@pytest.fixture(scope="session")
def net10():
    g, _ = connected_random_geometric(10, 0.5, seed=1)
    return g, metropolis_weights(g)


@pytest.fixture(scope="session")
def quad10():
    p = random_quadratic(10, 3, mu=1.0, lip=5.0, seed=2)
    return p, solve_reference(p)


@pytest.fixture(scope="session")
def logistic10():
    spec, _ = generate_logistic_data(10, 2, 4, 0.4, seed=3)
    p = LogisticProblem(spec)
    return p, solve_reference(p)


@pytest.fixture(scope="session")
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(number, name, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def figure1_instance():
    from pathlib import Path

    from distopt.bench import ExperimentConfig, build_instance

    cfg = ExperimentConfig.load(Path(__file__).resolve().parents[1] / "docs" / "figure1.toml")
    return cfg, build_instance(cfg)
