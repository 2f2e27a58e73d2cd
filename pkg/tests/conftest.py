import numpy as np
import pytest

from choicekit import (STUDY_SCHEMA, ChoiceDataset, Respondent, SimConfig, load_model_spec,
                       reference_design, simulate_dataset)


def make_dataset(levels, chosen, *, pivots=30.0, blocks=1, response_times=600.0,
                 households=None, covariates=None, ids=None):
    """Small hand-built dataset; ``levels`` is (N, 8, 2, 6) raw, ``chosen`` is (N, 8)."""
    levels = np.asarray(levels, dtype=float)
    n = levels.shape[0]
    pivots = np.broadcast_to(np.asarray(pivots, float), (n,))
    blocks = np.broadcast_to(np.asarray(blocks), (n,))
    rts = np.broadcast_to(np.asarray(response_times, float), (n,))
    households = households or [(1, 0, 0)] * n
    covariates = covariates or [{}] * n
    ids = ids or [f"P{i:03d}" for i in range(n)]
    resp = tuple(Respondent(ids[i], int(blocks[i]), float(pivots[i]), covariates[i], float(rts[i]),
                            *households[i]) for i in range(n))
    return ChoiceDataset(STUDY_SCHEMA, resp, levels, np.asarray(chosen))


def random_levels(rng, n):
    """Random valid raw levels of shape (n, 8, 2, 6)."""
    cols = [rng.choice(a.levels, size=(n, 8, 2)) for a in STUDY_SCHEMA.attributes]
    return np.stack(cols, axis=-1).astype(float)


@pytest.fixture(scope="session")
def design():
    return reference_design()


@pytest.fixture(scope="session")
def spec71():
    return load_model_spec("table7-spec1")


@pytest.fixture(scope="session")
def spec72():
    return load_model_spec("table7-spec2")


@pytest.fixture(scope="session")
def spec81():
    return load_model_spec("table8-spec1")


@pytest.fixture(scope="session")
def spec82():
    return load_model_spec("table8-spec2")


@pytest.fixture(scope="session")
def mnl_data(design, spec71):
    return simulate_dataset(SimConfig(961, design, spec71, pivot_times=(30.0,), seed=11))


@pytest.fixture(scope="session")
def small_mixed_data(design, spec81):
    return simulate_dataset(SimConfig(60, design, spec81, seed=5))


# One line per acceptance criterion, echoed at the end of the pytest run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
