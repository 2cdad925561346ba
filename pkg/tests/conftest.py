from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from persona_align.data import filter_records, parse_swissmetro, split_datasets
from persona_align.oracle.synthetic import SyntheticChoiceOracle
from persona_align.synth import PopulationSpec, generate_population

DATA_DIR = Path(__file__).parent / "data"
SWISSMETRO = DATA_DIR / "swissmetro.dat"


@pytest.fixture(scope="session")
def swissmetro_path() -> Path:
    return SWISSMETRO


@pytest.fixture(scope="session")
def raw_rows(swissmetro_path):
    return parse_swissmetro(swissmetro_path)


@pytest.fixture(scope="session")
def panels(raw_rows):
    return filter_records(raw_rows)


@pytest.fixture(scope="session")
def bundle(panels):
    return split_datasets(panels, 42)


@pytest.fixture(scope="session")
def small_population():
    """K = 8 personas, N = 20 general records."""
    return generate_population(PopulationSpec(n_personas=8, n_general=20, n_test=10, n_holdout_profiles=10, seed=3))


@pytest.fixture
def oracle():
    return SyntheticChoiceOracle()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdicts at the end of every run that collected them."""
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
