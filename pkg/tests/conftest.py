import numpy as np
import pytest
from hypothesis import settings

from psmpose import synth

settings.register_profile("psmpose", max_examples=60, deadline=None)
settings.load_profile("psmpose")


@pytest.fixture(scope="session")
def short_night():
    """One-hour night with a fixed drift; shared across sync/preprocess tests."""
    cfg = synth.SynthConfig(seed=123, night_duration_s=3600.0, drift_s=3.0)
    return synth.generate_night(cfg, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def small_cohort():
    """Six half-hour nights, preprocessed to 18x18 frames."""
    from helpers import cohort_dataset

    return cohort_dataset(6, 1800.0, seed=11)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)
