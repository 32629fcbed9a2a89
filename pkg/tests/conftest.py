import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from popgcn.data_io import SyntheticConfig, generate_synthetic_cohort

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_correlation(n, rng):
    """|Pearson correlation| of random Gaussian series, diagonal exactly 1."""
    t = max(n + 2, int(rng.integers(n + 2, 3 * n + 8)))
    X = rng.normal(size=(t, n)) @ rng.normal(size=(n, n))
    C = np.abs(np.corrcoef(X, rowvar=False))
    C = np.minimum((C + C.T) / 2.0, 1.0)
    np.fill_diagonal(C, 1.0)
    return C


@pytest.fixture(scope="session")
def small_cohort():
    return generate_synthetic_cohort(SyntheticConfig(n_subjects=24, n_roi=12, label_positive_count=12, seed=3))


@pytest.fixture(scope="session")
def default_cohort():
    return generate_synthetic_cohort(SyntheticConfig(seed=42))


# criterion id -> "PASS ..." / "FAIL ..." lines collected by test_acceptance
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for cid in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[cid])
