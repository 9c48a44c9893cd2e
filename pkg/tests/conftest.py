import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import qdtune as q

settings.register_profile(
    "ci", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def reference_params():
    return q.reference_device()


@pytest.fixture(scope="session")
def reference_scan(reference_params):
    """Full-range stored scan used by the off-line tuning tests.

    200x200 px at 2 mV/px, covering 125..525 x 150..550 mV; the
    double-dot region sits left of center and the merged-dot plateau
    fills the upper right.
    """
    scan, labels = q.render_scan(reference_params, (325.0, 350.0), (400.0, 400.0), 2.0)
    return scan, labels


@pytest.fixture(scope="session")
def reference_source(reference_scan):
    scan, labels = reference_scan
    return q.PremeasuredScan(scan, labels)


@pytest.fixture(scope="session")
def oracle():
    return q.OracleClassifier()


@pytest.fixture(scope="session")
def small_dataset():
    """Twelve labeled windows from six random devices; enough to train on."""
    return q.generate_dataset(6, 2, seed=2)


def random_label_grid(rng, n1=None, n2=None):
    n1 = n1 or int(rng.integers(4, 40))
    n2 = n2 or int(rng.integers(4, 40))
    codes = rng.integers(0, 5, size=(n1, n2)).astype(np.int8)
    res = 2.0
    v1 = 100 + (np.arange(n1) + 0.5) * res
    v2 = 200 + (np.arange(n2) + 0.5) * res
    return q.LabelGrid(codes, v1, v2)


@pytest.fixture(scope="session")
def label_grid_factory():
    return random_label_grid


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion, then assert.

    The collected lines are echoed in the terminal summary so the
    criterion results stay visible even with output capture on.
    """

    def record(number: int, ok: bool, detail: str) -> None:
        status = "PASS" if ok else "FAIL"
        line = f"{status} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[-1])):
            terminalreporter.write_line(line)
