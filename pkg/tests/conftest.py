import numpy as np
import pytest

from pairab.core import PairedDataset
from pairab.sim import generate_designs

ACCEPTANCE_LINES: list[str] = []


def record_criterion(name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_dataset(n, rng, tau=2.0, sigma=(1.0, 1.0), beta=(1.0, 1.0), alpha=(1.0, 1.0),
                 missing=0.0, orthogonal=True):
    """Draw from the additive user-effect model with optional random missingness."""
    if orthogonal:
        x1, x2 = generate_designs(n, rng)
    else:
        x1 = rng.choice([-1, 1], n)
        x2 = rng.choice([-1, 1], n)
    u = tau * rng.standard_normal(n)
    y1 = alpha[0] + x1 * beta[0] + u + sigma[0] * rng.standard_normal(n)
    y2 = alpha[1] + x2 * beta[1] + u + sigma[1] * rng.standard_normal(n)
    obs1 = rng.random(n) >= missing
    obs2 = rng.random(n) >= missing
    return PairedDataset.from_arrays(y1, x1, y2, x2, obs1, obs2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
