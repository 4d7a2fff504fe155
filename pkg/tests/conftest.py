import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("dfilab", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("dfilab")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_gan():
    """A quickly trained narrow GAN on the eight-mode ring, shared across tests."""
    from dfilab.data import eight_gaussian_spec
    from dfilab.gan import GanConfig, train_gan

    cfg = GanConfig(hidden=32, batch_size=64, iterations=1500, seed=0)
    return train_gan(cfg, eight_gaussian_spec())


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(criterion: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
