import numpy as np
import pytest
from hypothesis import settings

from cfhazard.data import build_frame
from cfhazard.simulate import DgpConfig, generate_panel

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def small_config(**kw):
    base = dict(n_entities=200, endogeneity_rho=0.5, seed=314)
    base.update(kw)
    return DgpConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(20231117)


@pytest.fixture(scope="session")
def endog_frame():
    return build_frame(generate_panel(small_config(n_entities=400), 0))


@pytest.fixture(scope="session")
def two_endog_frame():
    cfg = small_config(pi=((0.5, 1.0, 0.3), (0.2, -0.4, 0.9)), beta2=(0.5, -0.3), n_entities=300)
    return build_frame(generate_panel(cfg, 0))


#: one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
