import numpy as np
import pytest

from tauleap.network import DEFAULT_BINDING_RATES, binding_birth_death_network


@pytest.fixture
def binding():
    return binding_birth_death_network(DEFAULT_BINDING_RATES)


@pytest.fixture
def binding_unit():
    return binding_birth_death_network((1.0, 1.0, 1.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance summary -----------------------------------------------------------

def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")
    config.acceptance_lines = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    n, title = marker.args
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    verdict = "PASS" if report.passed else "FAIL"
    item.config.acceptance_lines[n] = f"criterion {n} {verdict}: {title}" + (f" ({detail})" if detail else "")


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
