import numpy as np
import pytest

from sls_synth import scp
from sls_synth.environments import load_benchmark


@pytest.fixture(scope="session")
def lightdark_spec():
    return load_benchmark("lightdark").spec


@pytest.fixture(scope="session")
def lightdark_full(lightdark_spec):
    return scp.synthesize(lightdark_spec)


@pytest.fixture(scope="session")
def lightdark_ce(lightdark_spec):
    return scp.ce_baseline(lightdark_spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria: each test records one verdict line, printed in the summary
ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def verdict(request):
    lines = request.config.stash[ACCEPTANCE]
    number = request.node.get_closest_marker("criterion").args[0]

    def record(ok: bool, detail: str):
        lines[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(lines[number])
        assert ok, lines[number]

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and rep.failed:
        lines = item.config.stash[ACCEPTANCE]
        lines.setdefault(marker.args[0], f"criterion {marker.args[0]}: FAIL  {call.excinfo.typename}: "
                                         f"{str(call.excinfo.value).splitlines()[0][:120]}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
