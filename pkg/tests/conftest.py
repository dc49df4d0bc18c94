import pytest

from mgtorsion.physcore import OscillatorParams
from mgtorsion import response as rsp


@pytest.fixture(scope="session")
def params():
    return OscillatorParams()


@pytest.fixture(scope="session")
def viscous(params):
    return params.with_damping("viscous")


@pytest.fixture(scope="session")
def critical_filter(params):
    return rsp.design_filter(params, 18.0, 0.58)


@pytest.fixture(scope="session")
def budget():
    return rsp.CALIBRATED_BUDGET


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one acceptance criterion from a mapping of named boolean checks."""
    results = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number: int, title: str, checks: dict, detail: str = ""):
        failed = [k for k, ok in checks.items() if not ok]
        status = "FAIL" if failed else "PASS"
        line = f"{status} criterion {number:2d}: {title}"
        if detail:
            line += f" [{detail}]"
        if failed:
            line += f" (failed: {', '.join(failed)})"
        results[number] = line
        print(line)
        assert not failed, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
