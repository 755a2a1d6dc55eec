import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_RESULTS = pytest.StashKey[dict]()


@pytest.fixture
def record_criterion(request):
    """Store a one-line verdict for an acceptance criterion; printed at the end of the run."""
    results = request.config.stash.setdefault(_RESULTS, {})

    def record(number: int, ok: bool, detail: str) -> bool:
        results[number] = f"CRITERION {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
