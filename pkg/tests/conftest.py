import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results is None:
        return
    outcome = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            name = rep.nodeid.rsplit("::", 1)[-1]
            if "test_acceptance.py" in rep.nodeid and name.startswith("test_criterion_") and rep.when == "call":
                outcome[int(name.split("_")[2])] = key == "passed"
    terminalreporter.section("acceptance criteria")
    for n in range(1, 12):
        if n not in outcome:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
            continue
        detail = results.get(n, "")
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if outcome[n] else 'FAIL'}  {detail}")
