import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from mtplan.workload import ClusterTopology  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def topo8():
    return ClusterTopology.uniform(8, 4, 200e9, 25e9, 80e9, 312e12)


@pytest.fixture
def topo16():
    return ClusterTopology.uniform(16, 4, 200e9, 25e9, 80e9, 312e12)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
