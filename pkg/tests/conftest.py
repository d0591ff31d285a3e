import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def small_org():
    from sendguard.synth import generate_org

    return generate_org(n_users=5, emails_per_user=120, n_external=150, n_attacks=40, seed=11)


@pytest.fixture(scope="session")
def small_data(small_org):
    from sendguard.evaluation import OrgData

    return OrgData.from_stream(small_org.stream())


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
