import pytest

# filled by test_acceptance so the terminal summary can list every criterion
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[cid].line())
    passed = sum(r.passed for r in ACCEPTANCE_RESULTS.values())
    terminalreporter.write_line(f"{passed}/{len(ACCEPTANCE_RESULTS)} criteria passed")


@pytest.fixture(scope="session")
def acceptance_results():
    return ACCEPTANCE_RESULTS
