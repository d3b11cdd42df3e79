import pytest

from splitchain import harness


@pytest.fixture(scope="session")
def reference_runs():
    return {i: harness.run(harness.build_experiment(i)) for i in harness.EXPERIMENT_IDS}


ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
