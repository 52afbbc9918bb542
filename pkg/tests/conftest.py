import pytest

import golden_runs


@pytest.fixture(scope="session")
def cli_runs(tmp_path_factory):
    """Every shipped CLI run executed twice: name -> (exit codes, first outputs, second outputs)."""
    results = {}
    for name in golden_runs.RUNS:
        outs, codes = [], []
        for attempt in (1, 2):
            out = tmp_path_factory.mktemp(f"{name}_{attempt}")
            codes.append(golden_runs.run(name, out))
            outs.append(golden_runs.output_files(out))
        results[name] = (codes, outs[0], outs[1])
    return results


ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict: ``criterion(number, title, passed, detail)``."""

    def record(number, title, passed, detail=""):
        ACCEPTANCE[number] = (title, bool(passed), detail)
        print(f"[{'PASS' if passed else 'FAIL'}] #{number} {title}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] #{number} {title}: {detail}")
