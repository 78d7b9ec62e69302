import pytest

# Lines collected by the acceptance tests, printed once at the end of the run.
ACCEPTANCE_LINES = {}


@pytest.fixture
def report_criterion():
    def record(number, title, checks, elapsed, limit=None):
        ok = all(c.passed for c in checks) and (limit is None or elapsed < limit)
        timing = f"{elapsed:.1f}s" + (f" (limit {limit:.0f}s)" if limit else "")
        detail = "; ".join(f"{c.name}={c.value:.4g} [{c.tolerance}]" for c in checks)
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} | {detail} | {timing}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
