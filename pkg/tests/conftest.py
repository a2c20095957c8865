import pytest


def pytest_configure(config):
    config.acceptance = []


@pytest.fixture
def record_criterion(request):
    """Append ``(number, title, status, seconds, budget, note)`` to the run's
    acceptance summary."""
    return request.config.acceptance.append


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = sorted(config.acceptance)
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, status, seconds, budget, note in rows:
        line = f"criterion {n:>2} {status:<4} {title} ({seconds:.2f}s of {budget:g}s)"
        terminalreporter.write_line(line + (f": {note}" if note else ""))
