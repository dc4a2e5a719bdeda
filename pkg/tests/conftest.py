import pytest

_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""

    def record(number, title, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title}" + (f"  [{detail}]" if detail else "")
        print(line)
        request.config.stash[_VERDICTS].append((number, line))
        assert ok, line

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    number = getattr(item.function, "criterion", None)
    if number is None or report.when != "call" or not report.failed:
        return
    lines = item.config.stash[_VERDICTS]
    if not any(n == number for n, _ in lines):
        lines.append((number, f"FAIL  criterion {number:>2}: {item.name} raised before a verdict"))


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[_VERDICTS]
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines, key=lambda x: x[0]):
        terminalreporter.write_line(line)
