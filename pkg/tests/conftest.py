import pytest

_acceptance: list[tuple[str, str, str]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and item.module.__name__.endswith("test_acceptance"):
        label = getattr(item.function, "criterion", item.name)
        detail = dict(report.user_properties).get("detail", "")
        _acceptance.append((label, "PASS" if report.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for label, verdict, detail in _acceptance:
        terminalreporter.write_line(f"{verdict}  {label}: {detail}")
