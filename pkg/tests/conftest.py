import pytest

ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record a one-line verdict for an acceptance criterion."""
    name = request.node.name

    def record(detail):
        ACCEPTANCE[name] = detail

    yield record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and item.name.startswith("test_criterion"):
        ACCEPTANCE[item.name + ":outcome"] = "PASS" if rep.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    names = sorted(k for k in ACCEPTANCE if k.endswith(":outcome"))
    if not names:
        return
    terminalreporter.section("acceptance criteria")
    for key in names:
        name = key[: -len(":outcome")]
        detail = ACCEPTANCE.get(name, "")
        terminalreporter.write_line(f"{ACCEPTANCE[key]}  {name}  {detail}")
