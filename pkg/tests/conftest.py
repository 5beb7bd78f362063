
# outcome of every test's call phase, read back by the acceptance summary
RESULTS = {}


def pytest_collection_modifyitems(items):
    # the acceptance criteria summarise other modules' results, so they run last
    items.sort(key=lambda item: item.nodeid.startswith("tests/test_acceptance.py"))


def pytest_runtest_logreport(report):
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        RESULTS[report.nodeid] = report.outcome

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
