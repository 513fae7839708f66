import acceptance_log


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: exhaustive oracles that take several seconds")


def pytest_terminal_summary(terminalreporter):
    if not acceptance_log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(acceptance_log.RESULTS):
        terminalreporter.write_line(acceptance_log.RESULTS[key])
