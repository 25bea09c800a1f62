import _verdicts


def pytest_terminal_summary(terminalreporter):
    if not _verdicts.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_verdicts.LINES):
        terminalreporter.write_line(_verdicts.LINES[n])
