import os
import sys

from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
