import pytest
from hypothesis import settings

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")

_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record a one-line pass/fail verdict for an acceptance criterion."""
    lines = request.config.stash[_VERDICTS]

    def record(number, title, ok, detail=""):
        lines.append((number, title, bool(ok), detail))
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}  {detail}")
        assert ok, f"criterion {number} failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(lines):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}  {detail}")
