import pytest

_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one line per acceptance criterion for the terminal summary."""

    def emit(number: int, title: str, passed: bool, detail: str, seconds: float):
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}  {title}: {detail} ({seconds:.1f} s)"
        print(line)
        _ACCEPTANCE.append(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
