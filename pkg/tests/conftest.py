import pytest

from rydmol.atomdata import QuantumDefectTable, RydbergLevel


@pytest.fixture(scope="session")
def cs():
    return QuantumDefectTable.load("Cs")


@pytest.fixture(scope="session")
def hydrogen():
    return QuantumDefectTable.load("H")


@pytest.fixture(scope="session")
def nacs_triple():
    return (RydbergLevel(64, 1, 0.5, 0.5), RydbergLevel(64, 2, 1.5, 0.5),
            RydbergLevel(63, 2, 1.5, 1.5))


# one pass/fail line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE = {}


@pytest.fixture
def verdict(request):
    tr = request.config.pluginmanager.getplugin("terminalreporter")

    def emit(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE[number] = line
        if tr is not None:
            tr.ensure_newline()
            tr.write_line(line)
        assert ok, line

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
