import pytest

ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """``record(n, ok, detail)``: a criterion passes only if every recorded part passes."""
    def record(n, ok, detail=""):
        prev_ok, prev_detail = ACCEPTANCE.get(n, (True, ""))
        ACCEPTANCE[n] = (prev_ok and bool(ok), "; ".join(d for d in (prev_detail, detail) if d))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n}: NOT RUN")
