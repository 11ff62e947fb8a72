import pytest

# criterion number -> list of (part, ok, detail), filled by the acceptance tests
ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    def record(criterion, part, ok, detail):
        ACCEPTANCE.setdefault(criterion, []).append((part, bool(ok), detail))
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[c]
        status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{p}: {'ok' if ok else 'FAIL'} ({d})" for p, ok, d in parts)
        terminalreporter.write_line(f"criterion {c:2d} {status}  {detail}")
