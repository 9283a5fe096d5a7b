import pytest

# criterion number -> list of (check label, passed, detail)
ACCEPTANCE: dict[int, list] = {}


@pytest.fixture
def criterion():
    """Record one acceptance check, then assert it."""

    def record(number: int, label: str, passed: bool, detail: str):
        ACCEPTANCE.setdefault(number, []).append((label, bool(passed), detail))
        assert passed, f"criterion {number} ({label}): {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[number]
        ok = all(p for _, p, _ in checks)
        tr.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}")
        for label, passed, detail in checks:
            tr.write_line(f"    [{'pass' if passed else 'FAIL'}] {label}: {detail}")
