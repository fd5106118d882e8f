import pytest

_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record the outcome of an acceptance criterion (or one lettered part of it)."""
    def record(label, ok, detail, part=None):
        parts = _ACCEPTANCE.setdefault(label, {})
        parts[part or ""] = (bool(ok), f"({part}) {detail}" if part else detail)
        print(f"{label}{part or ''} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE, key=lambda k: int(k[2:])):
        parts = [_ACCEPTANCE[label][p] for p in sorted(_ACCEPTANCE[label])]
        ok = all(p[0] for p in parts)
        terminalreporter.write_line(f"{label} {'PASS' if ok else 'FAIL'}: "
                                    + " | ".join(p[1] for p in parts))
