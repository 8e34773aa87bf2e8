"""Prints the acceptance summary (one line per criterion) after the run."""

ACCEPTANCE = {}


def record(criterion, name, passed, detail=""):
    """Collect one acceptance check; lines are grouped per criterion."""
    ACCEPTANCE.setdefault(criterion, []).append((name, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[n]
        ok = all(p for _, p, _ in checks)
        parts = "; ".join(f"{name}: {'ok' if p else 'FAIL'}{f' ({d})' if d else ''}"
                          for name, p, d in checks)
        tr.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {parts}")
