"""Collects acceptance verdicts and prints one line per criterion at the end of the run."""

from collections import defaultdict

ACCEPTANCE = defaultdict(list)


def record(criterion: int, check: str, ok: bool, detail: str = "") -> bool:
    """Store one sub-check verdict and echo it; returns ``ok`` for the caller to assert."""
    ACCEPTANCE[criterion].append((check, bool(ok), detail))
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[criterion]
        verdict = "PASS" if all(ok for _, ok, _ in checks) else "FAIL"
        parts = "; ".join(f"{name} {'ok' if ok else 'FAILED'}{f' ({d})' if d else ''}" for name, ok, d in checks)
        tr.write_line(f"criterion {criterion:2d}: {verdict}  {parts}")
