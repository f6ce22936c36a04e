from threadpoolctl import threadpool_limits

# single BLAS thread: results do not depend on the machine's core count
_LIMITS = threadpool_limits(limits=1)

ACCEPTANCE = {}  # criterion number -> (passed, one-line detail)


def record(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (title, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
