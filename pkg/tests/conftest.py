from hypothesis import settings

# First calls into the compiled kernels pay a one-off load cost.
settings.register_profile("default", deadline=None)
settings.load_profile("default")

# criterion number -> list of (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, list[tuple[bool | None, str]]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[number]
        if any(ok is False for ok, _ in parts):
            status = "FAIL"
        elif all(ok is None for ok, _ in parts):
            status = "SKIP"
        else:
            status = "PASS"
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {detail}")
