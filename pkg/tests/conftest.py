def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import CRITERIA, RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        state = "NOT RUN" if n not in RESULTS else ("PASS" if RESULTS[n] else "FAIL")
        terminalreporter.write_line(f"criterion {n}: {state} - {CRITERIA[n]}")
