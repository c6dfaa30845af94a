_CRITERIA: dict[int, tuple[bool, str, float]] = {}


def record_criterion(k: int, passed: bool, line: str, seconds: float) -> None:
    _CRITERIA[k] = (passed, line, seconds)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        passed, line, secs = _CRITERIA[k]
        tr.write_line(f"{'PASS' if passed else 'FAIL'} [{secs:6.1f}s] {line}")
    n = sum(p for p, _, _ in _CRITERIA.values())
    tr.write_line(f"{n}/{len(_CRITERIA)} criteria pass")
