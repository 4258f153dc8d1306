import pytest

from molchan import Cir, TrainingSequence


@pytest.fixture
def alt4():
    return TrainingSequence([1, 0, 1, 0])


@pytest.fixture
def cir92():
    return Cir([9.0], 2.0)



_ACCEPTANCE: list[tuple[int, bool, str]] = []


@pytest.fixture
def record():
    """Log one acceptance verdict; the summary prints after the run."""

    def _record(criterion: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE.append((criterion, bool(ok), detail))
        return bool(ok)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(_ACCEPTANCE, key=lambda item: item[0]):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
