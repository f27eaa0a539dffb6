import hypothesis
import numpy as np
import pytest

np.seterr(all="raise", under="ignore")

hypothesis.settings.register_profile("default", deadline=None, derandomize=True)
hypothesis.settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; the summary prints them in order at the end of the run."""

    def report(num, ok, detail=""):
        CRITERIA[num] = (bool(ok), detail)
        return bool(ok)

    return report


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(CRITERIA):
        ok, detail = CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
