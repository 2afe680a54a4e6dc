import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("deepgf", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("deepgf")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ------------------------------------------------------------ acceptance report

ACCEPTANCE = {}


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.details = number, title, []

    def note(self, text):
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, kind, exc, tb):
        status = "PASS" if kind is None else "FAIL"
        detail = "; ".join(self.details)
        if exc is not None and not isinstance(exc, AssertionError):
            detail = f"{detail}; {type(exc).__name__}: {exc}".lstrip("; ")
        ACCEPTANCE[self.number] = f"criterion {self.number:2d} {status}  {self.title}" + (f"  [{detail}]" if detail else "")
        return False


@pytest.fixture
def criterion():
    """``with criterion(n, title) as c:`` records a pass/fail line for acceptance criterion ``n``."""
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
