import numpy as np
import pytest
from hypothesis import settings

from contrastive_kernel.contrastive_data import ContrastSpec
from contrastive_kernel.diffusion import PotentialSpec

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def ou():
    return PotentialSpec.ou(1.0)


@pytest.fixture
def q_std():
    return ContrastSpec.matched_ou(1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, ok, detail, seconds, limit)``."""

    def record(n: int, ok: bool, detail: str, seconds: float, limit: float | None = None):
        timed = f"{seconds:.1f}s" + (f" (limit {limit:.0f}s)" if limit is not None else "")
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}  [{timed}]"
        _CRITERIA[n] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
