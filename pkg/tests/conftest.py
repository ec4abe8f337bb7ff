import numpy as np
import pytest

from dualpop.model import LevelIIFitness, ModelParams, TypeSubset


def two_type(**kw) -> ModelParams:
    """Two types, ``V1 = (0, 1)``, ``V2 = mu(1)``, all rates zero unless given."""
    base = dict(K=2, m=np.zeros((2, 2)), s1=0.0, V1=[0.0, 1.0], s2=0.0,
                V2=LevelIIFitness.linear(TypeSubset.parse("(10)")), c=0.0,
                gamma1=0.0, gamma2=0.0)
    base.update(kw)
    return ModelParams(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion
_ACCEPT: dict = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance" not in report.nodeid or not name.startswith("test_A"):
        return
    tag = name[5:].split("_", 1)[0]
    if report.when == "call" or report.outcome != "passed":
        prev = _ACCEPT.get(tag, "PASS")
        state = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _ACCEPT[tag] = state if prev == "PASS" else prev


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPT:
        return
    terminalreporter.section("acceptance criteria")
    for tag in sorted(_ACCEPT, key=lambda s: int(s[1:])):
        terminalreporter.write_line(f"{tag}: {_ACCEPT[tag]}")
