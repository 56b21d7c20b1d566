import os
from contextlib import contextmanager

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lmdpinn.collocation import CollocationBudget, build_collocation
from lmdpinn.losses import PinnProblem
from lmdpinn.mlp import ScalingSpec
from lmdpinn.physics import DomainSpec, MaterialProperties, ProcessParameters

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


@pytest.fixture
def default_material():
    return MaterialProperties()


@pytest.fixture
def default_process():
    return ProcessParameters()


@pytest.fixture(scope="session")
def desk_problem():
    domain = DomainSpec(10e-3, 4e-3, 2e-3)
    proc = ProcessParameters(laser_start=(2.5e-3, 0.0), t_end=1.0)
    return PinnProblem(MaterialProperties(), proc, domain, ScalingSpec.for_domain(domain, 1.0))


@pytest.fixture(scope="session")
def small_points(desk_problem):
    p = desk_problem
    return build_collocation(p.domain, p.process, CollocationBudget(64, 32, 16, 32), seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary --------------------------------------------------------
# Each acceptance test reports through the ``criterion`` fixture; the terminal
# summary then prints one PASS/FAIL line per criterion (a criterion spanning
# several tests passes only if all of them do).

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    results = request.config.stash[_ACCEPTANCE]

    @contextmanager
    def check(number: int, title: str):
        notes: list[str] = []
        entry = results.setdefault(number, {"title": title, "ok": True, "notes": []})
        try:
            yield notes
        except BaseException as exc:
            entry["ok"] = False
            first = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
            entry["notes"].append(f"{request.node.name}: {first}")
            line = f"criterion {number} FAIL: {title} ({first})"
            print(line)
            raise
        entry["notes"].extend(notes)
        print(f"criterion {number} PASS: {title}" + (f" ({'; '.join(notes)})" if notes else ""))

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        entry = results[number]
        status = "PASS" if entry["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {number} {status}: {entry['title']}")
        for note in entry["notes"]:
            terminalreporter.write_line(f"    {note}")
