import functools

import numpy as np
import pytest

import dispcascade.cli
import dispcascade.lindblad
import dispcascade.transfer

PHYS_TOL = 1e-9

ACCEPTANCE_LINES: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "unphysical: integrations that start from non-states")
    config.addinivalue_line("markers", "acceptance(number, title): one acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    failed_early = rep.when == "setup" and not rep.passed
    if rep.when == "call" or failed_early:
        number, title = marker.args
        status = "PASS" if rep.passed else "FAIL"
        details = "; ".join(v for k, v in item.user_properties if k == "detail")
        line = f"[{status}] criterion {number}: {title}"
        ACCEPTANCE_LINES.append(line + (f" ({details})" if details else ""))


def _guarded(integrate, record):
    @functools.wraps(integrate)
    def wrapper(*args, **kwargs):
        kwargs.setdefault("check_positivity", True)
        traj = integrate(*args, **kwargs)
        record.append(traj)
        assert traj.trace_drift <= PHYS_TOL, f"trace drift {traj.trace_drift:.3e}"
        assert traj.herm_drift <= PHYS_TOL, f"Hermiticity drift {traj.herm_drift:.3e}"
        assert traj.min_eig is None or traj.min_eig >= -PHYS_TOL, f"min eigenvalue {traj.min_eig:.3e}"
        return traj
    return wrapper


@pytest.fixture(autouse=True)
def physicality_guard(request, monkeypatch):
    """Every integration in the suite must stay trace-preserving, Hermitian
    and positive to 1e-9 (positivity checked at every recorded sample)."""
    record = []
    if request.node.get_closest_marker("unphysical") is None:
        wrapped = _guarded(dispcascade.lindblad.integrate, record)
        for mod in (dispcascade.lindblad, dispcascade.transfer, dispcascade.cli):
            monkeypatch.setattr(mod, "integrate", wrapped)
        if hasattr(request.module, "integrate"):
            monkeypatch.setattr(request.module, "integrate", wrapped)
    yield record


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
