import numpy as np
import pytest

from structpulse.config import preset_bundle


@pytest.fixture(scope="session")
def bundles():
    return {name: preset_bundle(name) for name in ("1q-x", "qutrit-x", "2q-ent")}


@pytest.fixture(scope="session")
def tasks(bundles):
    return {name: b.task for name, b in bundles.items()}


def random_field(task, seed, scale=None):
    gen = np.random.default_rng(seed)
    scale = task.u_max / 4 if scale is None else scale
    return gen.uniform(-scale, scale, size=task.shape)


def finite_difference_gradient(task, u, step=1e-6):
    """Central finite differences of the infidelity, entry by entry."""
    from structpulse.dynamics import task_fidelity
    g = np.zeros_like(u)
    for m in range(u.shape[0]):
        for k in range(u.shape[1]):
            up = u.copy()
            up[m, k] += step
            um = u.copy()
            um[m, k] -= step
            g[m, k] = ((1 - task_fidelity(task, up)) - (1 - task_fidelity(task, um))) / (2 * step)
    return g


# Acceptance-criterion reporting: tests/test_acceptance.py registers one
# line per criterion; printed after the run so pass/fail is visible even
# without -s.
ACCEPTANCE_RESULTS = []


def record_criterion(name, passed, detail=""):
    ACCEPTANCE_RESULTS.append((name, passed, detail))
    assert passed, f"acceptance criterion failed: {name} {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if passed else "FAIL"
        line = f"{status}  {name}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
