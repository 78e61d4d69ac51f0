import numpy as np
import pytest


def central_diff(f, x, step=1e-5, idx=None):
    """Central finite-difference gradient of scalar ``f`` at array ``x``.

    ``idx`` restricts the probe to a subset of flat indices (others stay 0).
    """
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size) if idx is None else idx:
        old = flat[i]
        flat[i] = old + step
        fp = f(x)
        flat[i] = old - step
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * step)
    return g


def rel_err(a, b, idx=None):
    a, b = np.asarray(a).reshape(-1), np.asarray(b).reshape(-1)
    if idx is not None:
        a, b = a[idx], b[idx]
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one summary line per acceptance criterion, pass or fail
_CRITERIA = {}
_NOTES = {}


@pytest.fixture
def note(request):
    """Attach measured values to the acceptance summary line of the calling test."""
    def add(text):
        _NOTES.setdefault(request.node.name, []).append(str(text))
    return add


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.failed or report.skipped:
        prev = _CRITERIA.get(name)
        if prev != "FAIL":
            _CRITERIA[name] = "FAIL" if report.failed else ("SKIP" if report.skipped else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda n: int(n.split("_")[2])):
        num = name.split("_")[2]
        desc = " ".join(name.split("_")[3:])
        terminalreporter.write_line(f"criterion {num}: {_CRITERIA[name]}  ({desc})")
        for line in _NOTES.get(name, []):
            terminalreporter.write_line(f"    {line}")
