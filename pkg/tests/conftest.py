import numpy as np
import pytest

from lagr import _core_py, kernels, solver
from lagr._backend import BACKEND

BACKENDS = ["python"] + (["cython"] if BACKEND == "cython" else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test once per available core implementation."""
    if request.param == "python":
        monkeypatch.setattr(solver, "core", _core_py)
        monkeypatch.setattr(kernels, "core", _core_py)
    return request.param


def random_dataset(rng, n=12, p=2, spread=1.0, noise=0.3):
    """Small synthetic dataset with ``p`` covariates plus intercept on the unit square."""
    from lagr import Dataset

    locs = rng.uniform(0, spread, size=(n, 2))
    X = rng.normal(size=(n, p))
    beta = rng.normal(size=p + 1)
    y = beta[0] + X @ beta[1:] + noise * rng.normal(size=n)
    return Dataset.from_arrays(locs, X, y)


_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        detail = dict(report.user_properties).get("detail", "")
        _ACCEPTANCE[name] = ("PASS" if report.outcome == "passed" else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        status, detail = _ACCEPTANCE[name]
        num = int(name.split("_")[2])
        label = " ".join(name.split("_")[3:])
        terminalreporter.write_line("criterion %2d %-24s %s  %s" % (num, label, status, detail))
