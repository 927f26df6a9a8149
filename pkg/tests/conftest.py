import numpy as np
import pytest

from packuv.core import GaussianSet


def random_gaussians(rng, n, spread=1.0, color_dim=3, alpha=None):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianSet(
        rng.normal(scale=spread, size=(n, 3)),
        rng.uniform(0.01, 0.5, size=(n, 3)),
        q,
        rng.uniform(0.01, 1.0, size=n) if alpha is None else alpha,
        rng.normal(size=(n, color_dim)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL")
        _criteria[number] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        status, title = _criteria[number]
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {title}")
