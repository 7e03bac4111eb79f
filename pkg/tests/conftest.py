import numpy as np
import pytest
import scipy.sparse as sp

from igasens import shapes


def rel_err(a, b):
    a = a.toarray() if sp.issparse(a) else np.asarray(a, dtype=float)
    b = b.toarray() if sp.issparse(b) else np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def cox_de_boor(U, i, p, x):
    """Textbook recursion, right-closed at the last knot."""
    U = list(U)
    if p == 0:
        if U[i] <= x < U[i + 1]:
            return 1.0
        last = max(j for j in range(len(U) - 1) if U[j] < U[j + 1])
        return 1.0 if (x == U[-1] and i == last) else 0.0
    a = 0.0 if U[i + p] == U[i] else (x - U[i]) / (U[i + p] - U[i]) * cox_de_boor(U, i, p - 1, x)
    b = 0.0 if U[i + p + 1] == U[i + 1] else \
        (U[i + p + 1] - x) / (U[i + p + 1] - U[i + 1]) * cox_de_boor(U, i + 1, p - 1, x)
    return a + b


@pytest.fixture(scope="session")
def radial_disk():
    return shapes.disk(0.2, 0.8)


@pytest.fixture(scope="session")
def ellipse_disk():
    return shapes.disk_to_ellipse(0.5, (0.6, 0.45))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report: one line per criterion at the end of the run
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _CRITERIA[n] = (title, rep.passed, getattr(item, "detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n} {'PASS' if ok else 'FAIL'}: {title}"
                                    + (f" ({detail})" if detail else ""))
