import numpy as np
import pytest


def rand_pd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.exp(rng.uniform(0.0, np.log(cond), n))
    return (Q * lam) @ Q.T


def rand_herm_pd(rng, n, cond=10.0):
    G = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    Q, _ = np.linalg.qr(G)
    lam = np.exp(rng.uniform(0.0, np.log(cond), n))
    return (Q * lam) @ Q.conj().T


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# -- acceptance report ----------------------------------------------------------

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.skipped):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        if rep.skipped:
            status = "SKIP"
            if isinstance(rep.longrepr, tuple):
                detail = rep.longrepr[2]
        else:
            status = "PASS" if rep.passed else "FAIL"
        _CRITERIA[num] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[num]
        line = f"criterion {num:2d} {status}: {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
