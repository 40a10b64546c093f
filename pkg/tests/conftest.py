import numpy as np
import pytest

from ekinversion.core import Ensemble, LinearForwardModel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    vals = np.linspace(1.0, cond, n)
    G = Q @ np.diag(vals) @ Q.T
    return 0.5 * (G + G.T)


def random_problem(rng, J=5, d=4, K=3, spd=True):
    """A small random linear inverse problem with an ensemble."""
    A = rng.standard_normal((K, d))
    Gamma = random_spd(rng, K) if spd else np.eye(K)
    model = LinearForwardModel(A, Gamma)
    ens = Ensemble(rng.standard_normal((J, d)))
    y = rng.standard_normal(K)
    return ens, model, y


#: criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


def report_acceptance(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"ACCEPTANCE {number:2d}: {'PASS' if passed else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'} - {detail}")
