import numpy as np
import pytest


def random_spd(rng, n, cond=None):
    """Random SPD matrix; with ``cond`` the spectrum is geometric with that condition number."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    if cond is None:
        lam = rng.uniform(0.1, 3.0, n)
    else:
        lam = cond ** (-np.arange(n) / max(n - 1, 1))
    m = (q * lam) @ q.T
    return 0.5 * (m + m.T)


def random_corr(rng, n, t=None):
    """Sample correlation of a random factor-ish panel (always SPD for t > n)."""
    t = t or 5 * n
    b = rng.standard_normal((n, 2))
    x = rng.standard_normal((t, 2)) @ b.T + rng.standard_normal((t, n))
    return np.corrcoef(x, rowvar=False)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


C2 = np.array([[1.0, 0.5], [0.5, 1.0]])
# spectral formula: a = (1/sqrt(0.5) + 1/sqrt(1.5)) / 2, b = (1/sqrt(1.5) - 1/sqrt(0.5)) / 2
C2_INV_SQRT = np.array([[1.1153550716504106, -0.2988584907226844],
                        [-0.2988584907226844, 1.1153550716504106]])


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
