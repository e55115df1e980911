import numpy as np
import pytest

from colddamp.model import Regime, make_spec


def single_mode_spec(**kw):
    args = dict(omega=1.0, gamma=4e-5, nbar=1e5, G=0.2, g_cd=0.6, kappa=4.0, omega_fb=4.5)
    args.update(kw)
    return make_spec(**args)


def two_mode_spec(**kw):
    args = dict(omega=[0.5, 1.0], gamma=[4e-5, 3e-5], nbar=[2e5, 1e5], G=[0.3, 0.2],
                g_cd=0.6, kappa=4.0, omega_fb=4.5)
    args.update(kw)
    return make_spec(**args)


def ladder_spec(n_modes=4, spacing=0.5, **kw):
    k = np.arange(n_modes)
    omega = 1.0 + spacing * k
    args = dict(omega=omega, gamma=(4 + 2 * k) * 1e-5, nbar=1e5 / omega, G=0.2 + 0.1 * k,
                g_cd=0.6, kappa=4.0, omega_fb=4.5)
    args.update(kw)
    return make_spec(**args)


def degenerate_spec(n_modes, **kw):
    args = dict(omega=np.ones(n_modes), gamma=4e-5, nbar=1e5, G=0.2, g_cd=0.6,
                kappa=4.0, omega_fb=4.5, regime=Regime.WFFLC)
    args.update(kw)
    return make_spec(**args)


@pytest.fixture
def single_mode():
    return single_mode_spec()


@pytest.fixture
def two_mode():
    return two_mode_spec()


# one line per acceptance criterion, echoed after the test summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
