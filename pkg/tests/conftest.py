import numpy as np
import pytest
from hypothesis import settings

from dris.model import ChannelSet, SystemParams

settings.register_profile("dris", max_examples=60, deadline=None)
settings.load_profile("dris")


def scalar_params(num_ris=1, num_users=1, noise_w=1.0, **kw):
    """Unit-scale params for hand-checkable instances."""
    base = dict(
        bandwidth_hz=1.0,
        noise_w=noise_w,
        p_max_w=10.0,
        amplifier_inefficiency=1.0,
        p_bs_w=1.0,
        p_user_w=(0.0,) * num_users,
        p_ris_element_w=0.0,
        num_antennas=1,
        num_ris=num_ris,
        elements_per_ris=(1,) * num_ris,
        num_users=num_users,
        min_rates_bps=(0.0,) * num_users,
    )
    base.update(kw)
    return SystemParams(**base)


def scalar_channels(g, G, h):
    """K=1, M=1, N_l=1 channels from python scalars (h, G per RIS)."""
    return ChannelSet(
        np.array([[g]], dtype=complex),
        tuple(np.array([[x]], dtype=complex) for x in G),
        (tuple(np.array([x], dtype=complex) for x in h),),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = {}


@pytest.fixture
def report():
    """Record one acceptance verdict: report(number, passed, detail)."""
    def record(number, passed, detail):
        _ACCEPTANCE[number] = (bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {number:2d}: {detail}")
