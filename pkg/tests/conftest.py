import numpy as np
import pytest

from loglinear_ins.ins_dynamics import InputStream


def make_stream(omega, f, G, h, T, hold="exact"):
    """Stream sampled from callables ``t -> (n, 3)`` arrays."""
    n = int(round(T / h))
    t = np.arange(n + 1) * h
    mids = {}
    if hold == "exact":
        tm = t[:-1] + 0.5 * h
        mids = dict(mid_omega_ib_b=omega(tm), mid_f_b=f(tm), mid_G=G(tm))
    return InputStream(h, t, omega(t), f(t), G(t), **mids)


def const(v):
    v = np.asarray(v, float)
    return lambda t: np.broadcast_to(v, (len(t), 3)).copy()


@pytest.fixture
def rng():
    return np.random.default_rng(20240518)
