import math

import numpy as np
import pytest

from conftest import const, make_stream
from loglinear_ins import group_core as gc
from loglinear_ins.error_dynamics import (
    ErrorDynamicsMatrix,
    ErrorVector,
    F_left,
    F_right,
    GroupError,
    Side,
    closed_form_left,
    closed_form_right,
    discretize,
    error_matrix_stages,
    error_vector_from_group,
    eta_dot_left,
    eta_dot_right,
    factorization_residual,
    left_error,
    propagate_error_linear,
    propagate_error_stream,
    right_error,
)
from loglinear_ins.errors import InternalMismatch, NearPiSingularity
from loglinear_ins.group_core import ExtendedPose, exp_se23, log_se23
from loglinear_ins.ins_dynamics import (
    ConstantGravitation,
    EarthModel,
    ImuSample,
    propagate_chi,
    propagate_chi_b_tilde,
    propagate_chi_e,
    rk4_step,
)
from loglinear_ins.scenario import AnalyticTrajectory, TrajectorySpec, factorization_state, inject_error, synth_reference

I_D = ExtendedPose.identity()
G0 = np.array([0.0, 0.0, -9.81])


def rand_tangent(rng, phi_max=3.0, v=10.0, r=100.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return gc.tangent(axis * rng.uniform(0, phi_max), rng.normal(size=3) * v, rng.normal(size=3) * r)


def rand_pose(rng, **kw):
    return exp_se23(rand_tangent(rng, **kw))


def rand_imu(rng):
    return ImuSample(0.0, rng.normal(size=3), rng.normal(size=3) * 5)


def rand_earth(rng):
    w = rng.normal(size=3)
    return EarthModel(w / np.linalg.norm(w) * 7e-5)


# -- group errors ------------------------------------------------------------


def test_left_error_examples(rng):
    x, y = rand_pose(rng), rand_pose(rng)
    assert np.max(np.abs(left_error(x, x).eta.matrix() - np.eye(5))) <= 1e-12
    assert np.array_equal(left_error(I_D, y).eta.matrix(), y.matrix())
    e = left_error(x, y)
    assert e.side is Side.LEFT
    assert np.max(np.abs(gc.compose(x, e.eta).matrix() - y.matrix())) <= 1e-13 * (1 + np.abs(y.matrix()).max())


def test_right_error_examples(rng):
    x, y = rand_pose(rng), rand_pose(rng)
    assert np.max(np.abs(right_error(x, x).eta.matrix() - np.eye(5))) <= 1e-12
    assert np.array_equal(right_error(I_D, y).eta.matrix(), y.matrix())
    e = right_error(x, y)
    assert e.side is Side.RIGHT
    assert np.max(np.abs(gc.compose(e.eta, x).matrix() - y.matrix())) <= 1e-13 * (1 + np.abs(y.matrix()).max())


def test_error_vector_from_group():
    assert np.array_equal(error_vector_from_group(GroupError(I_D, Side.LEFT)).dx, np.zeros(9))
    eta = ExtendedPose(np.eye(3), np.array([1.0, 2.0, 3.0]), np.zeros(3))
    assert np.array_equal(error_vector_from_group(GroupError(eta, Side.RIGHT)).dx[3:6], [1, 2, 3])
    xi = np.array([0.7, -1.2, 0.4, 3.0, -1.0, 2.0, 40.0, -20.0, 10.0])
    back = error_vector_from_group(GroupError(exp_se23(xi), Side.LEFT)).dx
    assert np.max(np.abs(back - xi)) <= 1e-10
    with pytest.raises(NearPiSingularity):
        error_vector_from_group(GroupError(exp_se23(np.r_[0, 0, np.pi - 1e-9, np.zeros(6)]), Side.LEFT))


# -- group error rates -------------------------------------------------------


def test_eta_dot_identity_is_zero(rng):
    assert np.array_equal(eta_dot_left(I_D, rand_imu(rng)), np.zeros((5, 5)))
    assert np.array_equal(eta_dot_right(I_D, rand_earth(rng), G0), np.zeros((5, 5)))


def test_eta_dot_pure_velocity_error(rng):
    dv = np.array([0.3, -2.0, 1.0])
    eta = ExtendedPose(np.eye(3), dv, np.zeros(3))
    imu = rand_imu(rng)
    out = eta_dot_left(eta, imu)
    assert np.max(np.abs(out[:3, :3])) == 0.0
    assert np.max(np.abs(out[:3, 3] + gc.hat3(imu.omega_ib_b) @ dv)) <= 1e-15
    earth = rand_earth(rng)
    out = eta_dot_right(eta, earth, G0)
    assert np.max(np.abs(out[:3, 3] + gc.hat3(earth.omega_ie_e) @ dv)) <= 1e-15


def test_eta_dot_dual_forms_random(rng):
    # both functions raise InternalMismatch if their two forms disagree
    for _ in range(500):
        eta = rand_pose(rng)
        eta_dot_left(eta, rand_imu(rng))
        eta_dot_right(eta, rand_earth(rng), rng.normal(size=3) * 10)


def test_dual_form_check_catches_mismatch(monkeypatch):
    from loglinear_ins import error_dynamics as ed

    monkeypatch.setattr(ed, "invariant_field_matrix", lambda E: np.zeros_like(E))
    eta = ExtendedPose(np.eye(3), np.array([1.0, 0, 0]), np.zeros(3))
    with pytest.raises(InternalMismatch):
        ed.eta_dot_left(eta, ImuSample(0.0, np.zeros(3), np.zeros(3)))


# -- F matrices --------------------------------------------------------------


def test_F_left_examples():
    F = F_left(ImuSample(0.0, np.zeros(3), np.zeros(3))).F
    ref = np.zeros((9, 9))
    ref[6:9, 3:6] = np.eye(3)
    assert np.array_equal(F, ref)
    F = F_left(ImuSample(0.0, np.array([0, 0, 1.0]), np.zeros(3))).F
    for i in range(3):
        assert np.array_equal(F[3 * i : 3 * i + 3, 3 * i : 3 * i + 3], -gc.hat3([0, 0, 1.0]))


def test_F_right_examples():
    F = F_right(EarthModel(np.zeros(3)), np.zeros(3)).F
    ref = np.zeros((9, 9))
    ref[6:9, 3:6] = np.eye(3)
    assert np.array_equal(F, ref)
    m = F_right(EarthModel(), G0)
    assert m.side is Side.RIGHT
    assert np.array_equal(m.F[3:6, 0:3], gc.hat3(G0))


@pytest.mark.parametrize("side", ["left", "right"])
def test_F_block_structure(rng, side):
    F = F_left(rand_imu(rng)).F if side == "left" else F_right(rand_earth(rng), G0).F
    for i, j in [(0, 1), (0, 2), (1, 2), (2, 0)]:
        assert np.array_equal(F[3 * i : 3 * i + 3, 3 * j : 3 * j + 3], np.zeros((3, 3)))
    assert np.array_equal(F[6:9, 3:6], np.eye(3))


def _log_rate(eta, eta_dot, tau=0.05):
    """d/dt log(eta) along eta_dot, by a 6th-order central difference."""
    xi = gc.vee_se23(gc.inverse(eta).matrix() @ eta_dot)

    def g(s):
        return log_se23(gc.compose(eta, exp_se23(s * xi)))

    c = (45 * (g(tau) - g(-tau)) - 9 * (g(2 * tau) - g(-2 * tau)) + (g(3 * tau) - g(-3 * tau))) / (60 * tau)
    return c


@pytest.mark.parametrize("side", ["left", "right"])
def test_first_order_tangency(rng, side):
    eps = 1e-3
    for _ in range(20):
        d = rng.normal(size=9)
        dx = eps * d / np.linalg.norm(d)
        eta = exp_se23(dx)
        if side == "left":
            imu = ImuSample(0.0, rng.normal(size=3), rng.normal(size=3) * 5)
            F, rate = F_left(imu).F, eta_dot_left(eta, imu)
        else:
            earth, G = rand_earth(rng), rng.normal(size=3) * 10
            F, rate = F_right(earth, G).F, eta_dot_right(eta, earth, G)
        gap = np.linalg.norm(_log_rate(eta, rate) - F @ dx)
        assert gap <= 10 * eps**2
        assert gap <= 1e-6 * eps**2


@pytest.mark.parametrize("side", ["left", "right"])
def test_log_rate_is_linear_at_large_error(rng, side):
    # the vector rate equals F dx for large errors too, not only to first order
    for _ in range(10):
        dx = rand_tangent(rng, phi_max=2.6, v=5.0, r=20.0)
        eta = exp_se23(dx)
        if side == "left":
            imu = ImuSample(0.0, rng.normal(size=3) * 0.3, rng.normal(size=3))
            F, rate = F_left(imu).F, eta_dot_left(eta, imu)
        else:
            earth, G = rand_earth(rng), rng.normal(size=3)
            F, rate = F_right(earth, G).F, eta_dot_right(eta, earth, G)
        assert np.linalg.norm(_log_rate(eta, rate, 0.01) - F @ dx) <= 1e-8 * (1 + np.linalg.norm(F @ dx))


# -- linear propagation ------------------------------------------------------


def test_linear_zero_initial():
    t, out = propagate_error_linear(lambda t: F_left(ImuSample(t, [0.1, 0, 0], [0, 0, 9.8])), ErrorVector(np.zeros(9), Side.LEFT), 0.1, 5.0)
    assert np.array_equal(out, np.zeros((51, 9)))


def test_linear_nilpotent_closed_form():
    earth = EarthModel(np.zeros(3), ConstantGravitation(G0))
    F = F_right(earth, G0)
    dx0 = np.array([0.3, -0.2, 0.5, 1.0, 2.0, -1.0, 10.0, -5.0, 3.0])
    t, out = propagate_error_linear(lambda _t: F, ErrorVector(dx0, Side.RIGHT), 0.5, 20.0)
    phi0, nu0, rho0 = gc.split_tangent(dx0)
    Gphi = np.cross(G0, phi0)
    tt = t[:, None]
    assert np.max(np.abs(out[:, :3] - phi0)) == 0.0
    assert np.max(np.abs(out[:, 3:6] - (nu0 + tt * Gphi))) <= 1e-12
    assert np.max(np.abs(out[:, 6:9] - (rho0 + tt * nu0 + 0.5 * tt**2 * Gphi))) <= 1e-10


def test_linear_side_mismatch_rejected():
    with pytest.raises(ValueError):
        propagate_error_linear(lambda _t: F_right(EarthModel(), G0), ErrorVector(np.ones(9), Side.LEFT), 0.1, 1.0)


def test_linear_fourth_order():
    def F_of_t(t):
        return F_left(ImuSample(t, [0.8 * np.sin(1.3 * t), 0.5, 0.3 * np.cos(t)], [np.cos(2 * t), 0.2, 9.8]))

    dx0 = ErrorVector(np.arange(1.0, 10.0) / 10, Side.LEFT)
    a, b, c = (propagate_error_linear(F_of_t, dx0, h, 10.0)[1][-1] for h in (0.1, 0.05, 0.025))
    assert 13 <= np.max(np.abs(a - b)) / np.max(np.abs(b - c)) <= 19


def test_stream_and_generic_linear_agree():
    earth = EarthModel()
    ref = synth_reference(TrajectorySpec(duration=20.0, step=0.01), earth)
    dx0 = ErrorVector(np.arange(1.0, 10.0) / 10, Side.LEFT)
    fast = propagate_error_stream(dx0, ref.inputs, earth)
    traj = ref.trajectory

    def F_of_t(t):
        k = traj.at(np.array([t]))
        return F_left(ImuSample(t, k.omega_ib_b[0], k.f_b[0]))

    _, slow = propagate_error_linear(F_of_t, dx0, 0.01, 20.0)
    assert np.max(np.abs(fast - slow)) <= 1e-12 * (1 + np.abs(slow).max())


# -- closed forms ------------------------------------------------------------


def test_closed_form_left_at_zero(rng):
    dx0 = ErrorVector(rand_tangent(rng), Side.LEFT)
    chi0 = rand_pose(rng, v=1.0, r=10.0)
    out = closed_form_left(dx0, chi0, chi0, 0.0).dx
    assert np.max(np.abs(out - dx0.dx)) <= 1e-12 * (1 + np.abs(dx0.dx).max())


def test_closed_form_left_flow_only():
    dx0 = np.array([0.2, 0.1, -0.3, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    z = const(np.zeros(3))
    stream = make_stream(z, z, z, 0.5, 10.0)
    tilde = propagate_chi_b_tilde(I_D, stream)
    out = closed_form_left(ErrorVector(dx0, Side.LEFT), I_D, tilde.pose, stream.t).dx
    t = stream.t[:, None]
    assert np.max(np.abs(out[:, :6] - dx0[:6])) <= 1e-15
    assert np.max(np.abs(out[:, 6:] - (dx0[6:] + t * dx0[3:6]))) <= 1e-13


def test_closed_form_left_group_identity(rng):
    # exp of the closed form equals chi_b~^-1 flow(exp(Ad(chi0) dx0)) chi_b~
    dx0 = rand_tangent(rng, phi_max=2.0)
    chi0 = rand_pose(rng, v=10.0, r=100.0)
    tilde = rand_pose(rng, v=10.0, r=100.0)
    t = 7.5
    got = exp_se23(closed_form_left(ErrorVector(dx0, Side.LEFT), chi0, tilde, t).dx).matrix()
    eta0 = exp_se23(gc.adjoint(chi0) @ dx0)
    expect = gc.compose(gc.inverse(tilde), gc.compose(gc.flow_phi(t, eta0), tilde)).matrix()
    assert np.max(np.abs(got - expect)) <= 1e-9 * (1 + np.abs(expect).max())


def test_closed_form_right_examples():
    dx0 = np.array([0.3, -0.2, 0.5, 1.0, 2.0, -1.0, 10.0, -5.0, 3.0])
    earth = EarthModel(np.zeros(3), ConstantGravitation(G0))
    z = const(np.zeros(3))
    stream = make_stream(z, z, const(G0), 0.5, 20.0)
    chi_e = propagate_chi_e(earth, stream)
    out = closed_form_right(ErrorVector(dx0, Side.RIGHT), chi_e.pose, stream.t).dx
    assert np.array_equal(out[0], dx0)
    phi0, nu0, rho0 = gc.split_tangent(dx0)
    Gphi = np.cross(G0, phi0)
    t = stream.t[:, None]
    assert np.max(np.abs(out[:, 3:6] - (nu0 + t * Gphi))) <= 1e-12
    assert np.max(np.abs(out[:, 6:9] - (rho0 + t * nu0 + 0.5 * t**2 * Gphi))) <= 1e-10


def test_closed_form_side_checks(rng):
    with pytest.raises(ValueError):
        closed_form_left(ErrorVector(np.zeros(9), Side.RIGHT), I_D, I_D, 1.0)
    with pytest.raises(ValueError):
        closed_form_right(ErrorVector(np.zeros(9), Side.LEFT), I_D, 1.0)


@pytest.mark.parametrize("side", ["left", "right"])
def test_closed_form_matches_linear_short_run(side):
    earth = EarthModel()
    ref = synth_reference(TrajectorySpec(duration=30.0, step=0.01), earth)
    dx0 = ErrorVector(np.r_[np.full(3, math.radians(150) / math.sqrt(3)), [10, -5, 3], [1000, -500, 200]], Side(side))
    lin = propagate_error_stream(dx0, ref.inputs, earth)
    if side == "left":
        tilde = propagate_chi_b_tilde(ref.truth.pose[0], ref.inputs, earth)
        closed = closed_form_left(dx0, ref.truth.pose[0], tilde.pose, ref.t).dx
    else:
        closed = closed_form_right(dx0, propagate_chi_e(earth, ref.inputs).pose, ref.t).dx
    rel = np.linalg.norm(lin - closed, axis=1) / (1 + np.linalg.norm(lin, axis=1))
    assert rel.max() <= 1e-6


# -- factorization -----------------------------------------------------------


def test_factorization_static():
    traj = AnalyticTrajectory(TrajectorySpec(kind="static"), EarthModel())
    for side in ("left", "right"):
        assert factorization_residual(side, 10.0, 1e-4, factorization_state(traj, side)) <= 1e-6


def test_factorization_second_order():
    spec = TrajectorySpec(kind="sinusoidal", amplitudes=(0.5, 0.4, 0.6), frequencies=(1.0, 0.7, 0.5))
    state = factorization_state(AnalyticTrajectory(spec, EarthModel()), "left")
    r = [factorization_residual("left", 10.0, h, state) for h in (1e-4, 5e-5, 2.5e-5)]
    assert 3.5 <= r[0] / r[1] <= 4.5
    assert 3.5 <= r[1] / r[2] <= 4.5


def test_factorization_zero_input():
    F0 = F_left(ImuSample(0.0, np.zeros(3), np.zeros(3))).F

    def state(t):
        return I_D, F0

    # M(t) = F_t is affine in t, so the central difference is exact
    assert factorization_residual("left", 3.0, 1e-2, state) <= 1e-13
    M = gc.flow_matrix(3.0)
    dM = np.zeros((9, 9))
    dM[6:9, 3:6] = np.eye(3)
    assert np.array_equal(F0 @ M, dM)


# -- discretization ----------------------------------------------------------


def test_discretize_zero():
    assert np.array_equal(discretize(np.zeros((9, 9)), 0.1), np.eye(9))


def test_discretize_nilpotent():
    F = F_right(EarthModel(np.zeros(3)), G0).F
    dt = 0.37
    expect = np.eye(9) + F * dt + F @ F * dt**2 / 2
    assert np.max(np.abs(discretize(F, dt) - expect)) <= 1e-15
    assert np.array_equal(F @ F @ F, np.zeros((9, 9)))


def test_discretize_matches_fundamental_matrix(rng):
    for _ in range(20):
        F = F_left(ImuSample(0.0, rng.normal(size=3), rng.normal(size=3) * 10)).F
        dt = rng.uniform(0.01, 1.0)
        Phi = np.eye(9)
        n = 2000
        for k in range(n):
            Phi = rk4_step(Phi, lambda _t, P: F @ P, dt / n)
        assert np.max(np.abs(discretize(ErrorDynamicsMatrix(F, Side.LEFT), dt) - Phi)) <= 1e-10


def test_discretize_requires_positive_dt():
    with pytest.raises(ValueError):
        discretize(np.eye(9), 0.0)


# -- trajectory independence -------------------------------------------------


def test_F_right_independent_of_estimate():
    earth = EarthModel()
    ref = synth_reference(TrajectorySpec(duration=10.0, step=0.01), earth)
    truth0 = ref.truth.pose[0]
    stages = []
    for dx0 in (np.zeros(9), np.r_[0.5, -1.0, 2.0, 10, 20, -5, 1e3, 2e3, -3e3]):
        est0 = inject_error(truth0, dx0, "right")
        propagate_chi(est0, ref.inputs, earth)
        stages.append(error_matrix_stages("right", ref.inputs, earth))
    for a, b in zip(*stages):
        assert np.array_equal(a, b)
