"""Invariant errors on SE_2(3) and their exact log-linear propagation.

Left error ``eta_l = chi^-1 chi_hat`` and right error ``eta_r = chi_hat chi^-1``
evolve autonomously when truth and estimate share inputs. Their exponential
coordinates obey ``dx' = F dx`` with

    F_l = [[-(w x), 0, 0], [-(f x), -(w x), 0], [0, I, -(w x)]]     (body rate, specific force)
    F_r = [[-(W x), 0, 0], [ (G x), -(W x), 0], [0, I, -(W x)]]     (earth rate, gravitation)

and the closed-form solutions ``Ad(chi_b~^-1) F_t Ad(chi_0) dx0`` (left) and
``Ad(chi_e) F_t dx0`` (right), no small-error assumption involved.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._kernels import rk4_linear
from .errors import InternalMismatch
from .group_core import (
    ExtendedPose,
    adjoint,
    compose,
    flow_matrix,
    hat3,
    inverse,
    log_se23,
)
from .ins_dynamics import EarthModel, ImuSample, InputStream, invariant_field_matrix, rk4_step

ALGEBRA_TOL = 1e-13
_I3 = np.eye(3)


class Side(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class GroupError:
    eta: ExtendedPose
    side: Side


@dataclass(frozen=True)
class ErrorVector:
    dx: np.ndarray
    side: Side


@dataclass(frozen=True)
class ErrorDynamicsMatrix:
    F: np.ndarray
    side: Side
    t: float | None = None


def left_error(truth: ExtendedPose, estimate: ExtendedPose) -> GroupError:
    return GroupError(compose(inverse(truth), estimate), Side.LEFT)


def right_error(truth: ExtendedPose, estimate: ExtendedPose) -> GroupError:
    return GroupError(compose(estimate, inverse(truth)), Side.RIGHT)


def error_vector_from_group(eta: GroupError) -> ErrorVector:
    """Exponential coordinates of a group error (raises ``NearPiSingularity`` near pi)."""
    return ErrorVector(log_se23(eta.eta), eta.side)


def _check_dual(a, b, what):
    scale = 1.0 + max(np.max(np.abs(a)), np.max(np.abs(b)))
    gap = np.max(np.abs(a - b))
    if gap > ALGEBRA_TOL * scale:
        raise InternalMismatch(f"{what}: factored and blockwise forms differ by {gap:.3e}")


def eta_dot_left(eta: ExtendedPose, imu: ImuSample) -> np.ndarray:
    """Left group-error rate ``eta U - U eta + f(eta)``, cross-checked blockwise."""
    w, f = imu.omega_ib_b, imu.f_b
    U = np.zeros((5, 5))
    U[:3, :3] = hat3(w)
    U[:3, 3] = f
    E = eta.matrix()
    factored = E @ U - U @ E + invariant_field_matrix(E)

    wx = hat3(w)
    blocks = np.zeros((5, 5))
    blocks[:3, :3] = eta.C @ wx - wx @ eta.C
    blocks[:3, 3] = (eta.C - _I3) @ f - wx @ eta.v
    blocks[:3, 4] = eta.v - wx @ eta.r
    _check_dual(factored, blocks, "eta_dot_left")
    return factored


def eta_dot_right(eta: ExtendedPose, earth: EarthModel, G) -> np.ndarray:
    """Right group-error rate ``W eta - eta W + f(eta)``, cross-checked blockwise."""
    G = np.asarray(G, float)
    wx = hat3(earth.omega_ie_e)
    W = np.zeros((5, 5))
    W[:3, :3] = -wx
    W[:3, 3] = G
    E = eta.matrix()
    factored = W @ E - E @ W + invariant_field_matrix(E)

    blocks = np.zeros((5, 5))
    blocks[:3, :3] = eta.C @ wx - wx @ eta.C
    blocks[:3, 3] = (_I3 - eta.C) @ G - wx @ eta.v
    blocks[:3, 4] = eta.v - wx @ eta.r
    _check_dual(factored, blocks, "eta_dot_right")
    return factored


def _error_matrix(rate, drive):
    rate = np.asarray(rate, float)
    drive = np.asarray(drive, float)
    shape = np.broadcast_shapes(rate.shape, drive.shape)[:-1]
    F = np.zeros(shape + (9, 9))
    R = -hat3(rate)
    F[..., 0:3, 0:3] = R
    F[..., 3:6, 3:6] = R
    F[..., 6:9, 6:9] = R
    F[..., 3:6, 0:3] = hat3(drive)
    F[..., 6:9, 3:6] = _I3
    return F


def F_left(imu: ImuSample) -> ErrorDynamicsMatrix:
    """Left-error matrix; depends on the IMU only."""
    return ErrorDynamicsMatrix(_error_matrix(imu.omega_ib_b, -np.asarray(imu.f_b, float)), Side.LEFT, imu.t)


def F_right(earth: EarthModel, G, t: float | None = None) -> ErrorDynamicsMatrix:
    """Right-error matrix; depends on earth rate and gravitation only."""
    return ErrorDynamicsMatrix(_error_matrix(earth.omega_ie_e, G), Side.RIGHT, t)


def error_matrix_stages(side, stream: InputStream, earth: EarthModel):
    """``(start, mid, end)`` arrays of F for every RK4 step of ``stream``."""
    side = Side(side)
    out = []
    for om, fb, G in zip(
        stream.stage_arrays("omega_ib_b"), stream.stage_arrays("f_b"), stream.stage_arrays("G")
    ):
        if side is Side.LEFT:
            out.append(_error_matrix(om, -fb))
        else:
            out.append(_error_matrix(earth.omega_ie_e, G))
    return tuple(out)


def propagate_error_linear(F_of_t: Callable, dx0: ErrorVector, h: float, T: float):
    """RK4 on ``dx' = F(t) dx`` from 0 to ``T``; returns ``(t, dx)`` arrays.

    ``F_of_t`` returns either a 9x9 array or an :class:`ErrorDynamicsMatrix`.
    For streams, prefer :func:`propagate_error_stream`, which hands RK4
    exactly the inputs the state propagation saw.
    """
    n = int(round(T / h))
    t = np.arange(n + 1) * h
    out = np.empty((n + 1, 9))
    out[0] = dx0.dx
    side = dx0.side

    def rhs(tt, x):
        F = F_of_t(tt)
        if isinstance(F, ErrorDynamicsMatrix):
            if F.side is not side:
                raise ValueError("error matrix side does not match the error vector")
            F = F.F
        return F @ x

    x = np.asarray(dx0.dx, float)
    for k in range(n):
        x = rk4_step(x, rhs, h, t[k])
        out[k + 1] = x
    return t, out


def propagate_error_stream(dx0: ErrorVector, stream: InputStream, earth: EarthModel):
    """Linear error propagation driven by the same stage inputs as the state."""
    F0, Fm, F1 = error_matrix_stages(dx0.side, stream, earth)
    F0, Fm, F1 = (np.ascontiguousarray(np.broadcast_to(F, (stream.n_steps, 9, 9))) for F in (F0, Fm, F1))
    return rk4_linear(np.asarray(dx0.dx, float).copy(), F0, Fm, F1, float(stream.step))


def closed_form_left(dx0_actual: ErrorVector, chi0: ExtendedPose, chi_b_tilde_t: ExtendedPose, t) -> ErrorVector:
    """``Ad(chi_b~(t)^-1) F_t Ad(chi_0) dx0``; vectorized over a time axis.

    ``chi_b_tilde_t`` must be the true trajectory's combined body increment.
    The ``Ad(chi_0)`` factor maps the time-zero error onto the flow's frame.
    """
    if Side(dx0_actual.side) is not Side.LEFT:
        raise ValueError("closed_form_left needs a left error")
    M = adjoint(inverse(chi_b_tilde_t)) @ flow_matrix(t) @ adjoint(chi0)
    return ErrorVector(np.einsum("...ij,j->...i", M, dx0_actual.dx), Side.LEFT)


def closed_form_right(dx0: ErrorVector, chi_e_t: ExtendedPose, t) -> ErrorVector:
    """``Ad(chi_e(t)) F_t dx0``; ``chi_e(0)`` is the identity so no correction is needed."""
    if Side(dx0.side) is not Side.RIGHT:
        raise ValueError("closed_form_right needs a right error")
    M = adjoint(chi_e_t) @ flow_matrix(t)
    return ErrorVector(np.einsum("...ij,j->...i", M, dx0.dx), Side.RIGHT)


def factorization_residual(side, t: float, h: float, scenario_state: Callable) -> float:
    """Central-difference defect of ``d/dt M = F M`` for the closed-form factor ``M``.

    ``scenario_state(t)`` returns ``(pose, F)`` where ``pose`` is the combined
    body increment (left) or the earth increment (right) and ``F`` the
    matching 9x9 error matrix at ``t``. The defect is O(h^2).
    """
    side = Side(side)

    def M(tt):
        pose, _ = scenario_state(tt)
        ad = adjoint(inverse(pose)) if side is Side.LEFT else adjoint(pose)
        return ad @ flow_matrix(tt)

    _, F = scenario_state(t)
    if isinstance(F, ErrorDynamicsMatrix):
        F = F.F
    Mt = M(t)
    dM = (M(t + h) - M(t - h)) / (2.0 * h)
    return float(np.linalg.norm(dM - F @ Mt) / np.linalg.norm(Mt))


def discretize(F, dt: float, order: int = 12) -> np.ndarray:
    """Transition matrix ``expm(F dt)`` by scaling and squaring a Taylor series."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if isinstance(F, ErrorDynamicsMatrix):
        F = F.F
    A = np.asarray(F, float) * dt
    norm = np.linalg.norm(A, 1)
    squarings = 0
    while norm / 2.0**squarings >= 0.5:
        squarings += 1
    A = A / 2.0**squarings
    E = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, order + 1):
        term = term @ A / k
        E = E + term
    for _ in range(squarings):
        E = E @ E
    return E
