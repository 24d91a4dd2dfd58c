"""ECEF strapdown kinematics written as a group-affine system on SE_2(3).

The state ``chi = (C_b^e, v_ib^e, r_ib^e)`` obeys

    chi_dot = chi U + W chi + f(chi)

with ``U`` carrying the gyro and accelerometer readings, ``W`` the earth rate
and gravitation, and ``f`` the invariant field that moves position along
velocity. Propagation is classical RK4 in the ambient 5x5 matrix space with no
re-orthonormalization; attitude drift is monitored instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._kernels import rk4_affine
from .errors import DegeneratePosition, DriftExceeded
from .group_core import (
    IDENTITY,
    ExtendedPose,
    compose,
    flow_phi,
    hat3,
)

EARTH_RATE = 7.292115e-5
EARTH_MU = 3.986004418e14
CENTRAL_RADIUS_FLOOR = 1e5
DRIFT_LIMIT = 1e-9

# f(X) = X @ _N - _N, since X[:, 3] = (v, 1, 0).
_N = np.zeros((5, 5))
_N[3, 4] = 1.0


@dataclass(frozen=True)
class ConstantGravitation:
    G: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "G", np.asarray(self.G, dtype=float))


@dataclass(frozen=True)
class CentralGravitation:
    mu: float = EARTH_MU

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("central-body mu must be positive")


@dataclass(frozen=True)
class EarthModel:
    """Earth rotation rate vector and gravitation field."""

    omega_ie_e: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, EARTH_RATE]))
    gravitation: ConstantGravitation | CentralGravitation = field(default_factory=CentralGravitation)

    def __post_init__(self):
        w = np.asarray(self.omega_ie_e, dtype=float)
        if w.shape != (3,) or not np.all(np.isfinite(w)):
            raise ValueError("omega_ie_e must be a finite 3-vector")
        if np.linalg.norm(w) >= 1e-3:
            raise ValueError("earth rate magnitude must be below 1e-3 rad/s")
        object.__setattr__(self, "omega_ie_e", w)


@dataclass(frozen=True)
class ImuSample:
    t: float
    omega_ib_b: np.ndarray
    f_b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega_ib_b", np.asarray(self.omega_ib_b, dtype=float))
        object.__setattr__(self, "f_b", np.asarray(self.f_b, dtype=float))


@dataclass(frozen=True)
class TrueState:
    chi: ExtendedPose
    t: float


@dataclass(frozen=True)
class StateSeries:
    """Time series of extended poses; ``pose`` carries a leading time axis."""

    t: np.ndarray
    pose: ExtendedPose

    def __len__(self):
        return len(self.t)

    def __getitem__(self, k) -> TrueState:
        return TrueState(self.pose[k], float(self.t[k]))

    @property
    def final(self) -> ExtendedPose:
        return self.pose[-1]


@dataclass(frozen=True)
class DecomposedState:
    """``chi = chi_e * flow_phi(t, chi_0) * chi_b``."""

    chi_e: ExtendedPose
    chi_0: ExtendedPose
    chi_b: ExtendedPose
    t: float | np.ndarray


@dataclass(frozen=True)
class AffineInputs:
    U: np.ndarray
    W: np.ndarray


# -- earth model -------------------------------------------------------------


def gravitation_at(model: EarthModel, r) -> np.ndarray:
    """Gravitational (not gravity) vector at ECEF position ``r``.

    Raises
    ------
    DegeneratePosition
        In central-body mode when ``|r|`` is below 1e5 m.
    """
    grav = model.gravitation
    r = np.asarray(r, dtype=float)
    if isinstance(grav, ConstantGravitation):
        return np.broadcast_to(grav.G, r.shape).copy()
    norm = np.linalg.norm(r, axis=-1)
    if np.any(norm <= CENTRAL_RADIUS_FLOOR):
        raise DegeneratePosition(f"|r| = {np.min(norm):.3e} m is below the central-body floor")
    return -grav.mu * r / norm[..., None] ** 3


def gravity_from_gravitation(G, r, earth: EarthModel) -> np.ndarray:
    """Plumb-bob gravity ``g = G - (w x)^2 r``."""
    W = hat3(earth.omega_ie_e)
    return np.asarray(G, float) - np.einsum("ij,...j->...i", W @ W, np.asarray(r, float))


def gravitation_from_gravity(g, r, earth: EarthModel) -> np.ndarray:
    W = hat3(earth.omega_ie_e)
    return np.asarray(g, float) + np.einsum("ij,...j->...i", W @ W, np.asarray(r, float))


def ground_velocity(state: TrueState | ExtendedPose, earth: EarthModel) -> np.ndarray:
    """Earth-relative velocity ``v_eb = v_ib - w_ie x r``."""
    chi = state.chi if isinstance(state, TrueState) else state
    return chi.v - np.cross(earth.omega_ie_e, chi.r)


def inertial_velocity(v_eb, r, earth: EarthModel) -> np.ndarray:
    return np.asarray(v_eb, float) + np.cross(earth.omega_ie_e, np.asarray(r, float))


# -- vector field ------------------------------------------------------------


def input_matrices(omega_ib_b, f_b, omega_ie_e, G) -> AffineInputs:
    """Build the 5x5 ``U`` (body inputs) and ``W`` (earth inputs); batch-friendly."""
    omega_ib_b = np.asarray(omega_ib_b, float)
    f_b = np.asarray(f_b, float)
    G = np.asarray(G, float)
    shape = np.broadcast_shapes(omega_ib_b.shape, f_b.shape)[:-1]
    U = np.zeros(shape + (5, 5))
    U[..., :3, :3] = hat3(omega_ib_b)
    U[..., :3, 3] = f_b
    wshape = np.broadcast_shapes(np.shape(omega_ie_e), G.shape)[:-1]
    W = np.zeros(wshape + (5, 5))
    W[..., :3, :3] = -hat3(omega_ie_e)
    W[..., :3, 3] = G
    return AffineInputs(U, W)


def invariant_field_matrix(X) -> np.ndarray:
    """``f`` applied to 5x5 embeddings."""
    X = np.asarray(X, float)
    out = np.zeros_like(X)
    out[..., :3, 4] = X[..., :3, 3]
    return out


def chi_dot(chi: ExtendedPose, imu: ImuSample, earth: EarthModel, G) -> np.ndarray:
    """Factored dynamics ``chi U + W chi + f(chi)`` as a 5x5 matrix."""
    inp = input_matrices(imu.omega_ib_b, imu.f_b, earth.omega_ie_e, G)
    X = chi.matrix()
    return X @ inp.U + inp.W @ X + invariant_field_matrix(X)


def chi_dot_blockwise(chi: ExtendedPose, imu: ImuSample, earth: EarthModel, G) -> np.ndarray:
    """Attitude, velocity and position rates written out block by block."""
    Wx = hat3(earth.omega_ie_e)
    out = np.zeros(chi.C.shape[:-2] + (5, 5))
    out[..., :3, :3] = chi.C @ hat3(imu.omega_ib_b) - Wx @ chi.C
    out[..., :3, 3] = chi.C @ imu.f_b - Wx @ chi.v + np.asarray(G, float)
    out[..., :3, 4] = chi.v - Wx @ chi.r
    return out


def group_affine_residual(
    chi1: ExtendedPose, chi2: ExtendedPose, imu: ImuSample, earth: EarthModel, G
) -> float:
    """Normalized defect of the group-affine identity for the full dynamics."""

    def fu(x):
        return chi_dot(x, imu, earth, G)

    X1, X2 = chi1.matrix(), chi2.matrix()
    lhs = fu(compose(chi1, chi2))
    rhs = fu(chi1) @ X2 + X1 @ fu(chi2) - X1 @ fu(IDENTITY) @ X2
    return float(np.linalg.norm(lhs - rhs) / (1.0 + np.linalg.norm(lhs)))


def field_affine_residual(chi1: ExtendedPose, chi2: ExtendedPose) -> float:
    """Same defect for ``f`` alone, where the identity term vanishes."""
    X1, X2 = chi1.matrix(), chi2.matrix()
    lhs = invariant_field_matrix(compose(chi1, chi2).matrix())
    rhs = invariant_field_matrix(X1) @ X2 + X1 @ invariant_field_matrix(X2)
    return float(np.linalg.norm(lhs - rhs) / (1.0 + np.linalg.norm(lhs)))


# -- integration -------------------------------------------------------------


def rk4_step(state, derivative_fn: Callable, h: float, t: float = 0.0):
    """One classical RK4 step of ``state' = derivative_fn(t, state)``."""
    if not h > 0:
        raise ValueError("step must be positive")
    k1 = derivative_fn(t, state)
    k2 = derivative_fn(t + 0.5 * h, state + 0.5 * h * k1)
    k3 = derivative_fn(t + 0.5 * h, state + 0.5 * h * k2)
    k4 = derivative_fn(t + h, state + h * k3)
    return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass(frozen=True)
class InputStream:
    """Sampled IMU and gravitation inputs on a uniform grid.

    When the ``mid_*`` arrays are present they hold exact inputs at
    ``t_k + step/2`` and RK4 sees the true input at every stage. Without them
    the stream is a zero-order hold: every stage of step ``k`` uses sample
    ``k``.
    """

    step: float
    t: np.ndarray
    omega_ib_b: np.ndarray
    f_b: np.ndarray
    G: np.ndarray
    mid_omega_ib_b: np.ndarray | None = None
    mid_f_b: np.ndarray | None = None
    mid_G: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1

    @property
    def zero_order_hold(self) -> bool:
        return self.mid_omega_ib_b is None

    def stage_arrays(self, name: str):
        """Return ``(start, mid, end)`` arrays of length ``n_steps`` for one input."""
        x = getattr(self, name)
        if self.zero_order_hold:
            return x[:-1], x[:-1], x[:-1]
        return x[:-1], getattr(self, "mid_" + name), x[1:]

    def imu(self, k: int) -> ImuSample:
        return ImuSample(float(self.t[k]), self.omega_ib_b[k], self.f_b[k])

    def stage_inputs(self, k: int, stage: int):
        """``(omega_ib_b, f_b, G)`` seen by RK4 stage 0, 1 or 2 of step ``k``."""
        if self.zero_order_hold or stage == 0:
            return self.omega_ib_b[k], self.f_b[k], self.G[k]
        if stage == 1:
            return self.mid_omega_ib_b[k], self.mid_f_b[k], self.mid_G[k]
        return self.omega_ib_b[k + 1], self.f_b[k + 1], self.G[k + 1]


def _stage_matrices(stream: InputStream, earth: EarthModel, body: bool, global_: bool):
    stages = []
    om = stream.stage_arrays("omega_ib_b")
    fb = stream.stage_arrays("f_b")
    gg = stream.stage_arrays("G")
    for s in range(3):
        inp = input_matrices(om[s], fb[s], earth.omega_ie_e, gg[s])
        U = inp.U + _N if body else np.broadcast_to(_N, inp.U.shape).copy()
        W = np.ascontiguousarray(np.broadcast_to(inp.W, U.shape)) if global_ else np.zeros_like(U)
        stages.append((U, W))
    return stages


def integrate_affine(
    x0: ExtendedPose,
    stream: InputStream,
    earth: EarthModel,
    body: bool = True,
    global_: bool = True,
    drift_limit: float | None = DRIFT_LIMIT,
) -> StateSeries:
    """RK4 on ``X' = X U + W X + f(X)`` with either input switched off.

    ``x0`` may be a stack of poses sharing the same inputs (for example a
    true and an estimated state).
    """
    (U0, W0), (Um, Wm), (U1, W1) = _stage_matrices(stream, earth, body, global_)
    X = x0.matrix()
    stack = X.reshape((-1, 5, 5))
    out = rk4_affine(np.ascontiguousarray(stack), U0, Um, U1, W0, Wm, W1, float(stream.step))
    out = out.reshape((stream.n_steps + 1,) + X.shape)
    series = StateSeries(stream.t.copy(), ExtendedPose.from_matrix(out))
    if drift_limit is not None:
        drift = series.pose.orthonormality_error()
        bad = np.argwhere(drift > drift_limit)
        if bad.size:
            k = int(bad[0, 0])
            raise DriftExceeded(
                f"orthonormality drift {drift[tuple(bad[0])]:.3e} exceeds {drift_limit:.0e} "
                f"at t = {stream.t[k]:.6f} s; reduce the step"
            )
    return series


def propagate_chi(chi0: ExtendedPose, stream: InputStream, earth: EarthModel, drift_limit=DRIFT_LIMIT) -> StateSeries:
    """Full navigation state. Gravitation comes from the stream, never from the propagated state."""
    return integrate_affine(chi0, stream, earth, body=True, global_=True, drift_limit=drift_limit)


def propagate_chi_b(stream: InputStream, earth: EarthModel | None = None, drift_limit=DRIFT_LIMIT) -> StateSeries:
    """Body increment ``chi_b`` from identity under ``chi_b U + f(chi_b)``."""
    return integrate_affine(IDENTITY, stream, earth or EarthModel(), body=True, global_=False, drift_limit=drift_limit)


def propagate_chi_e(earth: EarthModel, stream: InputStream, drift_limit=DRIFT_LIMIT) -> StateSeries:
    """Earth increment ``chi_e`` from identity under ``W chi_e + f(chi_e)``."""
    return integrate_affine(IDENTITY, stream, earth, body=False, global_=True, drift_limit=drift_limit)


def propagate_chi_b_tilde(
    chi0: ExtendedPose, stream: InputStream, earth: EarthModel | None = None, drift_limit=DRIFT_LIMIT
) -> StateSeries:
    """Same field as :func:`propagate_chi_b`, started at ``chi0``."""
    return integrate_affine(chi0, stream, earth or EarthModel(), body=True, global_=False, drift_limit=drift_limit)


def recompose(d: DecomposedState) -> ExtendedPose:
    return compose(d.chi_e, compose(flow_phi(d.t, d.chi_0), d.chi_b))


def recompose_components(d: DecomposedState) -> ExtendedPose:
    """Component form of :func:`recompose`; keeps the ``t v_0`` term explicit."""
    Ce, C0, Cb = d.chi_e.C, d.chi_0.C, d.chi_b.C
    t = np.asarray(d.t, float)[..., None]

    def mv(m, x):
        return np.einsum("...ij,...j->...i", m, x)

    C = Ce @ C0 @ Cb
    v = d.chi_e.v + mv(Ce, mv(C0, d.chi_b.v) + d.chi_0.v)
    r = d.chi_e.r + mv(Ce, mv(C0, d.chi_b.r) + d.chi_0.r + t * d.chi_0.v)
    return ExtendedPose(C, v, r)
