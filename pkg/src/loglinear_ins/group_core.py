"""Closed-form SO(3) and SE_2(3) algebra.

Extended poses are stored as ``(C, v, r)`` records. The 5x5 matrix
embedding is produced on demand by :meth:`ExtendedPose.matrix` and is never
the canonical representation.

Tangent vectors are plain ``(..., 9)`` arrays ordered as
``(phi, nu, rho)``: attitude, velocity, position. Every function accepts
leading batch dimensions, so a whole time series can be pushed through
``log_se23`` or ``adjoint`` in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NearPiSingularity, NonSkew

SMALL_ANGLE = 1e-4
PI_MARGIN = 1e-6
SKEW_TOL = 1e-9
ROTATION_TOL = 1e-9

_I3 = np.eye(3)


def _mv(m, x):
    return np.einsum("...ij,...j->...i", m, x)


def hat3(w) -> np.ndarray:
    """Cross-product matrix, ``hat3(w) @ u == cross(w, u)``."""
    w = np.asarray(w, dtype=float)
    m = np.zeros(w.shape[:-1] + (3, 3))
    x, y, z = w[..., 0], w[..., 1], w[..., 2]
    m[..., 0, 1] = -z
    m[..., 0, 2] = y
    m[..., 1, 0] = z
    m[..., 1, 2] = -x
    m[..., 2, 0] = -y
    m[..., 2, 1] = x
    return m


def vee3(m, tol: float = SKEW_TOL) -> np.ndarray:
    """Inverse of :func:`hat3`.

    Raises
    ------
    NonSkew
        If the symmetric part of ``m`` exceeds ``tol`` in any entry.
    """
    m = np.asarray(m, dtype=float)
    sym = m + np.swapaxes(m, -1, -2)
    if np.any(np.abs(sym) > 2.0 * tol):
        raise NonSkew(f"symmetric residual {np.max(np.abs(sym)) / 2:.3e} exceeds {tol:.1e}")
    return 0.5 * np.stack(
        [m[..., 2, 1] - m[..., 1, 2], m[..., 0, 2] - m[..., 2, 0], m[..., 1, 0] - m[..., 0, 1]],
        axis=-1,
    )


def _angle(phi):
    theta2 = np.einsum("...i,...i->...", phi, phi)
    return theta2, np.sqrt(theta2)


def _so3_coefficients(phi):
    """Return ``sin(t)/t``, ``(1-cos t)/t^2``, ``(t-sin t)/t^3`` with series fallback."""
    theta2, theta = _angle(phi)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    s = np.sin(safe)
    # 1 - cos t = 2 sin^2(t/2) avoids cancellation just above the series switch
    sh = np.sin(0.5 * safe)
    a = np.where(small, 1.0 - theta2 / 6.0 + theta2**2 / 120.0, s / safe)
    b = np.where(small, 0.5 - theta2 / 24.0 + theta2**2 / 720.0, 2.0 * sh * sh / safe**2)
    d = np.where(small, 1.0 / 6.0 - theta2 / 120.0 + theta2**2 / 5040.0, (safe - s) / safe**3)
    return a, b, d


def exp_so3(phi) -> np.ndarray:
    """Rodrigues exponential of a rotation vector."""
    phi = np.asarray(phi, dtype=float)
    a, b, _ = _so3_coefficients(phi)
    k = hat3(phi)
    return _I3 + a[..., None, None] * k + b[..., None, None] * (k @ k)


def rotation_angle(C) -> np.ndarray:
    """Rotation angle in ``[0, pi]`` computed with ``atan2`` for accuracy near both ends."""
    C = np.asarray(C, dtype=float)
    s = 0.5 * np.stack(
        [C[..., 2, 1] - C[..., 1, 2], C[..., 0, 2] - C[..., 2, 0], C[..., 1, 0] - C[..., 0, 1]],
        axis=-1,
    )
    cos_t = 0.5 * (np.trace(C, axis1=-2, axis2=-1) - 1.0)
    return np.arctan2(np.linalg.norm(s, axis=-1), cos_t)


def log_so3(C, margin: float = PI_MARGIN) -> np.ndarray:
    """Principal logarithm of a rotation matrix.

    Refuses angles within ``margin`` of pi instead of choosing a branch.
    """
    C = np.asarray(C, dtype=float)
    s = 0.5 * np.stack(
        [C[..., 2, 1] - C[..., 1, 2], C[..., 0, 2] - C[..., 2, 0], C[..., 1, 0] - C[..., 0, 1]],
        axis=-1,
    )
    sin_t = np.linalg.norm(s, axis=-1)
    cos_t = 0.5 * (np.trace(C, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(sin_t, cos_t)
    if np.any(theta > np.pi - margin):
        raise NearPiSingularity(
            f"rotation angle {np.max(theta):.9f} rad is within {margin:.0e} of pi"
        )
    theta2 = theta**2
    small = theta < SMALL_ANGLE
    safe_sin = np.where(small, 1.0, sin_t)
    scale = np.where(small, 1.0 + theta2 / 6.0 + 7.0 * theta2**2 / 360.0, theta / safe_sin)
    phi = scale[..., None] * s

    # Past 90 degrees the antisymmetric part loses relative accuracy; read the
    # axis off the symmetric part and use s only for its sign.
    large = cos_t < 0.0
    if np.any(large):
        one_minus_c = np.where(large, 1.0 - cos_t, 1.0)
        B = 0.5 * (C + np.swapaxes(C, -1, -2)) - cos_t[..., None, None] * _I3
        diag = np.diagonal(B, axis1=-2, axis2=-1)
        k = np.argmax(diag, axis=-1)
        idx = np.broadcast_to(k[..., None, None], B.shape[:-1] + (1,))
        col = np.take_along_axis(B, idx, axis=-1)[..., 0]
        bkk = np.take_along_axis(diag, k[..., None], axis=-1)[..., 0]
        axis = col / np.sqrt(np.where(large, one_minus_c * bkk, 1.0))[..., None]
        sign = np.where(np.einsum("...i,...i->...", axis, s) < 0.0, -1.0, 1.0)
        phi_large = (sign * theta)[..., None] * axis
        phi = np.where(large[..., None], phi_large, phi)
    return phi


def left_jacobian_so3(phi) -> np.ndarray:
    """Left Jacobian ``I + (1-cos)/t^2 K + (t-sin)/t^3 K^2`` of SO(3)."""
    phi = np.asarray(phi, dtype=float)
    _, b, d = _so3_coefficients(phi)
    k = hat3(phi)
    return _I3 + b[..., None, None] * k + d[..., None, None] * (k @ k)


def inv_left_jacobian_so3(phi, margin: float = PI_MARGIN) -> np.ndarray:
    """Closed-form inverse of :func:`left_jacobian_so3`, guarded below pi."""
    phi = np.asarray(phi, dtype=float)
    theta2, theta = _angle(phi)
    if np.any(theta > np.pi - margin):
        raise NearPiSingularity(f"|phi| = {np.max(theta):.9f} is within {margin:.0e} of pi")
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    half = 0.5 * safe
    d = np.where(
        small,
        1.0 / 12.0 + theta2 / 720.0 + theta2**2 / 30240.0,
        (1.0 - half * np.cos(half) / np.sin(half)) / safe**2,
    )
    k = hat3(phi)
    return _I3 - 0.5 * k + d[..., None, None] * (k @ k)


@dataclass(frozen=True)
class ExtendedPose:
    """SE_2(3) element ``(C, v, r)``: attitude, inertial velocity, position.

    Arrays may carry matching leading batch dimensions, in which case the
    record represents a stack (for example a time series) of poses.
    """

    C: np.ndarray
    v: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "C", np.asarray(self.C, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float))
        if self.C.shape[-2:] != (3, 3) or self.v.shape[-1:] != (3,) or self.r.shape[-1:] != (3,):
            raise ValueError("ExtendedPose expects C (...,3,3), v (...,3), r (...,3)")

    @classmethod
    def identity(cls) -> ExtendedPose:
        return cls(np.eye(3), np.zeros(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> ExtendedPose:
        m = np.asarray(m, dtype=float)
        return cls(m[..., :3, :3].copy(), m[..., :3, 3].copy(), m[..., :3, 4].copy())

    def matrix(self) -> np.ndarray:
        """5x5 embedding ``[[C, v, r], [0, 1, 0], [0, 0, 1]]``."""
        m = np.zeros(self.C.shape[:-2] + (5, 5))
        m[..., :3, :3] = self.C
        m[..., :3, 3] = self.v
        m[..., :3, 4] = self.r
        m[..., 3, 3] = 1.0
        m[..., 4, 4] = 1.0
        return m

    def __len__(self):
        if self.C.ndim == 2:
            raise TypeError("single ExtendedPose has no length")
        return self.C.shape[0]

    def __getitem__(self, idx) -> ExtendedPose:
        return ExtendedPose(self.C[idx], self.v[idx], self.r[idx])

    def orthonormality_error(self) -> np.ndarray:
        """Frobenius norm of ``C^T C - I``."""
        e = np.swapaxes(self.C, -1, -2) @ self.C - _I3
        return np.linalg.norm(e, axis=(-2, -1))

    def check_rotation(self, tol: float = ROTATION_TOL) -> ExtendedPose:
        """Raise ``ValueError`` unless ``C`` is a rotation within ``tol``."""
        if not np.all(np.isfinite(self.C)) or not np.all(np.isfinite(self.v)) or not np.all(np.isfinite(self.r)):
            raise ValueError("non-finite entries in ExtendedPose")
        if np.any(self.orthonormality_error() > tol):
            raise ValueError("attitude is not orthonormal within tolerance")
        if np.any(np.abs(np.linalg.det(self.C) - 1.0) > tol):
            raise ValueError("attitude determinant is not +1 within tolerance")
        return self


IDENTITY = ExtendedPose.identity()


def tangent(phi, nu, rho) -> np.ndarray:
    """Pack ``(phi, nu, rho)`` into a 9-vector."""
    return np.concatenate([np.asarray(phi, float), np.asarray(nu, float), np.asarray(rho, float)], axis=-1)


def split_tangent(xi):
    xi = np.asarray(xi, dtype=float)
    return xi[..., 0:3], xi[..., 3:6], xi[..., 6:9]


def hat_se23(xi) -> np.ndarray:
    """Lie-algebra matrix of a tangent vector (5x5)."""
    phi, nu, rho = split_tangent(xi)
    m = np.zeros(phi.shape[:-1] + (5, 5))
    m[..., :3, :3] = hat3(phi)
    m[..., :3, 3] = nu
    m[..., :3, 4] = rho
    return m


def vee_se23(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return tangent(vee3(m[..., :3, :3]), m[..., :3, 3], m[..., :3, 4])


def exp_se23(xi) -> ExtendedPose:
    """Exponential map ``(phi, nu, rho) -> (exp(phi), J nu, J rho)``."""
    phi, nu, rho = split_tangent(xi)
    J = left_jacobian_so3(phi)
    return ExtendedPose(exp_so3(phi), _mv(J, nu), _mv(J, rho))


def log_se23(x: ExtendedPose, margin: float = PI_MARGIN) -> np.ndarray:
    """Principal logarithm of an extended pose, as a 9-vector."""
    phi = log_so3(x.C, margin)
    Jinv = inv_left_jacobian_so3(phi, margin)
    return tangent(phi, _mv(Jinv, x.v), _mv(Jinv, x.r))


def compose(a: ExtendedPose, b: ExtendedPose) -> ExtendedPose:
    return ExtendedPose(a.C @ b.C, _mv(a.C, b.v) + a.v, _mv(a.C, b.r) + a.r)


def inverse(x: ExtendedPose) -> ExtendedPose:
    Ct = np.swapaxes(x.C, -1, -2)
    return ExtendedPose(Ct, -_mv(Ct, x.v), -_mv(Ct, x.r))


def adjoint(x: ExtendedPose) -> np.ndarray:
    """9x9 adjoint, ``x hat(xi) x^-1 == hat(adjoint(x) @ xi)``."""
    C = x.C
    ad = np.zeros(C.shape[:-2] + (9, 9))
    ad[..., 0:3, 0:3] = C
    ad[..., 3:6, 3:6] = C
    ad[..., 6:9, 6:9] = C
    ad[..., 3:6, 0:3] = hat3(x.v) @ C
    ad[..., 6:9, 0:3] = hat3(x.r) @ C
    return ad


def invariant_field(x: ExtendedPose) -> np.ndarray:
    """The vector field ``f`` moving position along velocity, as a 5x5 matrix."""
    m = np.zeros(x.C.shape[:-2] + (5, 5))
    m[..., :3, 4] = x.v
    return m


def flow_phi(t, x: ExtendedPose) -> ExtendedPose:
    """Automorphism ``(C, v, r) -> (C, v, r + t v)``."""
    t = np.asarray(t, dtype=float)
    return ExtendedPose(x.C, x.v, x.r + t[..., None] * x.v)


def flow_matrix(t) -> np.ndarray:
    """Tangent action of :func:`flow_phi`: identity with ``t I`` in block (3, 2)."""
    t = np.asarray(t, dtype=float)
    F = np.broadcast_to(np.eye(9), t.shape + (9, 9)).copy()
    F[..., 6:9, 3:6] = t[..., None, None] * _I3
    return F
