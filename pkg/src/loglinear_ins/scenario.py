"""Analytic reference trajectories, IMU synthesis and experiment configuration.

Trajectories are defined in a local east-north-up frame anchored at
``origin_position`` and held fixed in ECEF. Attitude and position are closed
form in time, and so are their derivatives; the gyro and accelerometer
signals follow from the strapdown equations solved for the inputs:

    omega_ib^b = omega_eb^b + C^T omega_ie
    f^b        = C^T (dv_ib/dt + omega_ie x v_ib - G)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NearPiSingularity, ParseError, UnsupportedSpec, ValidationError
from .error_dynamics import F_left, F_right
from .group_core import ExtendedPose, compose, exp_so3, exp_se23, inverse, split_tangent
from .ins_dynamics import (
    EARTH_MU,
    EARTH_RATE,
    IDENTITY,
    CentralGravitation,
    ConstantGravitation,
    EarthModel,
    ImuSample,
    InputStream,
    StateSeries,
    gravitation_at,
    integrate_affine,
)

EARTH_RADIUS = 6378137.0
PHI_LIMIT = math.pi - 0.2
KINDS = ("static", "constant_yaw_rate", "circular_ground", "sinusoidal")
SIDES = ("left", "right")


def _default_origin():
    lat, lon = math.radians(30.5), math.radians(114.3)
    return np.array(
        [math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)]
    ) * EARTH_RADIUS


@dataclass(frozen=True)
class TrajectorySpec:
    kind: str = "circular_ground"
    duration: float = 300.0
    step: float = 0.005
    radius: float = 500.0
    period: float = 120.0
    yaw_rate: float = 0.05
    amplitudes: tuple = (0.3, 0.2, 0.5)
    frequencies: tuple = (0.2, 0.15, 0.1)
    origin_position: tuple = field(default_factory=lambda: tuple(_default_origin()))
    initial_attitude: tuple = (0.0, 0.0, 0.0)

    def problems(self) -> list[str]:
        out = []
        if self.kind not in KINDS:
            out.append(f"trajectory.kind must be one of {', '.join(KINDS)}, got {self.kind!r}")
        if not self.step > 0:
            out.append("trajectory.step_s must be positive")
        if not self.duration >= self.step:
            out.append("trajectory.duration_s must be at least one step")
        elif self.step > 0 and math.isfinite(self.duration / self.step):
            n = round(self.duration / self.step)
            if abs(n * self.step - self.duration) > 1e-9 * max(1.0, self.duration):
                out.append("trajectory.duration_s must be a whole number of steps")
        if self.kind == "circular_ground":
            if not self.radius > 0:
                out.append("trajectory.radius_m must be positive")
            if not self.period > 0:
                out.append("trajectory.period_s must be positive")
        vals = [self.duration, self.step, self.radius, self.period, self.yaw_rate]
        vals += list(self.amplitudes) + list(self.frequencies)
        vals += list(self.origin_position) + list(self.initial_attitude)
        if not all(math.isfinite(v) for v in vals):
            out.append("trajectory values must be finite")
        return out


def _enu_basis(origin) -> np.ndarray:
    up = np.asarray(origin, float)
    n = np.linalg.norm(up)
    if n == 0.0:
        return np.eye(3)
    up = up / n
    east = np.cross([0.0, 0.0, 1.0], up)
    if np.linalg.norm(east) < 1e-12:
        east = np.array([1.0, 0.0, 0.0])
    east /= np.linalg.norm(east)
    north = np.cross(up, east)
    return np.column_stack([east, north, up])


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    m = np.zeros(np.shape(a) + (3, 3))
    m[..., 0, 0] = 1.0
    m[..., 1, 1], m[..., 1, 2] = c, -s
    m[..., 2, 1], m[..., 2, 2] = s, c
    return m


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    m = np.zeros(np.shape(a) + (3, 3))
    m[..., 1, 1] = 1.0
    m[..., 0, 0], m[..., 0, 2] = c, s
    m[..., 2, 0], m[..., 2, 2] = -s, c
    return m


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    m = np.zeros(np.shape(a) + (3, 3))
    m[..., 2, 2] = 1.0
    m[..., 0, 0], m[..., 0, 1] = c, -s
    m[..., 1, 0], m[..., 1, 1] = s, c
    return m


def _mv(m, x):
    return np.einsum("...ij,...j->...i", m, x)


@dataclass(frozen=True)
class Kinematics:
    """Closed-form truth and sensor signals at an array of times."""

    t: np.ndarray
    pose: ExtendedPose
    omega_ib_b: np.ndarray
    f_b: np.ndarray
    G: np.ndarray
    v_eb: np.ndarray


class AnalyticTrajectory:
    """Evaluates one trajectory family at arbitrary times."""

    def __init__(self, spec: TrajectorySpec, earth: EarthModel):
        problems = spec.problems()
        if problems:
            raise UnsupportedSpec("; ".join(problems))
        self.spec = spec
        self.earth = earth
        self.origin = np.asarray(spec.origin_position, float)
        self.L = _enu_basis(self.origin)
        self.A0 = exp_so3(np.asarray(spec.initial_attitude, float))

    def _local(self, t):
        """Local rotation M(t), its body rate, and local position/vel/accel."""
        s = self.spec
        z3 = np.zeros(t.shape + (3,))
        if s.kind == "static":
            M = np.broadcast_to(np.eye(3), t.shape + (3, 3))
            return M, z3, z3, z3, z3
        if s.kind == "constant_yaw_rate":
            w = np.zeros(t.shape + (3,))
            w[..., 2] = s.yaw_rate
            return _rz(s.yaw_rate * t), w, z3, z3, z3
        if s.kind == "circular_ground":
            w = 2.0 * math.pi / s.period
            R = s.radius
            c, sn = np.cos(w * t), np.sin(w * t)
            p = np.stack([R * sn, R * (1.0 - c), 0.0 * t], axis=-1)
            pd = np.stack([R * w * c, R * w * sn, 0.0 * t], axis=-1)
            pdd = np.stack([-R * w * w * sn, R * w * w * c, 0.0 * t], axis=-1)
            om = np.zeros(t.shape + (3,))
            om[..., 2] = w
            return _rz(w * t), om, p, pd, pdd
        if s.kind == "sinusoidal":
            a = np.asarray(s.amplitudes, float)
            fr = 2.0 * math.pi * np.asarray(s.frequencies, float)
            ang = a * np.sin(fr * t[..., None])
            rate = a * fr * np.cos(fr * t[..., None])
            Rx, Ry, Rz = _rx(ang[..., 0]), _ry(ang[..., 1]), _rz(ang[..., 2])
            M = Rz @ Ry @ Rx
            RxT = np.swapaxes(Rx, -1, -2)
            RyT = np.swapaxes(Ry, -1, -2)
            ez = np.zeros(t.shape + (3,))
            ez[..., 2] = rate[..., 2]
            ey = np.zeros(t.shape + (3,))
            ey[..., 1] = rate[..., 1]
            ex = np.zeros(t.shape + (3,))
            ex[..., 0] = rate[..., 0]
            om = _mv(RxT, _mv(RyT, ez)) + _mv(RxT, ey) + ex
            return M, om, z3, z3, z3
        raise UnsupportedSpec(f"unknown trajectory kind {s.kind!r}")

    def at(self, t) -> Kinematics:
        t = np.asarray(t, float)
        M, om_local, p, pd, pdd = self._local(t)
        omega = self.earth.omega_ie_e
        C = self.L @ M @ self.A0
        r = self.origin + _mv(self.L, p)
        v_eb = _mv(self.L, pd)
        v_ib = v_eb + np.cross(omega, r)
        vdot_ib = _mv(self.L, pdd) + np.cross(omega, v_eb)
        G = gravitation_at(self.earth, r)
        Ct = np.swapaxes(C, -1, -2)
        omega_ib_b = _mv(self.A0.T, om_local) + _mv(Ct, np.broadcast_to(omega, v_ib.shape))
        f_b = _mv(Ct, vdot_ib + np.cross(omega, v_ib) - G)
        return Kinematics(t, ExtendedPose(C, v_ib, r), omega_ib_b, f_b, G, v_eb)


@dataclass(frozen=True)
class ReferenceStream:
    """Uniformly sampled truth plus the inputs that generate it."""

    inputs: InputStream
    truth: StateSeries
    trajectory: AnalyticTrajectory | None = None

    @property
    def t(self) -> np.ndarray:
        return self.inputs.t

    @property
    def step(self) -> float:
        return self.inputs.step

    def __len__(self):
        return len(self.inputs.t)

    def __getitem__(self, k):
        """``(t, chi_true, imu, G)`` for sample ``k``."""
        return self.inputs.t[k], self.truth.pose[k], self.inputs.imu(k), self.inputs.G[k]


def synth_reference(spec: TrajectorySpec, earth: EarthModel, hold: str = "exact") -> ReferenceStream:
    """Sample a trajectory family and its IMU and gravitation signals.

    With ``hold="exact"`` the stream also carries inputs at every half step,
    so RK4 evaluates each stage with the true input. ``hold="zoh"`` drops
    them and the stream acts as a zero-order hold.
    """
    if hold not in ("exact", "zoh"):
        raise UnsupportedSpec(f"unknown hold mode {hold!r}")
    traj = AnalyticTrajectory(spec, earth)
    n = int(round(spec.duration / spec.step))
    if abs(n * spec.step - spec.duration) > 1e-9 * max(1.0, spec.duration):
        raise UnsupportedSpec("trajectory.duration_s must be a whole number of steps")
    t = np.arange(n + 1) * spec.step
    k = traj.at(t)
    mids = {}
    if hold == "exact":
        km = traj.at(t[:-1] + 0.5 * spec.step)
        mids = dict(mid_omega_ib_b=km.omega_ib_b, mid_f_b=km.f_b, mid_G=km.G)
    stream = InputStream(spec.step, t, k.omega_ib_b, k.f_b, k.G, **mids)
    return ReferenceStream(stream, StateSeries(t, k.pose), traj)


def inject_error(truth0: ExtendedPose, dx0, side: str) -> ExtendedPose:
    """Estimate whose left (or right) invariant error is exactly ``exp(dx0)``."""
    phi, _, _ = split_tangent(dx0)
    if np.linalg.norm(phi) > PHI_LIMIT:
        raise NearPiSingularity(f"|phi| = {np.linalg.norm(phi):.4f} exceeds pi - 0.2")
    e = exp_se23(dx0)
    if side == "left":
        return compose(truth0, e)
    if side == "right":
        return compose(e, truth0)
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    earth: EarthModel = field(default_factory=EarthModel)
    error_side: str = "left"
    initial_error: np.ndarray = field(default_factory=lambda: np.zeros(9))
    rng_seed: int = 0
    output_path: str | None = None

    def problems(self) -> list[str]:
        out = list(self.trajectory.problems())
        if self.error_side not in SIDES:
            out.append(f"error.side must be left or right, got {self.error_side!r}")
        xi = np.asarray(self.initial_error, float)
        if xi.shape != (9,) or not np.all(np.isfinite(xi)):
            out.append("initial error must be nine finite reals")
        elif np.linalg.norm(xi[:3]) > PHI_LIMIT:
            out.append(f"|error.phi_rad| = {np.linalg.norm(xi[:3]):.4f} exceeds pi - 0.2 = {PHI_LIMIT:.4f}")
        if isinstance(self.earth.gravitation, CentralGravitation):
            if np.linalg.norm(self.trajectory.origin_position) <= 1e5:
                out.append("central gravitation needs an origin farther than 1e5 m from the centre")
        return out

    def with_overrides(self, side=None, angle_deg=None, step=None, duration=None) -> ExperimentConfig:
        """Apply CLI-style overrides; the attitude error keeps its axis."""
        cfg = self
        traj = cfg.trajectory
        if step is not None:
            traj = replace(traj, step=float(step))
        if duration is not None:
            traj = replace(traj, duration=float(duration))
        xi = np.array(cfg.initial_error, float)
        if angle_deg is not None:
            phi = xi[:3]
            n = np.linalg.norm(phi)
            axis = phi / n if n > 0 else np.array([1.0, 1.0, 1.0]) / math.sqrt(3.0)
            xi[:3] = axis * math.radians(float(angle_deg))
        cfg = replace(cfg, trajectory=traj, initial_error=xi, error_side=side or cfg.error_side)
        problems = cfg.problems()
        if problems:
            raise ValidationError(problems)
        return cfg


_FLOAT_KEYS = {
    "trajectory.radius_m": "radius",
    "trajectory.period_s": "period",
    "trajectory.duration_s": "duration",
    "trajectory.step_s": "step",
    "trajectory.yaw_rate_rad_s": "yaw_rate",
}
_VEC_KEYS = {
    "trajectory.origin_m": "origin_position",
    "trajectory.attitude_rad": "initial_attitude",
    "trajectory.amplitudes_rad": "amplitudes",
    "trajectory.frequencies_hz": "frequencies",
}
KNOWN_KEYS = (
    ["trajectory.kind"]
    + list(_FLOAT_KEYS)
    + list(_VEC_KEYS)
    + [
        "earth.rate_rad_s",
        "earth.gravitation_mode",
        "earth.G_mps2",
        "earth.mu_m3_s2",
        "error.side",
        "error.phi_rad",
        "error.nu_mps",
        "error.rho_m",
        "seed",
        "output",
    ]
)


def _parse_float(text, line, key):
    try:
        x = float(text)
    except ValueError:
        raise ParseError(f"expected a real number, got {text!r}", line, key) from None
    return x


def _parse_vec(text, line, key):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ParseError(f"expected 3 comma-separated reals, got {len(parts)}", line, key)
    return tuple(_parse_float(p, line, key) for p in parts)


def load_config(text: str) -> ExperimentConfig:
    """Parse a ``key = value`` experiment document.

    Raises
    ------
    ParseError
        Malformed line, unknown or duplicate key, or unreadable value.
    ValidationError
        Document parses but violates one or more invariants.
    """
    raw: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ParseError("expected 'key = value'", lineno)
        key, value = (p.strip() for p in body.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ParseError("unknown key", lineno, key)
        if key in raw:
            raise ParseError("duplicate key", lineno, key)
        if not value:
            raise ParseError("empty value", lineno, key)
        raw[key] = (value, lineno)

    traj_kw = {}
    for key, attr in _FLOAT_KEYS.items():
        if key in raw:
            traj_kw[attr] = _parse_float(raw[key][0], raw[key][1], key)
    for key, attr in _VEC_KEYS.items():
        if key in raw:
            traj_kw[attr] = _parse_vec(raw[key][0], raw[key][1], key)
    if "trajectory.kind" in raw:
        traj_kw["kind"] = raw["trajectory.kind"][0]
    trajectory = TrajectorySpec(**traj_kw)

    problems = []
    rate = EARTH_RATE
    if "earth.rate_rad_s" in raw:
        rate = _parse_float(raw["earth.rate_rad_s"][0], raw["earth.rate_rad_s"][1], "earth.rate_rad_s")
    if not abs(rate) < 1e-3:
        problems.append("earth.rate_rad_s magnitude must be below 1e-3")
        rate = 0.0
    mode = raw.get("earth.gravitation_mode", ("central", 0))[0]
    if mode == "constant":
        G = (0.0, 0.0, -9.81)
        if "earth.G_mps2" in raw:
            G = _parse_vec(raw["earth.G_mps2"][0], raw["earth.G_mps2"][1], "earth.G_mps2")
        gravitation = ConstantGravitation(np.array(G))
    elif mode == "central":
        if "earth.G_mps2" in raw:
            problems.append("earth.G_mps2 only applies to gravitation_mode = constant")
        mu = EARTH_MU
        if "earth.mu_m3_s2" in raw:
            mu = _parse_float(raw["earth.mu_m3_s2"][0], raw["earth.mu_m3_s2"][1], "earth.mu_m3_s2")
        if not mu > 0:
            problems.append("earth.mu_m3_s2 must be positive")
            mu = EARTH_MU
        gravitation = CentralGravitation(mu)
    else:
        problems.append(f"earth.gravitation_mode must be central or constant, got {mode!r}")
        gravitation = CentralGravitation()
    earth = EarthModel(np.array([0.0, 0.0, rate]), gravitation)

    xi = np.zeros(9)
    for key, sl in (("error.phi_rad", slice(0, 3)), ("error.nu_mps", slice(3, 6)), ("error.rho_m", slice(6, 9))):
        if key in raw:
            xi[sl] = _parse_vec(raw[key][0], raw[key][1], key)

    seed = 0
    if "seed" in raw:
        text_seed, line = raw["seed"]
        try:
            seed = int(text_seed)
        except ValueError:
            raise ParseError(f"expected an integer, got {text_seed!r}", line, "seed") from None
        if seed < 0:
            problems.append("seed must be non-negative")

    cfg = ExperimentConfig(
        trajectory=trajectory,
        earth=earth,
        error_side=raw.get("error.side", ("left", 0))[0],
        initial_error=xi,
        rng_seed=seed,
        output_path=raw["output"][0] if "output" in raw else None,
    )
    problems = cfg.problems() + problems
    if problems:
        raise ValidationError(problems)
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialize a config so that ``load_config`` reproduces it exactly."""

    def vec(x):
        return ", ".join(repr(float(v)) for v in x)

    t = cfg.trajectory
    lines = [
        f"trajectory.kind = {t.kind}",
        f"trajectory.radius_m = {t.radius!r}",
        f"trajectory.period_s = {t.period!r}",
        f"trajectory.duration_s = {t.duration!r}",
        f"trajectory.step_s = {t.step!r}",
        f"trajectory.yaw_rate_rad_s = {t.yaw_rate!r}",
        f"trajectory.origin_m = {vec(t.origin_position)}",
        f"trajectory.attitude_rad = {vec(t.initial_attitude)}",
        f"trajectory.amplitudes_rad = {vec(t.amplitudes)}",
        f"trajectory.frequencies_hz = {vec(t.frequencies)}",
        f"earth.rate_rad_s = {float(cfg.earth.omega_ie_e[2])!r}",
    ]
    grav = cfg.earth.gravitation
    if isinstance(grav, ConstantGravitation):
        lines += ["earth.gravitation_mode = constant", f"earth.G_mps2 = {vec(grav.G)}"]
    else:
        lines += ["earth.gravitation_mode = central", f"earth.mu_m3_s2 = {float(grav.mu)!r}"]
    phi, nu, rho = split_tangent(cfg.initial_error)
    lines += [
        f"error.side = {cfg.error_side}",
        f"error.phi_rad = {vec(phi)}",
        f"error.nu_mps = {vec(nu)}",
        f"error.rho_m = {vec(rho)}",
        f"seed = {cfg.rng_seed}",
    ]
    if cfg.output_path is not None:
        lines.append(f"output = {cfg.output_path}")
    return "\n".join(lines) + "\n"


def _exact_stream(traj: AnalyticTrajectory, t_end: float, max_step: float) -> InputStream:
    n = max(1, int(math.ceil(t_end / max_step)))
    h = t_end / n
    t = np.arange(n + 1) * h
    t[-1] = t_end
    k = traj.at(t)
    km = traj.at(t[:-1] + 0.5 * h)
    return InputStream(h, t, k.omega_ib_b, k.f_b, k.G, km.omega_ib_b, km.f_b, km.G)


def earth_increment_at(traj: AnalyticTrajectory, t: float, max_step: float = 0.01) -> ExtendedPose:
    """``chi_e(t)`` by RK4 from the identity with exact stage inputs."""
    if t <= 0.0:
        return IDENTITY
    stream = _exact_stream(traj, float(t), max_step)
    return integrate_affine(IDENTITY, stream, traj.earth, body=False, global_=True).final


def factorization_state(traj: AnalyticTrajectory, side: str, max_step: float = 0.01):
    """Callable ``t -> (pose, F)`` for :func:`error_dynamics.factorization_residual`.

    Left: the true combined body increment ``chi_e(t)^-1 chi(t)`` with ``F_l``.
    Right: the earth increment ``chi_e(t)`` with ``F_r``.
    """
    def state(t):
        chi_e = earth_increment_at(traj, t, max_step)
        k = traj.at(np.array(t, float))
        if side == "left":
            pose = compose(inverse(chi_e), k.pose)
            return pose, F_left(ImuSample(float(t), k.omega_ib_b, k.f_b)).F
        return chi_e, F_right(traj.earth, k.G, float(t)).F

    return state
