"""Vehicle models for the SCP solvers: a quadrotor and a 6-DoF free flyer.

Both problems share the same shape: free final time enters as a dilation
parameter, the running cost is a normalized control energy, and the
obstacle rows are the nonconvex part handled by linearization.  The free
flyer additionally threads a union of axis-aligned rooms; the union
indicator is softened with a log-sum-exp so its gradient never vanishes,
and per-node slack parameters chi restate it in a form both solvers can
penalize.

Numeric defaults live in JSON fixtures next to this module; the params
classes load them through ``default()``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .gusto import ConvexIndicator, QuadraticRunningCost
from .ocp import (
    ContinuousOCP,
    TrajectoryIterate,
    dilate_dynamics,
    make_scaling,
    straight_line_guess,
)

__all__ = [
    "Ellipsoid",
    "Room",
    "QuadrotorParams",
    "FreeFlyerParams",
    "quadrotor_ocp",
    "quadrotor_guess",
    "freeflyer_ocp",
    "freeflyer_guess",
    "quat_mul",
    "quat_conj",
    "quat_exp_map",
    "quat_log_map",
    "slerp",
    "unit_quaternion",
    "room_sdf",
    "softmax",
    "softmax_gradient",
    "load_fixture",
]

UP = np.array([0.0, 0.0, 1.0])

QUAT_IDENTITY = np.array([0.0, 0.0, 0.0, 1.0])

# Axis reported for a zero rotation, where any axis would do.
ZERO_ROTATION_AXIS = np.array([0.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# Quaternion algebra (vector-first storage q = [qv, qw], Hamilton product).


def unit_quaternion(q, tol: float = 1e-9) -> np.ndarray:
    """Validate a vector-first unit quaternion and return it as a copy."""
    q = np.asarray(q, dtype=float).reshape(-1).copy()
    if q.shape != (4,):
        raise ValueError(f"quaternion must have 4 entries, got {q.shape}")
    n = float(np.linalg.norm(q))
    if abs(n - 1.0) > tol:
        raise ValueError(f"quaternion norm {n} is not 1 within {tol}")
    return q


def quat_mul(q, r) -> np.ndarray:
    """Hamilton product q (x) r, both vector-first."""
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    qv, qw = q[:3], q[3]
    rv, rw = r[:3], r[3]
    vec = qw * rv + rw * qv + np.cross(qv, rv)
    sca = qw * rw - qv @ rv
    return np.concatenate([vec, [sca]])


def quat_conj(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_exp_map(q) -> Tuple[float, np.ndarray]:
    """Angle-axis (alpha, axis) of a unit quaternion, alpha in [0, 2*pi]."""
    q = np.asarray(q, dtype=float)
    sin_half = float(np.linalg.norm(q[:3]))
    angle = 2.0 * math.atan2(sin_half, float(q[3]))
    if sin_half < 1e-12:
        return angle, ZERO_ROTATION_AXIS.copy()
    return angle, q[:3] / sin_half


def quat_log_map(angle: float, axis) -> np.ndarray:
    """Unit quaternion of a rotation by ``angle`` about the unit ``axis``."""
    axis = np.asarray(axis, dtype=float)
    n = float(np.linalg.norm(axis))
    if abs(n - 1.0) > 1e-9:
        raise ValueError(f"rotation axis norm {n} is not 1")
    half = 0.5 * float(angle)
    return np.concatenate([axis * math.sin(half), [math.cos(half)]])


def slerp(q0, qf, t: float) -> np.ndarray:
    """Constant-rate interpolation from q0 to qf along the shorter arc.

    The relative rotation conj(q0) (x) qf is sign-flipped when its scalar
    part is negative, so of the two quaternions covering each rotation the
    interpolation always walks the one with angle <= pi.
    """
    qe = quat_mul(quat_conj(q0), qf)
    if qe[3] < 0.0:
        qe = -qe
    angle, axis = quat_exp_map(qe)
    return quat_mul(q0, quat_log_map(float(t) * angle, axis))


def _skew(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return np.array(
        [
            [0.0, -a[2], a[1]],
            [a[2], 0.0, -a[0]],
            [-a[1], a[0], 0.0],
        ]
    )


# ---------------------------------------------------------------------------
# Geometry: ellipsoidal keep-out sets, boxy rooms, softened union indicator.


@dataclass(frozen=True)
class Ellipsoid:
    """Keep-out set {r : ||H (r - c)|| < 1} with H symmetric positive definite."""

    H: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        c = np.asarray(self.center, dtype=float).reshape(-1)
        if H.shape != (3, 3) or c.shape != (3,):
            raise ValueError("ellipsoid needs a 3x3 shape matrix and 3-vector center")
        if np.max(np.abs(H - H.T)) > 1e-9:
            raise ValueError("ellipsoid shape matrix must be symmetric")
        try:
            np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            raise ValueError("ellipsoid shape matrix must be positive definite")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "center", c)

    @classmethod
    def from_dict(cls, d: dict) -> "Ellipsoid":
        if "semiaxes" in d:
            semi = np.asarray(d["semiaxes"], dtype=float)
            if semi.shape != (3,) or np.any(semi <= 0):
                raise ValueError("semiaxes must be 3 positive numbers")
            H = np.diag(1.0 / semi)
        else:
            H = np.asarray(d["h"], dtype=float)
        return cls(H=H, center=np.asarray(d["center"], dtype=float))

    def violation(self, r) -> float:
        """Positive inside the keep-out set, zero on its boundary."""
        y = self.H @ (np.asarray(r, dtype=float) - self.center)
        return 1.0 - float(np.linalg.norm(y))

    def violation_gradient(self, r) -> np.ndarray:
        """Gradient of ``violation``; zero at the (singular) center."""
        diff = np.asarray(r, dtype=float) - self.center
        y = self.H @ diff
        n = float(np.linalg.norm(y))
        if n < 1e-12:
            return np.zeros(3)
        return -(self.H.T @ y) / n

    def extent(self) -> np.ndarray:
        """Half-widths of the tight axis-aligned bounding box."""
        Hinv = np.linalg.inv(self.H)
        return np.linalg.norm(Hinv, axis=1)


@dataclass(frozen=True)
class Room:
    """Axis-aligned box given by its lower and upper corners."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("room corners must be 3-vectors")
        if np.any(hi <= lo):
            raise ValueError("room upper corner must exceed the lower corner")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_dict(cls, d: dict) -> "Room":
        return cls(lower=np.asarray(d["lower"], dtype=float),
                   upper=np.asarray(d["upper"], dtype=float))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_size(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)


def room_sdf(r, room: Room) -> float:
    """Scaled inside-distance: 1 at the center, 0 on the boundary, <0 outside."""
    z = (np.asarray(r, dtype=float) - room.center) / room.half_size
    return 1.0 - float(np.max(np.abs(z)))


def softmax(v, sharpness: float) -> float:
    """Smooth upper bound on max(v): log-sum-exp with the peak shifted out.

    Overshoots max(v) by at most log(len(v)) / sharpness.
    """
    v = np.asarray(v, dtype=float)
    if sharpness <= 0:
        raise ValueError("softmax sharpness must be positive")
    m = float(np.max(v))
    out = m + math.log(float(np.sum(np.exp(sharpness * (v - m))))) / sharpness
    assert m <= out <= m + math.log(v.size) / sharpness + 1e-12
    return out


def softmax_gradient(v, sharpness: float) -> np.ndarray:
    """Gradient of ``softmax``: a strictly positive probability vector."""
    v = np.asarray(v, dtype=float)
    if sharpness <= 0:
        raise ValueError("softmax sharpness must be positive")
    e = np.exp(sharpness * (v - np.max(v)))
    return e / np.sum(e)


# ---------------------------------------------------------------------------
# Fixtures.


def load_fixture(name: str) -> dict:
    """Read a bundled default-parameter file (``quadrotor`` or ``freeflyer``)."""
    path = resources.files(__package__) / "fixtures" / f"{name}.json"
    with path.open("r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Quadrotor: point mass with a thrust-tilt cone dodging ellipsoids.


@dataclass(frozen=True)
class QuadrotorParams:
    """Obstacle-avoidance problem data for a point-mass quadrotor.

    The input is the specific thrust a (an acceleration) plus its norm
    slack sigma; tilt is limited by requiring the vertical component to
    carry at least sigma * cos(tilt_max).
    """

    gravity: float
    accel_min: float
    accel_max: float
    tilt_max: float
    tf_min: float
    tf_max: float
    r0: np.ndarray
    v0: np.ndarray
    rf: np.ndarray
    vf: np.ndarray
    obstacles: Tuple[Ellipsoid, ...]

    def __post_init__(self):
        for name in ("r0", "v0", "rf", "vf"):
            vec = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if vec.shape != (3,):
                raise ValueError(f"{name} must be a 3-vector")
            object.__setattr__(self, name, vec)
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if not 0 < self.accel_min < self.accel_max:
            raise ValueError("need 0 < accel_min < accel_max")
        if not 0 < self.tilt_max <= math.pi:
            raise ValueError("tilt_max must lie in (0, pi]")
        if not 0 < self.tf_min <= self.tf_max:
            raise ValueError("need 0 < tf_min <= tf_max")
        if self.gravity <= 0:
            raise ValueError("gravity must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "QuadrotorParams":
        return cls(
            gravity=float(d["gravity"]),
            accel_min=float(d["accel_min"]),
            accel_max=float(d["accel_max"]),
            tilt_max=math.radians(float(d["tilt_max_deg"])),
            tf_min=float(d["tf_min"]),
            tf_max=float(d["tf_max"]),
            r0=np.asarray(d["r0"], dtype=float),
            v0=np.asarray(d["v0"], dtype=float),
            rf=np.asarray(d["rf"], dtype=float),
            vf=np.asarray(d["vf"], dtype=float),
            obstacles=tuple(Ellipsoid.from_dict(o) for o in d["obstacles"]),
        )

    @classmethod
    def default(cls) -> "QuadrotorParams":
        return cls.from_dict(load_fixture("quadrotor")["params"])


def _quadrotor_scaling(params: QuadrotorParams):
    corners = [params.r0, params.rf]
    for ob in params.obstacles:
        ext = ob.extent()
        corners.append(ob.center - ext)
        corners.append(ob.center + ext)
    lo = np.min(corners, axis=0) - 0.5
    hi = np.max(corners, axis=0) + 0.5
    # Worst-case mean speed sets the velocity range.
    v_span = max(1.0, float(np.linalg.norm(params.rf - params.r0)) / params.tf_min)
    x_bounds = [(lo[i], hi[i]) for i in range(3)]
    x_bounds += [(-v_span, v_span)] * 3
    u_bounds = [(-params.accel_max, params.accel_max)] * 3
    u_bounds += [(params.accel_min, params.accel_max)]
    p_bounds = [(params.tf_min, params.tf_max)]
    return make_scaling(x_bounds, u_bounds, p_bounds)


def quadrotor_ocp(params: QuadrotorParams):
    """Continuous problem plus the control-affine cost certificate.

    State (r, v), input (a, sigma), parameter (tf).  Ellipsoid keep-outs
    are the only nonconvex rows; thrust magnitude, tilt, and the final
    time bounds are hard convex input rows for both solvers, so there are
    no convex state rows and no soft indicators.
    """
    g = params.gravity
    n_obs = len(params.obstacles)
    cos_tilt = math.cos(params.tilt_max)

    def f_abs(x, u):
        return np.concatenate([x[3:6], u[:3] - g * UP])

    A_abs = np.zeros((6, 6))
    A_abs[0:3, 3:6] = np.eye(3)
    B_abs = np.zeros((6, 4))
    B_abs[3:6, 0:3] = np.eye(3)
    f, A, B, F = dilate_dynamics(f_abs, lambda x, u: A_abs, lambda x, u: B_abs)

    def s(t, x, u, p):
        return np.array([ob.violation(x[:3]) for ob in params.obstacles])

    def C(t, x, u, p):
        out = np.zeros((n_obs, 6))
        for j, ob in enumerate(params.obstacles):
            out[j, :3] = ob.violation_gradient(x[:3])
        return out

    def D(t, x, u, p):
        return np.zeros((n_obs, 4))

    def G(t, x, u, p):
        return np.zeros((n_obs, 1))

    def convex_input_rows(b, k, u_idx, p_idx):
        ax, ay, az, sg = (int(i) for i in u_idx)
        b.add_nonneg([(sg, 1.0)], offset=-params.accel_min)
        b.add_nonneg([(sg, -1.0)], offset=params.accel_max)
        b.add_soc(
            [
                ([(sg, 1.0)], 0.0),
                ([(ax, 1.0)], 0.0),
                ([(ay, 1.0)], 0.0),
                ([(az, 1.0)], 0.0),
            ]
        )
        b.add_nonneg([(az, 1.0), (sg, -cos_tilt)])
        if k == 0:
            tf = int(p_idx[0])
            b.add_nonneg([(tf, 1.0)], offset=-params.tf_min)
            b.add_nonneg([(tf, -1.0)], offset=params.tf_max)

    def gamma(x, u, p):
        return (u[3] / g) ** 2

    def gamma_x(x, u, p):
        return np.zeros(6)

    def gamma_u(x, u, p):
        return np.array([0.0, 0.0, 0.0, 2.0 * u[3] / g**2])

    def gamma_p(x, u, p):
        return np.zeros(1)

    def gamma_epigraph(b, k, t_idx, x_idx, u_idx, p_idx):
        b.add_square_epigraph(t_idx, [([(int(u_idx[3]), 1.0 / g)], 0.0)])

    x_ic = np.concatenate([params.r0, params.v0])
    x_tc = np.concatenate([params.rf, params.vf])

    ocp = ContinuousOCP(
        n=6,
        m=4,
        d=1,
        f=f,
        A=A,
        B=B,
        F=F,
        n_s=n_obs,
        s=s,
        C=C,
        D=D,
        G=G,
        convex_input_rows=convex_input_rows,
        n_ic=6,
        g_ic=lambda x0, p: x0 - x_ic,
        H0=lambda x0, p: np.eye(6),
        K0=lambda x0, p: np.zeros((6, 1)),
        n_tc=6,
        g_tc=lambda xN, p: xN - x_tc,
        Hf=lambda xN, p: np.eye(6),
        Kf=lambda xN, p: np.zeros((6, 1)),
        gamma=gamma,
        gamma_x=gamma_x,
        gamma_u=gamma_u,
        gamma_p=gamma_p,
        gamma_epigraph=gamma_epigraph,
        dynamic_param_indices=(0,),
        scaling=_quadrotor_scaling(params),
        state_names=("rx", "ry", "rz", "vx", "vy", "vz"),
        input_names=("ax", "ay", "az", "sigma"),
        param_names=("tf",),
    )

    def f0(t, x, p):
        return p[0] * np.concatenate([x[3:6], -g * UP])

    def _f_ctrl(i):
        col = np.zeros(6)
        if i < 3:
            col[3 + i] = 1.0

        def fi(t, x, p):
            return p[0] * col

        return fi

    cost = QuadraticRunningCost(
        S=lambda p: np.diag([0.0, 0.0, 0.0, 1.0 / g**2]),
        ell=lambda x, p: np.zeros(4),
        g=lambda x, p: 0.0,
        f0=f0,
        f_ctrl=[_f_ctrl(i) for i in range(4)],
    )
    return ocp, cost


def quadrotor_guess(params: QuadrotorParams, grid) -> TrajectoryIterate:
    """Straight-line states under a constant hover input, midpoint time."""
    hover = np.array([0.0, 0.0, params.gravity, params.gravity])
    return straight_line_guess(
        np.concatenate([params.r0, params.v0]),
        np.concatenate([params.rf, params.vf]),
        hover,
        hover,
        grid,
        p=np.array([0.5 * (params.tf_min + params.tf_max)]),
    )


# ---------------------------------------------------------------------------
# Free flyer: rigid body through a chain of rooms with keep-out ellipsoids.


@dataclass(frozen=True)
class FreeFlyerParams:
    """6-DoF free-flyer problem data.

    The vehicle must stay inside the union of the rooms.  Per node the
    union membership max_i d_i(r_k) >= 0 is softened to a log-sum-exp over
    slack parameters chi_ik <= d_i(r_k); eps_iss > 0 adds a small terminal
    reward on sum(chi) that pulls the slacks up to equality so their
    gradient information stays honest.
    """

    mass: float
    inertia: np.ndarray
    thrust_max: float
    torque_max: float
    v_max: float
    omega_max: float
    tf_min: float
    tf_max: float
    sharpness: float
    eps_iss: float
    r0: np.ndarray
    v0: np.ndarray
    q0: np.ndarray
    rf: np.ndarray
    vf: np.ndarray
    qf: np.ndarray
    rooms: Tuple[Room, ...]
    obstacles: Tuple[Ellipsoid, ...]

    def __post_init__(self):
        for name in ("r0", "v0", "rf", "vf"):
            vec = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if vec.shape != (3,):
                raise ValueError(f"{name} must be a 3-vector")
            object.__setattr__(self, name, vec)
        object.__setattr__(self, "q0", unit_quaternion(self.q0))
        object.__setattr__(self, "qf", unit_quaternion(self.qf))
        J = np.asarray(self.inertia, dtype=float)
        if J.shape == (3,):
            J = np.diag(J)
        if J.shape != (3, 3):
            raise ValueError("inertia must be a 3x3 matrix or 3 diagonal entries")
        if np.max(np.abs(J - J.T)) > 1e-9:
            raise ValueError("inertia must be symmetric")
        try:
            np.linalg.cholesky(J)
        except np.linalg.LinAlgError:
            raise ValueError("inertia must be positive definite")
        object.__setattr__(self, "inertia", J)
        object.__setattr__(self, "rooms", tuple(self.rooms))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if not self.rooms:
            raise ValueError("at least one room is required")
        for val, name in (
            (self.mass, "mass"),
            (self.thrust_max, "thrust_max"),
            (self.torque_max, "torque_max"),
            (self.v_max, "v_max"),
            (self.omega_max, "omega_max"),
            (self.sharpness, "sharpness"),
        ):
            if val <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.tf_min <= self.tf_max:
            raise ValueError("need 0 < tf_min <= tf_max")
        if self.eps_iss < 0:
            raise ValueError("eps_iss must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> "FreeFlyerParams":
        return cls(
            mass=float(d["mass"]),
            inertia=np.asarray(d["inertia"], dtype=float),
            thrust_max=float(d["thrust_max"]),
            torque_max=float(d["torque_max"]),
            v_max=float(d["v_max"]),
            omega_max=float(d["omega_max"]),
            tf_min=float(d["tf_min"]),
            tf_max=float(d["tf_max"]),
            sharpness=float(d["sharpness"]),
            eps_iss=float(d["eps_iss"]),
            r0=np.asarray(d["r0"], dtype=float),
            v0=np.asarray(d["v0"], dtype=float),
            q0=np.asarray(d["q0"], dtype=float),
            rf=np.asarray(d["rf"], dtype=float),
            vf=np.asarray(d["vf"], dtype=float),
            qf=np.asarray(d["qf"], dtype=float),
            rooms=tuple(Room.from_dict(r) for r in d["rooms"]),
            obstacles=tuple(Ellipsoid.from_dict(o) for o in d["obstacles"]),
        )

    @classmethod
    def default(cls) -> "FreeFlyerParams":
        return cls.from_dict(load_fixture("freeflyer")["params"])


def _freeflyer_scaling(params: FreeFlyerParams, N: int):
    lo = np.min([room.lower for room in params.rooms], axis=0) - 0.5
    hi = np.max([room.upper for room in params.rooms], axis=0) + 0.5
    x_bounds = [(lo[i], hi[i]) for i in range(3)]
    x_bounds += [(-params.v_max, params.v_max)] * 3
    x_bounds += [(-1.0, 1.0)] * 4
    x_bounds += [(-params.omega_max, params.omega_max)] * 3
    u_bounds = [(-params.thrust_max, params.thrust_max)] * 3
    u_bounds += [(-params.torque_max, params.torque_max)] * 3
    # The slack range runs from the worst room distance over the room
    # envelope up to the value at a room center.
    corner_pts = np.array(
        [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
    )
    chi_lo = min(room_sdf(pt, room) for room in params.rooms for pt in corner_pts)
    p_bounds = [(params.tf_min, params.tf_max)]
    p_bounds += [(chi_lo, 1.0)] * (N * len(params.rooms))
    return make_scaling(x_bounds, u_bounds, p_bounds)


def freeflyer_ocp(params: FreeFlyerParams, grid):
    """Continuous problem plus cost certificate, tied to ``grid``.

    The parameter vector is [tf, chi_00 .. chi_(N-1)(R-1)] with the room
    slacks blocked per node, so the problem dimension depends on the node
    count; use the same grid for discretization and solving.  State
    (r, v, q, omega) with a vector-first quaternion, input (T, M).
    """
    N = grid.N
    n_rooms = len(params.rooms)
    n_obs = len(params.obstacles)
    d = 1 + N * n_rooms
    J = params.inertia
    J_inv = np.linalg.inv(J)
    mass = params.mass

    def node_of(t):
        k = int(round(float(t) * (N - 1)))
        return min(max(k, 0), N - 1)

    def chi_slice(k):
        return slice(1 + k * n_rooms, 1 + (k + 1) * n_rooms)

    def f_abs(x, u):
        v, q, w = x[3:6], x[6:10], x[10:13]
        return np.concatenate(
            [
                v,
                u[:3] / mass,
                0.5 * quat_mul(q, np.array([w[0], w[1], w[2], 0.0])),
                J_inv @ (u[3:6] - np.cross(w, J @ w)),
            ]
        )

    def jac_x(x, u):
        q, w = x[6:10], x[10:13]
        out = np.zeros((13, 13))
        out[0:3, 3:6] = np.eye(3)
        # d(q (x) [w, 0])/dq and /dw, halved.
        out[6:9, 6:9] = -0.5 * _skew(w)
        out[6:9, 9] = 0.5 * w
        out[9, 6:9] = -0.5 * w
        out[6:9, 10:13] = 0.5 * (q[3] * np.eye(3) + _skew(q[:3]))
        out[9, 10:13] = -0.5 * q[:3]
        out[10:13, 10:13] = J_inv @ (_skew(J @ w) - _skew(w) @ J)
        return out

    B_abs = np.zeros((13, 6))
    B_abs[3:6, 0:3] = np.eye(3) / mass
    B_abs[10:13, 3:6] = J_inv

    f, A, B, F = dilate_dynamics(f_abs, jac_x, lambda x, u: B_abs, p_index=0, d=d)

    def s(t, x, u, p):
        if len(p) != d:
            raise ValueError(
                f"parameter vector has length {len(p)}, expected {d} for N={N}"
            )
        k = node_of(t)
        rows = [ob.violation(x[:3]) for ob in params.obstacles]
        rows.append(-softmax(p[chi_slice(k)], params.sharpness))
        return np.array(rows)

    def C(t, x, u, p):
        out = np.zeros((n_obs + 1, 13))
        for j, ob in enumerate(params.obstacles):
            out[j, :3] = ob.violation_gradient(x[:3])
        return out

    def D(t, x, u, p):
        return np.zeros((n_obs + 1, 6))

    def G(t, x, u, p):
        k = node_of(t)
        out = np.zeros((n_obs + 1, d))
        out[-1, chi_slice(k)] = -softmax_gradient(p[chi_slice(k)], params.sharpness)
        return out

    def convex_state_rows(b, k, x_idx, p_idx):
        v_idx = [int(i) for i in x_idx[3:6]]
        w_idx = [int(i) for i in x_idx[10:13]]
        b.add_soc([([], params.v_max)] + [([(i, 1.0)], 0.0) for i in v_idx])
        b.add_soc([([], params.omega_max)] + [([(i, 1.0)], 0.0) for i in w_idx])
        for i, room in enumerate(params.rooms):
            chi = int(p_idx[1 + k * n_rooms + i])
            for a in range(3):
                r_a = int(x_idx[a])
                c, h = room.center[a], room.half_size[a]
                b.add_nonneg([(chi, -1.0), (r_a, -1.0 / h)], offset=1.0 + c / h)
                b.add_nonneg([(chi, -1.0), (r_a, 1.0 / h)], offset=1.0 - c / h)

    def convex_input_rows(b, k, u_idx, p_idx):
        T_idx = [int(i) for i in u_idx[0:3]]
        M_idx = [int(i) for i in u_idx[3:6]]
        b.add_soc([([], params.thrust_max)] + [([(i, 1.0)], 0.0) for i in T_idx])
        b.add_soc([([], params.torque_max)] + [([(i, 1.0)], 0.0) for i in M_idx])
        if k == 0:
            tf = int(p_idx[0])
            b.add_nonneg([(tf, 1.0)], offset=-params.tf_min)
            b.add_nonneg([(tf, -1.0)], offset=params.tf_max)

    def gamma(x, u, p):
        return float(u[:3] @ u[:3]) / params.thrust_max**2 + float(
            u[3:6] @ u[3:6]
        ) / params.torque_max**2

    def gamma_x(x, u, p):
        return np.zeros(13)

    def gamma_u(x, u, p):
        return np.concatenate(
            [2.0 * u[:3] / params.thrust_max**2, 2.0 * u[3:6] / params.torque_max**2]
        )

    def gamma_p(x, u, p):
        return np.zeros(d)

    def gamma_epigraph(b, k, t_idx, x_idx, u_idx, p_idx):
        rows = [([(int(u_idx[i]), 1.0 / params.thrust_max)], 0.0) for i in range(3)]
        rows += [([(int(u_idx[i]), 1.0 / params.torque_max)], 0.0) for i in range(3, 6)]
        b.add_square_epigraph(t_idx, rows)

    phi = None
    phi_epigraph = None
    if params.eps_iss > 0:
        eps = params.eps_iss

        def phi(xN, p):
            return -eps * float(np.sum(p[1:]))

        def phi_epigraph(b, t_idx, x_idx, p_idx):
            entries = [(int(t_idx), 1.0)]
            entries += [(int(p_idx[j]), eps) for j in range(1, d)]
            b.add_nonneg(entries)

    x_ic = np.concatenate([params.r0, params.v0, params.q0, np.zeros(3)])
    x_tc = np.concatenate([params.rf, params.vf, params.qf, np.zeros(3)])

    param_names = ["tf"]
    param_names += [f"chi[{k},{i}]" for k in range(N) for i in range(n_rooms)]

    ocp = ContinuousOCP(
        n=13,
        m=6,
        d=d,
        f=f,
        A=A,
        B=B,
        F=F,
        n_s=n_obs + 1,
        s=s,
        C=C,
        D=D,
        G=G,
        convex_state_rows=convex_state_rows,
        convex_input_rows=convex_input_rows,
        n_ic=13,
        g_ic=lambda x0, p: x0 - x_ic,
        H0=lambda x0, p: np.eye(13),
        K0=lambda x0, p: np.zeros((13, d)),
        n_tc=13,
        g_tc=lambda xN, p: xN - x_tc,
        Hf=lambda xN, p: np.eye(13),
        Kf=lambda xN, p: np.zeros((13, d)),
        gamma=gamma,
        gamma_x=gamma_x,
        gamma_u=gamma_u,
        gamma_p=gamma_p,
        gamma_epigraph=gamma_epigraph,
        phi=phi,
        phi_epigraph=phi_epigraph,
        dynamic_param_indices=(0,),
        scaling=_freeflyer_scaling(params, N),
        state_names=(
            "rx", "ry", "rz", "vx", "vy", "vz",
            "qx", "qy", "qz", "qw", "wx", "wy", "wz",
        ),
        input_names=("Tx", "Ty", "Tz", "Mx", "My", "Mz"),
        param_names=tuple(param_names),
    )

    def f0(t, x, p):
        v, q, w = x[3:6], x[6:10], x[10:13]
        return p[0] * np.concatenate(
            [
                v,
                np.zeros(3),
                0.5 * quat_mul(q, np.array([w[0], w[1], w[2], 0.0])),
                -J_inv @ np.cross(w, J @ w),
            ]
        )

    def _f_ctrl(i):
        col = np.zeros(13)
        if i < 3:
            col[3 + i] = 1.0 / mass
        else:
            col[10:13] = J_inv[:, i - 3]

        def fi(t, x, p):
            return p[0] * col

        return fi

    def _speed_indicator():
        def value(t, x, p):
            return float(np.linalg.norm(x[3:6])) - params.v_max

        def epigraph(b, z_idx, k, x_idx, p_idx):
            rows = [([(int(z_idx), 1.0)], params.v_max)]
            rows += [([(int(x_idx[3 + i]), 1.0)], 0.0) for i in range(3)]
            b.add_soc(rows)

        return ConvexIndicator(value=value, epigraph=epigraph)

    def _rate_indicator():
        def value(t, x, p):
            return float(np.linalg.norm(x[10:13])) - params.omega_max

        def epigraph(b, z_idx, k, x_idx, p_idx):
            rows = [([(int(z_idx), 1.0)], params.omega_max)]
            rows += [([(int(x_idx[10 + i]), 1.0)], 0.0) for i in range(3)]
            b.add_soc(rows)

        return ConvexIndicator(value=value, epigraph=epigraph)

    def _slack_indicator(i):
        room = params.rooms[i]

        def value(t, x, p):
            k = node_of(t)
            return float(p[1 + k * n_rooms + i]) - room_sdf(x[:3], room)

        def epigraph(b, z_idx, k, x_idx, p_idx):
            chi = int(p_idx[1 + k * n_rooms + i])
            z = int(z_idx)
            for a in range(3):
                r_a = int(x_idx[a])
                c, h = room.center[a], room.half_size[a]
                b.add_nonneg(
                    [(z, 1.0), (chi, -1.0), (r_a, -1.0 / h)], offset=1.0 + c / h
                )
                b.add_nonneg(
                    [(z, 1.0), (chi, -1.0), (r_a, 1.0 / h)], offset=1.0 - c / h
                )

        return ConvexIndicator(value=value, epigraph=epigraph)

    cost = QuadraticRunningCost(
        S=lambda p: np.diag(
            [1.0 / params.thrust_max**2] * 3 + [1.0 / params.torque_max**2] * 3
        ),
        ell=lambda x, p: np.zeros(6),
        g=lambda x, p: 0.0,
        f0=f0,
        f_ctrl=[_f_ctrl(i) for i in range(6)],
        indicators=[_speed_indicator(), _rate_indicator()]
        + [_slack_indicator(i) for i in range(n_rooms)],
    )
    return ocp, cost


def freeflyer_guess(params: FreeFlyerParams, grid) -> TrajectoryIterate:
    """Axis-by-axis translation plus constant-rate slerp, zero inputs.

    The position walks the gap one axis at a time (x, then y, then z),
    each leg taking time in proportion to its length so the speed is a
    constant total / tf; zero-length legs are skipped.  The room slacks
    are seeded at equality chi_ik = d_i(r_k).
    """
    N = grid.N
    n_rooms = len(params.rooms)
    alpha = 0.5 * (params.tf_min + params.tf_max)

    gap = params.rf - params.r0
    legs = [(a, gap[a]) for a in range(3) if gap[a] != 0.0]
    total = sum(abs(g) for _, g in legs)

    r = np.tile(params.r0, (N, 1))
    v = np.zeros((N, 3))
    if total > 0:
        fractions = np.array([abs(g) / total for _, g in legs])
        breaks = np.concatenate([[0.0], np.cumsum(fractions)])
        breaks[-1] = 1.0
        speed = total / alpha
        waypoints = [params.r0.copy()]
        for a, g in legs:
            nxt = waypoints[-1].copy()
            nxt[a] += g
            waypoints.append(nxt)
        waypoints = np.array(waypoints)
        for axis in range(3):
            r[:, axis] = np.interp(grid.t, breaks, waypoints[:, axis])
        leg_of = np.clip(
            np.searchsorted(breaks[1:-1], grid.t, side="right"), 0, len(legs) - 1
        )
        for k in range(N):
            a, g = legs[leg_of[k]]
            v[k, a] = math.copysign(speed, g)

    angle, axis = quat_exp_map(_shortest_arc(params.q0, params.qf))
    q = np.array([slerp(params.q0, params.qf, t) for t in grid.t])
    w = np.tile(angle * axis / alpha, (N, 1))

    x = np.hstack([r, v, q, w])
    u = np.zeros((N, 6))
    p = np.empty(1 + N * n_rooms)
    p[0] = alpha
    for k in range(N):
        for i, room in enumerate(params.rooms):
            p[1 + k * n_rooms + i] = room_sdf(r[k], room)
    return TrajectoryIterate(grid=grid, x=x, u=u, p=p)


def _shortest_arc(q0, qf) -> np.ndarray:
    qe = quat_mul(quat_conj(q0), qf)
    return -qe if qe[3] < 0.0 else qe
