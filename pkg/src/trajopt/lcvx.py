"""Lossless convexification solved in single conic shots.

Two problems live here.  A minimum-effort double integrator with a
two-sided bound on the acceleration magnitude, whose relaxation replaces
|u| with a slack that upper-bounds it; and 3-DoF powered descent guidance,
where the change of variables xi = sigma/m, u = T/m, z = ln m turns the
mass-depleting rocket into a linear system with one nonlinear input bound
that a conservative Taylor corridor makes second-order-cone representable.
Both relaxations are expected to close the gap sigma - ||u|| at every
node (the first node is exempt: a single-hold-step artifact can leave it
slack), and helpers quantify exactly that, along with the controllability
and transversality rank conditions the guarantee rests on.

Free final times are handled outside the conic programs: the optimal cost
is unimodal in tf for both problems, so a golden-section line search over
one-solve evaluations finds the minimizer.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from . import conic
from .conic import ProgramBuilder
from .discretize import FOH, TimeGrid, discretize
from .ocp import ContinuousOCP, make_scaling, straight_line_guess
from .scvx import _entries, _trapz_weights

__all__ = [
    "EARTH_SURFACE_GRAVITY",
    "LCvxConditionReport",
    "PDGParams",
    "PDGSolution",
    "ToyParams",
    "ToySolution",
    "build_pdg",
    "controllability_check",
    "golden_search_tf",
    "golden_section",
    "lcvx_equality_gap",
    "pdg_condition_report",
    "pdg_discrete",
    "pdg_state_space",
    "propagate_pdg",
    "solve_pdg",
    "solve_toy",
    "toy_condition_report",
    "toy_optimal_tf",
]

EARTH_SURFACE_GRAVITY = 9.807

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


# --------------------------------------------------------------- parameters


@dataclasses.dataclass
class ToyParams:
    """Minimum-effort double integrator with a friction offset.

    Drive a unit mass a distance ``s`` in time ``tf`` against a constant
    deceleration ``g``, with the acceleration magnitude forced into
    [u_min, u_max] (the nonconvexity the relaxation removes), minimizing
    the average squared effort.
    """

    g: float = 0.1
    s: float = 47.0
    tf: float = 10.0
    N: int = 50
    u_min: float = 1.0
    u_max: float = 2.0

    def __post_init__(self):
        if not (np.isfinite(self.tf) and self.tf > 0):
            raise ValueError("final time must be positive")
        if self.N < 2:
            raise ValueError("need at least two nodes")
        if not 0.0 <= self.u_min < self.u_max:
            raise ValueError("need 0 <= u_min < u_max")


@dataclasses.dataclass
class PDGParams:
    """Powered descent guidance constants, SI units throughout.

    Defaults are a Mars-like lander: conversions from the mixed-unit
    source values (km/h, degrees) happen in the default expressions, once.
    """

    g: tuple = (0.0, 0.0, -3.71)
    m_dry: float = 1505.0
    m_wet: float = 1905.0
    I_sp: float = 225.0
    omega: tuple = (
        math.radians(3.5e-3),
        0.0,
        math.radians(2.0e-3),
    )
    rho_min: float = 4971.0
    rho_max: float = 13258.0
    gamma_gs: float = math.radians(86.0)
    gamma_p: float = math.radians(40.0)
    v_max: float = 500.0 / 3.6
    r0: tuple = (2000.0, 0.0, 1500.0)
    v0: tuple = (80.0, 30.0, -75.0)
    dt: float = 1.0

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float)
        self.omega = np.asarray(self.omega, dtype=float)
        self.r0 = np.asarray(self.r0, dtype=float)
        self.v0 = np.asarray(self.v0, dtype=float)
        flat = np.concatenate(
            [
                self.g,
                self.omega,
                self.r0,
                self.v0,
                [
                    self.m_dry,
                    self.m_wet,
                    self.I_sp,
                    self.rho_min,
                    self.rho_max,
                    self.gamma_gs,
                    self.gamma_p,
                    self.v_max,
                    self.dt,
                ],
            ]
        )
        if not np.all(np.isfinite(flat)):
            raise ValueError("every parameter must be finite")
        if not 0.0 < self.rho_min < self.rho_max:
            raise ValueError("need 0 < rho_min < rho_max")
        if not self.m_dry < self.m_wet:
            raise ValueError("dry mass must be below wet mass")
        if not 0.0 < self.gamma_p < 0.5 * math.pi:
            raise ValueError("pointing cone must be strictly inside the horizon")
        if not 0.0 < self.gamma_gs < 0.5 * math.pi:
            raise ValueError("glideslope angle must lie in (0, pi/2)")
        if self.dt <= 0 or self.I_sp <= 0 or self.v_max <= 0:
            raise ValueError("dt, I_sp and v_max must be positive")

    @property
    def alpha(self) -> float:
        """Fuel consumption per unit thrust-time, 1/(I_sp * g_e)."""
        return 1.0 / (self.I_sp * EARTH_SURFACE_GRAVITY)

    # Mass-log corridor.  z_floor tracks the maximum-rate burn and lower
    # bounds the reachable z(t); both bounds share the log argument
    # m_wet - alpha*rho*t, which must stay positive on the horizon.
    def z_floor(self, t):
        return np.log(self.m_wet - self.alpha * self.rho_max * np.asarray(t))

    def z_ceil(self, t):
        return np.log(self.m_wet - self.alpha * self.rho_min * np.asarray(t))

    def mu_min(self, t):
        return self.rho_min * np.exp(-self.z_floor(t))

    def mu_max(self, t):
        return self.rho_max * np.exp(-self.z_floor(t))

    def max_burn_time(self) -> float:
        return self.m_wet / (self.alpha * self.rho_max)


# ---------------------------------------------------------- rank conditions


@dataclasses.dataclass(frozen=True)
class LCvxConditionReport:
    controllable: bool
    transversality_independent: bool
    notes: str = ""


def _rank(mat: np.ndarray) -> int:
    if mat.size == 0:
        return 0
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > 1e-10 * sv[0]))


def controllability_check(A, B) -> bool:
    """True iff [B, AB, ..., A^{n-1}B] has full row rank."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    n = A.shape[0]
    if A.shape != (n, n) or B.ndim != 2 or B.shape[0] != n:
        raise ValueError("dimension mismatch between A and B")
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return _rank(np.hstack(blocks)) == n


def transversality_check(m_vec, B_mat) -> bool:
    """True iff the terminal-cost gradient leaves the column space of B.

    Equivalent rank form: rank([B | m]) = rank(B) + 1.  With no terminal
    constraint (B has no columns) this reduces to m being nonzero.
    """
    m = np.asarray(m_vec, dtype=float).reshape(-1, 1)
    B = np.asarray(B_mat, dtype=float)
    if B.size == 0:
        B = np.zeros((m.shape[0], 0))
    if B.ndim == 1:
        B = B[:, None]
    return _rank(np.hstack([B, m])) == _rank(B) + 1


def toy_condition_report(params: ToyParams | None = None) -> LCvxConditionReport:
    ctrl = controllability_check([[0.0, 1.0], [0.0, 0.0]], [0.0, 1.0])
    # terminal time and full state are pinned, so the constraint gradient
    # spans R^3 and no cost gradient can escape its column space
    trans = transversality_check(np.array([0.0, 0.0, 1.0]), np.eye(3))
    return LCvxConditionReport(
        controllable=ctrl,
        transversality_independent=trans,
        notes=(
            "fixed final time and final state: the guarantee falls back on "
            "tf sitting between the minimum and cost-optimal flight times"
        ),
    )


def pdg_condition_report(params: PDGParams, xi_tf: float) -> LCvxConditionReport:
    A, B = pdg_state_space(params)
    ctrl = controllability_check(A, B)
    m_vec = np.concatenate([np.zeros(6), [float(xi_tf)]])
    B_mat = np.vstack([np.eye(6), np.zeros((1, 6))])
    trans = transversality_check(m_vec, B_mat)
    spin_axis_ok = (
        float(np.linalg.norm(np.cross(params.omega, np.array([0.0, 0.0, 1.0]))))
        > 0.0
    )
    notes = (
        "terminal slack xi(tf) > 0 keeps the transversality vector "
        "independent"
        if trans
        else "terminal slack xi(tf) = 0 defeats the transversality condition"
    )
    if not spin_axis_ok:
        notes += "; planet spin is aligned with the pad vertical, so the "
        notes += "pointing-cone controllability check fails"
    return LCvxConditionReport(
        controllable=ctrl, transversality_independent=trans, notes=notes
    )


# ------------------------------------------------------------ golden section


def golden_section(
    f: Callable[[float], float], lo: float, hi: float, tol: float
) -> tuple[float, float]:
    """Minimize a unimodal f on [lo, hi] until the bracket width is <= tol.

    Infinite values are allowed (infeasible region at the bracket edge);
    ties keep the left subinterval, so plateaus resolve to their smallest
    argument.  Returns (argmin, min) over the evaluated points.
    """
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise ValueError("need a finite bracket with lo < hi")
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - _GOLDEN * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _GOLDEN * (hi - lo)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


# ------------------------------------------------------------------ equality


def lcvx_equality_gap(sigma, u) -> float:
    """Worst slack sigma_k - ||u_k|| over every node but the first.

    Nonnegative whenever the relaxation rows hold; a lossless solution
    pushes it to solver precision.  The first node is excluded because a
    benign single-step hold artifact can leave it strictly slack.
    """
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    mag = np.linalg.norm(u, axis=1)
    return float(np.max(sigma[1:] - mag[1:]))


# ------------------------------------------------------------- toy problem


@dataclasses.dataclass
class ToySolution:
    params: ToyParams
    t: np.ndarray | None
    x1: np.ndarray | None
    x2: np.ndarray | None
    u: np.ndarray | None
    sigma: np.ndarray | None
    cost: float
    gap: float
    boundary_residual: float
    status: str
    feasible: bool


def _toy_ocp(params: ToyParams) -> ContinuousOCP:
    # normalized time: physical dynamics scaled by tf, inputs (u, sigma)
    tf, g = params.tf, params.g
    span = max(abs(params.s), 1.0)
    return ContinuousOCP(
        n=2,
        m=2,
        d=0,
        f=lambda t, x, u, p: np.array([tf * x[1], tf * (u[0] - g)]),
        A=lambda t, x, u, p: np.array([[0.0, tf], [0.0, 0.0]]),
        B=lambda t, x, u, p: np.array([[0.0, 0.0], [tf, 0.0]]),
        F=lambda t, x, u, p: np.zeros((2, 0)),
        scaling=make_scaling(
            ((-span, span), (-span, span)),
            (
                (-params.u_max, params.u_max),
                (0.0, params.u_max),
            ),
        ),
        name="double-integrator",
    )


def solve_toy(params: ToyParams) -> ToySolution:
    """One conic solve of the FOH-discretized relaxation."""
    ocp = _toy_ocp(params)
    grid = TimeGrid(params.N)
    ref = straight_line_guess(
        np.zeros(2),
        np.array([params.s, 0.0]),
        np.zeros(2),
        np.zeros(2),
        grid,
    )
    seg = discretize(ocp, ref, grid, FOH)
    N = params.N

    b = ProgramBuilder()
    span = max(abs(params.s), 1.0)
    x_idx = np.array([b.new_vars(f"x{k}", 2, scale=span) for k in range(N)])
    u_idx = np.array(
        [b.new_vars(f"u{k}", 2, scale=params.u_max) for k in range(N)]
    )

    for k in range(N - 1):
        for i in range(2):
            entries = _entries(
                x_idx[k],
                seg.A[k][i],
                u_idx[k],
                seg.Bm[k][i],
                u_idx[k + 1],
                seg.Bp[k][i],
            )
            entries.append((int(x_idx[k + 1][i]), -1.0))
            b.add_zero(entries, offset=float(seg.r[k][i]))

    b.add_zero([(int(x_idx[0][0]), 1.0)])
    b.add_zero([(int(x_idx[0][1]), 1.0)])
    b.add_zero([(int(x_idx[-1][0]), 1.0)], offset=-params.s)
    b.add_zero([(int(x_idx[-1][1]), 1.0)])

    w = params.tf * _trapz_weights(N, grid.dt)
    for k in range(N):
        uk, sk = int(u_idx[k][0]), int(u_idx[k][1])
        b.add_nonneg([(sk, 1.0)], offset=-params.u_min)
        b.add_nonneg([(sk, -1.0)], offset=params.u_max)
        b.add_abs_epigraph(sk, [(uk, 1.0)])
        tau = b.new_var(f"eff{k}")
        b.add_square_epigraph(tau, [([(sk, 1.0)], 0.0)])
        b.add_objective([(tau, float(w[k]))])

    solution = conic.solve(b.build())
    if solution.status != "optimal":
        return ToySolution(
            params=params,
            t=None,
            x1=None,
            x2=None,
            u=None,
            sigma=None,
            cost=math.inf,
            gap=math.nan,
            boundary_residual=math.nan,
            status=solution.status,
            feasible=False,
        )

    x = np.asarray(b.value(solution, x_idx))
    u = np.asarray(b.value(solution, u_idx))
    residual = max(
        float(np.max(np.abs(x[0]))),
        abs(float(x[-1][0]) - params.s),
        abs(float(x[-1][1])),
    )
    return ToySolution(
        params=params,
        t=params.tf * grid.t,
        x1=x[:, 0],
        x2=x[:, 1],
        u=u[:, 0],
        sigma=u[:, 1],
        cost=float(solution.objective_value) + b.objective_constant,
        gap=lcvx_equality_gap(u[:, 1], u[:, 0]),
        boundary_residual=residual,
        status=solution.status,
        feasible=True,
    )


def toy_optimal_tf(
    params: ToyParams,
    bracket: tuple[float, float] = (10.0, 25.0),
    tol: float = 0.05,
) -> tuple[float, ToySolution]:
    """Cost-minimizing final time by golden section over single solves."""

    def cost_at(tf: float) -> float:
        sol = solve_toy(dataclasses.replace(params, tf=tf))
        return sol.cost if sol.feasible else math.inf

    tf_star, best = golden_section(cost_at, bracket[0], bracket[1], tol)
    if not math.isfinite(best):
        raise RuntimeError("every final time in the bracket is infeasible")
    return tf_star, solve_toy(dataclasses.replace(params, tf=tf_star))


# ------------------------------------------------------------- PDG problem


def pdg_state_space(params: PDGParams) -> tuple[np.ndarray, np.ndarray]:
    """Continuous (A, B) of the rotating-frame double integrator."""
    wx, wy, wz = params.omega
    W = np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])
    A = np.zeros((6, 6))
    A[:3, 3:] = np.eye(3)
    A[3:, :3] = -W @ W
    A[3:, 3:] = -2.0 * W
    B = np.vstack([np.zeros((3, 3)), np.eye(3)])
    return A, B


def pdg_discrete(
    params: PDGParams, dt: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact hold-step (Ad, Bd, wd) for x+ = Ad x + Bd u + wd.

    One augmented matrix exponential carries the input and gravity
    convolutions alongside the state transition.
    """
    A, B = pdg_state_space(params)
    aug = np.zeros((10, 10))
    aug[:6, :6] = A
    aug[:6, 6:9] = B
    aug[3:6, 9] = params.g
    M = expm(aug * dt)
    return M[:6, :6], M[:6, 6:9], M[:6, 9]


@dataclasses.dataclass
class PDGHandles:
    builder: ProgramBuilder
    r: np.ndarray
    v: np.ndarray
    z: np.ndarray
    u: np.ndarray
    xi: np.ndarray


@dataclasses.dataclass
class PDGSolution:
    params: PDGParams
    tf: float
    t: np.ndarray | None
    r: np.ndarray | None
    v: np.ndarray | None
    z: np.ndarray | None
    u: np.ndarray | None
    xi: np.ndarray | None
    mass: np.ndarray | None
    thrust: np.ndarray | None
    sigma: np.ndarray | None
    cost: float
    gap: float
    gap_scaled: float
    boundary_residual: float
    glideslope_active: int
    speed_active: int
    status: str
    feasible: bool


def build_pdg(params: PDGParams, tf: float) -> tuple[conic.ConicProgram, PDGHandles]:
    """Assemble the convexified landing problem on the hold grid for tf."""
    N = int(round(tf / params.dt)) + 1
    if N < 2:
        raise ValueError("time of flight is shorter than one hold step")
    if params.m_wet - params.alpha * params.rho_max * tf <= 0.0:
        raise ValueError("maximum-rate burn empties the tanks before tf")
    dt = tf / (N - 1)
    t = np.linspace(0.0, tf, N)
    Ad, Bd, wd = pdg_discrete(params, dt)

    z_lo = params.z_floor(t)
    z_hi = params.z_ceil(t)
    mu_lo = params.mu_min(t)
    mu_hi = params.mu_max(t)
    cot_gs = 1.0 / math.tan(params.gamma_gs)
    xi_scale = params.rho_max / params.m_dry

    b = ProgramBuilder()
    r_scale = max(float(np.max(np.abs(params.r0))), 100.0)
    r_idx = np.array([b.new_vars(f"r{k}", 3, scale=r_scale) for k in range(N)])
    v_idx = np.array(
        [b.new_vars(f"v{k}", 3, scale=params.v_max) for k in range(N)]
    )
    z_idx = np.array(
        [b.new_var(f"z{k}", shift=math.log(params.m_dry)) for k in range(N)]
    )
    u_idx = np.array([b.new_vars(f"u{k}", 3, scale=xi_scale) for k in range(N)])
    xi_idx = np.array([b.new_var(f"xi{k}", scale=xi_scale) for k in range(N)])

    x_idx = np.hstack([r_idx, v_idx])
    for k in range(N - 1):
        for i in range(6):
            entries = _entries(x_idx[k], Ad[i], u_idx[k], Bd[i])
            entries.append((int(x_idx[k + 1][i]), -1.0))
            b.add_zero(entries, offset=float(wd[i]))
        b.add_zero(
            [
                (int(z_idx[k + 1]), 1.0),
                (int(z_idx[k]), -1.0),
                (int(xi_idx[k]), params.alpha * dt),
            ]
        )

    for i in range(3):
        b.add_zero([(int(r_idx[0][i]), 1.0)], offset=-float(params.r0[i]))
        b.add_zero([(int(v_idx[0][i]), 1.0)], offset=-float(params.v0[i]))
        b.add_zero([(int(r_idx[-1][i]), 1.0)])
        b.add_zero([(int(v_idx[-1][i]), 1.0)])
    b.add_zero([(int(z_idx[0]), 1.0)], offset=-math.log(params.m_wet))
    b.add_nonneg([(int(z_idx[-1]), 1.0)], offset=-math.log(params.m_dry))

    w = _trapz_weights(N, tf / (N - 1))
    for k in range(N):
        rk, vk, uk = r_idx[k], v_idx[k], u_idx[k]
        zk, xik = int(z_idx[k]), int(xi_idx[k])

        b.add_soc(
            [([(xik, 1.0)], 0.0)]
            + [([(int(uk[i]), 1.0)], 0.0) for i in range(3)]
        )
        b.add_nonneg(
            [(int(uk[2]), 1.0), (xik, -math.cos(params.gamma_p))]
        )
        for axis in (0, 1):
            for sign in (1.0, -1.0):
                b.add_nonneg(
                    [(int(rk[2]), 1.0), (int(rk[axis]), sign * cot_gs)]
                )
        b.add_soc(
            [([], params.v_max)]
            + [([(int(vk[i]), 1.0)], 0.0) for i in range(3)]
        )

        # xi <= mu_hi (1 - dz) and xi >= mu_lo (1 - dz + dz^2/2), the
        # conservative corridor around the true exp(-z) bounds; dz^2 rides
        # on a square-epigraph slack
        b.add_nonneg(
            [(zk, -float(mu_hi[k])), (xik, -1.0)],
            offset=float(mu_hi[k] * (1.0 + z_lo[k])),
        )
        tau = b.new_var(f"dz2_{k}")
        b.add_square_epigraph(tau, [([(zk, 1.0)], -float(z_lo[k]))])
        b.add_nonneg(
            [(xik, 1.0), (zk, float(mu_lo[k])), (tau, -0.5 * float(mu_lo[k]))],
            offset=-float(mu_lo[k] * (1.0 + z_lo[k])),
        )
        b.add_nonneg([(zk, 1.0)], offset=-float(z_lo[k]))
        b.add_nonneg([(zk, -1.0)], offset=float(z_hi[k]))

        b.add_objective([(xik, float(w[k]))])

    return b.build(), PDGHandles(
        builder=b, r=r_idx, v=v_idx, z=z_idx, u=u_idx, xi=xi_idx
    )


def _infeasible_pdg(params: PDGParams, tf: float, status: str) -> PDGSolution:
    return PDGSolution(
        params=params,
        tf=tf,
        t=None,
        r=None,
        v=None,
        z=None,
        u=None,
        xi=None,
        mass=None,
        thrust=None,
        sigma=None,
        cost=math.inf,
        gap=math.nan,
        gap_scaled=math.nan,
        boundary_residual=math.nan,
        glideslope_active=0,
        speed_active=0,
        status=status,
        feasible=False,
    )


def solve_pdg(params: PDGParams, tf: float) -> PDGSolution:
    """Solve the landing relaxation at a fixed time of flight."""
    if params.m_wet - params.alpha * params.rho_max * tf <= 0.0:
        return _infeasible_pdg(params, tf, "infeasible")
    program, handles = build_pdg(params, tf)
    solution = conic.solve(program)
    if solution.status != "optimal":
        return _infeasible_pdg(params, tf, solution.status)

    b = handles.builder
    N = handles.z.size
    t = np.linspace(0.0, tf, N)
    r = np.asarray(b.value(solution, handles.r))
    v = np.asarray(b.value(solution, handles.v))
    z = np.asarray(b.value(solution, handles.z))
    u = np.asarray(b.value(solution, handles.u))
    xi = np.asarray(b.value(solution, handles.xi))
    # The hold input at the final node steers no interval and carries no cost,
    # so the solver is free to leave it strictly inside the cone.  Every point
    # of that cone section is exactly optimal; report the lossless member.
    if xi[-1] > 0.0:
        tail_norm = float(np.linalg.norm(u[-1]))
        if tail_norm > 0.0:
            u[-1] *= xi[-1] / tail_norm
        else:
            u[-1] = np.array([0.0, 0.0, xi[-1]])
    mass = np.exp(z)
    thrust = mass[:, None] * u
    sigma = mass * xi

    gap = lcvx_equality_gap(xi, u)
    cot_gs = 1.0 / math.tan(params.gamma_gs)
    gs_rows = np.stack(
        [
            r[:, 2] - cot_gs * r[:, 0],
            r[:, 2] + cot_gs * r[:, 0],
            r[:, 2] - cot_gs * r[:, 1],
            r[:, 2] + cot_gs * r[:, 1],
        ],
        axis=1,
    )
    speed = np.linalg.norm(v, axis=1)
    residual = max(
        float(np.max(np.abs(r[0] - params.r0))),
        float(np.max(np.abs(v[0] - params.v0))),
        abs(float(z[0]) - math.log(params.m_wet)),
        float(np.max(np.abs(r[-1]))),
        float(np.max(np.abs(v[-1]))),
    )
    return PDGSolution(
        params=params,
        tf=tf,
        t=t,
        r=r,
        v=v,
        z=z,
        u=u,
        xi=xi,
        mass=mass,
        thrust=thrust,
        sigma=sigma,
        cost=float(solution.objective_value) + b.objective_constant,
        gap=gap,
        gap_scaled=gap / (params.rho_max / params.m_wet),
        boundary_residual=residual,
        glideslope_active=int(np.sum(np.min(gs_rows, axis=1) <= 1e-3)),
        speed_active=int(np.sum(speed >= params.v_max - 1e-3 * params.v_max)),
        status=solution.status,
        feasible=True,
    )


def golden_search_tf(
    params: PDGParams, bracket: tuple[float, float] = (40.0, 120.0)
) -> tuple[float, PDGSolution]:
    """Minimum-fuel time of flight over the bracket, width resolved to dt.

    Infeasible flight times cost +inf; ties prefer the shorter flight.
    """
    lo, hi = bracket
    if not 0.0 < lo < hi:
        raise ValueError("need a bracket 0 < lo < hi")
    cache: dict[float, PDGSolution] = {}

    def cost_at(tf: float) -> float:
        sol = solve_pdg(params, tf)
        cache[tf] = sol
        return sol.cost

    tf_star, best = golden_section(cost_at, lo, hi, params.dt)
    if not math.isfinite(best):
        raise RuntimeError("every time of flight in the bracket is infeasible")
    return tf_star, cache[tf_star]


def propagate_pdg(params: PDGParams, sol: PDGSolution) -> dict:
    """Integrate the held control through the mass-depleting dynamics.

    Each interval applies the solved acceleration command u_k, so the
    thrust vector is m(t) u_k and the tanks deplete at alpha ||T||.  Node
    mismatches then measure exactly the discretization error of the conic
    program, which an exact hold-step construction keeps at integration
    tolerance.
    """
    if not sol.feasible:
        raise ValueError("cannot propagate an infeasible solution")
    A, B = pdg_state_space(params)
    N = sol.t.size
    y = np.concatenate([sol.r[0], sol.v[0], [sol.mass[0]]])
    nodes = [y.copy()]
    for k in range(N - 1):
        uk = sol.u[k]

        def rhs(t, y, uk=uk):
            x, m = y[:6], y[6]
            dx = A @ x + B @ uk
            dx[3:] += params.g
            return np.concatenate([dx, [-params.alpha * m * np.linalg.norm(uk)]])

        out = solve_ivp(
            rhs,
            (sol.t[k], sol.t[k + 1]),
            y,
            method="DOP853",
            rtol=1e-10,
            atol=1e-10,
        )
        y = out.y[:, -1]
        nodes.append(y.copy())
    prop = np.asarray(nodes)
    return {
        "r": prop[:, 0:3],
        "v": prop[:, 3:6],
        "mass": prop[:, 6],
        "r_err": float(np.max(np.abs(prop[:, 0:3] - sol.r))),
        "v_err": float(np.max(np.abs(prop[:, 3:6] - sol.v))),
        "mass_err": float(np.max(np.abs(prop[:, 6] - sol.mass))),
        "final_mass": float(prop[-1, 6]),
    }
