"""Exact discretization of linearized dynamics under ZOH and FOH inputs.

Each interval [t_k, t_{k+1}] of the uniform grid yields an update

    x_{k+1} = A_k x_k + Bm_k u_k + Bp_k u_{k+1} + F_k p + r_k (+ E_k nu_k)

whose matrices are the state-transition matrix and input/parameter
convolution integrals of the dynamics linearized along the reference flow.
Everything for one interval is integrated jointly as one concatenated
derivative (state, STM, and the inverse-STM-weighted convolutions), reset
at every node.  The offset r_k absorbs the linearization residual, so the
update reproduces the nonlinear flow from the reference exactly, up to
integrator tolerance; ``check_consistency`` measures that residual.

Inputs are held zeroth-order (constant u_k) or first-order (linear from
u_k to u_{k+1}) across each interval.  Virtual controls are always held
zeroth-order; E_k is the convolution of the constant gain E.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .ocp import ContinuousOCP, TrajectoryIterate

__all__ = [
    "FOH",
    "ZOH",
    "FlowMapError",
    "LinearizedSegmentSet",
    "PropagationResult",
    "TimeGrid",
    "check_consistency",
    "defects",
    "discretize",
    "flow_map",
]

ZOH = "zoh"
FOH = "foh"

# rho ratios and defects compare quantities that agree to first order, so
# the integrator error must sit far below the SCP tolerances.
_RTOL = 1e-10
_ATOL = 1e-10


class FlowMapError(RuntimeError):
    """Numerical integration failure; carries the time where it occurred."""

    def __init__(self, message, t_fail):
        super().__init__(f"{message} (t = {t_fail})")
        self.t_fail = t_fail


@dataclass
class TimeGrid:
    """Uniform normalized-time grid on [0, 1] with N nodes."""

    N: int
    t: np.ndarray = field(init=False)
    dt: float = field(init=False)

    def __post_init__(self):
        self.N = int(self.N)
        if self.N < 2:
            raise ValueError("a time grid needs at least two nodes")
        self.t = np.linspace(0.0, 1.0, self.N)
        self.dt = 1.0 / (self.N - 1)


@dataclass
class LinearizedSegmentSet:
    """Discrete LTV data linearized about one reference trajectory.

    Interval blocks are stacked along the leading axis (N-1 entries); node
    blocks have N entries.  Offsets follow the absolute-variable
    convention: the linearized path constraint reads
    C_k x_k + D_k u_k + G_k p + rp_k <= 0, and the boundary maps read
    H0 x_1 + K0 p + l0 = 0 and Hf x_N + Kf p + lf = 0.
    """

    grid: TimeGrid
    scheme: str
    A: np.ndarray
    Bm: np.ndarray
    Bp: np.ndarray
    F: np.ndarray
    r: np.ndarray
    E: np.ndarray
    C: Optional[np.ndarray] = None
    D: Optional[np.ndarray] = None
    G: Optional[np.ndarray] = None
    rp: Optional[np.ndarray] = None
    H0: Optional[np.ndarray] = None
    K0: Optional[np.ndarray] = None
    l0: Optional[np.ndarray] = None
    Hf: Optional[np.ndarray] = None
    Kf: Optional[np.ndarray] = None
    lf: Optional[np.ndarray] = None

    def predict(self, k, x_k, u_k, u_kp1, p):
        """Discrete update for interval k at the given absolute variables."""
        return (
            self.A[k] @ x_k
            + self.Bm[k] @ u_k
            + self.Bp[k] @ u_kp1
            + self.F[k] @ p
            + self.r[k]
        )


@dataclass
class PropagationResult:
    """Nonlinear propagation restarted at each node, with interval defects."""

    t_dense: List[np.ndarray]
    x_dense: List[np.ndarray]
    defects: np.ndarray
    max_defect: float


def _check_scheme(scheme):
    if scheme not in (ZOH, FOH):
        raise ValueError(f"scheme must be '{ZOH}' or '{FOH}', got {scheme!r}")


def _input_weights(scheme, t0, t1):
    """Hold weights (lam_minus, lam_plus) such that u(t) = lm*u_k + lp*u_{k+1}."""
    if scheme == ZOH:
        return lambda t: (1.0, 0.0)
    h = t1 - t0
    return lambda t: ((t1 - t) / h, (t - t0) / h)


def _integrate(fun, t0, t1, y0, t_eval=None):
    sol = solve_ivp(
        fun,
        (t0, t1),
        y0,
        method="DOP853",
        rtol=_RTOL,
        atol=_ATOL,
        t_eval=t_eval,
        dense_output=False,
    )
    if not sol.success:
        raise FlowMapError(sol.message, sol.t[-1] if sol.t.size else t0)
    return sol


def flow_map(ocp, x_k, u_k, u_kp1, p, t0, t1, scheme=FOH):
    """Propagate the nonlinear dynamics across one interval.

    The input signal is reconstructed from the node inputs according to the
    hold scheme; under ZOH the closing input is ignored.
    """
    _check_scheme(scheme)
    lam = _input_weights(scheme, t0, t1)
    u_k = np.asarray(u_k, dtype=float)
    u_kp1 = np.asarray(u_kp1, dtype=float)
    p = np.asarray(p, dtype=float)

    def rhs(t, x):
        lm, lp = lam(t)
        return np.asarray(ocp.f(t, x, lm * u_k + lp * u_kp1, p), dtype=float)

    sol = _integrate(rhs, t0, t1, np.asarray(x_k, dtype=float))
    return sol.y[:, -1]


def _dynamic_indices(ocp):
    if ocp.dynamic_param_indices is None:
        return list(range(ocp.d))
    return list(ocp.dynamic_param_indices)


def _guard_static_columns(ocp, reference):
    """Declared-static parameter columns must be zero in the Jacobian."""
    idx = _dynamic_indices(ocp)
    if len(idx) == ocp.d:
        return
    x0, u0, p = reference.x[0], reference.u[0], reference.p
    F_full = np.asarray(ocp.F(0.0, x0, u0, p), dtype=float)
    static = np.delete(F_full, idx, axis=1)
    if static.size and np.any(static != 0.0):
        raise ValueError(
            "dynamic_param_indices excludes parameter columns with nonzero "
            "dynamics Jacobian"
        )


def discretize(ocp, reference, grid, scheme=FOH):
    """Build the discrete LTV update matrices along a reference trajectory.

    Per interval, one joint integration carries the reference flow, the
    state-transition matrix, and the inverse-STM-weighted convolution
    integrands for the input, parameter, residual, and virtual-control
    blocks; the final multiplication by A_k turns them into the update
    matrices.  Node and boundary linearizations are direct callback
    evaluations at the reference.
    """
    _check_scheme(scheme)
    if reference.grid.N != grid.N:
        raise ValueError("reference and grid node counts differ")
    _guard_static_columns(ocp, reference)

    n, m, d = ocp.n, ocp.m, ocp.d
    idx = _dynamic_indices(ocp)
    d_dyn = len(idx)
    E_gain = np.eye(n) if ocp.E is None else ocp.E
    n_nu = E_gain.shape[1]
    p = reference.p
    p_dyn = p[idx]
    N = grid.N

    nn = n * n
    sl_x = slice(0, n)
    sl_Phi = slice(n, n + nn)
    sl_Bm = slice(n + nn, n + nn + n * m)
    sl_Bp = slice(n + nn + n * m, n + nn + 2 * n * m)
    sl_F = slice(n + nn + 2 * n * m, n + nn + 2 * n * m + n * d_dyn)
    sl_r = slice(sl_F.stop, sl_F.stop + n)
    sl_E = slice(sl_r.stop, sl_r.stop + n * n_nu)
    y_dim = sl_E.stop

    A_k = np.empty((N - 1, n, n))
    Bm_k = np.zeros((N - 1, n, m))
    Bp_k = np.zeros((N - 1, n, m))
    F_k = np.zeros((N - 1, n, d))
    r_k = np.empty((N - 1, n))
    E_k = np.empty((N - 1, n, n_nu))

    for k in range(N - 1):
        t0, t1 = grid.t[k], grid.t[k + 1]
        u0, u1 = reference.u[k], reference.u[k + 1]
        lam = _input_weights(scheme, t0, t1)

        def rhs(t, y, k=k, u0=u0, u1=u1, lam=lam):
            x = y[sl_x]
            Phi = y[sl_Phi].reshape(n, n)
            lm, lp = lam(t)
            u = lm * u0 + lp * u1
            fval = np.asarray(ocp.f(t, x, u, p), dtype=float)
            Amat = np.asarray(ocp.A(t, x, u, p), dtype=float)
            Bmat = np.asarray(ocp.B(t, x, u, p), dtype=float)
            Fmat = np.asarray(ocp.F(t, x, u, p), dtype=float)[:, idx]
            for label, mat in (("f", fval), ("A", Amat), ("B", Bmat), ("F", Fmat)):
                if not np.all(np.isfinite(mat)):
                    raise FlowMapError(
                        f"non-finite {label} evaluation in interval {k}", t
                    )
            resid = fval - Amat @ x - Bmat @ u - Fmat @ p_dyn
            stacked = np.hstack(
                [lm * Bmat, lp * Bmat, Fmat, resid[:, None], E_gain]
            )
            conv = np.linalg.solve(Phi, stacked)
            dy = np.empty(y_dim)
            dy[sl_x] = fval
            dy[sl_Phi] = (Amat @ Phi).ravel()
            dy[sl_Bm] = conv[:, :m].ravel()
            dy[sl_Bp] = conv[:, m : 2 * m].ravel()
            dy[sl_F] = conv[:, 2 * m : 2 * m + d_dyn].ravel()
            dy[sl_r] = conv[:, 2 * m + d_dyn]
            dy[sl_E] = conv[:, 2 * m + d_dyn + 1 :].ravel()
            return dy

        y0 = np.zeros(y_dim)
        y0[sl_x] = reference.x[k]
        y0[sl_Phi] = np.eye(n).ravel()
        yT = _integrate(rhs, t0, t1, y0).y[:, -1]

        A_k[k] = yT[sl_Phi].reshape(n, n)
        Bm_k[k] = A_k[k] @ yT[sl_Bm].reshape(n, m)
        Bp_k[k] = A_k[k] @ yT[sl_Bp].reshape(n, m)
        F_k[k][:, idx] = A_k[k] @ yT[sl_F].reshape(n, d_dyn)
        r_k[k] = A_k[k] @ yT[sl_r]
        E_k[k] = A_k[k] @ yT[sl_E].reshape(n, n_nu)

    segments = LinearizedSegmentSet(
        grid=grid, scheme=scheme, A=A_k, Bm=Bm_k, Bp=Bp_k, F=F_k, r=r_k, E=E_k
    )

    if ocp.s is not None:
        n_s = ocp.n_s
        C = np.empty((N, n_s, n))
        D = np.empty((N, n_s, m))
        G = np.empty((N, n_s, d))
        rp = np.empty((N, n_s))
        for k in range(N):
            t, x, u = grid.t[k], reference.x[k], reference.u[k]
            sval = np.asarray(ocp.s(t, x, u, p), dtype=float)
            C[k] = np.asarray(ocp.C(t, x, u, p), dtype=float)
            D[k] = np.asarray(ocp.D(t, x, u, p), dtype=float)
            G[k] = np.asarray(ocp.G(t, x, u, p), dtype=float)
            for label, mat in (("s", sval), ("C", C[k]), ("D", D[k]), ("G", G[k])):
                if not np.all(np.isfinite(mat)):
                    raise ValueError(f"non-finite {label} evaluation at node {k}")
            rp[k] = sval - C[k] @ x - D[k] @ u - G[k] @ p
        segments.C, segments.D, segments.G, segments.rp = C, D, G, rp

    if ocp.g_ic is not None:
        x0 = reference.x[0]
        segments.H0 = np.asarray(ocp.H0(x0, p), dtype=float)
        segments.K0 = np.asarray(ocp.K0(x0, p), dtype=float)
        segments.l0 = (
            np.asarray(ocp.g_ic(x0, p), dtype=float)
            - segments.H0 @ x0
            - segments.K0 @ p
        )
    if ocp.g_tc is not None:
        xf = reference.x[-1]
        segments.Hf = np.asarray(ocp.Hf(xf, p), dtype=float)
        segments.Kf = np.asarray(ocp.Kf(xf, p), dtype=float)
        segments.lf = (
            np.asarray(ocp.g_tc(xf, p), dtype=float)
            - segments.Hf @ xf
            - segments.Kf @ p
        )
    return segments


def defects(ocp, iterate, grid, scheme=FOH, samples_per_interval=16):
    """Propagate each interval from its opening node and measure the gaps.

    Defect convention: Delta_k = x_{k+1} - flow(t_k -> t_{k+1}, x_k, u, p),
    so perturbing x_{k+1} shifts Delta_k by exactly that perturbation.
    """
    _check_scheme(scheme)
    if iterate.grid.N != grid.N:
        raise ValueError("iterate and grid node counts differ")
    N = grid.N
    deltas = np.empty((N - 1, ocp.n))
    t_dense: List[np.ndarray] = []
    x_dense: List[np.ndarray] = []
    p = iterate.p
    for k in range(N - 1):
        t0, t1 = grid.t[k], grid.t[k + 1]
        u0, u1 = iterate.u[k], iterate.u[k + 1]
        lam = _input_weights(scheme, t0, t1)

        def rhs(t, x, u0=u0, u1=u1, lam=lam):
            lm, lp = lam(t)
            return np.asarray(ocp.f(t, x, lm * u0 + lp * u1, p), dtype=float)

        t_eval = np.linspace(t0, t1, samples_per_interval)
        sol = _integrate(rhs, t0, t1, iterate.x[k], t_eval=t_eval)
        t_dense.append(sol.t)
        x_dense.append(sol.y.T)
        deltas[k] = iterate.x[k + 1] - sol.y[:, -1]
    max_defect = float(np.max(np.abs(deltas))) if deltas.size else 0.0
    return PropagationResult(t_dense, x_dense, deltas, max_defect)


def check_consistency(segments, ocp, reference):
    """Max infinity-norm gap between the flow map and the discrete update.

    Re-integrates the nonlinear flow from each reference node, so the
    result is an independent check rather than a restatement of the
    convolution integrals.
    """
    grid = segments.grid
    worst = 0.0
    for k in range(grid.N - 1):
        flowed = flow_map(
            ocp,
            reference.x[k],
            reference.u[k],
            reference.u[k + 1],
            reference.p,
            grid.t[k],
            grid.t[k + 1],
            segments.scheme,
        )
        predicted = segments.predict(
            k, reference.x[k], reference.u[k], reference.u[k + 1], reference.p
        )
        worst = max(worst, float(np.max(np.abs(flowed - predicted))))
    return worst
