"""GuSTO: penalized sequential convex programming for control-affine problems.

Where the SCvx loop keeps constraints hard and relaxes the dynamics with
virtual controls, this loop does the opposite: dynamics, input set, and
linearized boundary conditions are hard, while every constraint that
involves the state (convex indicators w and linearized nonconvex rows s)
plus the trust region itself enter the cost through a penalty

    h_lam(z) = lam * max(0, z)^2        (conic form, the default)
    h_lam(z) = lam/sigma * log(1+e^(sigma*z))   (softplus, evaluation only)

The running cost must be quadratic in the control and the dynamics affine
in the control.  The subproblem keeps that control curvature: Gamma is
modeled as u'S(p)u + u'ell(x,p) + g(x,p) with S and ell frozen at the
reference and the state/parameter dependence linearized, so a problem
whose cost depends on the state only through ell and g is solved exactly
in one pass.  (Linearizing in u as well would leave the subproblem with
no control curvature at all, since the trust region deliberately excludes
u, and the iterates then chatter between input-set vertices.)
Model accuracy is measured directly as normalized linearization error

    rho = (|J - L| + Theta) / (|L| + trapz ||xdot||)

with Theta the accumulated gap between the nonlinear and linearized state
derivatives along the subproblem solution.  Small rho grows the trust
region, and the penalty weight lam rises by gamma_fail whenever the
solution violates the trust region or the state constraints, relaxing
back toward lam0 on clean accepted steps.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from . import conic
from .discretize import FOH, defects, discretize
from .report import SCPReport
from .scvx import (
    IterationRecord,
    SubproblemHandles,
    _entries,
    _norm,
    _register_base_vars,
    _trapz_weights,
    node_deviation,
    trapz,
)

__all__ = [
    "RECTIFIER",
    "SOFTPLUS",
    "ConvexIndicator",
    "GuSTOConfig",
    "QuadraticRunningCost",
    "accuracy_ratio",
    "build_subproblem",
    "h_penalty",
    "linear_cost",
    "nonlinear_cost",
    "run",
    "soft_state_penalty",
    "state_violation",
    "stopping",
    "trust_region_penalty",
    "update",
]

RECTIFIER = "quadratic_rectifier"
SOFTPLUS = "softplus"

# Solver noise allowance when classifying a soft trust region as violated.
_TRUST_SLACK = 1e-6


@dataclass
class GuSTOConfig:
    """Penalty schedule, trust-region geometry, and stopping thresholds.

    lam0 is both the initial and the minimum penalty weight; gamma_fail
    multiplies lam on trust-region or state-constraint violations and
    divides it (floored at lam0) on clean accepted steps.  rho0/rho1 split
    the accuracy ratio into grow / hold / reject bands (note the reversed
    sense versus SCvx: here small rho is good).  After iteration k_star
    the radius is multiplied by mu^(1+iter-k_star) each update, forcing
    eventual contraction.  feas_tol decides when a state constraint counts
    as violated for the lam schedule.
    """

    lam0: float = 1e1
    lam_max: float = 1e7
    gamma_fail: float = 5.0
    rho0: float = 0.1
    rho1: float = 0.5
    beta_sh: float = 2.0
    beta_gr: float = 2.0
    eta_init: float = 1.0
    eta0: float = 1e-3
    eta1: float = 10.0
    mu: float = 0.9
    k_star: int = 8
    penalty_kind: str = RECTIFIER
    sharpness: float = 10.0
    q: object = 2
    q_hat: object = np.inf
    alpha_x: float = 1.0
    alpha_p: float = 1.0
    eps: float = 1e-4
    eps_rel: float = 0.0
    max_iters: int = 30
    feas_tol: float = 1e-7

    def __post_init__(self):
        if not 1 <= self.lam0 < self.lam_max:
            raise ValueError("need 1 <= lam0 < lam_max")
        if self.gamma_fail <= 1:
            raise ValueError("gamma_fail must exceed 1")
        if not 0 < self.rho0 < self.rho1 < 1:
            raise ValueError("need 0 < rho0 < rho1 < 1")
        if self.beta_sh <= 1 or self.beta_gr <= 1:
            raise ValueError("shrink/growth factors must exceed 1")
        if not 0 < self.eta0 <= self.eta_init <= self.eta1:
            raise ValueError("need 0 < eta0 <= eta_init <= eta1")
        if not 0 < self.mu < 1:
            raise ValueError("mu must lie in (0, 1)")
        if self.k_star < 1:
            raise ValueError("k_star must be at least 1")
        if self.penalty_kind not in (RECTIFIER, SOFTPLUS):
            raise ValueError(f"unknown penalty kind {self.penalty_kind!r}")
        if self.sharpness <= 0:
            raise ValueError("softplus sharpness must be positive")
        if self.q not in (1, 2, "2+", np.inf) or self.q_hat not in (1, 2, np.inf):
            raise ValueError("unsupported trust-region or stopping norm")
        if self.alpha_x <= 0 or self.alpha_p <= 0:
            raise ValueError("alpha_x and alpha_p must be positive")


@dataclass
class ConvexIndicator:
    """One convex state-involving constraint w(t, x, p) <= 0.

    ``value(t, x, p)`` evaluates w; ``epigraph(b, z_idx, k, x_idx, p_idx)``
    must add conic rows enforcing w(x_k, p) <= z at node k, written in
    physical coordinates on the given variable indices.
    """

    value: Callable
    epigraph: Callable


@dataclass
class QuadraticRunningCost:
    """Certificate that Gamma = u'S(p)u + u'ell(x,p) + g(x,p) and f is
    control-affine, plus the convex state indicators the penalty needs.

    ``f0(t, x, p)`` and ``f_ctrl[i](t, x, p)`` decompose the dynamics as
    f = f0 + sum_i u_i f_ctrl[i], which ``validate`` checks against the
    problem's own f at sampled points along a trajectory.
    """

    S: Callable
    ell: Callable
    g: Callable
    f0: Callable
    f_ctrl: Sequence[Callable] = ()
    indicators: Sequence[ConvexIndicator] = ()

    def check_psd(self, p):
        S = np.atleast_2d(np.asarray(self.S(p), dtype=float))
        if S.size and float(np.min(np.linalg.eigvalsh(0.5 * (S + S.T)))) < -1e-10:
            raise ValueError("running-cost matrix S(p) is indefinite")
        return S

    def reconstruct_f(self, t, x, u, p):
        out = np.asarray(self.f0(t, x, p), dtype=float).copy()
        for i, fi in enumerate(self.f_ctrl):
            out += u[i] * np.asarray(fi(t, x, p), dtype=float)
        return out

    def validate(self, ocp, reference, samples=20, tol=1e-10, seed=0):
        """Spot-check the decomposition near a trajectory; raises on mismatch."""
        if len(self.f_ctrl) != ocp.m:
            raise ValueError("need one control-direction field per input")
        if ocp.gamma is not None and (
            ocp.gamma_x is None or ocp.gamma_u is None or ocp.gamma_p is None
        ):
            raise ValueError("running-cost gradients are required")
        rng = np.random.default_rng(seed)
        smap = ocp.scaling
        xh = smap.scale_x(reference.x)
        uh = smap.scale_u(reference.u)
        ph = smap.scale_p(reference.p)
        for _ in range(samples):
            k = int(rng.integers(reference.grid.N))
            t = float(rng.uniform())
            x = smap.unscale_x(xh[k] + rng.uniform(-0.05, 0.05, ocp.n))
            u = smap.unscale_u(uh[k] + rng.uniform(-0.05, 0.05, ocp.m))
            p = (
                smap.unscale_p(ph + rng.uniform(-0.02, 0.02, ocp.d))
                if ocp.d
                else reference.p
            )
            f_ref = np.asarray(ocp.f(t, x, u, p), dtype=float)
            gap = np.max(np.abs(self.reconstruct_f(t, x, u, p) - f_ref), initial=0.0)
            if gap > tol * max(1.0, float(np.max(np.abs(f_ref), initial=0.0))):
                raise ValueError(
                    f"control-affine decomposition misses f by {gap:.3e}"
                )
            S = self.check_psd(p)
            if ocp.gamma is not None:
                ell = np.asarray(self.ell(x, p), dtype=float)
                rebuilt = float(u @ S @ u + u @ ell + float(self.g(x, p)))
                direct = float(ocp.gamma(x, u, p))
                if abs(rebuilt - direct) > tol * max(1.0, abs(direct)):
                    raise ValueError(
                        f"quadratic running cost misses Gamma by "
                        f"{abs(rebuilt - direct):.3e}"
                    )
                gu = np.asarray(ocp.gamma_u(x, u, p), dtype=float)
                slope_gap = np.max(
                    np.abs(gu - (2.0 * (S @ u) + ell)), initial=0.0
                )
                if slope_gap > 1e3 * tol * max(
                    1.0, float(np.max(np.abs(gu), initial=0.0))
                ):
                    raise ValueError(
                        "control gradient disagrees with the quadratic "
                        f"decomposition by {slope_gap:.3e}"
                    )


def h_penalty(z, lam, kind=RECTIFIER, sharpness=10.0):
    """Penalty value and slope at z; convex and nondecreasing in z."""
    z = float(z)
    if kind == RECTIFIER:
        zp = max(z, 0.0)
        return lam * zp * zp, 2.0 * lam * zp
    if kind == SOFTPLUS:
        # stable form: max(z,0) + log(1+exp(-sigma*|z|))/sigma
        s = float(sharpness)
        value = lam * (max(z, 0.0) + np.log1p(np.exp(-s * abs(z))) / s)
        slope = lam / (1.0 + np.exp(-s * z)) if z >= 0 else (
            lam * np.exp(s * z) / (1.0 + np.exp(s * z))
        )
        return float(value), float(slope)
    raise ValueError(f"unknown penalty kind {kind!r}")


def soft_state_penalty(t, x, p, ocp, cost, lam, kind=RECTIFIER, sharpness=10.0, u=None):
    """Sum of h_lam over convex indicators w_i and nonconvex rows s_i."""
    total = 0.0
    for ind in cost.indicators:
        total += h_penalty(ind.value(t, x, p), lam, kind, sharpness)[0]
    if ocp.s is not None:
        if u is None:
            u = np.zeros(ocp.m)
        for si in np.asarray(ocp.s(t, x, u, p), dtype=float):
            total += h_penalty(si, lam, kind, sharpness)[0]
    return total


def trust_region_penalty(dx, dp, eta, lam, kind=RECTIFIER, q=2,
                         sharpness=10.0, alpha_x=1.0, alpha_p=1.0):
    """h_lam of the trust-region overshoot for scaled deviations dx, dp."""
    arg = alpha_x * _norm(np.asarray(dx, float), q) + alpha_p * _norm(
        np.asarray(dp, float), q
    ) - eta
    return h_penalty(arg, lam, kind, sharpness)[0]


def _gamma_model(ocp, cost, reference):
    """Convex running-cost model about the reference: control curvature S
    and cross-term ell are frozen there, state/parameter dependence enters
    to first order.  Returns per-node (S_bar, ell, g, ax, fp) arrays."""
    N = reference.grid.N
    S_bar = cost.check_psd(reference.p).reshape(ocp.m, ocp.m)
    ell = np.array(
        [cost.ell(reference.x[k], reference.p) for k in range(N)], dtype=float
    ).reshape(N, ocp.m)
    g = np.array(
        [cost.g(reference.x[k], reference.p) for k in range(N)], dtype=float
    )
    ax = np.array(
        [
            ocp.gamma_x(reference.x[k], reference.u[k], reference.p)
            for k in range(N)
        ],
        dtype=float,
    ).reshape(N, ocp.n)
    fp = np.array(
        [
            ocp.gamma_p(reference.x[k], reference.u[k], reference.p)
            for k in range(N)
        ],
        dtype=float,
    ).reshape(N, ocp.d)
    return S_bar, ell, g, ax, fp


def state_violation(ocp, cost, iterate, grid):
    """Worst positive part of any penalized state constraint at the nodes."""
    worst = 0.0
    for k in range(grid.N):
        t = grid.t[k]
        for ind in cost.indicators:
            worst = max(worst, float(ind.value(t, iterate.x[k], iterate.p)))
        if ocp.s is not None:
            sval = np.asarray(
                ocp.s(t, iterate.x[k], iterate.u[k], iterate.p), dtype=float
            )
            worst = max(worst, float(np.max(sval, initial=0.0)))
    return max(worst, 0.0)


def nonlinear_cost(candidate, reference, ocp, cost, grid, lam, eta, config):
    """Penalized cost J_lam of an iterate, deviations measured from reference."""
    smap = ocp.scaling
    kind, sig = config.penalty_kind, config.sharpness
    dx = smap.scale_x(candidate.x) - smap.scale_x(reference.x)
    dp = smap.scale_p(candidate.p) - smap.scale_p(reference.p)
    integrand = np.zeros(grid.N)
    for k in range(grid.N):
        xk, uk = candidate.x[k], candidate.u[k]
        if ocp.gamma is not None:
            integrand[k] = float(ocp.gamma(xk, uk, candidate.p))
        integrand[k] += soft_state_penalty(
            grid.t[k], xk, candidate.p, ocp, cost, lam, kind, sig, u=uk
        )
        integrand[k] += trust_region_penalty(
            dx[k], dp, eta, lam, kind, config.q, sig,
            config.alpha_x, config.alpha_p,
        )
    phi = float(ocp.phi(candidate.x[-1], candidate.p)) if ocp.phi else 0.0
    return phi + trapz(integrand, grid.dt)


def linear_cost(candidate, reference, ocp, cost, segments, grid, lam, eta, config):
    """Convexified cost L_lam at an iterate: running cost per the frozen
    quadratic model, nonconvex rows linearized inside the penalty, convex
    terms kept.  Mirrors the subproblem objective exactly."""
    smap = ocp.scaling
    kind, sig = config.penalty_kind, config.sharpness
    dxs = smap.scale_x(candidate.x) - smap.scale_x(reference.x)
    dps = smap.scale_p(candidate.p) - smap.scale_p(reference.p)
    if ocp.gamma is not None:
        S_bar, ell, g, ax, fp = _gamma_model(ocp, cost, reference)
    integrand = np.zeros(grid.N)
    for k in range(grid.N):
        xk, uk = candidate.x[k], candidate.u[k]
        if ocp.gamma is not None:
            integrand[k] = (
                float(uk @ S_bar @ uk)
                + float(uk @ ell[k])
                + g[k]
                + float(ax[k] @ (xk - reference.x[k]))
                + float(fp[k] @ (candidate.p - reference.p))
            )
        for ind in cost.indicators:
            integrand[k] += h_penalty(
                ind.value(grid.t[k], xk, candidate.p), lam, kind, sig
            )[0]
        if ocp.n_s:
            s_lin = (
                segments.C[k] @ xk
                + segments.D[k] @ uk
                + segments.G[k] @ candidate.p
                + segments.rp[k]
            )
            for si in s_lin:
                integrand[k] += h_penalty(float(si), lam, kind, sig)[0]
        integrand[k] += trust_region_penalty(
            dxs[k], dps, eta, lam, kind, config.q, sig,
            config.alpha_x, config.alpha_p,
        )
    phi = float(ocp.phi(candidate.x[-1], candidate.p)) if ocp.phi else 0.0
    return phi + trapz(integrand, grid.dt)


def _norm_terms(b, q, vec_idx, vec_ref, tag):
    """Aux entries whose weighted sum bounds ||delta||_q in scaled space."""
    if q == 1:
        w = b.new_vars(f"tr_{tag}_abs", vec_idx.size)
        for j, (i, r) in enumerate(zip(np.ravel(vec_idx), vec_ref)):
            b.add_abs_epigraph(int(w[j]), [(int(i), 1.0)], offset=-float(r), hat=True)
        return [(int(wj), 1.0) for wj in w]
    t = b.new_var(f"tr_{tag}")
    if q == 2:
        rows = [([(t, 1.0)], 0.0)]
        rows.extend(
            ([(int(i), 1.0)], -float(r))
            for i, r in zip(np.ravel(vec_idx), vec_ref)
        )
        b.add_soc(rows, hat=True)
    elif q == "2+":
        rows = [
            ([(int(i), 1.0)], -float(r))
            for i, r in zip(np.ravel(vec_idx), vec_ref)
        ]
        b.add_square_epigraph(t, rows, hat=True)
    else:  # infinity norm
        for i, r in zip(np.ravel(vec_idx), vec_ref):
            b.add_abs_epigraph(t, [(int(i), 1.0)], offset=-float(r), hat=True)
    return [(t, 1.0)]


def build_subproblem(ocp, cost, reference, segments, lam, eta, config):
    """Assemble the penalized convex subproblem about one reference.

    Hard rows: discretized dynamics (no virtual control), the input set U,
    and the linearized boundary conditions.  Everything that involves the
    state goes into the objective through rectifier epigraphs.  Returns
    (program, handles); the convex cost value is solution.objective_value
    plus handles.builder.objective_constant.
    """
    if config.penalty_kind != RECTIFIER:
        raise ValueError(
            "only the quadratic rectifier penalty is cone-representable; "
            "softplus is for evaluation only"
        )
    cost.check_psd(reference.p)
    if ocp.n_s and segments.D is not None and float(np.max(np.abs(segments.D))) > 1e-9:
        raise ValueError(
            "nonconvex path constraints must not depend on the input here"
        )

    grid = segments.grid
    N, n, d = grid.N, ocp.n, ocp.d
    w = _trapz_weights(N, grid.dt)
    b = conic.ProgramBuilder()
    x_idx, u_idx, p_idx = _register_base_vars(b, ocp, grid)

    # hard dynamics x_{k+1} = A x_k + Bm u_k + Bp u_{k+1} + F p + r
    for k in range(N - 1):
        for i in range(n):
            entries = _entries(
                x_idx[k], segments.A[k][i],
                u_idx[k], segments.Bm[k][i],
                u_idx[k + 1], segments.Bp[k][i],
                p_idx, segments.F[k][i],
            )
            entries.append((int(x_idx[k + 1, i]), -1.0))
            b.add_zero(entries, offset=float(segments.r[k][i]))

    # hard input set and boundary conditions
    if ocp.convex_input_rows is not None:
        for k in range(N):
            ocp.convex_input_rows(b, k, u_idx[k], p_idx)
    if ocp.n_ic:
        for i in range(ocp.n_ic):
            entries = _entries(x_idx[0], segments.H0[i], p_idx, segments.K0[i])
            b.add_zero(entries, offset=float(segments.l0[i]))
    if ocp.n_tc:
        for i in range(ocp.n_tc):
            entries = _entries(x_idx[-1], segments.Hf[i], p_idx, segments.Kf[i])
            b.add_zero(entries, offset=float(segments.lf[i]))

    def rectifier(arg_entries, arg_offset, weight, tag, hat=False):
        # weight * lam * max(0, arg)^2 added to the objective
        zeta = b.new_var(f"{tag}_z")
        neg = [(i, -a) for i, a in arg_entries]
        neg.append((zeta, 1.0))
        b.add_nonneg(neg, offset=-float(arg_offset), hat=hat)
        b.add_nonneg([(zeta, 1.0)])
        tau = b.new_var(f"{tag}_q")
        b.add_square_epigraph(tau, [([(zeta, 1.0)], 0.0)])
        b.add_objective([(tau, lam * float(weight))])
        return zeta

    # objective: terminal cost, linearized running cost, penalties
    if ocp.phi is not None:
        t_phi = b.new_var("phi_epi")
        ocp.phi_epigraph(b, t_phi, x_idx[-1], p_idx)
        b.add_objective([(t_phi, 1.0)])
    if ocp.gamma is not None:
        S_bar, ell, g, ax, fp = _gamma_model(ocp, cost, reference)
        # conic rows for u'S(p_bar)u: factor the frozen curvature once
        quad_rows = []
        if S_bar.size:
            eigval, eigvec = np.linalg.eigh(0.5 * (S_bar + S_bar.T))
            keep = eigval > 1e-14 * max(1.0, float(eigval[-1]))
            quad_rows = (np.sqrt(eigval[keep])[:, None] * eigvec[:, keep].T)
        for k in range(N):
            entries = _entries(
                x_idx[k], w[k] * ax[k], u_idx[k], w[k] * ell[k],
                p_idx, w[k] * fp[k],
            )
            if entries:
                b.add_objective(entries)
            b.add_objective_constant(
                w[k] * (
                    g[k]
                    - float(ax[k] @ reference.x[k])
                    - float(fp[k] @ reference.p)
                )
            )
            if len(quad_rows):
                tau = b.new_var(f"run{k}_q")
                b.add_square_epigraph(
                    tau,
                    [
                        (_entries(u_idx[k], row), 0.0)
                        for row in quad_rows
                    ],
                )
                b.add_objective([(tau, float(w[k]))])

    for k in range(N):
        for j, ind in enumerate(cost.indicators):
            zeta = b.new_var(f"w{j}n{k}_z")
            ind.epigraph(b, zeta, k, x_idx[k], p_idx)
            b.add_nonneg([(zeta, 1.0)])
            tau = b.new_var(f"w{j}n{k}_q")
            b.add_square_epigraph(tau, [([(zeta, 1.0)], 0.0)])
            b.add_objective([(tau, lam * float(w[k]))])
        if ocp.n_s:
            for i in range(ocp.n_s):
                entries = _entries(
                    x_idx[k], segments.C[k][i], p_idx, segments.G[k][i]
                )
                rectifier(entries, segments.rp[k][i], w[k], f"s{i}n{k}")

    if np.isfinite(eta):
        smap = ocp.scaling
        xh = smap.scale_x(reference.x)
        ph = smap.scale_p(reference.p)
        p_terms = _norm_terms(b, config.q, p_idx, ph, "p") if p_idx.size else []
        for k in range(N):
            terms = [
                (i, config.alpha_x * a)
                for i, a in _norm_terms(b, config.q, x_idx[k], xh[k], f"x{k}")
            ]
            terms.extend((i, config.alpha_p * a) for i, a in p_terms)
            rectifier(terms, -eta, w[k], f"tr{k}", hat=True)

    handles = SubproblemHandles(
        builder=b, x=x_idx, u=u_idx, p=p_idx,
        nu=None, nu_s=None, nu_ic=None, nu_tc=None,
    )
    return b.build(), handles


def accuracy_ratio(candidate, reference, ocp, grid, costs):
    """Normalized linearization error (rho, Theta, denominator).

    xdot_k is the continuous-time linearized derivative at the candidate,
    expanded about the reference; Theta accumulates its gap to the true f.
    """
    J_cand, L_cand = costs
    N = grid.N
    xdot = np.empty((N, ocp.n))
    gap = np.empty(N)
    for k in range(N):
        t = grid.t[k]
        xb, ub = reference.x[k], reference.u[k]
        fbar = np.asarray(ocp.f(t, xb, ub, reference.p), dtype=float)
        A = np.asarray(ocp.A(t, xb, ub, reference.p), dtype=float)
        B = np.asarray(ocp.B(t, xb, ub, reference.p), dtype=float)
        xdot[k] = fbar + A @ (candidate.x[k] - xb) + B @ (candidate.u[k] - ub)
        if ocp.d:
            F = np.asarray(ocp.F(t, xb, ub, reference.p), dtype=float)
            xdot[k] += F @ (candidate.p - reference.p)
        f_new = np.asarray(
            ocp.f(t, candidate.x[k], candidate.u[k], candidate.p), dtype=float
        )
        gap[k] = float(np.linalg.norm(f_new - xdot[k]))
    theta = trapz(gap, grid.dt)
    denom = abs(L_cand) + trapz(np.linalg.norm(xdot, axis=1), grid.dt)
    if denom <= 1e-12:
        raise RuntimeError(
            "trivial subproblem solution (zero state derivative and cost); "
            "the accuracy ratio is undefined"
        )
    return (abs(J_cand - L_cand) + theta) / denom, theta, denom


def update(rho, trust_violated, state_violated, lam, eta, iteration, config):
    """Accept/reject plus the lam and eta schedules; returns (accept, lam', eta')."""
    if trust_violated:
        accept, lam_next, eta_next = False, config.gamma_fail * lam, eta
    elif rho > config.rho1:
        accept, lam_next = False, lam
        eta_next = max(eta / config.beta_sh, config.eta0)
    else:
        accept = True
        eta_next = min(eta * config.beta_gr, config.eta1) if rho < config.rho0 else eta
        lam_next = (
            config.gamma_fail * lam
            if state_violated
            else max(lam / config.gamma_fail, config.lam0)
        )
    eta_next *= config.mu ** max(0, 1 + iteration - config.k_star)
    return accept, lam_next, eta_next


def stopping(reference, candidate, costs, lam, config, scaling):
    """Control/parameter movement test, penalty overflow, or cost plateau."""
    if lam > config.lam_max:
        return True
    J_ref, J_cand = costs
    if config.eps > 0:
        dp = scaling.scale_p(candidate.p) - scaling.scale_p(reference.p)
        du = scaling.scale_u(candidate.u) - scaling.scale_u(reference.u)
        moved = np.array(
            [_norm(du[k], config.q_hat) for k in range(reference.grid.N)]
        )
        if _norm(dp, config.q_hat) + trapz(moved, reference.grid.dt) <= config.eps:
            return True
    if config.eps_rel > 0 and abs(J_ref - J_cand) <= config.eps_rel * abs(J_ref):
        return True
    return False


def run(ocp, cost, guess, config, grid, scheme=FOH, callback=None):
    """Full GuSTO loop from a guess; returns an SCPReport.

    Exits converged on the movement or cost-plateau test; lam exceeding
    lam_max is the failure exit (the analogue of SCvx finishing with
    nonzero virtual controls) and leaves converged=False with
    stop_reason "penalty_overflow".
    """
    cost.validate(ocp, guess)
    if ocp.convex_state_rows is not None and not cost.indicators:
        raise ValueError(
            "convex state constraints must be restated as soft indicators; "
            "this loop never enforces them as hard rows"
        )
    scaling = ocp.scaling
    reference = guess
    lam, eta = config.lam0, config.eta_init
    segments = None
    records = []
    timings = {"formulate": 0.0, "discretize": 0.0, "solve": 0.0}
    converged = False
    stop_reason = "max_iters"
    final = reference

    for iteration in range(1, config.max_iters + 1):
        if lam > config.lam_max:
            stop_reason = "penalty_overflow"
            final = reference
            break
        t_disc = 0.0
        if segments is None:
            tic = time.perf_counter()
            segments = discretize(ocp, reference, grid, scheme)
            t_disc = time.perf_counter() - tic

        tic = time.perf_counter()
        program, handles = build_subproblem(
            ocp, cost, reference, segments, lam, eta, config
        )
        t_form = time.perf_counter() - tic

        tic = time.perf_counter()
        solution = conic.solve(program)
        t_solve = time.perf_counter() - tic
        if solution.status == "infeasible":
            raise RuntimeError(
                f"iteration {iteration}: hard subproblem infeasible; the "
                "linearized dynamics cannot join the boundary conditions "
                "inside U"
            )
        if solution.status != "optimal":
            raise RuntimeError(
                f"iteration {iteration}: subproblem solve failed with status "
                f"{solution.status}"
            )

        candidate = handles.extract(solution, grid)
        L_cand = linear_cost(
            candidate, reference, ocp, cost, segments, grid, lam, eta, config
        )
        J_cand = nonlinear_cost(
            candidate, reference, ocp, cost, grid, lam, eta, config
        )
        J_ref = nonlinear_cost(
            reference, reference, ocp, cost, grid, lam, eta, config
        )

        deviation = node_deviation(
            reference, candidate, scaling, config.q,
            alpha_x=config.alpha_x, alpha_u=0, alpha_p=config.alpha_p,
        )
        trust_violated = float(np.max(deviation)) > eta + _TRUST_SLACK * max(1.0, eta)
        sviol = state_violation(ocp, cost, candidate, grid)
        state_violated = sviol > config.feas_tol

        rho = theta = None
        denom = float("nan")
        if not trust_violated:
            rho, theta, denom = accuracy_ratio(
                candidate, reference, ocp, grid, (J_cand, L_cand)
            )

        timings["discretize"] += t_disc
        timings["formulate"] += t_form
        timings["solve"] += t_solve

        stop_now = stopping(
            reference, candidate, (J_ref, J_cand), lam, config, scaling
        )
        if stop_now:
            record = IterationRecord(
                iteration, L_cand, J_ref, J_cand, rho, eta, eta, lam, True,
                0.0, 0.0, 0.0, denom, solution.status, solution.iterations,
                1e3 * t_solve, 1e3 * t_disc, 1e3 * t_form,
            )
            records.append(record)
            if callback:
                callback(reference, candidate, record)
            final = candidate
            converged = True
            stop_reason = "tolerance"
            break

        accept, lam_next, eta_next = update(
            rho, trust_violated, state_violated, lam, eta, iteration, config
        )
        record = IterationRecord(
            iteration, L_cand, J_ref, J_cand, rho, eta, eta_next, lam, accept,
            0.0, 0.0, 0.0, denom, solution.status, solution.iterations,
            1e3 * t_solve, 1e3 * t_disc, 1e3 * t_form,
        )
        records.append(record)
        if callback:
            callback(reference, candidate, record)
        if accept:
            reference = candidate
            final = candidate
            segments = None
        lam, eta = lam_next, eta_next

    prop = defects(ocp, final, grid, scheme)
    checks = {
        "max_defect": prop.max_defect,
        "max_defect_scaled": float(
            np.max(np.abs(prop.defects / scaling.s_x), initial=0.0)
        ),
        "state_violation": state_violation(ocp, cost, final, grid),
        "lambda_final": lam,
        "eta_final": eta,
    }
    return SCPReport(
        algorithm="gusto",
        config=asdict(config),
        iterations=records,
        trajectory=final,
        converged=converged,
        stop_reason=stop_reason,
        checks=checks,
        timings=timings,
    )
