"""SCvx: successive convexification with virtual controls and a hard trust region.

Each iteration linearizes the dynamics and nonconvex constraints about the
reference, solves a convex subproblem whose dynamics are relaxed by
penalized virtual controls, and measures how well the linear model
predicted the nonlinear cost change through the ratio

    rho = (J_ref - J_new) / (J_ref - L_new)

where J is the exact-penalty nonlinear cost and L its convex counterpart.
The denominator is nonnegative by construction (the reference itself, with
virtual controls matching its own defects, is subproblem-feasible with
cost J_ref).  The trust region is a hard constraint

    alpha_x ||dx_k||_q + alpha_u ||du_k||_q + alpha_p ||dp||_q <= eta

at every node, measured on scaled variables; eta shrinks on rejection and
poor model agreement and grows when the model looks trustworthy.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import conic
from .conic import ProgramBuilder
from .discretize import FOH, defects, discretize
from .ocp import TrajectoryIterate
from .report import SCPReport

__all__ = [
    "IterationRecord",
    "SCvxConfig",
    "accuracy_ratio",
    "build_subproblem",
    "linear_cost",
    "node_deviation",
    "nonlinear_cost",
    "penalty",
    "project_guess",
    "run",
    "stopping",
    "trapz",
    "update_trust_region",
]

_NORMS = (1, 2, "2+", np.inf)


@dataclass
class SCvxConfig:
    """Weights, trust-region geometry, and stopping thresholds.

    q is the trust-region norm: 1, 2, inf, or "2+" for the squared
    two-norm (one second-order cone of radius sqrt(eta) per node).  q_hat
    is the plain norm used by the stopping test.  The alpha flags pick
    which variable blocks the trust region sees.
    """

    lam: float = 1e3
    rho0: float = 0.01
    rho1: float = 0.1
    rho2: float = 0.7
    beta_sh: float = 2.0
    beta_gr: float = 2.0
    eta_init: float = 1.0
    eta0: float = 1e-3
    eta1: float = 10.0
    q: object = 2
    q_hat: object = np.inf
    alpha_x: int = 1
    alpha_u: int = 1
    alpha_p: int = 1
    eps: float = 1e-4
    eps_rel: float = 0.0
    max_iters: int = 30

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("penalty weight must be positive")
        if not 0 < self.rho0 < self.rho1 < self.rho2 < 1:
            raise ValueError("need 0 < rho0 < rho1 < rho2 < 1")
        if self.beta_sh <= 1 or self.beta_gr <= 1:
            raise ValueError("shrink/growth factors must exceed 1")
        if not 0 < self.eta0 <= self.eta_init <= self.eta1:
            raise ValueError("need 0 < eta0 <= eta_init <= eta1")
        if self.q not in _NORMS or self.q_hat not in (1, 2, np.inf):
            raise ValueError("unsupported trust-region or stopping norm")
        for a in (self.alpha_x, self.alpha_u, self.alpha_p):
            if a not in (0, 1):
                raise ValueError("alpha flags must be 0 or 1")


@dataclass
class IterationRecord:
    """One SCP iteration: costs, ratio, trust radius, and solve stats."""

    iteration: int
    cost_linear: float
    cost_reference: float
    cost_nonlinear: float
    rho: Optional[float]
    eta: float
    eta_next: float
    lam: float
    accepted: bool
    vc_dyn: float
    vc_path: float
    vc_bc: float
    denominator: float
    solve_status: str
    solve_iterations: int
    solve_ms: float
    discretize_ms: float
    formulate_ms: float


def penalty(y, z):
    """Exact-penalty kernel P(y, z) = ||y||_1 + ||z||_1; None means absent."""
    total = 0.0
    for block in (y, z):
        if block is not None:
            total += float(np.sum(np.abs(block)))
    return total


def trapz(values, dt):
    """Trapezoid rule (dt/2) * sum(z_k + z_{k+1}) over a uniform grid."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise ValueError("trapezoid rule needs at least two samples")
    return float(dt * (np.sum(v) - 0.5 * v[0] - 0.5 * v[-1]))


def _trapz_weights(N, dt):
    w = np.full(N, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def linear_cost(iterate, ocp, grid, lam, segments):
    """Convex augmented cost L of a subproblem solution (virtuals included)."""
    N = grid.N
    phi = float(ocp.phi(iterate.x[-1], iterate.p)) if ocp.phi else 0.0
    integrand = np.zeros(N)
    for k in range(N):
        if ocp.gamma:
            integrand[k] = float(ocp.gamma(iterate.x[k], iterate.u[k], iterate.p))
        vc = None
        if iterate.nu is not None and k < N - 1:
            vc = segments.E[k] @ iterate.nu[k]
        nus = iterate.nu_s[k] if iterate.nu_s is not None else None
        integrand[k] += lam * penalty(vc, nus)
    return (
        phi
        + lam * penalty(iterate.nu_ic, iterate.nu_tc)
        + trapz(integrand, grid.dt)
    )


def nonlinear_cost(iterate, ocp, grid, lam, scheme=FOH):
    """Exact-penalty cost J: defects and constraint violations replace virtuals."""
    N = grid.N
    prop = defects(ocp, iterate, grid, scheme)
    phi = float(ocp.phi(iterate.x[-1], iterate.p)) if ocp.phi else 0.0
    integrand = np.zeros(N)
    for k in range(N):
        if ocp.gamma:
            integrand[k] = float(ocp.gamma(iterate.x[k], iterate.u[k], iterate.p))
        dyn = prop.defects[k] if k < N - 1 else None
        sviol = None
        if ocp.s is not None:
            sval = np.asarray(
                ocp.s(grid.t[k], iterate.x[k], iterate.u[k], iterate.p), dtype=float
            )
            sviol = np.maximum(sval, 0.0)
        integrand[k] += lam * penalty(dyn, sviol)
    bc = 0.0
    if ocp.g_ic is not None:
        bc += lam * penalty(np.asarray(ocp.g_ic(iterate.x[0], iterate.p)), None)
    if ocp.g_tc is not None:
        bc += lam * penalty(np.asarray(ocp.g_tc(iterate.x[-1], iterate.p)), None)
    return phi + bc + trapz(integrand, grid.dt)


def _norm(vec, q):
    if q == "2+":
        return float(np.dot(vec, vec))
    return float(np.linalg.norm(vec, q)) if vec.size else 0.0


def node_deviation(reference, candidate, scaling, q, alpha_x=1, alpha_u=1, alpha_p=1):
    """Per-node trust-region measure between two iterates, scaled variables.

    For q = "2+" the blocks contribute squared two-norms (the constraint
    compares the sum against eta directly); other norms add up linearly.
    """
    dx = scaling.scale_x(candidate.x) - scaling.scale_x(reference.x)
    du = scaling.scale_u(candidate.u) - scaling.scale_u(reference.u)
    dp = scaling.scale_p(candidate.p) - scaling.scale_p(reference.p)
    p_term = alpha_p * _norm(dp, q)
    out = np.empty(reference.grid.N)
    for k in range(reference.grid.N):
        out[k] = alpha_x * _norm(dx[k], q) + alpha_u * _norm(du[k], q) + p_term
    return out


@dataclass
class SubproblemHandles:
    """Variable indices into a built subproblem, for value extraction."""

    builder: ProgramBuilder
    x: np.ndarray
    u: np.ndarray
    p: np.ndarray
    nu: Optional[np.ndarray]
    nu_s: Optional[np.ndarray]
    nu_ic: Optional[np.ndarray]
    nu_tc: Optional[np.ndarray]

    def extract(self, solution, grid):
        b = self.builder
        pick = lambda idx: None if idx is None else np.asarray(  # noqa: E731
            b.value(solution, idx), dtype=float
        )
        x = b.value(solution, self.x)
        u = (
            b.value(solution, self.u)
            if self.u.size
            else np.zeros((grid.N, 0))
        )
        p = b.value(solution, self.p) if self.p.size else np.zeros(0)
        return TrajectoryIterate(
            grid,
            np.asarray(x, dtype=float),
            np.asarray(u, dtype=float),
            np.asarray(p, dtype=float),
            nu=pick(self.nu),
            nu_s=pick(self.nu_s),
            nu_ic=pick(self.nu_ic),
            nu_tc=pick(self.nu_tc),
        )


def _entries(idx_row, coeff_row, *more):
    """Sparse (index, coefficient) pairs, zeros dropped."""
    out = [
        (int(i), float(a))
        for i, a in zip(idx_row, coeff_row)
        if a != 0.0
    ]
    for idx, coeffs in zip(more[0::2], more[1::2]):
        out.extend(
            (int(i), float(a)) for i, a in zip(idx, coeffs) if a != 0.0
        )
    return out


def _register_base_vars(b, ocp, grid):
    smap = ocp.scaling
    N = grid.N
    x_idx = np.array(
        [b.new_vars(f"x{k}", ocp.n, scale=smap.s_x, shift=smap.c_x) for k in range(N)]
    )
    u_idx = np.array(
        [b.new_vars(f"u{k}", ocp.m, scale=smap.s_u, shift=smap.c_u) for k in range(N)]
    ).reshape(N, ocp.m)
    p_idx = b.new_vars("p", ocp.d, scale=smap.s_p, shift=smap.c_p)
    return x_idx, u_idx, p_idx


def _convex_set_rows(b, ocp, grid, x_idx, u_idx, p_idx):
    for k in range(grid.N):
        if ocp.convex_state_rows is not None:
            ocp.convex_state_rows(b, k, x_idx[k], p_idx)
        if ocp.convex_input_rows is not None:
            ocp.convex_input_rows(b, k, u_idx[k], p_idx)


def _trust_region_rows(b, cfg, eta, x_idx, u_idx, p_idx, ref, scaling):
    """Hard trust region on scaled deviations, one constraint per node."""
    N = x_idx.shape[0]
    xh = scaling.scale_x(ref.x)
    uh = scaling.scale_u(ref.u)
    ph = scaling.scale_p(ref.p)
    blocks = []
    if cfg.alpha_x:
        blocks.append(("x", x_idx, xh, True))
    if cfg.alpha_u and u_idx.shape[1]:
        blocks.append(("u", u_idx, uh, True))
    if cfg.alpha_p and p_idx.size:
        blocks.append(("p", p_idx, ph, False))

    if cfg.q == "2+":
        head = np.sqrt(eta)
        for k in range(N):
            rows = [([], head)]
            for _, idx, refh, per_node in blocks:
                vec_idx = idx[k] if per_node else idx
                vec_ref = refh[k] if per_node else refh
                rows.extend(
                    ([(int(i), 1.0)], -float(r)) for i, r in zip(vec_idx, vec_ref)
                )
            if len(rows) > 1:
                b.add_soc(rows, hat=True)
        return

    def norm_terms(tag, vec_idx, vec_ref):
        # returns objective-free entries whose sum equals ||delta||_q
        if cfg.q == 1:
            w = b.new_vars(f"tr_{tag}_abs", vec_idx.size)
            for j, (i, r) in enumerate(zip(vec_idx, vec_ref)):
                b.add_abs_epigraph(w[j], [(int(i), 1.0)], offset=-float(r), hat=True)
            return [(int(wj), 1.0) for wj in w]
        t = b.new_var(f"tr_{tag}")
        if cfg.q == 2:
            rows = [([(t, 1.0)], 0.0)]
            rows.extend(
                ([(int(i), 1.0)], -float(r)) for i, r in zip(vec_idx, vec_ref)
            )
            b.add_soc(rows, hat=True)
        else:  # infinity norm: t bounds every |component|
            for i, r in zip(vec_idx, vec_ref):
                b.add_abs_epigraph(t, [(int(i), 1.0)], offset=-float(r), hat=True)
        return [(t, 1.0)]

    p_terms = None
    for k in range(N):
        terms = []
        for tag, idx, refh, per_node in blocks:
            if per_node:
                terms.extend(norm_terms(f"{tag}{k}", idx[k], refh[k]))
            else:
                if p_terms is None:
                    p_terms = norm_terms("p", idx, refh)
                terms.extend(p_terms)
        if terms:
            b.add_nonneg([(i, -a) for i, a in terms], offset=eta, hat=True)


def build_subproblem(ocp, reference, segments, eta, config):
    """Assemble the convex subproblem about one reference.

    Returns (program, handles).  The objective models the convex augmented
    cost L; recover its value as solution.objective_value plus
    handles.builder.objective_constant.
    """
    grid = segments.grid
    N, n, m, d = grid.N, ocp.n, ocp.m, ocp.d
    lam = config.lam
    w = _trapz_weights(N, grid.dt)
    b = ProgramBuilder()
    x_idx, u_idx, p_idx = _register_base_vars(b, ocp, grid)

    n_nu = ocp.n_nu
    nu_idx = np.array([b.new_vars(f"nu{k}", n_nu) for k in range(N - 1)])
    nu_s_idx = (
        np.array([b.new_vars(f"nus{k}", ocp.n_s) for k in range(N)])
        if ocp.n_s
        else None
    )
    nu_ic_idx = b.new_vars("nu_ic", ocp.n_ic) if ocp.n_ic else None
    nu_tc_idx = b.new_vars("nu_tc", ocp.n_tc) if ocp.n_tc else None

    # dynamics rows: x_{k+1} = A x_k + Bm u_k + Bp u_{k+1} + F p + r + E nu
    for k in range(N - 1):
        for i in range(n):
            entries = _entries(
                x_idx[k], segments.A[k][i],
                u_idx[k], segments.Bm[k][i],
                u_idx[k + 1], segments.Bp[k][i],
                p_idx, segments.F[k][i],
                nu_idx[k], segments.E[k][i],
            )
            entries.append((int(x_idx[k + 1, i]), -1.0))
            b.add_zero(entries, offset=float(segments.r[k][i]))

    # linearized nonconvex path: s_lin <= nu_s, nu_s >= 0
    if ocp.n_s:
        for k in range(N):
            for i in range(ocp.n_s):
                entries = _entries(
                    x_idx[k], segments.C[k][i],
                    u_idx[k], segments.D[k][i],
                    p_idx, segments.G[k][i],
                )
                neg = [(j, -a) for j, a in entries]
                neg.append((int(nu_s_idx[k, i]), 1.0))
                b.add_nonneg(neg, offset=-float(segments.rp[k][i]))
                b.add_nonneg([(int(nu_s_idx[k, i]), 1.0)])

    # linearized boundary conditions, relaxed by nu_ic / nu_tc
    if ocp.n_ic:
        for i in range(ocp.n_ic):
            entries = _entries(x_idx[0], segments.H0[i], p_idx, segments.K0[i])
            entries.append((int(nu_ic_idx[i]), 1.0))
            b.add_zero(entries, offset=float(segments.l0[i]))
    if ocp.n_tc:
        for i in range(ocp.n_tc):
            entries = _entries(x_idx[-1], segments.Hf[i], p_idx, segments.Kf[i])
            entries.append((int(nu_tc_idx[i]), 1.0))
            b.add_zero(entries, offset=float(segments.lf[i]))

    _convex_set_rows(b, ocp, grid, x_idx, u_idx, p_idx)

    # objective: epigraphs of the convex cost pieces, then penalties
    if ocp.phi is not None:
        t_phi = b.new_var("phi_epi")
        ocp.phi_epigraph(b, t_phi, x_idx[-1], p_idx)
        b.add_objective([(t_phi, 1.0)])
    if ocp.gamma is not None:
        t_gam = b.new_vars("gamma_epi", N)
        for k in range(N):
            ocp.gamma_epigraph(b, k, int(t_gam[k]), x_idx[k], u_idx[k], p_idx)
            b.add_objective([(int(t_gam[k]), float(w[k]))])

    for k in range(N - 1):
        vc_abs = b.new_vars(f"vcabs{k}", n)
        for i in range(n):
            b.add_abs_epigraph(
                int(vc_abs[i]), _entries(nu_idx[k], segments.E[k][i])
            )
            b.add_objective([(int(vc_abs[i]), lam * float(w[k]))])
    if ocp.n_s:
        for k in range(N):
            for i in range(ocp.n_s):
                b.add_objective([(int(nu_s_idx[k, i]), lam * float(w[k]))])
    for idx in (nu_ic_idx, nu_tc_idx):
        if idx is not None and idx.size:
            aux = b.new_vars("bcabs", idx.size)
            for i in range(idx.size):
                b.add_abs_epigraph(int(aux[i]), [(int(idx[i]), 1.0)])
                b.add_objective([(int(aux[i]), lam)])

    _trust_region_rows(b, config, eta, x_idx, u_idx, p_idx, reference, ocp.scaling)

    handles = SubproblemHandles(
        builder=b,
        x=x_idx,
        u=u_idx,
        p=p_idx,
        nu=nu_idx if nu_idx.size else None,
        nu_s=nu_s_idx,
        nu_ic=nu_ic_idx,
        nu_tc=nu_tc_idx,
    )
    return b.build(), handles


def accuracy_ratio(J_ref, J_new, L_new, guard=1e-12):
    """Convexification accuracy rho; None when the denominator vanishes.

    A vanishing denominator means the subproblem cannot improve on the
    reference, which is the natural convergence signal.  A denominator
    below -1e-9 indicates an assembly bug and raises.
    """
    denom = J_ref - L_new
    if denom < -1e-9:
        raise RuntimeError(
            f"nonlinear cost {J_ref} fell below the convex lower model {L_new}; "
            "subproblem assembly is inconsistent"
        )
    if denom <= guard:
        return None
    return (J_ref - J_new) / denom


def update_trust_region(rho, eta, config):
    """Four-band accept/reject rule; returns (accept, next_eta)."""
    shrunk = max(eta / config.beta_sh, config.eta0)
    if rho < config.rho0:
        return False, shrunk
    if rho < config.rho1:
        return True, shrunk
    if rho < config.rho2:
        return True, eta
    return True, min(eta * config.beta_gr, config.eta1)


def stopping(reference, solution, J_ref, L_new, config, scaling):
    """Deviation-based or relative-cost-progress termination test.

    With both thresholds at zero this never fires (fixed-iteration mode).
    """
    if config.eps > 0:
        dp = scaling.scale_p(solution.p) - scaling.scale_p(reference.p)
        dx = scaling.scale_x(solution.x) - scaling.scale_x(reference.x)
        dev = _norm(dp, config.q_hat) + max(
            _norm(dx[k], config.q_hat) for k in range(reference.grid.N)
        )
        if dev <= config.eps:
            return True
    if config.eps_rel > 0 and J_ref - L_new <= config.eps_rel * abs(J_ref):
        return True
    return False


def project_guess(ocp, guess):
    """Project a guess onto the convex sets X and U (node by node).

    Skipped when every convex row already holds to 1e-9 at the guess.
    Builders that allocate auxiliary variables force the solve path, since
    the membership residual cannot be evaluated directly then.
    """
    if ocp.convex_state_rows is None and ocp.convex_input_rows is None:
        return guess
    grid = guess.grid
    b = ProgramBuilder()
    x_idx, u_idx, p_idx = _register_base_vars(b, ocp, grid)
    base_vars = b.num_vars
    _convex_set_rows(b, ocp, grid, x_idx, u_idx, p_idx)

    if b.num_vars == base_vars:
        program = b.build()
        y = np.concatenate(
            [
                b.hat_reference(x_idx.ravel(), guess.x.ravel()),
                b.hat_reference(u_idx.ravel(), guess.u.ravel())
                if u_idx.size
                else np.zeros(0),
                b.hat_reference(p_idx, guess.p) if p_idx.size else np.zeros(0),
            ]
        )
        full = np.zeros(program.num_vars)
        full[: y.size] = y
        residual = conic.cone_residual(
            program.matrix @ full + program.offset, program.cones
        )
        if residual <= 1e-9:
            return guess

    # minimize the total squared scaled deviation from the guess
    t = b.new_var("proj_dist")
    rows = []
    for idx, phys in (
        (x_idx.ravel(), guess.x.ravel()),
        (u_idx.ravel(), guess.u.ravel()),
        (p_idx, guess.p),
    ):
        if np.asarray(idx).size:
            ref = b.hat_reference(idx, phys)
            rows.extend(
                ([(int(i), 1.0)], -float(r)) for i, r in zip(np.ravel(idx), ref)
            )
    b.add_square_epigraph(t, rows, hat=True)
    b.add_objective([(t, 1.0)])
    solution = conic.solve(b.build())
    if solution.status != "optimal":
        raise RuntimeError(f"guess projection failed: {solution.status}")
    return TrajectoryIterate(
        grid,
        np.asarray(b.value(solution, x_idx), dtype=float),
        np.asarray(b.value(solution, u_idx), dtype=float)
        if u_idx.size
        else np.zeros((grid.N, ocp.m)),
        np.asarray(b.value(solution, p_idx), dtype=float)
        if p_idx.size
        else np.zeros(0),
    )


def virtual_norms(ocp, iterate, segments, scaling):
    """Scaled dynamics virtual-control norm plus raw path/boundary slacks."""
    vc_dyn = 0.0
    if iterate.nu is not None:
        for k in range(iterate.grid.N - 1):
            vc_dyn = max(
                vc_dyn,
                float(np.max(np.abs((segments.E[k] @ iterate.nu[k]) / scaling.s_x))),
            )
    vc_path = (
        float(np.max(iterate.nu_s)) if iterate.nu_s is not None and iterate.nu_s.size else 0.0
    )
    vc_bc = 0.0
    for block in (iterate.nu_ic, iterate.nu_tc):
        if block is not None and block.size:
            vc_bc = max(vc_bc, float(np.max(np.abs(block))))
    return vc_dyn, vc_path, vc_bc


def run(ocp, guess, config, grid, scheme=FOH, callback=None):
    """Full SCvx loop from a guess; returns an SCPReport.

    The subproblem is infeasible only if assembly is broken (virtual
    controls relax every linearized equality), so that status raises.
    ``callback(reference, candidate, record)`` is invoked after each
    iteration when given.
    """
    scaling = ocp.scaling
    reference = project_guess(ocp, guess)
    J_ref = None
    eta = config.eta_init
    records = []
    timings = {"formulate": 0.0, "discretize": 0.0, "solve": 0.0}
    converged = False
    stop_reason = "max_iters"
    final = reference

    for iteration in range(1, config.max_iters + 1):
        tic = time.perf_counter()
        segments = discretize(ocp, reference, grid, scheme)
        t_disc = time.perf_counter() - tic
        if J_ref is None:
            J_ref = nonlinear_cost(reference, ocp, grid, config.lam, scheme)

        tic = time.perf_counter()
        program, handles = build_subproblem(ocp, reference, segments, eta, config)
        t_form = time.perf_counter() - tic

        tic = time.perf_counter()
        solution = conic.solve(program)
        t_solve = time.perf_counter() - tic
        if solution.status == "infeasible":
            raise RuntimeError(
                f"iteration {iteration}: subproblem infeasible despite virtual "
                "controls; assembly is inconsistent"
            )
        if solution.status != "optimal":
            raise RuntimeError(
                f"iteration {iteration}: subproblem solve failed with status "
                f"{solution.status}"
            )

        candidate = handles.extract(solution, grid)
        L_new = solution.objective_value + handles.builder.objective_constant
        J_new = nonlinear_cost(candidate, ocp, grid, config.lam, scheme)
        vc_dyn, vc_path, vc_bc = virtual_norms(ocp, candidate, segments, scaling)
        denom = J_ref - L_new

        timings["discretize"] += t_disc
        timings["formulate"] += t_form
        timings["solve"] += t_solve

        stop_now = stopping(reference, candidate, J_ref, L_new, config, scaling)
        rho = accuracy_ratio(J_ref, J_new, L_new)
        if rho is None or stop_now:
            record = IterationRecord(
                iteration, L_new, J_ref, J_new, rho, eta, eta,
                config.lam, True, vc_dyn, vc_path, vc_bc, denom,
                solution.status, solution.iterations,
                1e3 * t_solve, 1e3 * t_disc, 1e3 * t_form,
            )
            records.append(record)
            if callback:
                callback(reference, candidate, record)
            final = candidate
            converged = True
            stop_reason = "cost_plateau" if rho is None else "tolerance"
            break

        accept, eta_next = update_trust_region(rho, eta, config)
        record = IterationRecord(
            iteration, L_new, J_ref, J_new, rho, eta, eta_next,
            config.lam, accept, vc_dyn, vc_path, vc_bc, denom,
            solution.status, solution.iterations,
            1e3 * t_solve, 1e3 * t_disc, 1e3 * t_form,
        )
        records.append(record)
        if callback:
            callback(reference, candidate, record)
        if accept:
            reference = candidate
            J_ref = J_new
            final = candidate
        eta = eta_next

    prop = defects(ocp, final, grid, scheme)
    segments = discretize(ocp, final, grid, scheme)
    vc_dyn, vc_path, vc_bc = virtual_norms(ocp, final, segments, scaling)
    checks = {
        "max_defect": prop.max_defect,
        "max_defect_scaled": float(
            np.max(np.abs(prop.defects / scaling.s_x), initial=0.0)
        ),
        "vc_dyn": vc_dyn,
        "vc_path": vc_path,
        "vc_bc": vc_bc,
        "vc_max": max(vc_dyn, vc_path, vc_bc),
    }
    return SCPReport(
        algorithm="scvx",
        config=asdict(config),
        iterations=records,
        trajectory=final,
        converged=converged,
        stop_reason=stop_reason,
        checks=checks,
        timings=timings,
    )
