"""Penalized SCP loop tests.

Two linear fixtures carry most of the load.  A min-fuel double integrator
has an affine running cost, so the convexified subproblem is exact and the
loop must land on a directly assembled oracle within a couple of
iterations.  A min-energy variant with a soft velocity ceiling exercises
the penalty weight schedule against a hard-constrained oracle.  A scalar
problem with sinusoidal drift and a nonconvex path row checks the cost
evaluations and their expansion-point identity.
"""

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajopt import conic
from trajopt.conic import ProgramBuilder
from trajopt.discretize import FOH, TimeGrid, discretize
from trajopt.gusto import (
    RECTIFIER,
    SOFTPLUS,
    ConvexIndicator,
    GuSTOConfig,
    QuadraticRunningCost,
    accuracy_ratio,
    build_subproblem,
    h_penalty,
    linear_cost,
    nonlinear_cost,
    run,
    soft_state_penalty,
    state_violation,
    stopping,
    trust_region_penalty,
    update,
)
from trajopt.ocp import (
    ContinuousOCP,
    TrajectoryIterate,
    make_scaling,
    straight_line_guess,
)

U_MAX = 6.0


def _fuel_ocp():
    """min trapz(sigma) with |u| <= sigma <= U_MAX: affine running cost,
    so the subproblem linearization is exact."""

    def input_rows(b, k, u_idx, p_idx):
        u, s = int(u_idx[0]), int(u_idx[1])
        b.add_nonneg([(s, 1.0), (u, -1.0)])
        b.add_nonneg([(s, 1.0), (u, 1.0)])
        b.add_nonneg([(s, -1.0)], offset=U_MAX)

    ocp = ContinuousOCP(
        n=2,
        m=2,
        d=0,
        f=lambda t, x, u, p: np.array([x[1], u[0]]),
        A=lambda t, x, u, p: np.array([[0.0, 1.0], [0.0, 0.0]]),
        B=lambda t, x, u, p: np.array([[0.0, 0.0], [1.0, 0.0]]),
        F=lambda t, x, u, p: np.zeros((2, 0)),
        scaling=make_scaling(
            ((-0.5, 1.5), (-2.0, 2.0)), ((-U_MAX, U_MAX), (0.0, U_MAX))
        ),
        name="min-fuel",
        convex_input_rows=input_rows,
        n_ic=2,
        g_ic=lambda x, p: x.copy(),
        H0=lambda x, p: np.eye(2),
        K0=lambda x, p: np.zeros((2, 0)),
        n_tc=2,
        g_tc=lambda x, p: x - np.array([1.0, 0.0]),
        Hf=lambda x, p: np.eye(2),
        Kf=lambda x, p: np.zeros((2, 0)),
        gamma=lambda x, u, p: float(u[1]),
        gamma_x=lambda x, u, p: np.zeros(2),
        gamma_u=lambda x, u, p: np.array([0.0, 1.0]),
        gamma_p=lambda x, u, p: np.zeros(0),
        gamma_epigraph=lambda b, k, t_idx, x_idx, u_idx, p_idx: b.add_nonneg(
            [(t_idx, 1.0), (int(u_idx[1]), -1.0)]
        ),
    )
    cost = QuadraticRunningCost(
        S=lambda p: np.zeros((2, 2)),
        ell=lambda x, p: np.array([0.0, 1.0]),
        g=lambda x, p: 0.0,
        f0=lambda t, x, p: np.array([x[1], 0.0]),
        f_ctrl=(
            lambda t, x, p: np.array([0.0, 1.0]),
            lambda t, x, p: np.zeros(2),
        ),
    )
    return ocp, cost


# running-cost curvature kept small against the dynamics norm so the
# accuracy ratio accepts cold starts
ENERGY_W = 0.01
VMAX = 1.2


def _energy_ocp(vmax=VMAX):
    """min ENERGY_W * trapz(u^2) with a soft velocity ceiling x2 <= vmax."""

    def input_rows(b, k, u_idx, p_idx):
        b.add_nonneg([(int(u_idx[0]), -1.0)], offset=20.0)
        b.add_nonneg([(int(u_idx[0]), 1.0)], offset=20.0)

    indicators = ()
    if vmax is not None:
        indicators = (
            ConvexIndicator(
                value=lambda t, x, p: float(x[1] - vmax),
                epigraph=lambda b, z, k, x_idx, p_idx: b.add_nonneg(
                    [(z, 1.0), (int(x_idx[1]), -1.0)], offset=vmax
                ),
            ),
        )
    ocp = ContinuousOCP(
        n=2,
        m=1,
        d=0,
        f=lambda t, x, u, p: np.array([x[1], u[0]]),
        A=lambda t, x, u, p: np.array([[0.0, 1.0], [0.0, 0.0]]),
        B=lambda t, x, u, p: np.array([[0.0], [1.0]]),
        F=lambda t, x, u, p: np.zeros((2, 0)),
        scaling=make_scaling(((-0.5, 1.5), (-3.0, 3.0)), ((-20.0, 20.0),)),
        name="min-energy",
        convex_input_rows=input_rows,
        n_ic=2,
        g_ic=lambda x, p: x.copy(),
        H0=lambda x, p: np.eye(2),
        K0=lambda x, p: np.zeros((2, 0)),
        n_tc=2,
        g_tc=lambda x, p: x - np.array([1.0, 0.0]),
        Hf=lambda x, p: np.eye(2),
        Kf=lambda x, p: np.zeros((2, 0)),
        gamma=lambda x, u, p: ENERGY_W * float(u[0] ** 2),
        gamma_x=lambda x, u, p: np.zeros(2),
        gamma_u=lambda x, u, p: np.array([2.0 * ENERGY_W * u[0]]),
        gamma_p=lambda x, u, p: np.zeros(0),
        gamma_epigraph=lambda b, k, t_idx, x_idx, u_idx, p_idx: b.add_square_epigraph(
            t_idx, [([(int(u_idx[0]), np.sqrt(ENERGY_W))], 0.0)]
        ),
    )
    cost = QuadraticRunningCost(
        S=lambda p: np.array([[ENERGY_W]]),
        ell=lambda x, p: np.zeros(1),
        g=lambda x, p: 0.0,
        f0=lambda t, x, p: np.array([x[1], 0.0]),
        f_ctrl=(lambda t, x, p: np.array([0.0, 1.0]),),
        indicators=indicators,
    )
    return ocp, cost


def _drift_ocp():
    """Scalar sinusoidal drift with a nonconvex path row and one indicator."""
    ocp = ContinuousOCP(
        n=1,
        m=1,
        d=0,
        f=lambda t, x, u, p: np.array([u[0] + 0.8 * np.sin(3.0 * x[0])]),
        A=lambda t, x, u, p: np.array([[2.4 * np.cos(3.0 * x[0])]]),
        B=lambda t, x, u, p: np.array([[1.0]]),
        F=lambda t, x, u, p: np.zeros((1, 0)),
        scaling=make_scaling(((-1.0, 1.0),), ((-5.0, 5.0),)),
        name="sin-drift",
        n_s=1,
        s=lambda t, x, u, p: np.array([x[0] ** 2 - 0.25]),
        C=lambda t, x, u, p: np.array([[2.0 * x[0]]]),
        D=lambda t, x, u, p: np.zeros((1, 1)),
        G=lambda t, x, u, p: np.zeros((1, 0)),
        n_ic=1,
        g_ic=lambda x, p: x.copy(),
        H0=lambda x, p: np.eye(1),
        K0=lambda x, p: np.zeros((1, 0)),
        n_tc=1,
        g_tc=lambda x, p: x - np.array([0.4]),
        Hf=lambda x, p: np.eye(1),
        Kf=lambda x, p: np.zeros((1, 0)),
        gamma=lambda x, u, p: float(u[0] ** 2 + 0.2 * x[0] ** 2),
        gamma_x=lambda x, u, p: np.array([0.4 * x[0]]),
        gamma_u=lambda x, u, p: np.array([2.0 * u[0]]),
        gamma_p=lambda x, u, p: np.zeros(0),
        gamma_epigraph=lambda b, k, t_idx, x_idx, u_idx, p_idx: b.add_square_epigraph(
            t_idx,
            [
                ([(int(u_idx[0]), 1.0)], 0.0),
                ([(int(x_idx[0]), math.sqrt(0.2))], 0.0),
            ],
        ),
    )
    cost = QuadraticRunningCost(
        S=lambda p: np.array([[1.0]]),
        ell=lambda x, p: np.zeros(1),
        g=lambda x, p: 0.2 * x[0] ** 2,
        f0=lambda t, x, p: np.array([0.8 * np.sin(3.0 * x[0])]),
        f_ctrl=(lambda t, x, p: np.array([1.0]),),
        indicators=(
            ConvexIndicator(
                value=lambda t, x, p: float(-x[0] - 0.6),
                epigraph=lambda b, z, k, x_idx, p_idx: b.add_nonneg(
                    [(z, 1.0), (int(x_idx[0]), 1.0)], offset=0.6
                ),
            ),
        ),
    )
    return ocp, cost


def _line_guess(ocp, grid, target):
    return straight_line_guess(
        np.zeros(ocp.n),
        np.asarray(target, dtype=float),
        np.zeros(ocp.m),
        np.zeros(ocp.m),
        grid,
    )


def _hard_oracle(ocp, grid, objective, extra_rows=None):
    """Directly assembled conic solve of the convex problem, no SCP loop."""
    reference = _line_guess(ocp, grid, (1.0, 0.0))
    seg = discretize(ocp, reference, grid, FOH)
    b = ProgramBuilder()
    smap = ocp.scaling
    x_idx = np.array(
        [
            b.new_vars(f"x{k}", ocp.n, scale=smap.s_x, shift=smap.c_x)
            for k in range(grid.N)
        ]
    )
    u_idx = np.array(
        [
            b.new_vars(f"u{k}", ocp.m, scale=smap.s_u, shift=smap.c_u)
            for k in range(grid.N)
        ]
    )
    for k in range(grid.N - 1):
        for i in range(ocp.n):
            entries = [
                (int(x_idx[k, j]), float(seg.A[k][i, j])) for j in range(ocp.n)
            ]
            entries.extend(
                (int(u_idx[k, j]), float(seg.Bm[k][i, j])) for j in range(ocp.m)
            )
            entries.extend(
                (int(u_idx[k + 1, j]), float(seg.Bp[k][i, j])) for j in range(ocp.m)
            )
            entries.append((int(x_idx[k + 1, i]), -1.0))
            b.add_zero(
                [(i_, a) for i_, a in entries if a != 0.0],
                offset=float(seg.r[k][i]),
            )
    for i in range(ocp.n):
        b.add_zero([(int(x_idx[0, i]), 1.0)])
        b.add_zero([(int(x_idx[-1, i]), 1.0)], offset=-float((1.0, 0.0)[i]))
    w = np.full(grid.N, grid.dt)
    w[0] = w[-1] = 0.5 * grid.dt
    for k in range(grid.N):
        ocp.convex_input_rows(b, k, u_idx[k], np.zeros(0, dtype=int))
        objective(b, k, float(w[k]), x_idx[k], u_idx[k])
        if extra_rows is not None:
            extra_rows(b, k, x_idx[k])
    sol = conic.solve(b.build())
    assert sol.status == "optimal"
    return (
        sol.objective_value + b.objective_constant,
        np.asarray(b.value(sol, u_idx), dtype=float),
    )


def _fuel_oracle(ocp, grid):
    def objective(b, k, wk, xk, uk):
        b.add_objective([(int(uk[1]), wk)])

    return _hard_oracle(ocp, grid, objective)


def _energy_oracle(ocp, grid, vmax):
    def objective(b, k, wk, xk, uk):
        t = b.new_var(f"epi{k}")
        b.add_square_epigraph(t, [([(int(uk[0]), np.sqrt(ENERGY_W))], 0.0)])
        b.add_objective([(t, wk)])

    def cap(b, k, xk):
        b.add_nonneg([(int(xk[1]), -1.0)], offset=vmax)

    return _hard_oracle(ocp, grid, objective, extra_rows=cap)


# ----------------------------------------------------------------- penalty


def test_rectifier_inactive_region():
    value, slope = h_penalty(-1.0, 5.0)
    assert value == 0.0 and slope == 0.0


def test_rectifier_value_and_slope():
    value, slope = h_penalty(2.0, 3.0)
    assert value == pytest.approx(12.0)
    assert slope == pytest.approx(12.0)


def test_softplus_at_zero():
    value, slope = h_penalty(0.0, 1.0, kind=SOFTPLUS, sharpness=10.0)
    assert value == pytest.approx(np.log(2.0) / 10.0)
    assert slope == pytest.approx(0.5)


def test_softplus_stable_far_from_kink():
    value, slope = h_penalty(500.0, 2.0, kind=SOFTPLUS, sharpness=10.0)
    assert np.isfinite(value) and value == pytest.approx(1000.0, abs=1e-9)
    assert slope == pytest.approx(2.0)
    value, slope = h_penalty(-500.0, 2.0, kind=SOFTPLUS, sharpness=10.0)
    assert value == 0.0 and slope == 0.0


def test_penalty_scales_linearly_with_weight():
    for kind in (RECTIFIER, SOFTPLUS):
        base = h_penalty(0.7, 2.0, kind=kind)[0]
        assert h_penalty(0.7, 14.0, kind=kind)[0] == pytest.approx(7.0 * base)


def test_penalty_unknown_kind():
    with pytest.raises(ValueError, match="penalty kind"):
        h_penalty(1.0, 1.0, kind="cubic")


@settings(max_examples=80, deadline=None)
@given(
    st.floats(-30.0, 30.0),
    st.floats(-30.0, 30.0),
    st.sampled_from([RECTIFIER, SOFTPLUS]),
)
def test_penalty_convex_nondecreasing(a, b, kind):
    lo, hi = sorted((a, b))
    h_lo, g_lo = h_penalty(lo, 3.0, kind=kind)
    h_hi, g_hi = h_penalty(hi, 3.0, kind=kind)
    h_mid = h_penalty(0.5 * (lo + hi), 3.0, kind=kind)[0]
    assert 0.0 <= h_lo <= h_hi + 1e-12
    assert 0.0 <= g_lo <= g_hi + 1e-12
    assert h_mid <= 0.5 * (h_lo + h_hi) + 1e-9


def test_soft_state_penalty_feasible_point_is_free():
    ocp, cost = _drift_ocp()
    assert soft_state_penalty(0.0, np.zeros(1), np.zeros(0), ocp, cost, 10.0) == 0.0


def test_soft_state_penalty_single_violation():
    ocp, cost = _drift_ocp()
    x = np.array([np.sqrt(0.75)])  # s = x^2 - 0.25 = 0.5, indicator inactive
    total = soft_state_penalty(0.0, x, np.zeros(0), ocp, cost, 4.0)
    assert total == pytest.approx(1.0)


def test_soft_state_penalty_monotone_in_weight():
    ocp, cost = _drift_ocp()
    x = np.array([-0.9])  # both the path row and the indicator violated
    lo = soft_state_penalty(0.0, x, np.zeros(0), ocp, cost, 2.0)
    hi = soft_state_penalty(0.0, x, np.zeros(0), ocp, cost, 20.0)
    assert hi == pytest.approx(10.0 * lo) and lo > 0.0


def test_trust_penalty_zero_inside_radius():
    assert trust_region_penalty(np.zeros(3), np.zeros(0), 0.5, 100.0) == 0.0


def test_trust_penalty_overshoot_value():
    eta = 0.3
    value = trust_region_penalty(np.array([2.0 * eta]), np.zeros(0), eta, 7.0)
    assert value == pytest.approx(7.0 * eta**2)


def test_trust_penalty_weakly_decreasing_in_radius():
    dx = np.array([0.4, -0.2])
    wide = trust_region_penalty(dx, np.zeros(0), 1.0, 5.0)
    tight = trust_region_penalty(dx, np.zeros(0), 0.1, 5.0)
    assert wide <= tight and tight > 0.0


# ------------------------------------------------------------------ update


def test_update_trust_violation_raises_weight():
    accept, lam, eta = update(None, True, False, 10.0, 1.0, 1, GuSTOConfig())
    assert (accept, lam, eta) == (False, 50.0, 1.0)


def test_update_inaccurate_model_shrinks_radius():
    accept, lam, eta = update(0.9, False, False, 10.0, 1.0, 2, GuSTOConfig())
    assert (accept, lam, eta) == (False, 10.0, 0.5)
    _, _, eta = update(0.9, False, False, 10.0, 1.5e-3, 2, GuSTOConfig())
    assert eta == pytest.approx(1e-3)  # radius floor


def test_update_accurate_model_grows_radius_and_relaxes_weight():
    accept, lam, eta = update(0.05, False, False, 50.0, 1.0, 3, GuSTOConfig())
    assert (accept, lam, eta) == (True, 10.0, 2.0)
    _, lam, eta = update(0.05, False, False, 10.0, 8.0, 3, GuSTOConfig())
    assert lam == 10.0 and eta == 10.0  # weight floor, radius cap


def test_update_middling_model_holds_radius():
    accept, lam, eta = update(0.3, False, False, 10.0, 1.0, 4, GuSTOConfig())
    assert (accept, lam, eta) == (True, 10.0, 1.0)


def test_update_state_violation_raises_weight_on_accept():
    accept, lam, _ = update(0.3, False, True, 10.0, 1.0, 5, GuSTOConfig())
    assert accept and lam == 50.0


def test_update_exponential_shrink_past_k_star():
    # k_star = 8, iteration 10: factor mu^3
    _, _, eta = update(0.3, False, False, 10.0, 1.0, 10, GuSTOConfig())
    assert eta == pytest.approx(0.9**3)
    _, _, eta = update(0.3, False, False, 10.0, 1.0, 7, GuSTOConfig())
    assert eta == 1.0  # factor mu^0 before k_star


@settings(max_examples=100, deadline=None)
@given(
    st.floats(0.0, 0.99),
    st.booleans(),
    st.booleans(),
    st.floats(10.0, 1e6),
    st.floats(1e-3, 10.0),
    st.integers(1, 30),
)
def test_update_weight_invariants(rho, tviol, sviol, lam, eta, iteration):
    cfg = GuSTOConfig()
    accept, lam_next, eta_next = update(rho, tviol, sviol, lam, eta, iteration, cfg)
    assert lam_next >= cfg.lam0
    assert eta_next <= cfg.eta1
    if tviol:
        assert not accept and lam_next == cfg.gamma_fail * lam
    else:
        assert accept == (rho <= cfg.rho1)


# ---------------------------------------------------------------- stopping


def test_stopping_on_identical_iterate():
    ocp, _ = _fuel_ocp()
    grid = TimeGrid(8)
    ref = _line_guess(ocp, grid, (1.0, 0.0))
    assert stopping(ref, ref.copy(), (3.0, 3.0), 10.0, GuSTOConfig(), ocp.scaling)


def test_stopping_on_weight_overflow():
    ocp, _ = _fuel_ocp()
    grid = TimeGrid(8)
    ref = _line_guess(ocp, grid, (1.0, 0.0))
    moved = ref.copy()
    moved.u[:, 0] += 3.0
    cfg = GuSTOConfig()
    assert not stopping(ref, moved, (3.0, 2.0), 10.0, cfg, ocp.scaling)
    assert stopping(ref, moved, (3.0, 2.0), 5.0 * cfg.lam_max, cfg, ocp.scaling)


def test_stopping_disabled_thresholds():
    ocp, _ = _fuel_ocp()
    grid = TimeGrid(8)
    ref = _line_guess(ocp, grid, (1.0, 0.0))
    cfg = GuSTOConfig(eps=0.0, eps_rel=0.0)
    assert not stopping(ref, ref.copy(), (3.0, 3.0), 10.0, cfg, ocp.scaling)


def test_stopping_relative_cost_plateau():
    ocp, _ = _fuel_ocp()
    grid = TimeGrid(8)
    ref = _line_guess(ocp, grid, (1.0, 0.0))
    moved = ref.copy()
    moved.u[:, 0] += 3.0
    cfg = GuSTOConfig(eps=0.0, eps_rel=0.01)
    assert stopping(ref, moved, (100.0, 99.5), 10.0, cfg, ocp.scaling)
    tight = GuSTOConfig(eps=0.0, eps_rel=1e-4)
    assert not stopping(ref, moved, (100.0, 99.5), 10.0, tight, ocp.scaling)


# ------------------------------------------------------------------- costs


def test_costs_agree_at_expansion_point():
    ocp, cost = _drift_ocp()
    grid = TimeGrid(12)
    ref = _line_guess(ocp, grid, (0.4,))
    seg = discretize(ocp, ref, grid, FOH)
    cfg = GuSTOConfig()
    lam, eta = 7.0, 0.3
    J = nonlinear_cost(ref, ref, ocp, cost, grid, lam, eta, cfg)
    L = linear_cost(ref, ref, ocp, cost, seg, grid, lam, eta, cfg)
    assert abs(J - L) <= 1e-10 * max(1.0, abs(J))


def test_cost_gap_is_pure_linearization_error():
    # the trust and indicator terms are identical in J and L, so the gap
    # must equal the Gamma and path-row linearization errors exactly
    ocp, cost = _drift_ocp()
    grid = TimeGrid(12)
    ref = _line_guess(ocp, grid, (0.4,))
    seg = discretize(ocp, ref, grid, FOH)
    cand = TrajectoryIterate(
        grid,
        ref.x + 0.07 * np.sin(np.linspace(0.0, 3.0, grid.N))[:, None],
        ref.u + 0.25 * np.cos(np.linspace(0.0, 2.0, grid.N))[:, None],
        ref.p.copy(),
    )
    cfg = GuSTOConfig()
    lam, eta = 5.0, 0.2
    J = nonlinear_cost(cand, ref, ocp, cost, grid, lam, eta, cfg)
    L = linear_cost(cand, ref, ocp, cost, seg, grid, lam, eta, cfg)
    w = np.full(grid.N, grid.dt)
    w[0] = w[-1] = 0.5 * grid.dt
    S_bar = cost.S(ref.p)
    expected = 0.0
    for k in range(grid.N):
        xk, uk = cand.x[k], cand.u[k]
        model = float(
            uk @ S_bar @ uk
            + uk @ cost.ell(ref.x[k], ref.p)
            + cost.g(ref.x[k], ref.p)
            + ocp.gamma_x(ref.x[k], ref.u[k], ref.p) @ (xk - ref.x[k])
        )
        expected += w[k] * (float(ocp.gamma(xk, uk, cand.p)) - model)
        s_true = float(ocp.s(grid.t[k], xk, uk, cand.p)[0])
        s_lin = float(seg.C[k][0] @ xk + seg.rp[k][0])
        expected += w[k] * (
            h_penalty(s_true, lam)[0] - h_penalty(s_lin, lam)[0]
        )
    # the model keeps the control curvature, so only the state part of
    # Gamma contributes: 0.2 * (x - xbar)^2 at each node
    assert expected > 1e-4
    assert J - L == pytest.approx(expected, abs=1e-9)


def test_nonlinear_cost_softplus_dominates_rectifier():
    ocp, cost = _drift_ocp()
    grid = TimeGrid(10)
    ref = _line_guess(ocp, grid, (0.4,))
    sharp = GuSTOConfig(penalty_kind=SOFTPLUS)
    blunt = GuSTOConfig()
    J_soft = nonlinear_cost(ref, ref, ocp, cost, grid, 5.0, 0.5, sharp)
    J_rect = nonlinear_cost(ref, ref, ocp, cost, grid, 5.0, 0.5, blunt)
    assert np.isfinite(J_soft) and J_soft > J_rect


# ------------------------------------------------- validation and building


def test_validate_passes_for_consistent_decomposition():
    grid = TimeGrid(10)
    for factory, target in ((_fuel_ocp, (1.0, 0.0)), (_drift_ocp, (0.4,))):
        ocp, cost = factory()
        cost.validate(ocp, _line_guess(ocp, grid, target))


def test_validate_rejects_wrong_control_direction():
    ocp, cost = _fuel_ocp()
    broken = dataclasses.replace(
        cost,
        f_ctrl=(
            lambda t, x, p: np.zeros(2),
            lambda t, x, p: np.array([0.0, 1.0]),
        ),
    )
    with pytest.raises(ValueError, match="control-affine"):
        broken.validate(ocp, _line_guess(ocp, TimeGrid(8), (1.0, 0.0)))


def test_validate_rejects_wrong_quadratic_form():
    ocp, cost = _energy_ocp()
    broken = dataclasses.replace(cost, g=lambda x, p: 0.1)
    with pytest.raises(ValueError, match="misses Gamma"):
        broken.validate(ocp, _line_guess(ocp, TimeGrid(8), (1.0, 0.0)))


def test_validate_requires_gradients():
    ocp, cost = _energy_ocp()
    bare = dataclasses.replace(ocp, gamma_x=None)
    with pytest.raises(ValueError, match="gradients"):
        cost.validate(bare, _line_guess(ocp, TimeGrid(8), (1.0, 0.0)))


def test_validate_rejects_inconsistent_control_gradient():
    # the value decomposition is consistent but the declared control
    # slope does not match 2 S u + ell
    ocp, cost = _energy_ocp()
    skewed = dataclasses.replace(
        ocp,
        gamma_u=lambda x, u, p: np.array([2.0 * ENERGY_W * u[0] + 0.3]),
    )
    with pytest.raises(ValueError, match="control gradient disagrees"):
        cost.validate(skewed, _line_guess(ocp, TimeGrid(8), (1.0, 0.0)))


def test_indefinite_weight_matrix_rejected():
    ocp, cost = _energy_ocp()
    bad = dataclasses.replace(cost, S=lambda p: np.array([[-1.0]]))
    with pytest.raises(ValueError, match="indefinite"):
        bad.check_psd(np.zeros(0))
    grid = TimeGrid(8)
    ref = _line_guess(ocp, grid, (1.0, 0.0))
    seg = discretize(ocp, ref, grid, FOH)
    with pytest.raises(ValueError, match="indefinite"):
        build_subproblem(ocp, bad, ref, seg, 10.0, 1.0, GuSTOConfig())


def test_build_rejects_input_dependent_path_row():
    ocp, cost = _drift_ocp()
    bad = dataclasses.replace(
        ocp,
        s=lambda t, x, u, p: np.array([u[0] - 0.3]),
        C=lambda t, x, u, p: np.zeros((1, 1)),
        D=lambda t, x, u, p: np.array([[1.0]]),
    )
    grid = TimeGrid(8)
    ref = _line_guess(ocp, grid, (0.4,))
    seg = discretize(bad, ref, grid, FOH)
    with pytest.raises(ValueError, match="depend on the input"):
        build_subproblem(bad, cost, ref, seg, 10.0, 1.0, GuSTOConfig())


def test_build_rejects_softplus():
    ocp, cost = _fuel_ocp()
    grid = TimeGrid(8)
    ref = _line_guess(ocp, grid, (1.0, 0.0))
    seg = discretize(ocp, ref, grid, FOH)
    cfg = GuSTOConfig(penalty_kind=SOFTPLUS)
    with pytest.raises(ValueError, match="softplus"):
        build_subproblem(ocp, cost, ref, seg, 10.0, 1.0, cfg)


def test_run_rejects_hard_state_rows_without_indicators():
    ocp, cost = _fuel_ocp()
    hard = dataclasses.replace(
        ocp, convex_state_rows=lambda b, k, x_idx, p_idx: None
    )
    grid = TimeGrid(8)
    with pytest.raises(ValueError, match="soft indicators"):
        run(hard, cost, _line_guess(ocp, grid, (1.0, 0.0)), GuSTOConfig(), grid)


def test_infinite_radius_drops_trust_rows():
    ocp, cost = _fuel_ocp()
    grid = TimeGrid(20)
    ref = _line_guess(ocp, grid, (1.0, 0.0))
    seg = discretize(ocp, ref, grid, FOH)
    oracle_obj, _ = _fuel_oracle(ocp, grid)

    program, handles = build_subproblem(
        ocp, cost, ref, seg, 10.0, np.inf, GuSTOConfig()
    )
    sol = conic.solve(program)
    assert sol.status == "optimal"
    free_obj = sol.objective_value + handles.builder.objective_constant
    assert free_obj == pytest.approx(oracle_obj, abs=1e-6)

    program, handles = build_subproblem(ocp, cost, ref, seg, 10.0, 0.04, GuSTOConfig())
    sol = conic.solve(program)
    tight_obj = sol.objective_value + handles.builder.objective_constant
    assert tight_obj > free_obj + 0.03  # trust penalty now binds


def test_solver_objective_matches_linear_cost():
    ocp, cost = _energy_ocp(vmax=0.8)
    grid = TimeGrid(20)
    ref = _line_guess(ocp, grid, (1.0, 0.0))
    seg = discretize(ocp, ref, grid, FOH)
    cfg = GuSTOConfig()
    lam, eta = 50.0, 2.0
    program, handles = build_subproblem(ocp, cost, ref, seg, lam, eta, cfg)
    sol = conic.solve(program)
    assert sol.status == "optimal"
    cand = handles.extract(sol, grid)
    assert state_violation(ocp, cost, cand, grid) > 1e-5  # penalties engaged
    L_solver = sol.objective_value + handles.builder.objective_constant
    L_eval = linear_cost(cand, ref, ocp, cost, seg, grid, lam, eta, cfg)
    assert L_solver == pytest.approx(L_eval, abs=1e-6 * max(1.0, abs(L_eval)))


# ---------------------------------------------------------- accuracy ratio


def test_ratio_vanishes_for_exact_subproblem():
    ocp, cost = _fuel_ocp()
    grid = TimeGrid(20)
    ref = _line_guess(ocp, grid, (1.0, 0.0))
    seg = discretize(ocp, ref, grid, FOH)
    cfg = GuSTOConfig()
    program, handles = build_subproblem(ocp, cost, ref, seg, 10.0, 2.0, cfg)
    sol = conic.solve(program)
    cand = handles.extract(sol, grid)
    J = nonlinear_cost(cand, ref, ocp, cost, grid, 10.0, 2.0, cfg)
    L = linear_cost(cand, ref, ocp, cost, seg, grid, 10.0, 2.0, cfg)
    rho, theta, denom = accuracy_ratio(cand, ref, ocp, grid, (J, L))
    assert theta <= 1e-9
    assert rho <= 1e-8
    assert denom > 0.1


def test_ratio_rejects_trivial_solution():
    ocp = ContinuousOCP(
        n=1,
        m=1,
        d=0,
        f=lambda t, x, u, p: np.zeros(1),
        A=lambda t, x, u, p: np.zeros((1, 1)),
        B=lambda t, x, u, p: np.zeros((1, 1)),
        F=lambda t, x, u, p: np.zeros((1, 0)),
        scaling=make_scaling(((-1.0, 1.0),), ((-1.0, 1.0),)),
        name="inert",
    )
    grid = TimeGrid(5)
    still = TrajectoryIterate(grid, np.zeros((5, 1)), np.zeros((5, 1)), np.zeros(0))
    with pytest.raises(RuntimeError, match="trivial"):
        accuracy_ratio(still, still, ocp, grid, (0.0, 0.0))


def test_state_violation_reports_worst_row():
    ocp, cost = _drift_ocp()
    grid = TimeGrid(2)
    probe = TrajectoryIterate(
        grid, np.array([[0.7], [-0.8]]), np.zeros((2, 1)), np.zeros(0)
    )
    # node 0: s = 0.24, w < 0; node 1: s = 0.39, w = 0.2
    assert state_violation(ocp, cost, probe, grid) == pytest.approx(0.39)


# -------------------------------------------------------------------- runs


def test_affine_cost_problem_converges_in_two_iterations():
    ocp, cost = _fuel_ocp()
    grid = TimeGrid(20)
    guess = _line_guess(ocp, grid, (1.0, 0.0))
    report = run(ocp, cost, guess, GuSTOConfig(), grid)
    oracle_obj, _ = _fuel_oracle(ocp, grid)

    assert report.converged and report.stop_reason == "tolerance"
    assert len(report.iterations) <= 3
    fuel = np.asarray(report.trajectory.u[:, 1])
    w = np.full(grid.N, grid.dt)
    w[0] = w[-1] = 0.5 * grid.dt
    assert float(w @ fuel) == pytest.approx(oracle_obj, rel=3e-4)
    assert report.checks["max_defect"] <= 1e-8
    assert report.checks["state_violation"] == 0.0
    assert all(r.vc_dyn == r.vc_path == r.vc_bc == 0.0 for r in report.iterations)
    assert report.algorithm == "gusto"


def test_soft_velocity_cap_matches_hard_oracle():
    ocp, cost = _energy_ocp(vmax=VMAX)
    grid = TimeGrid(25)
    guess = _line_guess(ocp, grid, (1.0, 0.0))
    report = run(ocp, cost, guess, GuSTOConfig(lam0=100.0), grid)
    oracle_obj, _ = _energy_oracle(ocp, grid, VMAX)

    assert report.converged and report.stop_reason == "tolerance"
    assert report.checks["state_violation"] <= 5e-4
    assert report.checks["lambda_final"] <= GuSTOConfig().lam_max
    w = np.full(grid.N, grid.dt)
    w[0] = w[-1] = 0.5 * grid.dt
    energy = ENERGY_W * float(w @ report.trajectory.u[:, 0] ** 2)
    assert energy == pytest.approx(oracle_obj, rel=0.02)
    # the ceiling must actually bind: the uncapped optimum peaks at 1.5
    assert float(np.max(report.trajectory.x[:, 1])) > VMAX - 1e-3


def test_trust_violation_ratchets_weight_and_keeps_reference():
    ocp, cost = _fuel_ocp()
    grid = TimeGrid(15)
    guess = _line_guess(ocp, grid, (1.0, 0.0))
    cfg = GuSTOConfig(
        lam0=1.0, eta0=1e-4, eta_init=1e-3, eps=0.0, eps_rel=0.0, max_iters=2
    )
    report = run(ocp, cost, guess, cfg, grid)
    assert not report.converged and report.stop_reason == "max_iters"
    first, second = report.iterations
    assert not first.accepted and first.rho is None
    assert first.lam == 1.0 and second.lam == 5.0
    assert not second.accepted
    assert report.trajectory is guess  # nothing was ever accepted


def test_weight_overflow_is_the_failure_exit():
    ocp, cost = _fuel_ocp()
    grid = TimeGrid(15)
    guess = _line_guess(ocp, grid, (1.0, 0.0))
    cfg = GuSTOConfig(
        lam0=1e6, gamma_fail=100.0, eta0=1e-4, eta_init=1e-3,
        eps=0.0, eps_rel=0.0, max_iters=5,
    )
    report = run(ocp, cost, guess, cfg, grid)
    assert not report.converged and report.stop_reason == "penalty_overflow"
    assert len(report.iterations) == 1
    assert report.checks["lambda_final"] == pytest.approx(1e8)


# ------------------------------------------------------------------ config


@pytest.mark.parametrize(
    "kwargs, match",
    [
        (dict(lam0=0.5), "lam0"),
        (dict(gamma_fail=1.0), "gamma_fail"),
        (dict(rho0=0.6), "rho0"),
        (dict(mu=1.5), "mu"),
        (dict(k_star=0), "k_star"),
        (dict(penalty_kind="cubic"), "penalty kind"),
        (dict(q="3"), "norm"),
        (dict(alpha_x=0.0), "alpha"),
        (dict(eta_init=20.0), "eta"),
        (dict(sharpness=0.0), "sharpness"),
        (dict(beta_sh=1.0), "shrink"),
    ],
)
def test_config_validation(kwargs, match):
    with pytest.raises(ValueError, match=match):
        GuSTOConfig(**kwargs)
