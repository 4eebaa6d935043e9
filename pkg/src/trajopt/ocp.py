"""Continuous-time optimal control problem template shared by every solver.

All solvers in this package consume the same problem description: smooth
dynamics with analytic Jacobian callbacks, nonconvex path constraints that
the SCP algorithms linearize, convex state and input sets supplied as
conic-row builders (so subproblems impose them exactly rather than sample a
membership oracle), boundary conditions, and a Bolza cost whose convex
pieces come both as numeric callbacks and as epigraph-row builders.

Callbacks must be pure functions of their arguments.  Nothing in this
package differentiates anything numerically; ``central_difference`` exists
so tests can hold the analytic Jacobians to account.

Conventions:

* time is normalized, t in [0, 1]; a free final time enters through a
  time-dilation parameter (see ``dilate_dynamics``),
* trajectories store states as (N, n) and inputs as (N, m), one row per
  node,
* scaling maps each physical variable onto roughly [0, 1]
  (see ``make_scaling``); trust regions and stopping criteria are measured
  in scaled coordinates.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "ContinuousOCP",
    "ScalingMap",
    "TrajectoryIterate",
    "central_difference",
    "dilate_dynamics",
    "make_scaling",
    "scale",
    "straight_line_guess",
    "unscale",
]


def _as_float_array(value, name, ndim):
    arr = np.asarray(value, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


@dataclass
class ScalingMap:
    """Affine map between physical and scaled variables, z = s*zhat + c.

    Diagonals are stored as 1-D arrays; every entry must be strictly
    positive so the map is invertible.
    """

    s_x: np.ndarray
    c_x: np.ndarray
    s_u: np.ndarray
    c_u: np.ndarray
    s_p: np.ndarray
    c_p: np.ndarray

    def __post_init__(self):
        for name in ("s_x", "c_x", "s_u", "c_u", "s_p", "c_p"):
            setattr(self, name, _as_float_array(getattr(self, name), name, 1))
        for sname, cname in (("s_x", "c_x"), ("s_u", "c_u"), ("s_p", "c_p")):
            s, c = getattr(self, sname), getattr(self, cname)
            if s.shape != c.shape:
                raise ValueError(f"{sname} and {cname} must have matching shapes")
            if s.size and not np.all(s > 0):
                raise ValueError(f"{sname} entries must be strictly positive")

    # Row-wise on (N, dim) arrays as well as single vectors.
    def scale_x(self, x):
        return (np.asarray(x, dtype=float) - self.c_x) / self.s_x

    def unscale_x(self, xh):
        return np.asarray(xh, dtype=float) * self.s_x + self.c_x

    def scale_u(self, u):
        return (np.asarray(u, dtype=float) - self.c_u) / self.s_u

    def unscale_u(self, uh):
        return np.asarray(uh, dtype=float) * self.s_u + self.c_u

    def scale_p(self, p):
        return (np.asarray(p, dtype=float) - self.c_p) / self.s_p

    def unscale_p(self, ph):
        return np.asarray(ph, dtype=float) * self.s_p + self.c_p


def _scaling_pair(bounds, group):
    lo = np.asarray([b[0] for b in bounds], dtype=float)
    hi = np.asarray([b[1] for b in bounds], dtype=float)
    if lo.size and np.any(hi < lo):
        bad = int(np.argmax(hi < lo))
        raise ValueError(
            f"{group} bounds[{bad}]: upper bound {hi[bad]} below lower bound {lo[bad]}"
        )
    width = hi - lo
    degenerate = width == 0
    if np.any(degenerate):
        warnings.warn(
            f"{group} bounds {np.flatnonzero(degenerate).tolist()} have zero width; "
            "using unit scale for those entries",
            stacklevel=3,
        )
        width = np.where(degenerate, 1.0, width)
    return width, lo


def make_scaling(x_bounds, u_bounds=(), p_bounds=()):
    """Build the diagonal scaling that maps each (lo, hi) interval onto [0, 1].

    Zero-width intervals get unit scale with the fixed value as offset (a
    warning is emitted, since such a variable carries no range information).
    """
    s_x, c_x = _scaling_pair(x_bounds, "state")
    s_u, c_u = _scaling_pair(u_bounds, "input")
    s_p, c_p = _scaling_pair(p_bounds, "parameter")
    return ScalingMap(s_x, c_x, s_u, c_u, s_p, c_p)


@dataclass
class TrajectoryIterate:
    """States, inputs, and parameters on a time grid.

    Virtual-control fields are populated by the SCP solvers on subproblem
    solutions; plain trajectories leave them as None.  ``nu`` has one row
    per interval (the closing node carries no virtual control by
    convention), ``nu_s`` one row per node.
    """

    grid: "TimeGrid"  # noqa: F821 (lives in trajopt.discretize)
    x: np.ndarray
    u: np.ndarray
    p: np.ndarray
    nu: Optional[np.ndarray] = None
    nu_s: Optional[np.ndarray] = None
    nu_ic: Optional[np.ndarray] = None
    nu_tc: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x = _as_float_array(self.x, "x", 2)
        self.u = _as_float_array(self.u, "u", 2)
        self.p = _as_float_array(self.p, "p", 1)
        N = self.grid.N
        if self.x.shape[0] != N:
            raise ValueError(f"x has {self.x.shape[0]} rows for a {N}-node grid")
        if self.u.shape[0] != N:
            raise ValueError(f"u has {self.u.shape[0]} rows for a {N}-node grid")
        if self.nu is not None:
            self.nu = _as_float_array(self.nu, "nu", 2)
            if self.nu.shape[0] != N - 1:
                raise ValueError("nu must have one row per interval")
        if self.nu_s is not None:
            self.nu_s = _as_float_array(self.nu_s, "nu_s", 2)
            if self.nu_s.shape[0] != N:
                raise ValueError("nu_s must have one row per node")
        if self.nu_ic is not None:
            self.nu_ic = _as_float_array(self.nu_ic, "nu_ic", 1)
        if self.nu_tc is not None:
            self.nu_tc = _as_float_array(self.nu_tc, "nu_tc", 1)

    def copy(self):
        """Deep copy; used to keep rejected SCP iterations from aliasing."""
        dup = lambda a: None if a is None else a.copy()  # noqa: E731
        return TrajectoryIterate(
            self.grid,
            self.x.copy(),
            self.u.copy(),
            self.p.copy(),
            nu=dup(self.nu),
            nu_s=dup(self.nu_s),
            nu_ic=dup(self.nu_ic),
            nu_tc=dup(self.nu_tc),
        )

    def save(self, path):
        """Write the trajectory as JSON (fields t, x, u, p)."""
        payload = {
            "t": self.grid.t.tolist(),
            "x": self.x.tolist(),
            "u": self.u.tolist(),
            "p": self.p.tolist(),
        }
        with open(path, "w") as stream:
            json.dump(payload, stream, indent=2, sort_keys=True)
            stream.write("\n")

    @classmethod
    def load(cls, path):
        from .discretize import TimeGrid  # deferred; discretize imports this module

        with open(path) as stream:
            payload = json.load(stream)
        t = np.asarray(payload["t"], dtype=float)
        grid = TimeGrid(t.size)
        if not np.allclose(t, grid.t, rtol=0, atol=1e-12):
            raise ValueError("stored time grid is not uniform on [0, 1]")
        return cls(
            grid,
            np.asarray(payload["x"], dtype=float),
            np.asarray(payload["u"], dtype=float),
            np.asarray(payload["p"], dtype=float),
        )


def scale(iterate, smap):
    """Map a trajectory into scaled coordinates.  Virtual terms are dropped."""
    return TrajectoryIterate(
        iterate.grid,
        smap.scale_x(iterate.x),
        smap.scale_u(iterate.u),
        smap.scale_p(iterate.p),
    )


def unscale(scaled, smap):
    """Inverse of :func:`scale`."""
    return TrajectoryIterate(
        scaled.grid,
        smap.unscale_x(scaled.x),
        smap.unscale_u(scaled.u),
        smap.unscale_p(scaled.p),
    )


@dataclass
class ContinuousOCP:
    """Problem data consumed by the SCP solvers.

    Dynamics and Jacobians use the signature (t, x, u, p) with normalized
    time.  Path constraints s(t, x, u, p) <= 0 hold entrywise; C, D, G are
    the corresponding Jacobians.  Boundary maps g_ic(x0, p) = 0 and
    g_tc(xN, p) = 0 come with Jacobians H0, K0 and Hf, Kf.  The terminal
    cost phi(xN, p) and running cost gamma(x, u, p) must be convex; their
    ``*_epigraph`` builders emit conic rows t >= cost onto a
    ``ProgramBuilder`` so subproblems can minimize them exactly.

    ``convex_state_rows(b, k, x_idx, p_idx)`` and
    ``convex_input_rows(b, k, u_idx, p_idx)`` impose (x, p) in X and
    (u, p) in U at node k.  The node index lets sets vary along the grid;
    the shipped problems ignore it.

    ``dynamic_param_indices`` declares which parameter entries the dynamics
    actually read; Jacobian columns outside this set must be identically
    zero.  Discretization integrates convolution integrals only for the
    declared columns, which matters when the parameter vector is large.

    ``E`` is the virtual-control gain (defaults to the identity).
    """

    n: int
    m: int
    d: int
    f: Callable
    A: Callable
    B: Callable
    F: Callable
    scaling: ScalingMap
    name: str = ""
    n_s: int = 0
    s: Optional[Callable] = None
    C: Optional[Callable] = None
    D: Optional[Callable] = None
    G: Optional[Callable] = None
    convex_state_rows: Optional[Callable] = None
    convex_input_rows: Optional[Callable] = None
    n_ic: int = 0
    g_ic: Optional[Callable] = None
    H0: Optional[Callable] = None
    K0: Optional[Callable] = None
    n_tc: int = 0
    g_tc: Optional[Callable] = None
    Hf: Optional[Callable] = None
    Kf: Optional[Callable] = None
    phi: Optional[Callable] = None
    phi_epigraph: Optional[Callable] = None
    gamma: Optional[Callable] = None
    gamma_x: Optional[Callable] = None
    gamma_u: Optional[Callable] = None
    gamma_p: Optional[Callable] = None
    gamma_epigraph: Optional[Callable] = None
    dynamic_param_indices: Optional[Sequence[int]] = None
    E: Optional[np.ndarray] = None
    state_names: Optional[Sequence[str]] = None
    input_names: Optional[Sequence[str]] = None
    param_names: Optional[Sequence[str]] = None

    def __post_init__(self):
        if self.n < 1 or self.m < 0 or self.d < 0:
            raise ValueError("dimensions must satisfy n >= 1, m >= 0, d >= 0")
        if (self.s is None) != (self.n_s == 0):
            raise ValueError("n_s must match the presence of path constraints")
        if self.s is not None and (self.C is None or self.D is None or self.G is None):
            raise ValueError("path constraints require Jacobians C, D, G")
        if (self.g_ic is None) != (self.n_ic == 0):
            raise ValueError("n_ic must match the presence of g_ic")
        if self.g_ic is not None and (self.H0 is None or self.K0 is None):
            raise ValueError("g_ic requires Jacobians H0, K0")
        if (self.g_tc is None) != (self.n_tc == 0):
            raise ValueError("n_tc must match the presence of g_tc")
        if self.g_tc is not None and (self.Hf is None or self.Kf is None):
            raise ValueError("g_tc requires Jacobians Hf, Kf")
        if (self.phi is None) != (self.phi_epigraph is None):
            raise ValueError("phi and phi_epigraph must be supplied together")
        if (self.gamma is None) != (self.gamma_epigraph is None):
            raise ValueError("gamma and gamma_epigraph must be supplied together")
        if self.E is not None:
            self.E = _as_float_array(self.E, "E", 2)
            if self.E.shape[0] != self.n:
                raise ValueError("E must have n rows")
        if self.dynamic_param_indices is not None:
            idx = tuple(sorted({int(i) for i in self.dynamic_param_indices}))
            if idx and (idx[0] < 0 or idx[-1] >= self.d):
                raise ValueError("dynamic_param_indices outside the parameter vector")
            self.dynamic_param_indices = idx
        for attr, dim in (
            ("state_names", self.n),
            ("input_names", self.m),
            ("param_names", self.d),
        ):
            names = getattr(self, attr)
            if names is not None and len(names) != dim:
                raise ValueError(f"{attr} must have length {dim}")

    @property
    def n_nu(self):
        return self.n if self.E is None else self.E.shape[1]


def dilate_dynamics(f_abs, jac_x, jac_u, p_index=0, d=1):
    """Wrap absolute-time dynamics xdot = f_abs(x, u) for a free final time.

    Returns the quadruple (f, A, B, F) of the normalized-time system
    f(t, x, u, p) = p[p_index] * f_abs(x, u).  By the chain rule the
    parameter Jacobian column at ``p_index`` is f_abs(x, u) itself; all
    other parameter columns are zero.  Evaluating with a nonpositive
    dilation is an error (time would stop or run backwards).
    """
    if not 0 <= p_index < d:
        raise ValueError("p_index outside the parameter vector")

    def _dilation(p):
        value = float(p[p_index])
        if value <= 0:
            raise ValueError(f"time dilation p[{p_index}] = {value} must be positive")
        return value

    def f(t, x, u, p):
        return _dilation(p) * np.asarray(f_abs(x, u), dtype=float)

    def A(t, x, u, p):
        return _dilation(p) * np.asarray(jac_x(x, u), dtype=float)

    def B(t, x, u, p):
        return _dilation(p) * np.asarray(jac_u(x, u), dtype=float)

    def F(t, x, u, p):
        _dilation(p)
        column = np.asarray(f_abs(x, u), dtype=float)
        out = np.zeros((column.size, d))
        out[:, p_index] = column
        return out

    return f, A, B, F


def straight_line_guess(x_ic, x_tc, u_ic, u_tc, grid, p=None):
    """Linear interpolation of states and inputs between the given endpoints.

    Quaternion-valued states must not be interpolated this way; the vehicle
    modules build those guesses with slerp instead.
    """
    x_ic = _as_float_array(x_ic, "x_ic", 1)
    x_tc = _as_float_array(x_tc, "x_tc", 1)
    u_ic = _as_float_array(u_ic, "u_ic", 1)
    u_tc = _as_float_array(u_tc, "u_tc", 1)
    if x_ic.shape != x_tc.shape or u_ic.shape != u_tc.shape:
        raise ValueError("endpoint dimensions do not match")
    tau = grid.t[:, None]
    x = (1.0 - tau) * x_ic + tau * x_tc
    u = (1.0 - tau) * u_ic + tau * u_tc
    return TrajectoryIterate(grid, x, u, np.zeros(0) if p is None else p)


def central_difference(fun, z, step=1e-6):
    """Dense Jacobian of ``fun`` at ``z`` by symmetric differences.

    Testing aid for validating analytic Jacobian callbacks; exact for
    quadratics up to round-off.
    """
    z = np.asarray(z, dtype=float)
    f0 = np.atleast_1d(np.asarray(fun(z), dtype=float))
    jac = np.zeros((f0.size, z.size))
    for j in range(z.size):
        bump = np.zeros_like(z)
        bump[j] = step
        hi = np.atleast_1d(np.asarray(fun(z + bump), dtype=float))
        lo = np.atleast_1d(np.asarray(fun(z - bump), dtype=float))
        jac[:, j] = (hi - lo) / (2.0 * step)
    return jac
