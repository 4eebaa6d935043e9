"""Canonical conic program container and solver binding.

Every optimization in this package funnels through one canonical form:

    minimize    c'x
    subject to  A x + h in K

where K is a Cartesian product of zero cones (equalities), the nonnegative
orthant, and second order cones ordered as (t, v) with t >= ||v||_2. Rows
are grouped contiguously in the order zero, nonnegative, second order.

The numerical backend is Clarabel, an interior point solver. Its native
form is A_cl x + s = b, s in K, so the translation is A_cl = -A, b = h.
KKT residuals and infeasibility certificates are always recomputed here by
direct substitution; solver-reported quantities are never trusted blindly.
"""

from __future__ import annotations

import dataclasses
import json
import math
from typing import Iterable, Sequence

import clarabel
import numpy as np
from scipy import sparse

ZERO = "zero"
NONNEG = "nonneg"
SOC = "second_order"

_STATUS_OPTIMAL = "optimal"
_STATUS_INFEASIBLE = "infeasible"
_STATUS_UNBOUNDED = "unbounded"
_STATUS_MAX_ITERS = "max_iters"
_STATUS_NUMERICAL = "numerical_error"


@dataclasses.dataclass(frozen=True)
class ConeSpec:
    """Dimensions of the cone blocks, in canonical row order."""

    zero: int = 0
    nonneg: int = 0
    soc: tuple[int, ...] = ()

    def __post_init__(self):
        if self.zero < 0 or self.nonneg < 0:
            raise ValueError("cone dimensions must be nonnegative")
        if any(d < 2 for d in self.soc):
            # A 1-dim second order cone is just t >= 0; callers must use nonneg.
            raise ValueError("second order cone blocks need dimension >= 2")

    @property
    def total(self) -> int:
        return self.zero + self.nonneg + sum(self.soc)


@dataclasses.dataclass(frozen=True)
class ConicProgram:
    """Immutable conic program data: min c'x s.t. A x + h in K."""

    objective: np.ndarray
    matrix: sparse.csc_matrix
    offset: np.ndarray
    cones: ConeSpec
    var_names: tuple[str, ...] | None = None
    row_permutation: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float)
        h = np.asarray(self.offset, dtype=float)
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "offset", h)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("objective must be a nonempty vector")
        if self.matrix.shape != (h.size, c.size):
            raise ValueError(
                f"matrix shape {self.matrix.shape} inconsistent with "
                f"{h.size} rows and {c.size} variables"
            )
        if self.cones.total != h.size:
            raise ValueError("cone dimensions do not add up to the row count")
        if self.var_names is not None and len(self.var_names) != c.size:
            raise ValueError("var_names length mismatch")

    @property
    def num_vars(self) -> int:
        return self.objective.size

    @property
    def num_rows(self) -> int:
        return self.offset.size


@dataclasses.dataclass(frozen=True)
class SolverSettings:
    eps_abs: float = 1e-8
    eps_rel: float = 1e-8
    max_iters: int = 100000
    scaling_enabled: bool = True
    verbose: bool = False


@dataclasses.dataclass(frozen=True)
class ConicSolution:
    """Result of a conic solve.

    status is one of optimal, infeasible, unbounded, max_iters,
    numerical_error. For infeasible problems `certificate` holds a dual ray
    z in K* with A'z = 0 and h'z = -1; for unbounded problems it holds a
    primal ray x with A x in K and c'x = -1.
    """

    status: str
    primal: np.ndarray
    dual: np.ndarray
    objective_value: float
    iterations: int
    solve_time: float
    certificate: np.ndarray | None = None


def assemble(
    objective: Sequence[float],
    rows: Iterable[tuple],
    var_names: Sequence[str] | None = None,
) -> ConicProgram:
    """Build a ConicProgram from (coefficients, offset, cone) row tuples.

    Each entry of `rows` is (coeffs, offset, cone) with cone one of "zero",
    "nonneg", "second_order". Zero/nonneg entries are single rows: coeffs is
    a length-n vector and offset a scalar. A second order entry is one cone
    block: coeffs is a (d, n) matrix, offset a length-d vector, ordered
    (t, v) for t >= ||v||. Rows are regrouped zero -> nonneg -> second order
    and the permutation from input scalar-row order to output row order is
    recorded in row_permutation.
    """
    c = np.asarray(objective, dtype=float)
    if c.ndim != 1:
        raise ValueError("objective must be a vector")
    n = c.size

    zero_rows, nonneg_rows, soc_blocks = [], [], []
    # (group, index within group) per input scalar row, for the permutation
    placements = []
    for coeffs, offset, cone in rows:
        if cone == SOC:
            block = np.atleast_2d(np.asarray(coeffs, dtype=float))
            off = np.atleast_1d(np.asarray(offset, dtype=float))
            if block.shape != (off.size, n):
                raise ValueError("second order block shape mismatch")
            start = sum(b.shape[0] for b, _ in soc_blocks)
            for i in range(off.size):
                placements.append((2, start + i))
            soc_blocks.append((block, off))
        elif cone in (ZERO, NONNEG):
            row = np.asarray(coeffs, dtype=float).reshape(-1)
            if row.size != n:
                raise ValueError("row length does not match objective size")
            group = zero_rows if cone == ZERO else nonneg_rows
            placements.append((0 if cone == ZERO else 1, len(group)))
            group.append((row, float(offset)))
        else:
            raise ValueError(f"unknown cone tag {cone!r}")

    n_zero, n_nonneg = len(zero_rows), len(nonneg_rows)
    group_base = {0: 0, 1: n_zero, 2: n_zero + n_nonneg}
    perm = np.array([group_base[g] + i for g, i in placements], dtype=int)

    stacked = [r for r, _ in zero_rows] + [r for r, _ in nonneg_rows]
    offsets = [o for _, o in zero_rows] + [o for _, o in nonneg_rows]
    for block, off in soc_blocks:
        stacked.extend(block)
        offsets.extend(off)
    m = len(stacked)
    mat = sparse.csc_matrix(
        np.vstack(stacked) if m else np.zeros((0, n)), shape=(m, n)
    )
    cones = ConeSpec(
        zero=n_zero,
        nonneg=n_nonneg,
        soc=tuple(b.shape[0] for b, _ in soc_blocks),
    )
    return ConicProgram(
        objective=c,
        matrix=mat,
        offset=np.asarray(offsets, dtype=float),
        cones=cones,
        var_names=tuple(var_names) if var_names is not None else None,
        row_permutation=perm,
    )


def _cone_slices(cones: ConeSpec) -> list[tuple[str, slice]]:
    out = []
    start = 0
    if cones.zero:
        out.append((ZERO, slice(0, cones.zero)))
        start = cones.zero
    if cones.nonneg:
        out.append((NONNEG, slice(start, start + cones.nonneg)))
        start += cones.nonneg
    for d in cones.soc:
        out.append((SOC, slice(start, start + d)))
        start += d
    return out


def cone_residual(v: np.ndarray, cones: ConeSpec) -> float:
    """Max-norm distance of v from the cone K, block by block."""
    worst = 0.0
    for kind, sl in _cone_slices(cones):
        block = v[sl]
        if kind == ZERO:
            worst = max(worst, float(np.max(np.abs(block), initial=0.0)))
        elif kind == NONNEG:
            worst = max(worst, float(np.max(-block, initial=0.0)))
        else:
            worst = max(worst, float(np.linalg.norm(block[1:]) - block[0]))
    return max(worst, 0.0)


def dual_cone_residual(z: np.ndarray, cones: ConeSpec) -> float:
    """Max-norm distance of z from the dual cone K*."""
    worst = 0.0
    for kind, sl in _cone_slices(cones):
        block = z[sl]
        if kind == ZERO:
            continue  # dual of the zero cone is free
        if kind == NONNEG:
            worst = max(worst, float(np.max(-block, initial=0.0)))
        else:
            worst = max(worst, float(np.linalg.norm(block[1:]) - block[0]))
    return max(worst, 0.0)


def kkt_residuals(program: ConicProgram, solution: ConicSolution) -> dict:
    """Recompute KKT residuals by direct substitution.

    Returns primal feasibility (distance of A x + h from K), dual
    feasibility (max of ||c - A'z||_inf and the distance of z from K*),
    and the absolute duality gap |c'x + h'z|.
    """
    x, z = solution.primal, solution.dual
    A, c, h = program.matrix, program.objective, program.offset
    v = A @ x + h
    primal = cone_residual(v, program.cones)
    stat = float(np.max(np.abs(c - A.T @ z), initial=0.0))
    dual = max(stat, dual_cone_residual(z, program.cones))
    gap = abs(float(c @ x) + float(h @ z))
    return {"primal": primal, "dual": dual, "gap": gap}


def _clarabel_cones(cones: ConeSpec) -> list:
    out = []
    if cones.zero:
        out.append(clarabel.ZeroConeT(cones.zero))
    if cones.nonneg:
        out.append(clarabel.NonnegativeConeT(cones.nonneg))
    out.extend(clarabel.SecondOrderConeT(d) for d in cones.soc)
    return out


def _clarabel_settings(settings: SolverSettings, tighten: bool = True) -> clarabel.DefaultSettings:
    out = clarabel.DefaultSettings()
    out.verbose = settings.verbose
    out.max_iter = settings.max_iters
    # Ask the backend for two decades tighter than the contract tolerance so
    # the recomputed (unscaled) residuals clear it with margin.  On problems
    # whose conditioning cannot reach that target the solver stalls past its
    # best iterate; solve() then retries once at the nominal tolerance.
    factor = 0.01 if tighten else 1.0
    out.tol_feas = max(factor * settings.eps_abs, 1e-12)
    out.tol_gap_abs = max(factor * settings.eps_abs, 1e-12)
    out.tol_gap_rel = max(factor * settings.eps_rel, 1e-12)
    out.equilibrate_enable = settings.scaling_enabled
    return out


def solve(program: ConicProgram, settings: SolverSettings | None = None) -> ConicSolution:
    """Solve the program with Clarabel and classify the outcome.

    Deterministic: repeated calls on the same program give identical
    results. Non-finite data short-circuits to numerical_error.
    """
    if settings is None:
        settings = SolverSettings()
    n, m = program.num_vars, program.num_rows
    finite = (
        np.all(np.isfinite(program.objective))
        and np.all(np.isfinite(program.offset))
        and np.all(np.isfinite(program.matrix.data))
    )
    if not finite:
        return ConicSolution(
            status=_STATUS_NUMERICAL,
            primal=np.zeros(n),
            dual=np.zeros(m),
            objective_value=math.nan,
            iterations=0,
            solve_time=0.0,
        )

    P = sparse.csc_matrix((n, n))
    A_cl = (-program.matrix).tocsc()

    def _attempt(tighten):
        solver = clarabel.DefaultSolver(
            P,
            program.objective,
            A_cl,
            program.offset,
            _clarabel_cones(program.cones),
            _clarabel_settings(settings, tighten),
        )
        raw = solver.solve()
        status = str(raw.status)
        x = np.asarray(raw.x, dtype=float)
        z = np.asarray(raw.z, dtype=float)

        def _solution(kind, obj, cert=None):
            return ConicSolution(
                status=kind,
                primal=x,
                dual=z,
                objective_value=obj,
                iterations=int(raw.iterations),
                solve_time=float(raw.solve_time),
                certificate=cert,
            )

        if status in ("Solved", "AlmostSolved"):
            obj = float(program.objective @ x)
            if status == "AlmostSolved":
                res = kkt_residuals(program, _solution(_STATUS_OPTIMAL, obj))
                tol = max(settings.eps_abs, settings.eps_rel)
                if max(res["primal"], res["dual"], res["gap"]) > tol:
                    return _solution(_STATUS_NUMERICAL, math.nan)
            return _solution(_STATUS_OPTIMAL, obj)
        if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            # Dual ray: z in K*, A'z = 0, h'z < 0; normalize to h'z = -1.
            scale = -float(program.offset @ z)
            cert = z / scale if scale > 0 else z
            return _solution(_STATUS_INFEASIBLE, math.nan, cert)
        if status in ("DualInfeasible", "AlmostDualInfeasible"):
            # Primal ray: A x in K, c'x < 0; normalize to c'x = -1.
            scale = -float(program.objective @ x)
            cert = x / scale if scale > 0 else x
            return _solution(_STATUS_UNBOUNDED, math.nan, cert)
        if status in ("MaxIterations", "MaxTime"):
            return _solution(_STATUS_MAX_ITERS, float(program.objective @ x))
        return _solution(_STATUS_NUMERICAL, math.nan)

    out = _attempt(tighten=True)
    if out.status == _STATUS_NUMERICAL:
        out = _attempt(tighten=False)
    return out


def dump_json(program: ConicProgram, path) -> None:
    """Serialize the program (triplet matrix form) to a JSON file."""
    coo = program.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    cones = []
    if program.cones.zero:
        cones.append([ZERO, program.cones.zero])
    if program.cones.nonneg:
        cones.append([NONNEG, program.cones.nonneg])
    cones.extend([SOC, d] for d in program.cones.soc)
    payload = {
        "num_vars": program.num_vars,
        "objective": program.objective.tolist(),
        "matrix": {
            "shape": [program.num_rows, program.num_vars],
            "rows": coo.row[order].tolist(),
            "cols": coo.col[order].tolist(),
            "vals": coo.data[order].tolist(),
        },
        "offset": program.offset.tolist(),
        "cones": cones,
    }
    if program.var_names is not None:
        payload["var_names"] = list(program.var_names)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


class ProgramBuilder:
    """Incremental constructor for conic programs over scaled variables.

    Decision variables are registered with an affine map x = s*y + c from
    the internal (solver-facing) variable y to the physical quantity x.
    Rows and objective terms written in physical coordinates are rewritten
    onto y automatically; pass hat=True to write raw rows on y itself,
    which is how trust regions and other scaled-space constraints enter.
    Constant objective terms produced by the rewrite are accumulated and
    must be added to the solved objective value by the caller.
    """

    def __init__(self):
        self._scale: list[float] = []
        self._shift: list[float] = []
        self._names: list[str] = []
        self._obj: dict[int, float] = {}
        self.objective_constant = 0.0
        self._zero: list[tuple[list, float]] = []
        self._nonneg: list[tuple[list, float]] = []
        self._socs: list[list[tuple[list, float]]] = []

    @property
    def num_vars(self) -> int:
        return len(self._scale)

    def new_var(self, name: str, scale: float = 1.0, shift: float = 0.0) -> int:
        if scale <= 0 or not np.isfinite(scale):
            raise ValueError(f"variable {name}: scale must be positive finite")
        self._scale.append(float(scale))
        self._shift.append(float(shift))
        self._names.append(name)
        return len(self._scale) - 1

    def new_vars(self, name: str, k: int, scale=1.0, shift=0.0) -> np.ndarray:
        scale = np.broadcast_to(np.asarray(scale, dtype=float), (k,))
        shift = np.broadcast_to(np.asarray(shift, dtype=float), (k,))
        return np.array(
            [self.new_var(f"{name}[{i}]", scale[i], shift[i]) for i in range(k)]
        )

    def _hat(self, entries, offset: float, hat: bool):
        if hat:
            return [(int(i), float(a)) for i, a in entries], float(offset)
        out = []
        off = float(offset)
        for i, a in entries:
            i = int(i)
            a = float(a)
            out.append((i, a * self._scale[i]))
            off += a * self._shift[i]
        return out, off

    def add_objective(self, entries, hat: bool = False) -> None:
        entries, const = self._hat(entries, 0.0, hat)
        for i, a in entries:
            self._obj[i] = self._obj.get(i, 0.0) + a
        self.objective_constant += const

    def add_objective_constant(self, value: float) -> None:
        self.objective_constant += float(value)

    def add_zero(self, entries, offset: float = 0.0, hat: bool = False) -> None:
        self._zero.append(self._hat(entries, offset, hat))

    def add_nonneg(self, entries, offset: float = 0.0, hat: bool = False) -> None:
        self._nonneg.append(self._hat(entries, offset, hat))

    def add_soc(self, rows, hat: bool = False) -> None:
        """rows = [(entries, offset), ...] stacked as (t, v), t >= ||v||."""
        if len(rows) < 2:
            raise ValueError("second order cone needs at least 2 rows")
        self._socs.append([self._hat(e, o, hat) for e, o in rows])

    def add_abs_epigraph(self, t_idx: int, entries, offset: float = 0.0, hat: bool = False) -> None:
        """t >= |expr| via two nonnegativity rows."""
        entries = list(entries)
        neg = [(i, -a) for i, a in entries]
        self.add_nonneg([(t_idx, 1.0)] + neg, -offset, hat=hat)
        self.add_nonneg([(t_idx, 1.0)] + entries, offset, hat=hat)

    def add_square_epigraph(self, t_idx: int, rows, hat: bool = False) -> None:
        """t >= sum of squares of affine rows: ||(2 rows, t-1)|| <= t+1.

        t_idx must be an unscaled auxiliary variable.
        """
        doubled = [([(i, 2.0 * a) for i, a in e], 2.0 * o) for e, o in rows]
        self.add_soc(
            [([(t_idx, 1.0)], 1.0)] + doubled + [([(t_idx, 1.0)], -1.0)],
            hat=hat,
        )

    def build(self, var_names: bool = False) -> ConicProgram:
        n = self.num_vars
        c = np.zeros(n)
        for i, a in self._obj.items():
            c[i] = a
        rows_i, cols_i, vals = [], [], []
        offsets = []
        blocks = [(ZERO, self._zero), (NONNEG, self._nonneg)]
        r = 0
        soc_dims = []
        for _, rows in blocks:
            for entries, off in rows:
                for i, a in entries:
                    rows_i.append(r)
                    cols_i.append(i)
                    vals.append(a)
                offsets.append(off)
                r += 1
        for soc in self._socs:
            soc_dims.append(len(soc))
            for entries, off in soc:
                for i, a in entries:
                    rows_i.append(r)
                    cols_i.append(i)
                    vals.append(a)
                offsets.append(off)
                r += 1
        mat = sparse.coo_matrix(
            (vals, (rows_i, cols_i)), shape=(r, n)
        ).tocsc()
        return ConicProgram(
            objective=c,
            matrix=mat,
            offset=np.asarray(offsets, dtype=float),
            cones=ConeSpec(
                zero=len(self._zero),
                nonneg=len(self._nonneg),
                soc=tuple(soc_dims),
            ),
            var_names=tuple(self._names) if var_names else None,
        )

    def value(self, solution: ConicSolution, idx) -> np.ndarray | float:
        """Physical value(s) of variable(s) idx from a solution."""
        idx_arr = np.asarray(idx)
        y = solution.primal[idx_arr]
        s = np.asarray(self._scale)[idx_arr]
        c = np.asarray(self._shift)[idx_arr]
        out = s * y + c
        return float(out) if np.isscalar(idx) or idx_arr.ndim == 0 else out

    def hat_reference(self, idx, physical) -> np.ndarray:
        """Scaled-space image of a physical point, for trust region offsets."""
        idx_arr = np.asarray(idx)
        s = np.asarray(self._scale)[idx_arr]
        c = np.asarray(self._shift)[idx_arr]
        return (np.asarray(physical, dtype=float) - c) / s
