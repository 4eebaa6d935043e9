"""Run artifacts: typed reports, config parsing, verification, and emit.

The solver modules return :class:`SCPReport`; everything else in this file
is command-line plumbing and imports the solvers lazily, so the low-level
modules can import the report type without a cycle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

from .ocp import TrajectoryIterate

__all__ = ["SCPReport"]


@dataclass
class SCPReport:
    """Outcome of one solver run.

    ``checks`` is recomputed from the final trajectory (defects, virtual
    control norms, constraint violations), never copied from intermediate
    solver state.  ``timings`` holds cumulative seconds per phase under the
    keys formulate, discretize, solve.
    """

    algorithm: str
    config: dict
    iterations: List = field(default_factory=list)
    trajectory: Optional[TrajectoryIterate] = None
    converged: bool = False
    stop_reason: str = ""
    checks: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
