"""Trajectory generation via convex optimization.

Lossless convexification for rocket landing, and two sequential convex
programming algorithms on a shared optimal control core, with vehicle
models for a 3-DoF lander, a quadrotor, and a 6-DoF free flyer.
"""

__version__ = "0.1.0"
