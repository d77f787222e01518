"""Parameter governor: rescale the wheel force for changed plant masses.

The refined force ``u*`` makes the friction-constraint value on the true plant
match the nominal-domain value,

    g(x, u*, M) = g(x_bar, u, M_bar),   g(x, u, M) = |u / (mu F_z(x, u, M))| - 1,

which for the cart-pole reduces to ``u* = u * F_z(x, u*, M) / F_z(x_bar, u, M_bar)``.
Because ``F_z(x, ., M)`` is affine in the force this is a linear equation in ``u*``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ModelParams, friction_constraint, normal_force, normal_force_affine

PIVOT_EPS = 1e-6
FIXED_POINT_ITERS = 50
RESIDUAL_TOL = 1e-8


class GovernorSingular(RuntimeError):
    pass


@dataclass(frozen=True)
class GovernorResult:
    u: float
    residual: float
    method: str  # "affine-closed-form" | "fixed-point"
    iterations: int = 0

    @property
    def constraint_gap(self) -> float:
        return self.residual


def _scaling_residual(u_star, u, actual, M, c):
    return abs(u_star - u * normal_force(actual, u_star, M) / c)


def refine(u: float, actual, nominal, M: ModelParams, M_bar: ModelParams) -> GovernorResult:
    """Refined force for the plant with parameters ``M``.

    Raises :class:`GovernorSingular` if the nominal normal force vanishes or both
    the closed-form pivot and the fixed-point fallback break down.
    """
    u = float(u)
    c = normal_force(nominal, u, M_bar)
    if abs(c) < PIVOT_EPS:
        raise GovernorSingular(f"nominal normal force {c:.3g} N is too close to zero")
    a, b = normal_force_affine(actual, M)
    pivot = 1.0 - u * b / c
    if abs(pivot) >= PIVOT_EPS:
        u_star = u * a / (c - u * b)
        res = _scaling_residual(u_star, u, actual, M, c)
        if res < RESIDUAL_TOL * max(1.0, abs(u_star)):
            return GovernorResult(u_star, res, "affine-closed-form", 0)
    # Picard iteration on the implicit form
    u_star = u
    for it in range(1, FIXED_POINT_ITERS + 1):
        u_star = u * normal_force(actual, u_star, M) / c
        res = _scaling_residual(u_star, u, actual, M, c)
        if not np.isfinite(u_star):
            break
        if res < RESIDUAL_TOL * max(1.0, abs(u_star)):
            return GovernorResult(u_star, res, "fixed-point", it)
    raise GovernorSingular("governor singular: closed form and fixed-point iteration both failed")


def constraint_value(state, force, params: ModelParams):
    """Friction-limit function ``|F / (mu F_z)| - 1``."""
    return friction_constraint(state, force, params)


def constraint_gap_series(actual_states, nominal_states, applied_inputs, nominal_inputs,
                          M: ModelParams, M_bar: ModelParams) -> np.ndarray:
    """Per-step ``g(x, u, M) - g(x_bar, u_bar, M_bar)``.

    Pass the unrefined combined inputs for the plain series and the refined
    ones for the governed series.
    """
    actual_states = np.asarray(actual_states, dtype=float)
    nominal_states = np.asarray(nominal_states, dtype=float)
    n = len(applied_inputs)
    if not (len(actual_states) >= n and len(nominal_states) >= n and len(nominal_inputs) == n):
        raise ValueError("trajectories and input series are not aligned")
    g_actual = friction_constraint(actual_states[:n], np.asarray(applied_inputs, dtype=float), M)
    g_nominal = friction_constraint(nominal_states[:n], np.asarray(nominal_inputs, dtype=float), M_bar)
    return np.asarray(g_actual - g_nominal)
