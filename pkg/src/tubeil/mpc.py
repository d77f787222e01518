"""Nonlinear MPC for the cart-pole with a tightened friction-limit constraint.

The optimal control problem is solved by single shooting: an iLQR inner loop
(Gauss-Newton Hessians, finite-difference dynamics Jacobians) wrapped in an
augmented-Lagrangian outer loop handling the two-sided inequality

    |F / (mu F_z(x, F))| <= 1 - gamma

at every stage of the horizon.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .dynamics import (
    DEFAULT_DT,
    DEFAULT_SUBSTEPS,
    FD_STEP,
    NOMINAL_PARAMS,
    STATE_DIM,
    ModelParams,
    _model_step_into,
    _normal_force,
    discrete_step,
    friction_ratio,
    jacobians,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 50
    q_diag: tuple = (20.0, 0.0, 5.0, 0.0)
    r: float = 0.001
    gamma: float = 0.2
    params: ModelParams = NOMINAL_PARAMS
    dt: float = DEFAULT_DT
    substeps: int = DEFAULT_SUBSTEPS
    # solver settings
    u_max: float = 40.0
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e8
    max_outer: int = 20
    max_inner: int = 100
    constraint_tol: float = 1e-6
    grad_tol: float = 1e-5

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if len(self.q_diag) != STATE_DIM or min(self.q_diag) < 0:
            raise ValueError("q_diag must hold four non-negative weights")
        if self.r <= 0:
            raise ValueError("r must be positive")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")

    @property
    def Q(self) -> np.ndarray:
        return np.diag(np.asarray(self.q_diag, dtype=float))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["q_diag"] = list(self.q_diag)
        d["params"] = self.params.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MpcConfig":
        d = dict(d)
        if "params" in d:
            d["params"] = ModelParams.from_dict(d["params"])
        if "q_diag" in d:
            d["q_diag"] = tuple(float(v) for v in d["q_diag"])
        for k in ("horizon", "substeps", "max_outer", "max_inner"):
            if k in d:
                d[k] = int(d[k])
        return cls(**d)


@dataclass
class MpcSolution:
    input_sequence: np.ndarray
    predicted_states: np.ndarray
    cost: float
    max_constraint_violation: float
    iterations: int
    converged: bool
    grad_norm: float = float("nan")
    multipliers: Optional[np.ndarray] = field(default=None, repr=False)
    outer_costs: list = field(default_factory=list, repr=False)

    @property
    def first_input(self) -> float:
        return float(self.input_sequence[0])


def rollout(x0, inputs, cfg: MpcConfig) -> np.ndarray:
    """States ``(N+1, 4)`` obtained by applying ``inputs`` from ``x0``."""
    xs = np.empty((len(inputs) + 1, STATE_DIM))
    xs[0] = x0
    for i, u in enumerate(inputs):
        xs[i + 1] = discrete_step(xs[i], u, cfg.params, cfg.dt, cfg.substeps)
    return xs


def stage_cost(xs, us, cfg: MpcConfig) -> float:
    """Quadratic cost summed over stages ``0..N-1`` (no terminal term)."""
    q = np.asarray(cfg.q_diag, dtype=float)
    return float(np.sum(xs[:-1] ** 2 * q) + cfg.r * np.sum(us**2))


def constraint_values(xs, us, cfg: MpcConfig) -> np.ndarray:
    """Inequality residuals of shape ``(N, 2)``; feasible where ``<= 0``."""
    ratio = friction_ratio(xs[:-1], us, cfg.params)
    bound = 1.0 - cfg.gamma
    return np.stack([ratio - bound, -ratio - bound], axis=-1)


def _ratio_gradients(xs, us, params, h=FD_STEP):
    n = len(us)
    eye = np.eye(STATE_DIM) * h
    x = xs[:-1]
    pts = np.concatenate([x[:, None] + eye, x[:, None] - eye, x[:, None], x[:, None]], axis=1)
    forces = np.concatenate(
        [np.repeat(us[:, None], 2 * STATE_DIM, axis=1), (us + h)[:, None], (us - h)[:, None]], axis=1)
    vals = friction_ratio(pts, forces, params)
    gx = (vals[:, :STATE_DIM] - vals[:, STATE_DIM:2 * STATE_DIM]) / (2 * h)
    gu = (vals[:, -2] - vals[:, -1]) / (2 * h)
    assert gx.shape == (n, STATE_DIM)
    return gx, gu


@njit(cache=True)
def _constraints_kernel(xs, us, mc, mp, l, g, mu, bound):
    n = us.shape[0]
    out = np.empty((n, 2))
    for i in range(n):
        ratio = us[i] / (mu * _normal_force(xs[i, 2], xs[i, 3], us[i], mc, mp, l, g))
        out[i, 0] = ratio - bound
        out[i, 1] = -ratio - bound
    return out


@njit(cache=True)
def _augmented_kernel(xs, us, lam, rho, q, r, mc, mp, l, g, mu, bound):
    n = us.shape[0]
    c = _constraints_kernel(xs, us, mc, mp, l, g, mu, bound)
    total = 0.0
    for i in range(n):
        for j in range(4):
            total += q[j] * xs[i, j] * xs[i, j]
        total += r * us[i] * us[i]
        for j in range(2):
            s = max(0.0, lam[i, j] + rho * c[i, j])
            total += (s * s - lam[i, j] * lam[i, j]) / (2.0 * rho)
    return total


@njit(cache=True)
def _forward_kernel(x0, xs, us, k, K, alpha, u_max, mc, mp, l, g, dt, substeps):
    n = us.shape[0]
    new_x = np.empty_like(xs)
    new_u = np.empty(n)
    sub = np.empty(substeps)
    new_x[0] = x0
    for i in range(n):
        u = us[i] + alpha * k[i]
        for j in range(4):
            u += K[i, j] * (new_x[i, j] - xs[i, j])
        new_u[i] = min(max(u, -u_max), u_max)
        sub[:] = new_u[i]
        _model_step_into(new_x[i], sub, mc, mp, l, g, dt, new_x[i + 1])
    return new_x, new_u


@njit(cache=True)
def _backward_kernel(A, B, lx, lu, lxx, luu, lux, reg):
    n = lu.shape[0]
    k = np.empty(n)
    K = np.empty((n, 4))
    Vx = np.zeros(4)
    Vxx = np.zeros((4, 4))
    dv1 = 0.0
    dv2 = 0.0
    for i in range(n - 1, -1, -1):
        Ai = A[i]
        AiT = np.ascontiguousarray(Ai.T)
        Bi = B[i]
        VxxB = Vxx @ Bi
        Qx = lx[i] + AiT @ Vx
        Qu = lu[i] + Bi @ Vx
        Qxx = lxx[i] + AiT @ Vxx @ Ai
        Quu = luu[i] + Bi @ VxxB + reg
        Qux = lux[i] + VxxB @ Ai
        if Quu <= 0.0:
            return k, K, dv1, dv2, False
        k[i] = -Qu / Quu
        K[i] = -Qux / Quu
        dv1 += k[i] * Qu
        dv2 += 0.5 * k[i] * Quu * k[i]
        Vx = Qx + K[i] * (Quu * k[i] + Qu) + Qux * k[i]
        Vxx = Qxx + Quu * np.outer(K[i], K[i]) + np.outer(K[i], Qux) + np.outer(Qux, K[i])
        Vxx = 0.5 * (Vxx + Vxx.T)
    return k, K, dv1, dv2, True


@njit(cache=True)
def _adjoint_gradient(A, B, lx, lu):
    # exact gradient of the single-shooting objective w.r.t. the inputs
    n = lu.shape[0]
    grad = np.empty(n)
    p = np.zeros(4)
    for i in range(n - 1, -1, -1):
        grad[i] = lu[i] + B[i] @ p
        p = lx[i] + np.ascontiguousarray(A[i].T) @ p
    return grad


_LINE_SEARCH = (1.0, 0.5, 0.25, 0.1, 0.03, 0.01, 0.003, 0.001)


class MpcSolver:
    """Augmented-Lagrangian iLQR. Holds per-call workspace; not re-entrant."""

    def __init__(self, cfg: MpcConfig):
        self.cfg = cfg
        self._q = np.asarray(cfg.q_diag, dtype=float)
        self._dyn = cfg.params.kernel_args()
        self._con = self._dyn + (cfg.params.friction, 1.0 - cfg.gamma)

    def _augmented(self, xs, us, lam, rho):
        return _augmented_kernel(xs, us, lam, rho, self._q, self.cfg.r, *self._con)

    def _derivatives(self, xs, us, lam, rho):
        cfg = self.cfg
        A, B = jacobians(xs[:-1], us, cfg.params, cfg.dt, substeps=cfg.substeps)
        gx, gu = _ratio_gradients(xs, us, cfg.params)
        c = _constraints_kernel(xs, us, *self._con)
        shifted = lam + rho * c
        mult = np.maximum(0.0, shifted)
        active = (shifted > 0).astype(float)
        # both inequalities share the ratio gradient with opposite signs
        coef = mult[:, 0] - mult[:, 1]
        curv = rho * (active[:, 0] + active[:, 1])
        lx = 2.0 * self._q * xs[:-1] + coef[:, None] * gx
        lu = 2.0 * cfg.r * us + coef * gu
        lxx = np.zeros((len(us), STATE_DIM, STATE_DIM))
        lxx[:, range(STATE_DIM), range(STATE_DIM)] = 2.0 * self._q
        lxx += curv[:, None, None] * gx[:, :, None] * gx[:, None, :]
        luu = 2.0 * cfg.r + curv * gu**2
        lux = curv[:, None] * gu[:, None] * gx
        return A, B, lx, lu, lxx, luu, lux

    def _inner(self, x0, xs, us, lam, rho):
        cfg = self.cfg
        reg = 0.0
        J = self._augmented(xs, us, lam, rho)
        iters = 0
        for iters in range(1, cfg.max_inner + 1):
            derivs = self._derivatives(xs, us, lam, rho)
            accepted = False
            while not accepted and reg <= 1e10:
                k, K, dv1, dv2, ok = _backward_kernel(*(np.ascontiguousarray(a) for a in derivs), reg)
                if ok:
                    for alpha in _LINE_SEARCH:
                        nx, nu = _forward_kernel(x0, xs, us, k, K, alpha, cfg.u_max, *self._dyn, cfg.dt, cfg.substeps)
                        Jn = self._augmented(nx, nu, lam, rho)
                        expected = -(alpha * dv1 + alpha**2 * dv2)
                        if Jn < J and (expected <= 0 or J - Jn >= 1e-4 * expected):
                            accepted = True
                            break
                if not accepted:
                    reg = max(1e-6, reg * 10)
            if not accepted:
                break
            reg = reg / 10 if reg > 1e-6 else 0.0
            improvement = J - Jn
            xs, us, J = nx, nu, Jn
            if improvement < 1e-12 * max(1.0, abs(J)):
                break
        return xs, us, iters

    def solve(self, x0, warm_start: Optional[MpcSolution] = None) -> MpcSolution:
        cfg = self.cfg
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (STATE_DIM,) or not np.all(np.isfinite(x0)):
            raise ValueError(f"x0 must be a finite 4-vector, got {x0!r}")
        n = cfg.horizon
        if warm_start is not None:
            us = shift_inputs(warm_start.input_sequence, n)
            lam = (shift_rows(warm_start.multipliers, n) if warm_start.multipliers is not None
                   else np.zeros((n, 2)))
        else:
            us = np.zeros(n)
            lam = np.zeros((n, 2))
        xs = rollout(x0, us, cfg)
        rho = cfg.penalty_init
        total = 0
        converged = False
        outer_costs = []
        grad_norm = np.inf
        for outer in range(cfg.max_outer):
            xs, us, it = self._inner(x0, xs, us, lam, rho)
            total += it
            c = constraint_values(xs, us, cfg)
            viol = float(max(0.0, c.max()))
            outer_costs.append(stage_cost(xs, us, cfg))
            # stationarity of the Lagrangian with the updated multipliers
            lam = np.maximum(0.0, lam + rho * c)
            A, B, lx, lu, *_ = self._derivatives(xs, us, lam, 0.0)
            grad_norm = float(np.max(np.abs(_adjoint_gradient(*(np.ascontiguousarray(a) for a in (A, B, lx, lu))))))
            scale = max(1.0, outer_costs[-1])
            log.debug("outer %d: cost=%.6g viol=%.3g grad=%.3g rho=%.3g iters=%d",
                      outer, outer_costs[-1], viol, grad_norm, rho, it)
            if viol <= cfg.constraint_tol and grad_norm <= cfg.grad_tol * scale:
                converged = True
                break
            if viol > cfg.constraint_tol:
                rho = min(rho * cfg.penalty_growth, cfg.penalty_max)
        return MpcSolution(
            input_sequence=us,
            predicted_states=xs,
            cost=stage_cost(xs, us, cfg),
            max_constraint_violation=float(max(0.0, constraint_values(xs, us, cfg).max())),
            iterations=total,
            converged=converged,
            grad_norm=grad_norm,
            multipliers=lam,
            outer_costs=outer_costs,
        )

    def receding_control(self, x_bar, warm_start: Optional[MpcSolution] = None):
        sol = self.solve(x_bar, warm_start)
        return sol.first_input, sol


def shift_inputs(us, n):
    us = np.asarray(us, dtype=float)
    out = np.empty(n)
    m = min(n, len(us) - 1)
    out[:m] = us[1:m + 1]
    out[m:] = us[-1]
    return out


def shift_rows(a, n):
    out = np.empty((n,) + a.shape[1:])
    m = min(n, len(a) - 1)
    out[:m] = a[1:m + 1]
    out[m:] = a[-1]
    return out


def solve(x0, cfg: MpcConfig = MpcConfig(), warm_start: Optional[MpcSolution] = None) -> MpcSolution:
    return MpcSolver(cfg).solve(x0, warm_start)


def receding_control(x_bar, cfg: MpcConfig = MpcConfig(), warm_start: Optional[MpcSolution] = None):
    """First element of the optimal input sequence plus the full solution."""
    return MpcSolver(cfg).receding_control(x_bar, warm_start)
