"""Cart-pole equations of motion, wheel normal force, RK4 step and linearization.

State layout is ``[x_pos, x_vel, theta, theta_dot]``. The public functions accept
either a single state of shape ``(4,)`` or a batch ``(..., 4)`` with a
broadcastable force array. The scalar kernels underneath are compiled with
numba and are the only place the equations of motion are written down.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

STATE_DIM = 4
STATE_NAMES = ("x_pos", "x_vel", "theta", "theta_dot")

# control period and RK4 sub-steps per period of the discrete-time model
DEFAULT_DT = 0.05
DEFAULT_SUBSTEPS = 5
FD_STEP = 1e-6


class NumericalError(RuntimeError):
    """Raised when a computation produces non-finite values."""


@dataclass(frozen=True)
class ModelParams:
    cart_mass: float = 4.0
    pole_mass: float = 1.0
    pole_length: float = 0.5
    gravity: float = 9.81
    friction: float = 0.5

    def __post_init__(self):
        if not (self.cart_mass > 0 and self.pole_mass > 0):
            raise ValueError(f"masses must be positive, got {self.cart_mass}, {self.pole_mass}")
        if not (self.pole_length > 0 and self.gravity > 0):
            raise ValueError("pole_length and gravity must be positive")
        if not 0 < self.friction <= 1:
            raise ValueError(f"friction must lie in (0, 1], got {self.friction}")

    def with_masses(self, cart_mass: float, pole_mass: float) -> "ModelParams":
        return ModelParams(cart_mass, pole_mass, self.pole_length, self.gravity, self.friction)

    @property
    def masses(self) -> tuple:
        return (self.cart_mass, self.pole_mass)

    def kernel_args(self) -> tuple:
        return (self.cart_mass, self.pole_mass, self.pole_length, self.gravity)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(**{k: float(v) for k, v in d.items()})


NOMINAL_PARAMS = ModelParams()


# ---------------------------------------------------------------------------
# compiled kernels

@njit(cache=True)
def _accel(theta, theta_dot, force, mc, mp, l, g):
    sin = math.sin(theta)
    cos = math.cos(theta)
    denom = mc + mp * sin * sin
    x_acc = (force - (mp * l * theta_dot * theta_dot - mp * g * cos) * sin) / denom
    theta_acc = cos * (force - (mp * l * theta_dot * theta_dot - (mc + mp) * g) * sin) / (l * denom)
    return x_acc, theta_acc


@njit(cache=True)
def _normal_force(theta, theta_dot, force, mc, mp, l, g):
    _, theta_acc = _accel(theta, theta_dot, force, mc, mp, l, g)
    return mc * g + mp * (g - l * (theta_acc * math.sin(theta) + theta_dot * theta_dot * math.cos(theta)))


@njit(cache=True)
def _rk4_into(x, force, mc, mp, l, g, dt, out):
    # classic RK4 with the force held over the step
    a1, b1 = _accel(x[2], x[3], force, mc, mp, l, g)
    k1 = (x[1], a1, x[3], b1)
    h = 0.5 * dt
    a2, b2 = _accel(x[2] + h * k1[2], x[3] + h * k1[3], force, mc, mp, l, g)
    k2 = (x[1] + h * k1[1], a2, x[3] + h * k1[3], b2)
    a3, b3 = _accel(x[2] + h * k2[2], x[3] + h * k2[3], force, mc, mp, l, g)
    k3 = (x[1] + h * k2[1], a3, x[3] + h * k2[3], b3)
    a4, b4 = _accel(x[2] + dt * k3[2], x[3] + dt * k3[3], force, mc, mp, l, g)
    k4 = (x[1] + dt * k3[1], a4, x[3] + dt * k3[3], b4)
    c = dt / 6.0
    out[0] = x[0] + c * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    out[1] = x[1] + c * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    out[2] = x[2] + c * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
    out[3] = x[3] + c * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])


@njit(cache=True)
def _rk4_batch(xs, forces, mc, mp, l, g, dt):
    out = np.empty_like(xs)
    for i in range(xs.shape[0]):
        _rk4_into(xs[i], forces[i], mc, mp, l, g, dt, out[i])
    return out


@njit(cache=True)
def _model_step_into(x, forces, mc, mp, l, g, dt, out):
    # RK4 over the control period; forces[j] is held on sub-interval j
    n = forces.shape[0]
    h = dt / n
    buf = x.copy()
    for j in range(n):
        _rk4_into(buf, forces[j], mc, mp, l, g, h, out)
        buf[:] = out


@njit(cache=True)
def _model_step_batch(xs, forces, mc, mp, l, g, dt, substeps):
    out = np.empty_like(xs)
    sub = np.empty(substeps)
    for i in range(xs.shape[0]):
        sub[:] = forces[i]
        _model_step_into(xs[i], sub, mc, mp, l, g, dt, out[i])
    return out


@njit(cache=True)
def _deriv_batch(xs, forces, mc, mp, l, g):
    out = np.empty_like(xs)
    for i in range(xs.shape[0]):
        a, b = _accel(xs[i, 2], xs[i, 3], forces[i], mc, mp, l, g)
        out[i, 0] = xs[i, 1]
        out[i, 1] = a
        out[i, 2] = xs[i, 3]
        out[i, 3] = b
    return out


@njit(cache=True)
def _normal_force_batch(xs, forces, mc, mp, l, g):
    out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        out[i] = _normal_force(xs[i, 2], xs[i, 3], forces[i], mc, mp, l, g)
    return out


# ---------------------------------------------------------------------------
# numpy-facing wrappers

def _flatten(state, force):
    state = np.asarray(state, dtype=float)
    force = np.asarray(force, dtype=float)
    if state.shape[-1] != STATE_DIM:
        raise ValueError(f"state must end in a dimension of {STATE_DIM}, got shape {state.shape}")
    batch = np.broadcast_shapes(state.shape[:-1], force.shape)
    xs = np.ascontiguousarray(np.broadcast_to(state, batch + (STATE_DIM,))).reshape(-1, STATE_DIM)
    us = np.ascontiguousarray(np.broadcast_to(force, batch)).reshape(-1)
    return xs, us, batch


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError("non-finite value in cart-pole dynamics")


def continuous_dynamics(state, force, params: ModelParams = NOMINAL_PARAMS) -> np.ndarray:
    """Time derivative ``[x_vel, x_acc, theta_dot, theta_acc]`` of the state."""
    xs, us, batch = _flatten(state, force)
    _check_finite(xs, us)
    return _deriv_batch(xs, us, *params.kernel_args()).reshape(batch + (STATE_DIM,))


def normal_force(state, force, params: ModelParams = NOMINAL_PARAMS):
    """Wheel normal force ``F_z``; affine in ``force`` for a fixed state."""
    xs, us, batch = _flatten(state, force)
    out = _normal_force_batch(xs, us, *params.kernel_args()).reshape(batch)
    return float(out) if out.ndim == 0 else out


def normal_force_affine(state, params: ModelParams = NOMINAL_PARAMS):
    """Return ``(a, b)`` with ``F_z(state, F) = a + b * F``."""
    a = normal_force(state, 0.0, params)
    b = normal_force(state, 1.0, params) - a
    return a, b


def friction_ratio(state, force, params: ModelParams = NOMINAL_PARAMS):
    """Signed ratio ``F / (mu F_z)``; the friction limit bounds its magnitude by one."""
    return np.asarray(force, dtype=float) / (params.friction * normal_force(state, force, params))


def friction_constraint(state, force, params: ModelParams = NOMINAL_PARAMS):
    """``|F / (mu F_z)| - 1``; non-positive when the friction limit is respected."""
    return np.abs(friction_ratio(state, force, params)) - 1.0


def step_rk4(state, force, params: ModelParams = NOMINAL_PARAMS, dt: float = DEFAULT_DT) -> np.ndarray:
    """One RK4 step of length ``dt`` with zero-order hold on ``force``."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    xs, us, batch = _flatten(state, force)
    out = _rk4_batch(xs, us, *params.kernel_args(), float(dt))
    _check_finite(out)
    return out.reshape(batch + (STATE_DIM,))


def discrete_step(state, force, params: ModelParams = NOMINAL_PARAMS, dt: float = DEFAULT_DT,
                  substeps: int = DEFAULT_SUBSTEPS) -> np.ndarray:
    """Discrete-time model ``f``: ``substeps`` RK4 steps spanning one control period."""
    if dt <= 0 or substeps < 1:
        raise ValueError("dt must be positive and substeps >= 1")
    xs, us, batch = _flatten(state, force)
    out = _model_step_batch(xs, us, *params.kernel_args(), float(dt), int(substeps))
    _check_finite(out)
    return out.reshape(batch + (STATE_DIM,))


def plant_step(state, sub_forces, params: ModelParams = NOMINAL_PARAMS, dt: float = DEFAULT_DT) -> np.ndarray:
    """Advance one control period with a force that may change on each sub-interval.

    With a constant ``sub_forces`` array this equals :func:`discrete_step` bit for bit.
    """
    x = np.asarray(state, dtype=float)
    f = np.ascontiguousarray(sub_forces, dtype=float)
    out = np.empty(STATE_DIM)
    _model_step_into(x, f, *params.kernel_args(), float(dt), out)
    _check_finite(out)
    return out


@dataclass(frozen=True)
class LinearizedModel:
    A: np.ndarray
    B: np.ndarray
    state: np.ndarray
    force: float


def jacobians(states, forces, params: ModelParams = NOMINAL_PARAMS, dt: float = DEFAULT_DT,
              h: float = FD_STEP, substeps: int = DEFAULT_SUBSTEPS):
    """Central-difference Jacobians of :func:`discrete_step` at a batch of nodes.

    Args:
        states: array ``(n, 4)``.
        forces: array ``(n,)``.

    Returns:
        ``A`` of shape ``(n, 4, 4)`` with ``A[k, i, j] = d next_i / d x_j`` and
        ``B`` of shape ``(n, 4)``.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    forces = np.atleast_1d(np.asarray(forces, dtype=float))
    eye = np.eye(STATE_DIM) * h
    # per node: +e_j (4), -e_j (4), +u, -u
    xs = np.concatenate([states[:, None] + eye, states[:, None] - eye,
                         states[:, None], states[:, None]], axis=1)
    us = np.concatenate([np.repeat(forces[:, None], 2 * STATE_DIM, axis=1),
                         (forces + h)[:, None], (forces - h)[:, None]], axis=1)
    nxt = discrete_step(xs, us, params, dt, substeps)
    A = np.swapaxes((nxt[:, :STATE_DIM] - nxt[:, STATE_DIM:2 * STATE_DIM]) / (2 * h), 1, 2)
    B = (nxt[:, -2] - nxt[:, -1]) / (2 * h)
    return A, B


def linearize(state, force=0.0, params: ModelParams = NOMINAL_PARAMS, dt: float = DEFAULT_DT,
              h: float = FD_STEP, substeps: int = DEFAULT_SUBSTEPS) -> LinearizedModel:
    """Finite-difference linearization of the discrete model; ``substeps=1`` gives a single RK4 step."""
    state = np.asarray(state, dtype=float)
    A, B = jacobians(state[None], np.array([force]), params, dt, h, substeps)
    return LinearizedModel(A=A[0], B=B[0], state=state.copy(), force=float(force))


def mechanical_energy(state, params: ModelParams = NOMINAL_PARAMS) -> float:
    """Kinetic plus potential energy, pole modelled as a point mass at distance ``l``.

    Positive force raises ``theta``, so the pole tip sits at ``x - l sin(theta)``.
    """
    x_vel, theta, theta_dot = state[1], state[2], state[3]
    mc, mp, l, g = params.kernel_args()
    vx = x_vel - l * theta_dot * math.cos(theta)
    vy = -l * theta_dot * math.sin(theta)
    return 0.5 * mc * x_vel**2 + 0.5 * mp * (vx**2 + vy**2) + mp * g * l * math.cos(theta)
