"""Discrete-time LQR gain for the ancillary full-state feedback."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import DEFAULT_DT, DEFAULT_SUBSTEPS, NOMINAL_PARAMS, ModelParams, linearize

DEFAULT_Q_LQR = (200.0, 3.2, 2400.0, 5400.0)
DEFAULT_R_LQR = 1.0


class RiccatiError(RuntimeError):
    pass


@dataclass(frozen=True)
class AncillaryGain:
    """Gain ``K`` applied as ``u = u_nominal + K (x - x_nominal)``."""

    K: np.ndarray
    P: np.ndarray
    spectral_radius: float
    residual: float
    iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "K": [float(v) for v in self.K],
            "spectral_radius": self.spectral_radius,
            "riccati_residual": self.residual,
            "iterations": self.iterations,
            "P": [[float(v) for v in row] for row in self.P],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AncillaryGain":
        return cls(K=np.asarray(d["K"], dtype=float), P=np.asarray(d["P"], dtype=float),
                   spectral_radius=float(d["spectral_radius"]), residual=float(d["riccati_residual"]),
                   iterations=int(d.get("iterations", 0)))


def riccati_residual(A, B, Q, R, P) -> float:
    """Frobenius norm of ``A'PA - P - A'PB (R + B'PB)^-1 B'PA + Q``."""
    BtPA = B.T @ P @ A
    res = A.T @ P @ A - P - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA) + Q
    return float(np.linalg.norm(res, "fro"))


def solve_dare(A, B, Q, R, tol: float = 1e-10, max_iter: int = 10_000) -> AncillaryGain:
    """Solve the DARE by value iteration ``P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA``.

    Scalars and 1-D ``B`` are promoted to matrices. Raises :class:`RiccatiError`
    when the iteration does not settle, which happens for unstabilizable pairs.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = Q.copy()
    for it in range(1, max_iter + 1):
        BtPA = B.T @ P @ A
        P_next = Q + A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA)
        P_next = 0.5 * (P_next + P_next.T)
        delta = np.linalg.norm(P_next - P, "fro")
        P = P_next
        if not np.all(np.isfinite(P)) or np.linalg.norm(P) > 1e14:
            raise RiccatiError(f"DARE did not converge: iterate diverged after {it} steps")
        if delta < tol:
            break
    else:
        raise RiccatiError(f"DARE did not converge within {max_iter} iterations")
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    rho = float(np.max(np.abs(np.linalg.eigvals(A + B @ K))))
    if rho >= 1.0:
        raise RiccatiError(f"DARE did not converge to a stabilizing solution (rho={rho:.6f})")
    return AncillaryGain(K=K.ravel() if K.shape[0] == 1 else K, P=P, spectral_radius=rho,
                         residual=riccati_residual(A, B, Q, R, P), iterations=it)


def origin_gain(params: ModelParams = NOMINAL_PARAMS, dt: float = DEFAULT_DT,
                q_diag=DEFAULT_Q_LQR, r: float = DEFAULT_R_LQR,
                substeps: int = DEFAULT_SUBSTEPS) -> AncillaryGain:
    """Ancillary gain from the model linearized at the upright origin."""
    lin = linearize(np.zeros(4), 0.0, params, dt, substeps=substeps)
    return solve_dare(lin.A, lin.B, np.diag(np.asarray(q_diag, dtype=float)), np.array([[r]]))


def ancillary_input(gain, actual, nominal) -> float:
    K = gain.K if isinstance(gain, AncillaryGain) else np.asarray(gain, dtype=float)
    return float(K @ (np.asarray(actual, dtype=float) - np.asarray(nominal, dtype=float)))
