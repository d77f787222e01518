"""Demonstration collection in the nominal domain and the DR baseline datasets.

The nominal domain propagates the disturbance-free model with nominal
parameters, so the single MPC demonstration from ``x0`` is deterministic.
Domain-randomization datasets perturb the demonstration states inside a box
tube and label each perturbed state with the tube controller's output
``u_MPC(x_bar) + K e``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import io
from .dynamics import STATE_DIM, STATE_NAMES, NumericalError, discrete_step
from .lqr import AncillaryGain
from .mlp import MlpWeights, TrainConfig, normalized_mse, train
from .mpc import MpcConfig, MpcSolver

log = logging.getLogger(__name__)

DEMO_X0 = (3.0, 0.0, 0.0, 0.0)
DEMO_STEPS = 100
TUBE_INFLATION = 1.1
TUBE_STREAM = 1  # random stream id, disjoint from evaluation episodes
PROVENANCES = ("nominal", "dr-conventional", "dr-tube")
DR_MODES = ("conventional", "tube")

TRAJ_COLUMNS = ("k",) + STATE_NAMES + ("u", "converged", "iterations", "cost", "max_violation")
DATASET_COLUMNS = ("k",) + STATE_NAMES + ("u", "converged", "traj")


class DemoAborted(NumericalError):
    """MPC failed during collection; ``partial`` holds the steps done so far."""

    def __init__(self, step: int, partial: "Trajectory"):
        super().__init__(f"MPC did not converge at step {step} of the demonstration")
        self.step = step
        self.partial = partial


@dataclass
class Trajectory:
    """States ``(L+1, 4)`` and inputs ``(L,)`` with per-step solver diagnostics."""

    states: np.ndarray
    inputs: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    costs: np.ndarray
    violations: np.ndarray
    domain: str = "nominal"
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(-1, STATE_DIM)
        self.inputs = np.asarray(self.inputs, dtype=float).ravel()
        if len(self.states) != len(self.inputs) + 1:
            raise ValueError("a trajectory holds one more state than inputs")
        if self.domain not in ("nominal", "target"):
            raise ValueError(f"unknown domain {self.domain!r}")

    def __len__(self):
        return len(self.inputs)

    def consistency_error(self, mpc_cfg: MpcConfig) -> float:
        """Largest gap between recorded successors and the nominal model."""
        if len(self) == 0:
            return 0.0
        pred = discrete_step(self.states[:-1], self.inputs, mpc_cfg.params, mpc_cfg.dt, mpc_cfg.substeps)
        return float(np.max(np.abs(pred - self.states[1:])))

    def to_csv(self, path, meta: Optional[dict] = None) -> None:
        """One row per step; the state after the last input goes to the sidecar."""
        rows = [[k, *self.states[k], self.inputs[k], int(self.converged[k]), int(self.iterations[k]),
                 self.costs[k], self.violations[k]] for k in range(len(self))]
        io.write_csv(path, TRAJ_COLUMNS, rows)
        side = {"kind": "trajectory", "domain": self.domain, "seed": self.seed, **self.meta, **(meta or {}),
                "final_state": self.states[-1].tolist()}
        io.write_json(io.sidecar_path(path), side)

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        cols = io.read_csv_columns(path)
        side = io.read_json(io.sidecar_path(path))
        states = np.vstack([np.column_stack([cols[n] for n in STATE_NAMES]), side["final_state"]])
        meta = {k: v for k, v in side.items() if k not in ("kind", "domain", "seed", "final_state")}
        return cls(states, cols["u"], cols["converged"].astype(bool), cols["iterations"].astype(int),
                   cols["cost"], cols["max_violation"], domain=side.get("domain", "nominal"),
                   seed=int(side.get("seed", 0)), meta=meta)


def collect_nominal_demo(x0=DEMO_X0, steps: int = DEMO_STEPS, cfg: MpcConfig = MpcConfig(),
                         solver: Optional[MpcSolver] = None) -> Trajectory:
    """Roll the nominal model forward under receding-horizon MPC.

    Each solve is warm-started from the previous one. Raises
    :class:`DemoAborted` at the first non-converged solve.
    """
    solver = solver or MpcSolver(cfg)
    cfg = solver.cfg
    states = [np.asarray(x0, dtype=float).copy()]
    inputs, conv, iters, costs, viols = [], [], [], [], []
    sol = None

    def partial():
        return Trajectory(np.array(states), np.array(inputs), np.array(conv, bool),
                          np.array(iters, int), np.array(costs), np.array(viols))

    for k in range(steps):
        sol = solver.solve(states[-1], sol)
        if not sol.converged:
            raise DemoAborted(k, partial())
        inputs.append(sol.first_input)
        conv.append(True)
        iters.append(sol.iterations)
        costs.append(sol.cost)
        viols.append(sol.max_constraint_violation)
        states.append(discrete_step(states[-1], sol.first_input, cfg.params, cfg.dt, cfg.substeps))
    traj = partial()
    traj.meta = {"mpc": cfg.to_dict()}
    return traj


@dataclass
class Dataset:
    states: np.ndarray
    labels: np.ndarray
    provenance: str
    n_trajectories: int
    steps: np.ndarray = None
    traj_index: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(-1, STATE_DIM)
        self.labels = np.asarray(self.labels, dtype=float).ravel()
        if len(self.states) == 0 or len(self.states) != len(self.labels):
            raise ValueError("dataset must be non-empty with one label per state")
        if not np.all(np.isfinite(self.labels)):
            raise ValueError("dataset labels must be finite")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        n = len(self.labels)
        self.steps = np.zeros(n, int) if self.steps is None else np.asarray(self.steps, int)
        self.traj_index = np.zeros(n, int) if self.traj_index is None else np.asarray(self.traj_index, int)

    def __len__(self):
        return len(self.labels)

    def to_csv(self, path, meta: Optional[dict] = None) -> None:
        rows = [[k, *x, u, 1, j] for k, x, u, j in zip(self.steps, self.states, self.labels, self.traj_index)]
        io.write_csv(path, DATASET_COLUMNS, rows)
        side = {"kind": "dataset", "provenance": self.provenance, "n_trajectories": self.n_trajectories,
                "n_samples": len(self), **self.meta, **(meta or {})}
        io.write_json(io.sidecar_path(path), side)

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        cols = io.read_csv_columns(path)
        side = io.read_json(io.sidecar_path(path))
        states = np.column_stack([cols[n] for n in STATE_NAMES])
        meta = {k: v for k, v in side.items() if k not in ("kind", "provenance", "n_trajectories", "n_samples")}
        return cls(states, cols["u"], side["provenance"], int(side["n_trajectories"]),
                   cols["k"].astype(int), cols["traj"].astype(int), meta)


def nominal_dataset(traj: Trajectory) -> Dataset:
    """State/label pairs taken straight off the demonstration."""
    n = len(traj)
    return Dataset(traj.states[:n].copy(), traj.inputs.copy(), "nominal", 1, np.arange(n), np.zeros(n, int))


def tube_sites(radius) -> np.ndarray:
    """The 16 vertices and 8 face centers of the box ``|e_i| <= radius_i``."""
    radius = np.asarray(radius, dtype=float)
    verts = np.array(list(itertools.product((-1.0, 1.0), repeat=STATE_DIM)))
    faces = np.vstack([np.eye(STATE_DIM), -np.eye(STATE_DIM)])
    return np.vstack([verts, faces]) * radius


def make_dr_dataset(traj: Trajectory, gain: AncillaryGain, n_trajectories: int, mode: str,
                    radius, seed: int = 0) -> Dataset:
    """Perturbed copies of the demonstration labelled by the tube controller.

    ``conventional`` draws offsets uniformly in the box. ``tube`` cycles the
    sparse site set deterministically, so site ``(j * L + k) mod 24`` is used
    for step ``k`` of copy ``j``.
    """
    if mode not in DR_MODES:
        raise ValueError(f"mode must be one of {DR_MODES}, got {mode!r}")
    if n_trajectories < 1:
        raise ValueError("n_trajectories must be >= 1")
    radius = np.asarray(radius, dtype=float)
    if radius.shape != (STATE_DIM,) or np.any(radius < 0):
        raise ValueError("radius must be four non-negative half-widths")
    L = len(traj)
    K = np.asarray(gain.K, dtype=float)
    rng = np.random.default_rng(seed)
    sites = tube_sites(radius)
    offsets = np.empty((n_trajectories * L, STATE_DIM))
    for j in range(n_trajectories):
        for k in range(L):
            i = j * L + k
            offsets[i] = rng.uniform(-radius, radius) if mode == "conventional" else sites[i % len(sites)]
    base = np.tile(traj.states[:L], (n_trajectories, 1))
    labels = np.tile(traj.inputs, n_trajectories) + offsets @ K
    steps = np.tile(np.arange(L), n_trajectories)
    traj_index = np.repeat(np.arange(n_trajectories), L)
    return Dataset(base + offsets, labels, f"dr-{mode}", n_trajectories, steps, traj_index,
                   {"radius": radius.tolist(), "seed": seed, "mode": mode})


def estimate_tube(weights: MlpWeights, gain: AncillaryGain, n_rollouts: int, disturbance_bound: float,
                  seed: int = 0, x0=DEMO_X0, **sim_kwargs) -> np.ndarray:
    """Box half-widths enclosing ``x - x_bar`` over closed-loop rollouts, inflated by 10%.

    Rollouts run the proposed controller on the nominal-parameter plant under
    the given disturbance bound. Rollout ``i`` draws from its own stream
    keyed on ``(seed, i)``, so envelopes from different rollout counts nest.
    """
    from .sim import SimConfig, run_episode

    env = np.zeros(STATE_DIM)
    for i in range(n_rollouts):
        cfg = SimConfig(variant="proposed", disturbance_bound=disturbance_bound, x0=tuple(x0),
                        seed=i, stream=(TUBE_STREAM, seed), **sim_kwargs)
        rec = run_episode(cfg, weights, gain)
        if rec.diverged_at is not None:
            raise NumericalError(f"tube rollout {i} diverged at step {rec.diverged_at}")
        env = np.maximum(env, np.max(np.abs(rec.actual - rec.nominal), axis=0))
    return TUBE_INFLATION * env


def train_all(datasets: dict, cfg: TrainConfig = TrainConfig()) -> dict:
    """Train one network per dataset; keys are kept.

    The nominal dataset yields the nominal-input network, DR datasets yield
    actual-state networks. Each weight object carries its dataset provenance.
    """
    out = {}
    for name, ds in datasets.items():
        w, _ = train(ds.states, ds.labels, cfg)
        w.meta.update({"provenance": ds.provenance, "n_trajectories": ds.n_trajectories,
                       "normalized_mse": normalized_mse(w, ds.states, ds.labels)})
        out[name] = w
    return out
