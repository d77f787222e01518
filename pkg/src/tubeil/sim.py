"""Closed-loop episodes for every controller variant.

The proposed controller evaluates the network on a shadow state propagated by
the disturbance-free nominal model, adds the LQR correction on ``x - x_bar``
and optionally passes the result through the parameter governor. The plant
integrates the true parameters with the commanded force plus a uniform input
disturbance that is redrawn on every integration sub-interval.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import io
from .dynamics import (
    DEFAULT_DT,
    DEFAULT_SUBSTEPS,
    NOMINAL_PARAMS,
    STATE_DIM,
    STATE_NAMES,
    ModelParams,
    discrete_step,
    friction_constraint,
    friction_ratio,
    plant_step,
)
from .governor import GovernorSingular, refine
from .lqr import AncillaryGain
from .mlp import MlpWeights, forward
from .mpc import MpcConfig, MpcSolver

log = logging.getLogger(__name__)

VARIANTS = ("proposed", "proposed+governor", "dr-conventional", "dr-tube", "no-dr",
            "rtmpc-reference", "mpc-nominal")
SHADOW_VARIANTS = ("proposed", "proposed+governor", "rtmpc-reference")
STATE_POLICY_VARIANTS = ("dr-conventional", "dr-tube", "no-dr")
MPC_VARIANTS = ("rtmpc-reference", "mpc-nominal")
EVAL_STREAM = (0,)
GOV_OFF, GOV_CLOSED_FORM, GOV_FIXED_POINT, GOV_FALLBACK = 0, 1, 2, 3
_GOV_CODES = {"affine-closed-form": GOV_CLOSED_FORM, "fixed-point": GOV_FIXED_POINT}
REGULATION_POS = 0.1
REGULATION_ANGLE = 0.05
SETTLE_FROM = 50


@dataclass(frozen=True)
class SimConfig:
    variant: str = "proposed"
    steps: int = 100
    disturbance_bound: float = 5.0
    plant: ModelParams = NOMINAL_PARAMS
    nominal: ModelParams = NOMINAL_PARAMS
    seed: int = 0
    dt: float = DEFAULT_DT
    substeps: int = DEFAULT_SUBSTEPS
    x0: tuple = (3.0, 0.0, 0.0, 0.0)
    governor: bool = False
    divergence_threshold: float = 1e3
    stream: tuple = EVAL_STREAM

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.disturbance_bound < 0:
            raise ValueError("disturbance bound must be >= 0")
        if self.substeps < 1 or self.dt <= 0:
            raise ValueError("dt must be positive and substeps >= 1")
        if len(self.x0) != STATE_DIM:
            raise ValueError("x0 must have four entries")

    @property
    def governor_on(self) -> bool:
        return self.governor or self.variant == "proposed+governor"

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(plant=self.plant.to_dict(), nominal=self.nominal.to_dict(), x0=list(self.x0),
                 stream=list(self.stream))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        for k in ("plant", "nominal"):
            if k in d:
                d[k] = ModelParams.from_dict(d[k])
        for k in ("x0", "stream"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng([*self.stream, self.seed])


class MpcOracle:
    """Online MPC evaluated along a chain of states, memoised by state bytes.

    Each solve is warm-started from the solution at the previous state of the
    same chain, so a cached lookup returns exactly what a fresh solve of the
    same chain would produce.
    """

    def __init__(self, cfg: MpcConfig):
        self.cfg = cfg
        self.solver = MpcSolver(cfg)
        self._cache = {}
        self.unconverged = 0

    def __call__(self, x, warm=None):
        key = (np.asarray(x, dtype=float).tobytes(), None if warm is None else id(warm))
        hit = self._cache.get(key)
        if hit is None:
            hit = self.solver.solve(x, warm)
            if not hit.converged:
                self.unconverged += 1
                log.warning("reference MPC did not converge at x=%s", np.asarray(x))
            self._cache[key] = hit
        return hit.first_input, hit

    def __getstate__(self):
        return {"cfg": self.cfg}

    def __setstate__(self, state):
        self.__init__(state["cfg"])


@dataclass
class EpisodeRecord:
    """Per-step channels of one episode; rows ``k = 0..n-1`` plus the final state."""

    config: SimConfig
    actual: np.ndarray            # (n+1, 4)
    nominal: np.ndarray           # (n+1, 4), NaN for variants without a shadow
    u_dnn: np.ndarray             # network output (NaN for MPC variants)
    u_anc: np.ndarray             # ancillary correction K (x - x_bar)
    u_ctrl: np.ndarray            # combined input before the governor
    u_gov: np.ndarray             # governor output, NaN when the governor is off
    gov_code: np.ndarray          # GOV_* code per step
    u_cmd: np.ndarray             # force commanded to the actuator
    disturbance: np.ndarray       # (n, substeps)
    applied: np.ndarray           # (n, substeps) plant force, u_cmd + d
    u_nominal: np.ndarray         # input driving the shadow (NaN without shadow)
    u_policy: np.ndarray          # channel compared against the reference
    u_ref: np.ndarray             # reference-controller input, NaN if not evaluated
    diverged_at: Optional[int] = None
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.u_cmd)

    @property
    def g_actual(self) -> np.ndarray:
        return np.asarray(friction_constraint(self.actual[:self.n_steps], self.u_cmd, self.config.plant))

    @property
    def g_nominal(self) -> np.ndarray:
        return np.asarray(friction_constraint(self.nominal[:self.n_steps], self.u_nominal, self.config.nominal))

    @property
    def friction_ratio(self) -> np.ndarray:
        return np.asarray(friction_ratio(self.actual[:self.n_steps], self.u_cmd, self.config.plant))

    def constraint_violations(self) -> int:
        """Steps breaking ``|F / (mu F_z)| <= 1``; governor fallbacks count as violations."""
        bad = (np.abs(self.friction_ratio) > 1.0) | (self.gov_code == GOV_FALLBACK)
        return int(np.count_nonzero(bad))

    def regulated(self) -> bool:
        if self.diverged_at is not None:
            return False
        x = self.actual[-1]
        return bool(abs(x[0]) < REGULATION_POS and abs(x[2]) < REGULATION_ANGLE)

    def columns(self) -> tuple:
        s = self.config.substeps
        return (("k",) + STATE_NAMES + tuple(f"xbar_{n}" for n in STATE_NAMES)
                + ("u_dnn", "u_anc", "u_ctrl", "u_gov", "gov_code", "u_cmd")
                + tuple(f"d_{j}" for j in range(s)) + tuple(f"f_{j}" for j in range(s))
                + ("u_nominal", "u_policy", "u_ref", "g_actual", "g_nominal"))

    def to_csv(self, path, meta: Optional[dict] = None) -> None:
        n = self.n_steps
        s = self.config.substeps
        g_a, g_n = self.g_actual, self.g_nominal
        rows = []
        for k in range(n + 1):
            head = [k, *self.actual[k], *self.nominal[k]]
            if k < n:
                tail = [self.u_dnn[k], self.u_anc[k], self.u_ctrl[k], self.u_gov[k], int(self.gov_code[k]),
                        self.u_cmd[k], *self.disturbance[k], *self.applied[k], self.u_nominal[k],
                        self.u_policy[k], self.u_ref[k], g_a[k], g_n[k]]
            else:
                tail = [np.nan] * 4 + [GOV_OFF] + [np.nan] * (1 + 2 * s + 5)
            rows.append(head + tail)
        io.write_csv(path, self.columns(), rows)
        side = {"kind": "episode", "config": self.config.to_dict(), "diverged_at": self.diverged_at,
                **self.meta, **(meta or {})}
        io.write_json(io.sidecar_path(path), side)

    @classmethod
    def from_csv(cls, path) -> "EpisodeRecord":
        side = io.read_json(io.sidecar_path(path))
        cfg = SimConfig.from_dict(side["config"])
        c = io.read_csv_columns(path)
        n = len(c["k"]) - 1
        cut = slice(0, n)
        s = cfg.substeps
        meta = {k: v for k, v in side.items() if k not in ("kind", "config", "diverged_at")}
        return cls(
            config=cfg,
            actual=np.column_stack([c[k] for k in STATE_NAMES]),
            nominal=np.column_stack([c[f"xbar_{k}"] for k in STATE_NAMES]),
            u_dnn=c["u_dnn"][cut], u_anc=c["u_anc"][cut], u_ctrl=c["u_ctrl"][cut], u_gov=c["u_gov"][cut],
            gov_code=c["gov_code"][cut].astype(int), u_cmd=c["u_cmd"][cut],
            disturbance=np.column_stack([c[f"d_{j}"][cut] for j in range(s)]).reshape(n, s),
            applied=np.column_stack([c[f"f_{j}"][cut] for j in range(s)]).reshape(n, s),
            u_nominal=c["u_nominal"][cut], u_policy=c["u_policy"][cut], u_ref=c["u_ref"][cut],
            diverged_at=side.get("diverged_at"), meta=meta,
        )


def _demo_reference(demo, gain, k, x):
    """Tube-controller input at ``x`` when its nominal follows the demonstration."""
    if k >= len(demo.inputs):
        return np.nan
    return float(demo.inputs[k] + gain.K @ (x - demo.states[k]))


def run_episode(cfg: SimConfig, weights: Optional[MlpWeights], gain: AncillaryGain,
                governor_enabled: Optional[bool] = None, reference=None) -> EpisodeRecord:
    """Simulate one episode.

    ``reference`` supplies the original controller for the RMSE channel. For
    shadow variants pass an :class:`MpcOracle` (it also drives the MPC
    variants and is then required). For state-feedback networks pass the
    demonstration trajectory, which is the nominal path of the tube
    controller started at the same state.
    """
    if governor_enabled is not None and governor_enabled != cfg.governor_on:
        cfg = replace(cfg, governor=governor_enabled)
    variant = cfg.variant
    base = variant.replace("+governor", "")
    if variant in MPC_VARIANTS and not isinstance(reference, MpcOracle):
        raise ValueError(f"variant {variant} needs an MpcOracle reference")
    if variant not in MPC_VARIANTS and weights is None:
        raise ValueError(f"variant {variant} needs network weights")
    M, Mb = cfg.plant, cfg.nominal
    n, s = cfg.steps, cfg.substeps
    K = np.asarray(gain.K, dtype=float)
    rng = cfg.rng()
    use_shadow = variant in SHADOW_VARIANTS
    nan = np.full(n, np.nan)
    ch = {name: nan.copy() for name in ("u_dnn", "u_anc", "u_ctrl", "u_gov", "u_cmd", "u_nominal",
                                         "u_policy", "u_ref")}
    gov_code = np.zeros(n, int)
    dist = np.zeros((n, s))
    applied = np.zeros((n, s))
    actual = np.full((n + 1, STATE_DIM), np.nan)
    nominal = np.full((n + 1, STATE_DIM), np.nan)
    x = np.asarray(cfg.x0, dtype=float).copy()
    xb = x.copy()
    actual[0] = x
    if use_shadow:
        nominal[0] = xb
    warm_shadow = warm_actual = None
    diverged = None
    for k in range(n):
        if use_shadow:
            if base == "proposed":
                ub = float(forward(weights, xb))
                ch["u_dnn"][k] = ub
                if isinstance(reference, MpcOracle):
                    ch["u_ref"][k], warm_shadow = reference(xb, warm_shadow)
                ch["u_policy"][k] = ub
            else:
                ub, warm_shadow = reference(xb, warm_shadow)
                ch["u_ref"][k] = ub
            anc = float(K @ (x - xb))
            u = ub + anc
            ch["u_anc"][k] = anc
            ch["u_nominal"][k] = ub
            if variant == "rtmpc-reference":
                ch["u_policy"][k] = ch["u_ref"][k] = u
        elif variant == "mpc-nominal":
            u, warm_actual = reference(x, warm_actual)
            ch["u_policy"][k] = ch["u_ref"][k] = u
        else:
            u = float(forward(weights, x))
            ch["u_dnn"][k] = ch["u_policy"][k] = u
            if reference is not None:
                ch["u_ref"][k] = _demo_reference(reference, gain, k, x)
        ch["u_ctrl"][k] = u
        if cfg.governor_on and use_shadow:
            try:
                res = refine(u, x, xb, M, Mb)
                ch["u_gov"][k] = res.u
                gov_code[k] = _GOV_CODES[res.method]
                u = res.u
            except GovernorSingular:
                gov_code[k] = GOV_FALLBACK
                log.warning("governor singular at step %d (seed %d); using the unrefined input", k, cfg.seed)
        ch["u_cmd"][k] = u
        d = rng.uniform(-cfg.disturbance_bound, cfg.disturbance_bound, s)
        f = u + d
        dist[k] = d
        applied[k] = f
        x = plant_step(x, f, M, cfg.dt)
        if use_shadow:
            xb = discrete_step(xb, ub, Mb, cfg.dt, s)
            nominal[k + 1] = xb
        actual[k + 1] = x
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > cfg.divergence_threshold:
            diverged = k + 1
            log.info("episode %s seed %d diverged at step %d", variant, cfg.seed, diverged)
            break
    m = n if diverged is None else diverged
    return EpisodeRecord(
        config=cfg, actual=actual[:m + 1], nominal=nominal[:m + 1],
        **{name: v[:m] for name, v in ch.items()},
        gov_code=gov_code[:m], disturbance=dist[:m], applied=applied[:m], diverged_at=diverged,
    )


def episode_summary(rec: EpisodeRecord) -> dict:
    """Scalar metrics of one episode (NaN where a channel is unavailable)."""
    from .metrics import max_abs_gap, realized_disturbance, rmse_or_nan

    a = rec.actual
    late = a[SETTLE_FROM:, 0] if len(a) > SETTLE_FROM else a[-1:, 0]
    g_gap = max_abs_gap(rec)
    w = realized_disturbance(rec)
    du = np.abs(np.diff(rec.u_cmd)) if rec.n_steps > 1 else np.zeros(1)
    dp = np.abs(np.diff(rec.u_policy)) if rec.n_steps > 1 else np.zeros(1)
    return {
        "seed": rec.config.seed,
        "diverged": rec.diverged_at is not None,
        "regulated": rec.regulated(),
        "final_abs_x_pos": float(abs(a[-1, 0])),
        "final_abs_theta": float(abs(a[-1, 2])),
        "late_mean_abs_x_pos": float(np.mean(np.abs(late))),
        "rmse": rmse_or_nan(rec),
        "max_abs_e_g": g_gap,
        "max_friction_ratio": float(np.max(np.abs(rec.friction_ratio))) if rec.n_steps else 0.0,
        "violations": rec.constraint_violations(),
        "governor_fallbacks": int(np.count_nonzero(rec.gov_code == GOV_FALLBACK)),
        "w_env_x_vel": float(np.max(np.abs(w[:, 1]))) if len(w) else 0.0,
        "mean_abs_du_cmd": float(np.mean(du)),
        "mean_abs_du_policy": float(np.mean(dp)),
    }


def summarize(summaries: list) -> dict:
    """Mean/min/max envelopes of each numeric metric plus counts."""
    out = {"episodes": len(summaries),
           "diverged": int(sum(s["diverged"] for s in summaries)),
           "regulated": int(sum(s["regulated"] for s in summaries)),
           "metrics": {}}
    keys = [k for k in summaries[0] if k not in ("seed", "diverged", "regulated")] if summaries else []
    for key in keys:
        vals = np.array([s[key] for s in summaries], dtype=float)
        ok = vals[np.isfinite(vals)]
        out["metrics"][key] = ({"mean": float(ok.mean()), "min": float(ok.min()), "max": float(ok.max())}
                               if len(ok) else {"mean": None, "min": None, "max": None})
    return out


def _run_one(args):
    cfg, weights, gain, reference = args
    return run_episode(cfg, weights, gain, reference=reference)


def run_batch(cfg: SimConfig, weights, gain, n_episodes: int, seed_base: int = 0, reference=None,
              jobs: int = 1):
    """Episodes with seeds ``seed_base .. seed_base + n - 1`` and their summary.

    Results come back in seed order whatever the worker count.
    """
    cfgs = [replace(cfg, seed=seed_base + i) for i in range(n_episodes)]
    if jobs > 1 and n_episodes > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_one, [(c, weights, gain, reference) for c in cfgs]))
    else:
        records = [run_episode(c, weights, gain, reference=reference) for c in cfgs]
    return records, summarize([episode_summary(r) for r in records])
