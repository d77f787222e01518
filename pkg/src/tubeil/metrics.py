"""Evaluation quantities computed from episode records.

Everything here is a pure function of :class:`~tubeil.sim.EpisodeRecord`
data, so reports can be rebuilt from the persisted episode CSVs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dynamics import discrete_step


class MissingReference(ValueError):
    pass


def rmse_vs_original(rec) -> float:
    """Root-mean-square gap between the policy channel and the reference controller."""
    p, r = np.asarray(rec.u_policy, float), np.asarray(rec.u_ref, float)
    if len(r) == 0 or not np.all(np.isfinite(r)) or not np.all(np.isfinite(p)):
        raise MissingReference("record lacks reference-controller inputs at some step")
    return float(np.sqrt(np.mean((p - r) ** 2)))


def rmse_or_nan(rec) -> float:
    try:
        return rmse_vs_original(rec)
    except MissingReference:
        return float("nan")


def zero_policy_rmse(reference_inputs) -> float:
    """RMSE of the zero network against a reference input sequence."""
    u = np.asarray(reference_inputs, dtype=float)
    return float(np.sqrt(np.mean(u ** 2)))


def constraint_gap(rec) -> np.ndarray:
    """Per-step ``g(x, u_cmd, M) - g(x_bar, u_bar, M_bar)``; NaN without a shadow."""
    return rec.g_actual - rec.g_nominal


def max_abs_gap(rec) -> float:
    gap = constraint_gap(rec)
    if len(gap) == 0 or not np.all(np.isfinite(gap)):
        return float("nan")
    return float(np.max(np.abs(gap)))


def realized_disturbance(rec) -> np.ndarray:
    """``w(k) = x(k+1) - f(x(k), u(k), M_bar)`` with ``u`` the unrefined combined input."""
    cfg = rec.config
    n = rec.n_steps
    if n == 0:
        return np.zeros((0, 4))
    pred = discrete_step(rec.actual[:n], rec.u_ctrl, cfg.nominal, cfg.dt, cfg.substeps)
    return rec.actual[1:n + 1] - pred


@dataclass
class RmseReport:
    variant: str
    n_trajectories: int
    per_episode: list
    mean: float
    min: float
    max: float

    def row(self) -> list:
        return [self.variant, self.n_trajectories, len(self.per_episode), self.mean, self.min, self.max]


RMSE_COLUMNS = ("variant", "n_trajectories", "episodes", "rmse_mean", "rmse_min", "rmse_max")


def rmse_report(records, variant: str, n_trajectories: int) -> RmseReport:
    vals = [rmse_vs_original(r) for r in records if r.diverged_at is None]
    if not vals:
        raise MissingReference(f"no complete episodes for {variant}")
    # a diverged episode has no full-length reference comparison; it is reported as inf
    vals += [float("inf")] * sum(r.diverged_at is not None for r in records)
    a = np.asarray(vals)
    return RmseReport(variant, n_trajectories, a.tolist(), float(a.mean()), float(a.min()), float(a.max()))


@dataclass
class TighteningReport:
    seeds: list
    max_gap_plain: list
    max_gap_governed: list
    gamma_plain: float
    gamma_governed: float
    pairs_reduced: int

    def to_dict(self) -> dict:
        return asdict(self)


def _paired(plain, governed):
    a = {r.config.seed: r for r in plain}
    b = {r.config.seed: r for r in governed}
    seeds = sorted(set(a) & set(b))
    if not seeds:
        raise ValueError("no paired seeds between the two record sets")
    return seeds, a, b


def required_gamma(plain, governed) -> TighteningReport:
    """Implied tightening with and without the governor over paired seeds."""
    seeds, a, b = _paired(plain, governed)
    gp = [max_abs_gap(a[s]) for s in seeds]
    gg = [max_abs_gap(b[s]) for s in seeds]
    reduced = sum(y < x for x, y in zip(gp, gg))
    return TighteningReport(seeds, gp, gg, float(np.max(gp)), float(np.max(gg)), int(reduced))


@dataclass
class EnvelopeReport:
    component: int
    seeds: list
    plain: list
    governed: list
    pairs_not_larger: int

    def to_dict(self) -> dict:
        return asdict(self)


def disturbance_envelope(plain, governed, component: int = 1) -> EnvelopeReport:
    """Per-seed max-abs realized disturbance on one state component."""
    seeds, a, b = _paired(plain, governed)

    def env(rec):
        w = realized_disturbance(rec)
        return float(np.max(np.abs(w[:, component]))) if len(w) else 0.0

    ep = [env(a[s]) for s in seeds]
    eg = [env(b[s]) for s in seeds]
    ok = sum(y <= x for x, y in zip(ep, eg))
    return EnvelopeReport(component, seeds, ep, eg, int(ok))


def load_records(directory) -> list:
    """All episode records in ``directory``, sorted by seed."""
    from .sim import EpisodeRecord

    paths = sorted(Path(directory).glob("episode_*.csv"))
    recs = [EpisodeRecord.from_csv(p) for p in paths]
    return sorted(recs, key=lambda r: r.config.seed)
