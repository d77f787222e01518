"""File-based workflow steps shared by the command line and the test suite.

Artifact layout under the root directory::

    demo/nominal.csv            demonstration (+ .json sidecar)
    gain.json                   ancillary LQR gain
    tube.json                   box tube used by the DR datasets
    datasets/<name>.csv         training sets (+ sidecars)
    weights/<name>.json         trained networks
    runs/<tag>/episode_NNNN.csv episode records, summary.json per run
    reports/                    evaluation tables, JSON summaries and figures
    sweep/                      RMSE-versus-data table, checkpoint and figure
"""

from __future__ import annotations

import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io, plotting
from .config import RunConfig
from .demo import (
    Dataset,
    Trajectory,
    collect_nominal_demo,
    estimate_tube,
    make_dr_dataset,
    nominal_dataset,
    train_all,
)
from .lqr import AncillaryGain, origin_gain
from .metrics import (
    RMSE_COLUMNS,
    disturbance_envelope,
    load_records,
    required_gamma,
    rmse_report,
)
from .mlp import MlpWeights, TrainConfig
from .sim import MPC_VARIANTS, SHADOW_VARIANTS, VARIANTS, MpcOracle, run_batch

log = logging.getLogger(__name__)

TRAIN_VARIANTS = ("proposed", "dr-conventional", "dr-tube")
SWEEP_VARIANTS = ("proposed", "dr-tube", "dr-conventional")
GAMMA_RUNS = ("proposed-changed", "proposed-gov-changed")


class MissingArtifact(FileNotFoundError):
    pass


class Artifacts:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.root = Path(cfg.root)

    def path(self, *parts) -> Path:
        return self.root.joinpath(*parts)

    @property
    def demo(self) -> Path:
        return self.path("demo", "nominal.csv")

    @property
    def gain(self) -> Path:
        return self.path("gain.json")

    @property
    def tube(self) -> Path:
        return self.path("tube.json")

    def dataset(self, name: str) -> Path:
        return self.path("datasets", f"{name}.csv")

    def weights(self, name: str) -> Path:
        return self.path("weights", f"{name}.json")

    def run_dir(self, tag: str) -> Path:
        return self.path("runs", tag)

    def require(self, p: Path, hint: str) -> Path:
        if not p.exists():
            raise MissingArtifact(f"{p} not found; run `{hint}` first")
        return p

    def load_demo(self) -> Trajectory:
        return Trajectory.from_csv(self.require(self.demo, "tubeil demo"))

    def load_gain(self) -> AncillaryGain:
        return AncillaryGain.from_dict(io.read_json(self.require(self.gain, "tubeil demo")))

    def load_weights(self, name: str) -> MlpWeights:
        return MlpWeights.load(self.require(self.weights(name), f"tubeil train --variant {name}"))


def _train_cfg(cfg: RunConfig) -> TrainConfig:
    t = cfg.train
    return replace(t, seed=t.seed + cfg.seed)


def run_tag(variant: str, governor: bool = False, changed_plant: bool = False) -> str:
    base = variant.replace("+governor", "")
    gov = governor or variant.endswith("+governor")
    return base + ("-gov" if gov else "") + ("-changed" if changed_plant else "")


# ---------------------------------------------------------------------------
# steps

def step_demo(cfg: RunConfig) -> dict:
    """Collect the demonstration, derive the ancillary gain, write the nominal dataset."""
    art = Artifacts(cfg)
    prov = cfg.provenance()
    traj = collect_nominal_demo(cfg.x0, cfg.demo_steps, cfg.mpc)
    traj.seed = cfg.seed
    traj.to_csv(art.demo, prov)
    q, r = cfg.lqr
    gain = origin_gain(cfg.nominal_params, cfg.dt, q, r, cfg.substeps)
    io.write_json(art.gain, {**gain.to_dict(), **prov, "q_diag": list(q), "r": r})
    nominal_dataset(traj).to_csv(art.dataset("nominal"), prov)
    return {"final_state": traj.states[-1].tolist(), "K": gain.K.tolist(),
            "max_iterations": int(traj.iterations.max())}


def _dr_name(mode: str, n: int) -> str:
    return f"dr-{mode}-n{n}"


def ensure_tube(cfg: RunConfig) -> np.ndarray:
    art = Artifacts(cfg)
    if art.tube.exists():
        side = io.read_json(art.tube)
        if side.get("config_hash") == cfg.hash:
            return np.asarray(side["radius"], dtype=float)
    w = art.load_weights("proposed")
    radius = estimate_tube(w, art.load_gain(), cfg.dr["tube_rollouts"], cfg.sim().disturbance_bound,
                           seed=cfg.seed, x0=cfg.x0, steps=cfg.sim().steps, dt=cfg.dt, substeps=cfg.substeps,
                           nominal=cfg.nominal_params, plant=cfg.nominal_params)
    io.write_json(art.tube, {"radius": radius.tolist(), "rollouts": cfg.dr["tube_rollouts"],
                             **cfg.provenance()})
    return radius


def train_dr(cfg: RunConfig, mode: str, n: int, name: str | None = None) -> MlpWeights:
    """Build the DR dataset with ``n`` copies and train on it (reuses a matching weight file)."""
    art = Artifacts(cfg)
    name = name or _dr_name(mode, n)
    wpath = art.weights(name)
    if wpath.exists():
        w = MlpWeights.load(wpath)
        if w.meta.get("config_hash") == cfg.hash:
            return w
    radius = ensure_tube(cfg)
    ds = make_dr_dataset(art.load_demo(), art.load_gain(), n, mode, radius,
                         seed=int(cfg.dr["dataset_seed"]) + cfg.seed)
    ds.to_csv(art.dataset(_dr_name(mode, n)), cfg.provenance())
    w = train_all({name: ds}, _train_cfg(cfg))[name]
    w.meta.update(cfg.provenance())
    w.save(wpath)
    return w


def step_train(cfg: RunConfig, variant: str = "all") -> dict:
    if variant not in TRAIN_VARIANTS + ("all",):
        raise ValueError(f"unknown training variant {variant!r}")
    art = Artifacts(cfg)
    out = {}
    if variant in ("proposed", "all"):
        ds = Dataset.from_csv(art.require(art.dataset("nominal"), "tubeil demo"))
        w = train_all({"proposed": ds}, _train_cfg(cfg))["proposed"]
        w.meta.update(cfg.provenance())
        w.save(art.weights("proposed"))
        out["proposed"] = w.meta["normalized_mse"]
    dr = cfg.dr
    for mode in ("conventional", "tube"):
        name = f"dr-{mode}"
        if variant in (name, "all"):
            # the sweep reuses the same file for this trajectory count
            w = train_dr(cfg, mode, int(dr[f"{mode}_trajectories"]))
            w.save(art.weights(name))
            out[name] = w.meta["normalized_mse"]
    return out


def _controller(cfg: RunConfig, variant: str, weights_name: str | None = None):
    """Weights and RMSE reference for a variant."""
    art = Artifacts(cfg)
    if variant in MPC_VARIANTS:
        return None, MpcOracle(cfg.mpc)
    base = variant.replace("+governor", "")
    name = weights_name or ("proposed" if base in ("proposed", "no-dr") else base)
    w = art.load_weights(name)
    ref = MpcOracle(cfg.mpc) if variant in SHADOW_VARIANTS else art.load_demo()
    return w, ref


def write_run(cfg: RunConfig, out_dir: Path, records, summary: dict, extra: dict | None = None) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for old in out_dir.glob("episode_*.csv"):
        old.unlink()
        old.with_suffix(".json").unlink(missing_ok=True)
    prov = cfg.provenance()
    for rec in records:
        rec.to_csv(out_dir / f"episode_{rec.config.seed:04d}.csv", prov)
    doc = {"summary": summary, **prov, **(extra or {})}
    io.write_json(out_dir / "summary.json", doc)
    return doc


def step_simulate(cfg: RunConfig, variant: str, episodes: int | None = None, governor: bool | None = None,
                  changed_plant: bool = False, jobs: int = 1, weights_name: str | None = None,
                  out_dir=None):
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    episodes = cfg.episodes if episodes is None else int(episodes)
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    sim_cfg = cfg.sim(variant, changed_plant, governor)
    w, ref = _controller(cfg, variant, weights_name)
    gain = Artifacts(cfg).load_gain()
    records, summary = run_batch(sim_cfg, w, gain, episodes, cfg.seed, ref, jobs)
    tag = run_tag(variant, sim_cfg.governor_on, changed_plant)
    out_dir = Artifacts(cfg).run_dir(tag) if out_dir is None else Path(out_dir)
    doc = write_run(cfg, out_dir, records, summary,
                    {"variant": variant, "governor": sim_cfg.governor_on, "changed_plant": changed_plant,
                     "weights": weights_name, "n_trajectories": (w.meta.get("n_trajectories") if w else None)})
    return records, doc


# ---------------------------------------------------------------------------
# evaluation

TABLE_COLUMNS = RMSE_COLUMNS + ("regulated", "diverged", "late_mean_abs_x_pos", "max_friction_ratio",
                                "violations", "mean_abs_du_cmd", "mean_abs_du_policy")


def _run_row(tag: str, records, summary: dict, n_traj) -> list:
    m = summary["metrics"]
    try:
        rep = rmse_report(records, tag, 0)
        rm = [rep.mean, rep.min, rep.max]
    except ValueError:
        rm = [np.nan] * 3
    return [tag, n_traj, len(records), *rm, summary["regulated"], summary["diverged"],
            m["late_mean_abs_x_pos"]["mean"], m["max_friction_ratio"]["max"], m["violations"]["mean"] * len(records),
            m["mean_abs_du_cmd"]["mean"], m["mean_abs_du_policy"]["mean"]]


def step_evaluate(cfg: RunConfig, results_dir=None, figures: bool = True) -> dict:
    """Tables, tightening and envelope reports from the persisted runs."""
    from .sim import episode_summary, summarize

    art = Artifacts(cfg)
    results = Path(results_dir) if results_dir is not None else art.path("runs")
    runs = sorted(p for p in results.glob("*") if p.is_dir() and any(p.glob("episode_*.csv"))) \
        if results.is_dir() else []
    if not runs:
        raise MissingArtifact(f"no episode records under {results}")
    reports = art.path("reports")
    loaded = {p.name: load_records(p) for p in runs}
    rows = []
    out = {"runs": {}, **cfg.provenance()}
    for tag, recs in loaded.items():
        summ = summarize([episode_summary(r) for r in recs])
        side = io.read_json(results / tag / "summary.json") if (results / tag / "summary.json").exists() else {}
        rows.append(_run_row(tag, recs, summ, side.get("n_trajectories", "")))
        row = dict(zip(TABLE_COLUMNS, rows[-1]))
        out["runs"][tag] = {k: row[k] for k in ("episodes", "regulated", "diverged", "rmse_mean",
                                                "late_mean_abs_x_pos", "violations", "max_friction_ratio")}
    io.write_csv(reports / "table.csv", TABLE_COLUMNS, rows)
    plain, gov = (loaded.get(t) for t in GAMMA_RUNS)
    if plain and gov:
        tight = required_gamma(plain, gov)
        env = disturbance_envelope(plain, gov, component=1)
        out["gamma"] = {"plain": tight.gamma_plain, "governed": tight.gamma_governed,
                        "pairs_reduced": tight.pairs_reduced, "pairs": len(tight.seeds)}
        out["envelope"] = {"component": 1, "pairs_not_larger": env.pairs_not_larger, "pairs": len(env.seeds),
                           "plain_max": max(env.plain), "governed_max": max(env.governed)}
        io.write_csv(reports / "gamma.csv", ("seed", "max_abs_e_g", "max_abs_e_g_governed"),
                     zip(tight.seeds, tight.max_gap_plain, tight.max_gap_governed))
        io.write_csv(reports / "envelope.csv", ("seed", "w_x_vel_plain", "w_x_vel_governed"),
                     zip(env.seeds, env.plain, env.governed))
        if figures:
            plotting.plot_constraint_gap(plain, gov, reports / "constraint_gap.png",
                                         gammas=(tight.gamma_plain, tight.gamma_governed))
            plotting.plot_disturbance(plain, gov, reports / "disturbance_x_vel.png")
            plotting.plot_governor_inputs(plain[0], gov[0], reports / "governor_inputs.png")
    if figures:
        nominal_runs = {t: r for t, r in loaded.items() if not t.endswith("-changed")}
        if nominal_runs:
            plotting.plot_regulation(nominal_runs, reports / "regulation.png")
        prop = loaded.get("proposed")
        base = loaded.get("dr-tube") or loaded.get("dr-conventional")
        if prop:
            plotting.plot_inputs(prop[0], base[0] if base else None, reports / "inputs.png")
    io.write_json(reports / "summary.json", out)
    return out


# ---------------------------------------------------------------------------
# data-budget sweep

SWEEP_COLUMNS = RMSE_COLUMNS


def step_sweep(cfg: RunConfig, jobs: int = 1, points=None, episodes: int | None = None,
               figures: bool = True) -> list:
    """RMSE against the number of trajectories; finished points are checkpointed."""
    art = Artifacts(cfg)
    points = [int(n) for n in (cfg.dr["sweep_points"] if points is None else points)]
    episodes = cfg.episodes if episodes is None else int(episodes)
    sdir = art.path("sweep")
    ckpt_path = sdir / "checkpoint.json"
    ckpt = io.read_json(ckpt_path) if ckpt_path.exists() else {}
    if ckpt.get("config_hash") != cfg.hash or ckpt.get("episodes") != episodes:
        ckpt = {"config_hash": cfg.hash, "seed": cfg.seed, "episodes": episodes, "rows": {}}
    demo = art.load_demo()
    gain = art.load_gain()
    for n in points:
        for variant in SWEEP_VARIANTS:
            key = f"{variant}:{n}"
            if key in ckpt["rows"]:
                continue
            if n == 0:
                # zero network: the shadow stays at x0 for the proposed variant
                row = _zero_row(cfg, variant, demo, gain, episodes, jobs)
            else:
                if variant == "proposed":
                    # copies of the deterministic demonstration add no information
                    w = art.load_weights("proposed")
                else:
                    w = train_dr(cfg, variant.replace("dr-", ""), n)
                ref = MpcOracle(cfg.mpc) if variant == "proposed" else demo
                recs, _ = run_batch(cfg.sim(variant), w, gain, episodes, cfg.seed, ref, jobs)
                rep = rmse_report(recs, variant, n)
                row = rep.row()
            ckpt["rows"][key] = row
            io.write_json(ckpt_path, ckpt)
            log.info("sweep %s n=%d rmse %.4g", variant, n, row[3])
    rows = [ckpt["rows"][f"{v}:{n}"] for n in points for v in SWEEP_VARIANTS]
    io.write_csv(sdir / "rmse_vs_data.csv", SWEEP_COLUMNS, rows)
    io.write_json(sdir / "rmse_vs_data.json", {"rows": rows, "columns": list(SWEEP_COLUMNS), **cfg.provenance()})
    if figures:
        plotting.plot_rmse_vs_data(rows, sdir / "rmse_vs_data.png")
    return rows


def _zero_row(cfg, variant, demo, gain, episodes, jobs):
    zero = MlpWeights.zeros(cfg.train.layer_sizes)
    ref = MpcOracle(cfg.mpc) if variant == "proposed" else demo
    recs, _ = run_batch(cfg.sim(variant), zero, gain, episodes, cfg.seed, ref, jobs)
    return rmse_report(recs, variant, 0).row()
