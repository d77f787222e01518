"""Run configuration: TOML file with sections merged over the packaged defaults."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .dynamics import ModelParams
from .io import stable_hash
from .mlp import TrainConfig
from .mpc import MpcConfig
from .sim import SimConfig

ROOT_ENV = "TUBEIL_ARTIFACT_ROOT"
SECTIONS = ("experiment", "model", "plant", "mpc", "lqr", "train", "demo", "dr", "sim")


class ConfigError(ValueError):
    pass


def default_text() -> str:
    return resources.files("tubeil").joinpath("default_config.toml").read_text()


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = dict(base)
    for key, val in over.items():
        if key not in base:
            raise ConfigError(f"unknown key {where}{key!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where}{key} must be a section")
            out[key] = _merge(base[key], val, f"{where}{key}.")
        else:
            out[key] = val
    return out


@dataclass
class RunConfig:
    raw: dict
    source: Path | None = None
    root_override: Path | None = field(default=None, repr=False)

    @classmethod
    def load(cls, path=None, root_override=None) -> "RunConfig":
        """Read ``path`` (or only the defaults) and validate every section."""
        raw = tomllib.loads(default_text())
        src = None
        if path is not None:
            src = Path(path)
            if not src.is_file():
                raise ConfigError(f"config file not found: {src}")
            try:
                user = tomllib.loads(src.read_text())
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"cannot parse {src}: {exc}") from exc
            raw = _merge(raw, user)
        cfg = cls(raw, src, Path(root_override) if root_override else None)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.nominal_params
            self.plant_params
            self.mpc
            self.train
            self.sim()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc
        dr = self.raw["dr"]
        if dr["tube_rollouts"] < 1 or dr["conventional_trajectories"] < 1 or dr["tube_trajectories"] < 1:
            raise ConfigError("dr trajectory and rollout counts must be >= 1")
        if any(int(n) < 0 for n in dr["sweep_points"]):
            raise ConfigError("sweep points must be >= 0")
        if len(self.raw["demo"]["x0"]) != 4:
            raise ConfigError("demo.x0 must have four entries")

    def with_seed(self, seed: int) -> "RunConfig":
        raw = {k: dict(v) for k, v in self.raw.items()}
        raw["experiment"]["seed"] = int(seed)
        return replace(self, raw=raw)

    # ------------------------------------------------------------------
    @property
    def name(self) -> str:
        return str(self.raw["experiment"]["name"])

    @property
    def seed(self) -> int:
        return int(self.raw["experiment"]["seed"])

    @property
    def root(self) -> Path:
        """Artifact root: explicit override, then the environment, then the file."""
        if self.root_override is not None:
            return self.root_override
        env = os.environ.get(ROOT_ENV)
        if env:
            return Path(env)
        p = Path(self.raw["experiment"]["artifact_root"])
        if not p.is_absolute() and self.source is not None:
            p = self.source.parent / p
        return p

    @property
    def hash(self) -> str:
        """Digest of every setting that affects numerical results (paths excluded)."""
        return stable_hash({k: v for k, v in self.raw.items() if k != "experiment"} |
                           {"seed": self.seed})

    @property
    def nominal_params(self) -> ModelParams:
        m = self.raw["model"]
        return ModelParams(m["cart_mass"], m["pole_mass"], m["pole_length"], m["gravity"], m["friction"])

    @property
    def plant_params(self) -> ModelParams:
        p = self.raw["plant"]
        return self.nominal_params.with_masses(p["cart_mass"], p["pole_mass"])

    @property
    def dt(self) -> float:
        return float(self.raw["model"]["dt"])

    @property
    def substeps(self) -> int:
        return int(self.raw["model"]["substeps"])

    @property
    def mpc(self) -> MpcConfig:
        d = dict(self.raw["mpc"], params=self.nominal_params.to_dict(), dt=self.dt, substeps=self.substeps)
        return MpcConfig.from_dict(d)

    @property
    def lqr(self) -> tuple:
        return tuple(float(v) for v in self.raw["lqr"]["q_diag"]), float(self.raw["lqr"]["r"])

    @property
    def train(self) -> TrainConfig:
        return TrainConfig.from_dict(self.raw["train"])

    @property
    def x0(self) -> tuple:
        return tuple(float(v) for v in self.raw["demo"]["x0"])

    @property
    def demo_steps(self) -> int:
        return int(self.raw["demo"]["steps"])

    @property
    def dr(self) -> dict:
        return dict(self.raw["dr"])

    def sim(self, variant: str = "proposed", changed_plant: bool = False, governor=None) -> SimConfig:
        s = self.raw["sim"]
        return SimConfig(
            variant=variant, steps=int(s["steps"]), disturbance_bound=float(s["disturbance_bound"]),
            plant=self.plant_params if changed_plant else self.nominal_params, nominal=self.nominal_params,
            seed=self.seed, dt=self.dt, substeps=self.substeps, x0=self.x0,
            governor=bool(s["governor"]) if governor is None else bool(governor),
            divergence_threshold=float(s["divergence_threshold"]),
        )

    @property
    def episodes(self) -> int:
        return int(self.raw["sim"]["episodes"])

    def provenance(self) -> dict:
        return {"config_hash": self.hash, "seed": self.seed, "experiment": self.name}
