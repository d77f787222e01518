"""Report figures written next to the CSV outputs (Agg backend, PNG)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import constraint_gap, realized_disturbance  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "figure.dpi": 120,
}
COLORS = {
    "proposed": "tab:blue",
    "proposed+governor": "tab:blue",
    "dr-tube": "tab:green",
    "dr-conventional": "tab:orange",
    "no-dr": "tab:red",
    "rtmpc-reference": "black",
    "mpc-nominal": "gray",
    "plain": "tab:red",
    "governed": "tab:blue",
}
# fixed metadata keeps repeated renders byte-identical
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    fig.savefig(tmp, format="png", metadata=_PNG_META, bbox_inches="tight")
    plt.close(fig)
    tmp.replace(path)
    return path


def _band(ax, t, series, color, label):
    """Mean line with a min/max envelope over episodes of equal length."""
    n = min(len(s) for s in series)
    a = np.array([s[:n] for s in series])
    ax.fill_between(t[:n], a.min(axis=0), a.max(axis=0), color=color, alpha=0.2, lw=0)
    ax.plot(t[:n], a.mean(axis=0), color=color, label=label)


def _time(rec, n=None):
    n = rec.n_steps + 1 if n is None else n
    return np.arange(n) * rec.config.dt


def plot_regulation(groups: dict, path) -> Path:
    """Cart position and pole angle envelopes per variant; ``groups`` maps label to records."""
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 4.5), sharex=True)
        for label, recs in groups.items():
            recs = [r for r in recs if r.diverged_at is None]
            if not recs:
                continue
            t = _time(recs[0])
            c = COLORS.get(label, None)
            _band(ax1, t, [r.actual[:, 0] for r in recs], c, label)
            _band(ax2, t, [r.actual[:, 2] for r in recs], c, label)
        ax1.set_ylabel("cart position [m]")
        ax2.set_ylabel("pole angle [rad]")
        ax2.set_xlabel("time [s]")
        ax1.legend(loc="upper right")
        return _save(fig, path)


def plot_inputs(proposed, baseline, path) -> Path:
    """Network and ancillary inputs of one proposed episode next to a baseline network's input."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3))
        t = _time(proposed, proposed.n_steps)
        ax.plot(t, proposed.u_dnn, color=COLORS["proposed"], label="proposed: network")
        ax.plot(t, proposed.u_anc, color="tab:purple", ls="--", label="proposed: ancillary")
        if baseline is not None:
            tb = _time(baseline, baseline.n_steps)
            ax.plot(tb, baseline.u_dnn, color=COLORS.get(baseline.config.variant), alpha=0.8,
                    label=f"{baseline.config.variant}: network")
        ax.set_xlabel("time [s]")
        ax.set_ylabel("force [N]")
        ax.legend(loc="upper right")
        return _save(fig, path)


def plot_rmse_vs_data(rows, path) -> Path:
    """RMSE against the number of demonstrated trajectories; rows as in the sweep CSV."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        for variant in dict.fromkeys(r[0] for r in rows):
            pts = sorted((r for r in rows if r[0] == variant), key=lambda r: r[1])
            n = np.array([p[1] for p in pts], dtype=float)
            mean = np.array([p[3] for p in pts], dtype=float)
            lo = np.array([p[4] for p in pts], dtype=float)
            hi = np.array([p[5] for p in pts], dtype=float)
            c = COLORS.get(variant)
            ax.fill_between(n, lo, np.minimum(hi, 1e6), color=c, alpha=0.2, lw=0)
            ax.plot(n, mean, "o-", color=c, label=variant)
        ax.set_xlabel("demonstrated trajectories")
        ax.set_ylabel("RMSE [N]")
        ax.legend()
        return _save(fig, path)


def plot_constraint_gap(plain, governed, path, gammas=None) -> Path:
    """Envelopes of the friction-constraint gap with and without the governor."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3))
        t = _time(plain[0], plain[0].n_steps)
        _band(ax, t, [np.abs(constraint_gap(r)) for r in plain], COLORS["plain"], "without governor")
        _band(ax, t, [np.abs(constraint_gap(r)) for r in governed], COLORS["governed"], "with governor")
        for g in gammas or ():
            ax.axhline(g, color="k", ls=":", lw=0.8)
        ax.set_xlabel("time [s]")
        ax.set_ylabel("|e_g|")
        ax.legend(loc="upper right")
        return _save(fig, path)


def plot_disturbance(plain, governed, path, component: int = 1) -> Path:
    """Realized model-mismatch disturbance on one state component."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3))
        t = _time(plain[0], plain[0].n_steps)
        _band(ax, t, [realized_disturbance(r)[:, component] for r in plain], COLORS["plain"], "without governor")
        _band(ax, t, [realized_disturbance(r)[:, component] for r in governed], COLORS["governed"],
              "with governor")
        ax.set_xlabel("time [s]")
        ax.set_ylabel(f"w[{component}]")
        ax.legend(loc="upper right")
        return _save(fig, path)


def plot_governor_inputs(plain, governed, path) -> Path:
    """Commanded forces and cart positions of one paired episode."""
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 4.5), sharex=True)
        t = _time(plain, plain.n_steps)
        ax1.plot(t, plain.u_cmd, color=COLORS["plain"], label="without governor")
        ax1.plot(t, governed.u_cmd, color=COLORS["governed"], label="with governor")
        ax2.plot(_time(plain), plain.actual[:, 0], color=COLORS["plain"])
        ax2.plot(_time(governed), governed.actual[:, 0], color=COLORS["governed"])
        ax1.set_ylabel("force [N]")
        ax2.set_ylabel("cart position [m]")
        ax2.set_xlabel("time [s]")
        ax1.legend(loc="upper right")
        return _save(fig, path)
