"""PNG figures written next to the CSV outputs (Agg backend, no display)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .model import STATE_NAMES  # noqa: E402

# fixed metadata keeps repeated runs byte-stable
_META = {"Software": "rlempc"}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def reward_curve(curve, path):
    curve = np.asarray(curve, float)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ep = np.arange(1, len(curve) + 1)
    ax.plot(ep, curve, lw=1, label="episode mean")
    if len(curve) >= 10:
        w = max(len(curve) // 20, 5)
        smooth = np.convolve(curve, np.ones(w) / w, mode="valid")
        ax.plot(ep[w - 1:], smooth, lw=2, label=f"{w}-episode average")
    ax.set_xlabel("episode")
    ax.set_ylabel("average reward")
    ax.legend(loc="lower right")
    return _save(fig, path)


def trajectory(traj, path, title=""):
    a = traj.arrays()
    t = a["times"]
    fig, axes = plt.subplots(3, 1, figsize=(7, 7), sharex=True)
    axes[0].plot(t, a["x"][:, 2], label="measured")
    axes[0].plot(t, a["x_pred"][:, 2], "--", label="predicted")
    axes[0].set_ylabel(STATE_NAMES[2])
    axes[0].legend()
    axes[1].step(t, a["u"][:, 2], where="post")
    axes[1].set_ylabel("u3")
    for i in range(6):
        axes[2].plot(t, a["theta_hat"][:, i], lw=1, label=f"theta{i + 1}")
    axes[2].set_ylabel("estimate")
    axes[2].set_xlabel("time")
    axes[2].legend(ncol=3, fontsize=7)
    if title:
        axes[0].set_title(title)
    return _save(fig, path)


def comparison(runs, path):
    """x3 of every run plus cumulative yield."""
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for name, traj in runs.items():
        a = traj.arrays()
        t = a["times"]
        axes[0].plot(t, a["x"][:, 2], label=name)
        num = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (a["u"][1:, 0] * a["x"][1:, 2] * a["x"][1:, 3]
                                                                      + a["u"][:-1, 0] * a["x"][:-1, 2] * a["x"][:-1, 3]))])
        den = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (a["u"][1:, 0] * a["u"][1:, 1]
                                                                      + a["u"][:-1, 0] * a["u"][:-1, 1]))])
        with np.errstate(invalid="ignore", divide="ignore"):
            axes[1].plot(t[1:], num[1:] / den[1:], label=name)
    axes[0].set_ylabel("x3")
    axes[0].legend()
    axes[1].set_ylabel("yield so far")
    axes[1].set_xlabel("time")
    return _save(fig, path)


def improvement(rows, path, reference=None):
    steps = [r.step for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(np.array(steps) - 0.2, [r.improvement_pct for r in rows], width=0.4, label="this run")
    if reference is not None:
        ax.bar(np.array(steps) + 0.2, list(reference)[: len(steps)], width=0.4, label="reported")
    ax.axhline(0, color="k", lw=0.5)
    ax.set_xlabel("deactivation step")
    ax.set_ylabel("yield improvement over EMPC alone (%)")
    ax.legend()
    return _save(fig, path)


def lyapunov(times, values, rho, rho_e, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(times, values, label="V(x)")
    ax.axhline(rho, color="r", ls="--", label="rho")
    ax.axhline(rho_e, color="g", ls=":", label="rho_e")
    ax.set_xlabel("time")
    ax.set_ylabel("V")
    ax.legend()
    return _save(fig, path)
