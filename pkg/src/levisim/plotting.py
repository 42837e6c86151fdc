"""PNG figures for CLI runs. Uses the non-interactive Agg backend."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.labelsize": 10,
    "font.size": 9,
    "legend.frameon": False,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> str:
    path = Path(path)
    # fixed metadata keeps repeated runs byte-stable
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path.name


def scan(result, path, title: str = "") -> str:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        V = result.voltages
        ax.plot(np.repeat(V, result.repetitions), result.energies.ravel(), ".", color="0.7", ms=3, label="repetitions")
        ax.plot(V, result.mean_energies, "o", color="C0", ms=4, label="mean")
        if result.fit is not None and result.fit.a > 0:
            vv = np.linspace(V.min(), V.max(), 200)
            ax.plot(vv, result.fit(vv), "k-", lw=1, label=f"parabola, V_opt = {result.v_opt:.4g} V")
        ax.set_xlabel("scan voltage (V)")
        ax.set_ylabel("energy after recapture (J)")
        ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def series(x, ys: dict, path, xlabel: str, ylabel: str, errors: dict | None = None, logy: bool = False,
           styles: dict | None = None) -> str:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, y in ys.items():
            st = (styles or {}).get(name, {})
            err = (errors or {}).get(name)
            if err is not None:
                ax.errorbar(x, y, yerr=err, fmt=st.get("fmt", "o"), ms=3, capsize=2, label=name)
            else:
                ax.plot(x, y, st.get("fmt", "-"), label=name)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend()
        return _save(fig, path)


def trajectory(traj, path) -> str:
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, 1, sharex=True, figsize=(5.0, 4.2))
        t = traj.times * 1e6
        for i, name in enumerate("xyz"):
            axes[0].plot(t, traj.positions[:, i] * 1e9, lw=0.6, label=name)
        axes[0].set_ylabel("position (nm)")
        axes[0].legend(ncol=3)
        axes[1].plot(t, traj.envelope, "k-", lw=0.8)
        axes[1].set_ylabel("trap envelope")
        axes[1].set_xlabel("time (us)")
        return _save(fig, path)


def histogram(edges, counts, path, xlabel: str) -> str:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.stairs(counts, edges, fill=True, color="C0", alpha=0.7)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("count")
        return _save(fig, path)
