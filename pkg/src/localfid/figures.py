"""SVG figures of fidelity curves."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "localfid"


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _draw(ax, curve, x, style=None):
    y = curve.amplitude.real
    if curve.stderr is not None:
        ax.errorbar(x, y, yerr=curve.stderr, fmt="o", ms=2, lw=0.6, capsize=0,
                    label=curve.label)
    else:
        ax.plot(x, y, style or "-", lw=1.2, label=curve.label)


def plot_fidelity(curves, path, title="fidelity amplitude", analytic=()):
    """Re f(t) against time in Heisenberg units."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for c in analytic:
        ax.plot(c.times, c.amplitude.real, "--", lw=1, color="0.3", label=c.label)
    for c in curves:
        _draw(ax, c, c.times)
    ax.set_xlabel("t / t_H")
    ax.set_ylabel("Re f(t)")
    ax.set_title(title)
    ax.axhline(0, color="0.8", lw=0.5)
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_loglog(curves, lambdas, path, title="algebraic tail"):
    """|f| against lam t on double-logarithmic axes with a slope -1 guide."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for c, lam in zip(curves, lambdas):
        x = c.times * lam
        keep = (x > 0) & (np.abs(c.amplitude) > 0)
        ax.loglog(x[keep], np.abs(c.amplitude[keep]), lw=1.2, label=c.label)
    xs = np.logspace(0, 1.7, 20)
    ax.loglog(xs, 1 / xs, ":", color="k", lw=1, label="slope -1")
    ax.set_xlabel("lambda t")
    ax.set_ylabel("|f|")
    ax.set_title(title)
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_collapse(curves, lambdas, path, title="rescaled time axis", x_max=10.0):
    """Curves against lam t; the analytic law is drawn as reference."""
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.linspace(0, x_max, 400)
    ax.plot(x, 1 / np.sqrt(1 + x ** 2), "k--", lw=1, label="[1+(lambda t)^2]^-1/2")
    for c, lam in zip(curves, lambdas):
        keep = c.times * lam <= x_max
        sub = type(c)(c.times[keep], c.amplitude[keep],
                      None if c.stderr is None else c.stderr[keep], None, c.label)
        _draw(ax, sub, sub.times * lam)
    ax.set_xlabel("lambda t")
    ax.set_ylabel("Re f")
    ax.set_title(title)
    ax.legend(fontsize=7)
    return _save(fig, path)
