"""Analytic decay law against the Monte Carlo average for three scatterer steps.

Writes fidelity_law.png next to this script.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from localfid import BilliardConfig, analytic_fidelity, lambda_param, mc_fidelity, rescale_time

cfg = BilliardConfig()
k = cfg.k_center
fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 4))
for i, dr in enumerate(cfg.shifts):
    lam = lambda_param(cfg.alpha, cfg.area, k, dr)
    t = np.linspace(0, 10 / lam, 121)
    mc = mc_fidelity(cfg.alpha, cfg.area, k, dr, t, 200_000, seed=[0, i])
    line, = ax0.plot(t, analytic_fidelity(lam, t).amplitude.real, label=f"{dr * 1e3:g} mm")
    ax0.errorbar(t[::6], mc.amplitude.real[::6], mc.stderr[::6], fmt=".", color=line.get_color())
    r = rescale_time(mc, lam)
    ax1.plot(r.times, r.amplitude.real, ".", ms=3, color=line.get_color())
    print(f"dr = {dr * 1e3:g} mm  lambda = {lam:.4f} / t_H")

x = np.linspace(0, 10, 200)
ax1.plot(x, analytic_fidelity(1.0, x).amplitude.real, "k-", lw=1)
ax0.set_xlabel("t / t_H")
ax0.set_ylabel("Re f(t)")
ax0.legend()
ax1.set_xlabel("lambda t")
fig.tight_layout()
out = Path(__file__).with_name("fidelity_law.png")
fig.savefig(out, dpi=120)
print(out)
