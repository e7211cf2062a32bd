"""Scattering and ordinary fidelity from synthetic spectra at 40 dB.

A reduced version of the end-to-end check: 60 scatterer positions, one
step of 4 mm.  Takes about a minute.  Writes scattering_vs_ordinary.png.
"""

import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from localfid import (BilliardConfig, GridConfig, NoiseConfig, WidthConfig, WindowConfig,
                      analytic_fidelity, build_level_ensemble, correlogram, fit_trace,
                      lambda_param, ordinary_fidelity, scattering_fidelity, synth_spectrum)

warnings.simplefilter("ignore")
cfg = BilliardConfig(shifts=(0.004,))
ens = build_level_ensemble(cfg, 60, seed=0)
widths = WidthConfig(width=0.05, coupling=0.05 / 40)
traces = [synth_spectrum(ens, i, widths, GridConfig(32768), NoiseConfig(40.0), seed=1)
          for i in range(ens.n_positions)]
pairs = ens.pairs(0.004)
lam = lambda_param(cfg.alpha, ens.area, ens.k, 0.004)

window = WindowConfig(n_bands=32, t_max=6 / lam)
scat = scattering_fidelity([correlogram(traces[a], traces[b], window) for a, b in pairs])
fits = [fit_trace(tr) for tr in traces]
ordi = ordinary_fidelity([fits[a] for a, _ in pairs], [fits[b] for _, b in pairs], scat.times)
print(f"{len(pairs)} pairs, lambda = {lam:.3f} / t_H, "
      f"mean resolved levels {sum(int(f.converged.sum()) for f in fits) / len(fits):.1f}")

fig, ax = plt.subplots(figsize=(6, 4))
ax.errorbar(scat.times, scat.amplitude.real, scat.stderr, fmt=".", ms=3, label="scattering")
ax.errorbar(ordi.times, ordi.amplitude.real, ordi.stderr, fmt=".", ms=3, label="ordinary")
ax.plot(scat.times, analytic_fidelity(lam, scat.times).amplitude.real, "k-", label="law")
ax.set_xlabel("t / t_H")
ax.set_ylabel("Re f(t)")
ax.legend()
fig.tight_layout()
out = Path(__file__).with_name("scattering_vs_ordinary.png")
fig.savefig(out, dpi=120)
print(out)
