"""Synthetic reflection spectra of a weakly coupled antenna.

Each level contributes an isolated Breit-Wigner term to the reflection
amplitude, ``S(f) = 1 - i sum_n d_n / (f - E_n + i G_n / 2)``, with depth
``d_n = coupling * A * psi_n(r0)^2``.  Frequencies are in units of the mean
level spacing.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .rpw import SPEED_OF_LIGHT

MIN_SAMPLES_PER_WIDTH = 16


@dataclass
class WidthConfig:
    """Line-shape parameters shared by all levels.

    With ``porter_thomas`` the widths scatter as ``width * chi2_1`` (drawn
    once per level from ``seed``, hence identical at every scatterer
    position) instead of being constant.
    """

    width: float = 0.15
    coupling: float = 0.004
    porter_thomas: bool = False
    seed: int = 0


@dataclass
class GridConfig:
    n_points: int = 8192
    margin: float = 3.0


@dataclass
class NoiseConfig:
    """Additive complex white noise; ``snr_db=None`` means noiseless.

    The SNR is the ratio of the mean power of ``S - 1`` to the noise power.
    """

    snr_db: float | None = None


@dataclass
class SpectrumTrace:
    freqs: np.ndarray
    s_values: np.ndarray
    position_index: int = 0
    noise_level: float = 0.0
    mean_spacing: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.s_values = np.asarray(self.s_values, dtype=complex)
        if self.freqs.shape != self.s_values.shape:
            raise ValueError("freqs and s_values must have the same shape")

    @property
    def df(self):
        return self.freqs[1] - self.freqs[0]

    def __len__(self):
        return len(self.freqs)


@dataclass
class ResonanceSet:
    energies: np.ndarray
    widths: np.ndarray
    depths: np.ndarray
    provenance: str = "synthesized"

    def __post_init__(self):
        self.energies = np.asarray(self.energies, dtype=float)
        self.widths = np.broadcast_to(np.asarray(self.widths, dtype=float),
                                      self.energies.shape).copy()
        self.depths = np.broadcast_to(np.asarray(self.depths, dtype=float),
                                      self.energies.shape).copy()
        order = np.argsort(self.energies, kind="stable")
        self.energies = self.energies[order]
        self.widths = self.widths[order]
        self.depths = self.depths[order]
        if np.any(self.widths <= 0):
            raise ValueError("widths must be positive")
        if np.any(self.depths < 0):
            raise ValueError("depths must be non-negative")

    def __len__(self):
        return len(self.energies)


def level_widths(n_levels, widths):
    if widths.porter_thomas:
        rng = np.random.default_rng(widths.seed)
        return widths.width * rng.standard_normal(n_levels) ** 2
    return np.full(n_levels, float(widths.width))


def true_resonances(ensemble, position_index, widths=None):
    """Resonance parameters the synthetic spectrum is built from."""
    widths = widths or WidthConfig()
    depth = widths.coupling * ensemble.area * ensemble.antenna_amp ** 2
    return ResonanceSet(ensemble.energies(position_index),
                        level_widths(ensemble.n_levels, widths), depth)


def frequency_grid(ensemble, grid):
    lo = ensemble.energies_0.min() - grid.margin
    hi = ensemble.energies_0.max() + grid.margin
    return np.linspace(lo, hi, grid.n_points)


def breit_wigner(freqs, resonances):
    """Reflection amplitude of a sum of isolated resonances."""
    f = np.asarray(freqs, dtype=float)
    den = f[None, :] - resonances.energies[:, None] + 0.5j * resonances.widths[:, None]
    return 1 - 1j * np.sum(resonances.depths[:, None] / den, axis=0)


def synth_spectrum(ensemble, position_index, widths=None, grid=None, noise=None, seed=0):
    """Reflection spectrum with the scatterer at ``position_index``.

    The frequency grid only depends on the unperturbed levels, so traces of
    different positions share it.  Noise is drawn from a stream keyed by
    ``(seed, position_index)``.
    """
    widths = widths or WidthConfig()
    grid = grid or GridConfig()
    noise = noise or NoiseConfig()
    res = true_resonances(ensemble, position_index, widths)
    if res.widths.mean() >= 0.5:
        warnings.warn("mean width >= 0.5 spacings: resonances overlap", stacklevel=2)
    freqs = frequency_grid(ensemble, grid)
    df = freqs[1] - freqs[0]
    if res.widths.min() < MIN_SAMPLES_PER_WIDTH * df:
        warnings.warn(f"fewer than {MIN_SAMPLES_PER_WIDTH} grid points per width",
                      stacklevel=2)
    s = breit_wigner(freqs, res)
    sigma = 0.0
    if noise.snr_db is not None:
        power = np.mean(np.abs(s - 1) ** 2)
        sigma = float(np.sqrt(power / 10 ** (noise.snr_db / 10)))
        rng = np.random.default_rng([seed, position_index])
        s = s + sigma / np.sqrt(2) * (rng.standard_normal(len(s))
                                      + 1j * rng.standard_normal(len(s)))
    meta = {"seed": seed, "width": widths.width, "coupling": widths.coupling,
            "snr_db": noise.snr_db}
    return SpectrumTrace(freqs, s, position_index, sigma, meta=meta)


def weyl_count(A, f_lo, f_hi):
    """Leading Weyl estimate of the number of modes between two frequencies (Hz)."""
    if f_hi < f_lo:
        raise ValueError("need f_hi >= f_lo")
    return A * np.pi * (f_hi ** 2 - f_lo ** 2) / SPEED_OF_LIGHT ** 2
