"""Scattering fidelity from pairs of reflection spectra.

The fluctuating part of each spectrum is Fourier transformed and the
cross- and autocorrelations are formed in the time domain as products of
transforms.  With ``s(t) = conj(FFT(S)) * df`` the cross term
``s0(t) conj(s1(t))`` carries the phase ``exp(2 pi i (E0 - E1) t)``, the same
convention as the ordinary fidelity.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter1d

from .spectra import SpectrumTrace
from .stats import jackknife
from .theory import FidelityCurve

MIN_TRACE_LENGTH = 64
TAPERS = ("rect", "welch")


@dataclass
class WindowConfig:
    """Secular-average window (mean spacings), FFT taper and band split.

    With ``n_bands > 1`` the fluctuating part is cut into that many
    contiguous frequency bands, each transformed on the full grid.  Bands
    hold disjoint sets of levels and so give nearly independent
    correlograms; the error bars are then a jackknife over bands instead of
    over position pairs.  Neighbouring bands cross-fade over
    ``band_overlap`` mean spacings (the band weights sum to one), since a
    hard cut through resonance tails leaks into long times.  Correlograms
    are kept up to ``t_max`` Heisenberg times (all positive times when
    None).
    """

    window: float = 10.0
    taper: str = "rect"
    n_bands: int = 1
    t_max: float | None = None
    band_overlap: float = 1.0

    def __post_init__(self):
        if self.window <= 0:
            raise ValueError("window must be positive")
        if self.n_bands < 1:
            raise ValueError("n_bands must be >= 1")
        if self.t_max is not None and self.t_max <= 0:
            raise ValueError("t_max must be positive")
        if self.band_overlap < 0:
            raise ValueError("band_overlap must be non-negative")
        if self.taper not in TAPERS:
            raise ValueError(f"taper must be one of {TAPERS}")


@dataclass
class CorrelogramPair:
    """Correlograms of one position pair.

    The ``chat_*`` series are sums over bands; ``bands`` stacks the
    per-band (cross, auto0, auto1) series with shape ``(3, n_bands, n_t)``.
    The autocorrelations are real by construction.
    """

    times: np.ndarray
    chat_cross: np.ndarray
    chat_auto0: np.ndarray
    chat_auto1: np.ndarray
    bands: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


def fluctuating_part(trace, window=10.0):
    """Subtract a running mean over ``window`` mean spacings, then the overall mean."""
    n = len(trace)
    if n < MIN_TRACE_LENGTH:
        raise ValueError(f"trace needs at least {MIN_TRACE_LENGTH} samples, got {n}")
    width = int(round(window * trace.mean_spacing / trace.df))
    if width > n:
        raise ValueError(f"smoothing window of {width} samples exceeds the trace ({n})")
    s = trace.s_values
    if width > 1:
        trend = (uniform_filter1d(s.real, width, mode="reflect")
                 + 1j * uniform_filter1d(s.imag, width, mode="reflect"))
        s = s - trend
    s = s - s.mean()
    meta = dict(trace.meta, smoothing_window=float(window))
    return SpectrumTrace(trace.freqs, s, trace.position_index, trace.noise_level,
                         trace.mean_spacing, meta)


def _taper(n, kind):
    if kind == "rect":
        return np.ones(n)
    x = (np.arange(n) - (n - 1) / 2) / ((n + 1) / 2)
    return 1 - x ** 2


def band_weights(n, n_bands, half=0.0):
    """Partition of unity into ``n_bands`` contiguous bands, shape ``(n_bands, n)``.

    Inner band edges are cos^2 cross-fades spanning ``2 * half`` samples;
    ``half = 0`` gives hard cuts.
    """
    edges = np.linspace(0, n, n_bands + 1)
    idx = np.arange(n)
    # share of each sample lying right of every edge
    right = np.ones((n_bands + 1, n))
    right[-1] = 0.0
    for j, e in enumerate(edges[1:-1], start=1):
        if half > 0:
            u = np.clip((idx + 0.5 - (e - half)) / (2 * half), 0, 1)
            right[j] = np.sin(0.5 * np.pi * u) ** 2
        else:
            right[j] = idx >= round(e)
    return right[:-1] - right[1:]


def _transform(trace, cfg):
    """Band-resolved transforms, shape ``(n_bands, n // 2 + 1)``."""
    x = fluctuating_part(trace, cfg.window).s_values * _taper(len(trace), cfg.taper)
    n = len(x)
    half = 0.5 * cfg.band_overlap * trace.mean_spacing / trace.df
    xb = band_weights(n, cfg.n_bands, half) * x
    return np.conj(np.fft.fft(xb, axis=1))[:, :n // 2 + 1] * trace.df


def correlogram(trace0, trace1, window_cfg=None):
    """Cross- and autocorrelations of two spectra on positive Heisenberg times."""
    cfg = window_cfg or WindowConfig()
    if len(trace0) != len(trace1) or not np.array_equal(trace0.freqs, trace1.freqs):
        raise ValueError("traces must share the same frequency grid")
    n = len(trace0)
    times = np.arange(n // 2 + 1) * trace0.mean_spacing / (n * trace0.df)
    keep = len(times) if cfg.t_max is None else int(np.searchsorted(times, cfg.t_max, "right"))
    times = times[:keep]
    s0 = _transform(trace0, cfg)[:, :keep]
    s1 = s0 if trace1 is trace0 else _transform(trace1, cfg)[:, :keep]
    a0 = np.abs(s0) ** 2
    a1 = np.abs(s1) ** 2
    cross = a0.astype(complex) if np.array_equal(s0, s1) else s0 * np.conj(s1)
    bands = np.stack([cross, a0, a1])
    total = bands.sum(axis=1)
    meta = {"positions": (trace0.position_index, trace1.position_index),
            "window": cfg.window, "taper": cfg.taper, "n_bands": cfg.n_bands,
            "band_overlap": cfg.band_overlap, "heisenberg_time": 1.0 / trace0.mean_spacing}
    return CorrelogramPair(times, total[0], total[1].real, total[2].real,
                           bands if cfg.n_bands > 1 else None, meta)


def scattering_fidelity(pairs, label="scattering"):
    """Ensemble quotient <C01> / sqrt(<C00> <C11>) with jackknife errors.

    Correlograms are averaged over all pairs before the quotient.  The
    jackknife deletes one frequency band when the correlograms carry more
    than one band, otherwise one position pair.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one correlogram pair")
    times = pairs[0].times
    if any(not np.array_equal(p.times, times) for p in pairs):
        raise ValueError("all correlograms must share the time axis")
    n_bands = pairs[0].bands.shape[1] if pairs[0].bands is not None else 1
    if n_bands > 1:
        if any(p.bands is None or p.bands.shape[1] != n_bands for p in pairs):
            raise ValueError("all correlograms must use the same band split")
        stacked = np.zeros_like(pairs[0].bands)
        for p in pairs:
            stacked += p.bands
        stacked /= len(pairs)
        cross, a0, a1 = stacked[0], stacked[1].real, stacked[2].real
        units = "bands"
    else:
        cross = np.array([p.chat_cross for p in pairs])
        a0 = np.array([p.chat_auto0.real for p in pairs])
        a1 = np.array([p.chat_auto1.real for p in pairs])
        units = "pairs"
    if a0.sum() <= 0 or a1.sum() <= 0:
        raise ValueError("no fluctuation power in the spectra")

    def estimator(c, p0, p1):
        with np.errstate(divide="ignore", invalid="ignore"):
            return c / np.sqrt(p0 * p1)

    amp, err_re, err_im = jackknife(estimator, cross, a0, a1)
    meta = {"n_pairs": len(pairs), "error_units": units,
            **{k: pairs[0].meta.get(k) for k in ("window", "taper", "n_bands", "heisenberg_time")}}
    if len(cross) == 1:
        warnings.warn(f"single {units[:-1]}: scattering fidelity has no error bars", stacklevel=2)
        return FidelityCurve(times, amp, label=label, meta=meta)
    return FidelityCurve(times, amp, err_re, err_im, label=label, meta=meta)
