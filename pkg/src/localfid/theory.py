"""Fidelity amplitude for a shifted point scatterer.

Times are in units of the Heisenberg time and energies in units of the
mean level spacing; all phases use the ``exp(2 pi i E t)`` convention.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from .rpw import sample_wave_pairs

DEFAULT_GRID_POINTS = 256
DEFAULT_GRID_SPAN = 10.0
_CHUNK = 8192


@dataclass
class FidelityCurve:
    """Complex fidelity amplitude on a time grid.

    ``stderr`` is the standard error of the real part, ``stderr_imag`` that
    of the imaginary part; both are ``None`` for exact curves.
    """

    times: np.ndarray
    amplitude: np.ndarray
    stderr: np.ndarray | None = None
    stderr_imag: np.ndarray | None = None
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.amplitude = np.asarray(self.amplitude, dtype=complex)
        if self.times.shape != self.amplitude.shape:
            raise ValueError("times and amplitude must have the same shape")

    def __len__(self):
        return len(self.times)


def lambda_param(alpha, A, k, dr):
    """Decay rate 4 pi alpha / A * sqrt(1 - J0(k dr)^2) in inverse Heisenberg times."""
    if A <= 0:
        raise ValueError("area must be positive")
    j = special.j0(np.multiply(k, dr))
    return 4 * np.pi * alpha / A * np.sqrt(np.clip(1 - j * j, 0, None))


def default_time_grid(lam, n=DEFAULT_GRID_POINTS, span=DEFAULT_GRID_SPAN):
    """``n`` points on ``[0, span / lam]``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    return np.linspace(0, span / lam, n)


def analytic_fidelity(lam, times, label=""):
    """f(t) = [1 + (lam t)^2]^(-1/2)."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("times must be non-negative")
    amp = 1 / np.sqrt(1 + (lam * times) ** 2)
    return FidelityCurve(times, amp.astype(complex), label=label or "analytic",
                         meta={"lambda": float(lam)})


def mc_fidelity(alpha, A, k, dr, times, n_samples, seed, n_shards=1, n_jobs=1,
                guard=0.2):
    """Monte Carlo average of exp(2 pi i alpha (psi1^2 - psi2^2) t).

    Standard errors of the mean are reported separately for the real and
    imaginary parts.
    """
    if n_samples < 1000:
        raise ValueError("n_samples must be >= 1000")
    times = np.asarray(times, dtype=float)
    meta = {"alpha": alpha, "area": A, "k": k, "dr": dr, "n_samples": n_samples,
            "seed": seed, "n_shards": n_shards,
            "lambda": float(lambda_param(alpha, A, k, dr))}
    if abs(alpha) / A >= guard:
        msg = f"alpha/(A*spacing) = {alpha / A:.3g} is outside the perturbative regime"
        warnings.warn(msg, stacklevel=2)
        meta["warning"] = msg
    pairs = sample_wave_pairs(k, dr, A, n_samples, seed, n_shards=n_shards, n_jobs=n_jobs)
    x = 2 * np.pi * alpha * (pairs.psi1 ** 2 - pairs.psi2 ** 2)

    s_re = np.zeros(len(times))
    s_im = np.zeros(len(times))
    q_re = np.zeros(len(times))
    q_im = np.zeros(len(times))
    step = _uniform_step(times)
    for start in range(0, n_samples, _CHUNK):
        xc = x[start:start + _CHUNK]
        if step is None:
            e = np.exp(1j * np.multiply.outer(xc, times))
        else:
            # powers of one rotation are cheaper than len(times) sin/cos calls
            e = np.empty((len(xc), len(times)), dtype=complex)
            e[:, 0] = 1.0
            e[:, 1:] = np.exp(1j * xc * step)[:, None]
            np.cumprod(e, axis=1, out=e)
        c, s = e.real, e.imag
        s_re += c.sum(axis=0)
        s_im += s.sum(axis=0)
        q_re += np.einsum("ij,ij->j", c, c)
        q_im += np.einsum("ij,ij->j", s, s)
    n = n_samples
    mean_re, mean_im = s_re / n, s_im / n
    var_re = np.clip(q_re / n - mean_re ** 2, 0, None) * n / (n - 1)
    var_im = np.clip(q_im / n - mean_im ** 2, 0, None) * n / (n - 1)
    return FidelityCurve(times, mean_re + 1j * mean_im, np.sqrt(var_re / n),
                         np.sqrt(var_im / n), label=f"mc dr={dr:g}", meta=meta)


def _uniform_step(times):
    """Grid step if ``times`` is uniform and starts at zero, else None."""
    if len(times) < 3 or times[0] != 0:
        return None
    d = np.diff(times)
    if np.allclose(d, d[0], rtol=1e-12, atol=0):
        return d[0]
    return None


def perturbative_fidelity(ensemble, i, j, times):
    """Diagonal-perturbation fidelity for a state localized at the antenna.

    Evaluates <r0| exp(-2 pi i (H_j - H_i) t) |r0> directly on the level
    ensemble, normalized to one at ``t = 0``.
    """
    times = np.asarray(times, dtype=float)
    w = ensemble.antenna_amp ** 2
    de = ensemble.energies(i) - ensemble.energies(j)
    amp = np.exp(2j * np.pi * np.multiply.outer(times, de)) @ w / w.sum()
    return FidelityCurve(times, amp, label=f"pert {i}->{j}")


def rescale_time(curve, lam):
    """Express ``curve`` on the scaled axis ``lam * t``."""
    if not lam > 0:
        raise ValueError("cannot rescale with lambda <= 0")
    meta = dict(curve.meta, rescaled_by=float(lam))
    return replace(curve, times=curve.times * lam, meta=meta)
