"""Coupling strength from level-velocity statistics.

A scatterer step ``dr`` shifts level ``n`` by
``dE_n = alpha (psi_n(r + dr)^2 - psi_n(r)^2)``.  For jointly Gaussian
amplitudes with correlation ``J0(k dr)`` this has variance
``4 alpha^2 (1 - J0^2) / A^2``, so ``lambda = 2 pi std(dE)`` and ``alpha``
follows from the sample variance.  The shift density is
``K0(|x| / s) / (pi s)`` with ``s = 2 alpha sqrt(1 - J0^2) / A``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats

from .resfit import _as_resonances, match_levels
from .rpw import LevelEnsemble
from .stats import jackknife
from .theory import lambda_param

MIN_SHIFT_SAMPLES = 100
MIN_KS_SAMPLES = 10_000


@dataclass
class Estimate:
    value: float
    stderr: float

    def __float__(self):
        return float(self.value)


@dataclass
class VelocityStats:
    """Level shifts for one step size and their variance.

    ``shifts_per_level`` has one row per level (track) and one column per
    position pair; missing entries are NaN.
    """

    shifts_per_level: np.ndarray
    variance: float
    variance_err: float
    dr_used: float
    n_samples: int
    alpha_hat: Estimate | None = None
    meta: dict = field(default_factory=dict)

    @property
    def lambda_hat(self):
        """2 pi std(dE) with propagated error."""
        lam = 2 * np.pi * np.sqrt(self.variance)
        err = np.pi * self.variance_err / np.sqrt(self.variance) if self.variance > 0 else np.inf
        return Estimate(lam, err)


def _fit_shifts(pairs, gate):
    """Shift matrix (tracks x pairs) from matched fitted resonances."""
    matched = []
    for a, b in pairs:
        r0, r1 = _as_resonances(a), _as_resonances(b)
        m = match_levels(r0, r1, gate)
        matched.append((r0.energies[m[:, 0]], r1.energies[m[:, 1]] - r0.energies[m[:, 0]]))
    if not matched:
        raise ValueError("no resonance pairs given")
    ref = max(matched, key=lambda x: len(x[0]))[0]
    out = np.full((len(ref), len(matched)), np.nan)
    for p, (e, de) in enumerate(matched):
        if len(e) == 0:
            continue
        track = np.argmin(np.abs(e[:, None] - ref[None, :]), axis=1)
        out[track, p] = de
    return out


def shift_variance(ensemble_or_fits, dr, gate=0.5, error_units="levels"):
    """Unbiased variance of the level shifts for step ``dr``.

    ``ensemble_or_fits`` is either a LevelEnsemble or a mapping from step
    size to a list of ``(report0, report1)`` pairs of fit reports (or
    resonance sets).  The jackknife deletes one level track by default;
    ``error_units="pairs"`` deletes one position pair instead.
    """
    if error_units not in ("levels", "pairs"):
        raise ValueError("error_units must be 'levels' or 'pairs'")
    if isinstance(ensemble_or_fits, LevelEnsemble):
        shifts = ensemble_or_fits.shifts(dr)
        source = "ensemble"
    else:
        keys = [k for k in ensemble_or_fits if np.isclose(k, dr, rtol=0, atol=1e-12)]
        if not keys:
            raise ValueError(f"shift {dr!r} not among {sorted(ensemble_or_fits)}")
        shifts = _fit_shifts(ensemble_or_fits[keys[0]], gate)
        source = "fits"
    ok = np.isfinite(shifts)
    n = int(ok.sum())
    if n < MIN_SHIFT_SAMPLES:
        raise ValueError(f"need at least {MIN_SHIFT_SAMPLES} shift samples, got {n}")
    x = np.where(ok, shifts, 0.0)
    rows = x if error_units == "levels" else x.T
    cnt = ok if error_units == "levels" else ok.T
    s1, s2, c = rows.sum(axis=1), (rows ** 2).sum(axis=1), cnt.sum(axis=1).astype(float)

    def estimator(m1, m2, mc):
        mean = m1 / mc
        return (m2 / mc - mean ** 2) * n / (n - 1)

    var, err, _ = jackknife(estimator, s1, s2, c)
    var = max(float(var), 0.0)
    return VelocityStats(shifts, var, float(err), float(dr), n,
                         meta={"source": source, "error_units": error_units})


def alpha_from_variance(stats_, A, k):
    """alpha = (A / 2) sqrt(var / (1 - J0(k dr)^2)) with propagated error.

    The estimate is also stored on ``stats_.alpha_hat``.
    """
    if stats_.variance <= 0:
        raise ValueError("zero shift variance: alpha is not identifiable")
    j = special.j0(k * stats_.dr_used)
    gap = 1 - j * j
    if gap <= 1e-12:
        raise ValueError("J0(k dr) = +-1: shifts carry no information on alpha")
    alpha = 0.5 * A * np.sqrt(stats_.variance / gap)
    err = 0.5 * alpha * stats_.variance_err / stats_.variance
    stats_.alpha_hat = Estimate(float(alpha), float(err))
    return stats_.alpha_hat


def shift_cdf(x, s):
    """CDF of the K0 law with scale ``s``."""
    x = np.asarray(x, dtype=float)
    integral = special.iti0k0(np.abs(x) / s)[1]
    return 0.5 + np.sign(x) * integral / np.pi


def shift_pdf(x, s):
    x = np.asarray(x, dtype=float)
    return special.k0(np.abs(x) / s) / (np.pi * s)


@dataclass
class KSReport:
    statistic: float
    pvalue: float
    passed: bool
    n_samples: int
    scale: float
    skipped: bool = False
    note: str = ""


def shift_distribution_test(source, dr, alpha, A=None, k=None, significance=0.01):
    """Kolmogorov-Smirnov test of level shifts against the K0 law.

    ``source`` is a LevelEnsemble (area and wavenumber taken from it) or an
    array of shifts, in which case ``A`` and ``k`` are required.
    """
    if isinstance(source, LevelEnsemble):
        shifts = source.shifts(dr).ravel()
        A = source.area if A is None else A
        k = source.k if k is None else k
    else:
        if A is None or k is None:
            raise ValueError("A and k are required for raw shift samples")
        shifts = np.asarray(source, dtype=float).ravel()
    shifts = shifts[np.isfinite(shifts)]
    if alpha == 0:
        note = "alpha = 0: shifts are a point mass at zero, test skipped"
        warnings.warn(note, stacklevel=2)
        return KSReport(np.nan, np.nan, True, len(shifts), 0.0, skipped=True, note=note)
    if len(shifts) < MIN_KS_SAMPLES:
        raise ValueError(f"need at least {MIN_KS_SAMPLES} shift samples, got {len(shifts)}")
    j = special.j0(k * dr)
    s = 2 * abs(alpha) * np.sqrt(max(1 - j * j, 0.0)) / A
    if s == 0:
        note = "J0(k dr) = 1: shifts vanish, test skipped"
        warnings.warn(note, stacklevel=2)
        return KSReport(np.nan, np.nan, True, len(shifts), 0.0, skipped=True, note=note)
    res = stats.kstest(shifts, lambda x: shift_cdf(x, s))
    return KSReport(float(res.statistic), float(res.pvalue), bool(res.pvalue >= significance),
                    len(shifts), float(s))


def fit_lambda(curve, t_max=None, t_min=0.0):
    """Weighted least-squares fit of [1 + (lam t)^2]^(-1/2) to the real part.

    Points without a positive standard error get the median weight.
    """
    t = curve.times
    y = curve.amplitude.real
    mask = t >= t_min
    if t_max is not None:
        mask &= t <= t_max
    if curve.stderr is not None:
        sig = np.asarray(curve.stderr, dtype=float)
        good = sig > 0
        fill = np.median(sig[mask & good]) if np.any(mask & good) else 1.0
        sig = np.where(good, sig, fill)
    else:
        sig = np.ones_like(t)
    t, y, sig = t[mask], y[mask], sig[mask]
    if len(t) < 2:
        raise ValueError("need at least two points to fit lambda")
    # start from the half-height crossing, f = 1/2 at lam t = sqrt(3)
    below = np.flatnonzero(y < 0.5)
    lam0 = np.sqrt(3) / t[below[0]] if len(below) and t[below[0]] > 0 else 1.0 / max(t[-1], 1e-12)
    popt, pcov = optimize.curve_fit(lambda tt, lam: 1 / np.sqrt(1 + (lam * tt) ** 2),
                                    t, y, p0=[lam0], sigma=sig, absolute_sigma=True)
    return Estimate(abs(float(popt[0])), float(np.sqrt(pcov[0, 0])))


def alpha_from_fidelity(curve, A, k, dr, t_max=None, t_min=0.0):
    """alpha from a fitted decay rate, inverting lam = 4 pi alpha sqrt(1 - J0^2) / A."""
    lam = fit_lambda(curve, t_max, t_min)
    unit = lambda_param(1.0, A, k, dr)
    if unit <= 0:
        raise ValueError("dr = 0: the decay rate carries no information on alpha")
    return Estimate(lam.value / unit, lam.stderr / unit)
