"""Resonance extraction by Lorentzian least squares and the ordinary fidelity.

Each detected dip of ``|S|^2`` is fitted with the complex-amplitude line
``|B(f) - i d / (f - E + i G / 2)|^2``.  The background ``B`` is one on the
first sweep and afterwards carries the tails of all other fitted
resonances, so repeated sweeps converge to the joint fit of the whole
trace while every fit stays local to its window.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy import optimize, signal

from .spectra import ResonanceSet
from .stats import jackknife
from .theory import FidelityCurve

OK = "ok"
NO_CONVERGENCE = "no_convergence"
OUTSIDE_WINDOW = "outside_window"
INVALID = "invalid"
POOR_FIT = "poor_fit"

MAX_ITERATIONS = 200
GRADIENT_TOL = 1e-8
MIN_WINDOW_SAMPLES = 5
MIN_MATCHED = 8
CLEAN_GAIN = 1e-3
MIN_DIP_RATIO = 1e-3
SPLIT_GAIN = 1e-2
# lines narrower than this many grid steps are not resolved
MIN_WIDTH_SAMPLES = 2


@dataclass
class FitReport:
    """Per-peak fit results, sorted by fitted energy.

    ``errors`` holds the one-sigma uncertainties of (E, G, d) from the
    local Jacobian, one row per peak.
    """

    resonances: ResonanceSet
    residual_rms: float
    windows: list
    flags: list
    errors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    meta: dict = field(default_factory=dict)

    @property
    def converged(self):
        return np.array([f == OK for f in self.flags], dtype=bool)

    def good(self):
        """Resonances that passed every check."""
        m = self.converged
        r = self.resonances
        return ResonanceSet(r.energies[m], r.widths[m], r.depths[m], provenance="fitted")

    def __len__(self):
        return len(self.flags)


def noise_estimate(y, order=4):
    """Robust white-noise level from ``order``-th differences.

    High-order differences suppress the smooth line shapes, so a noiseless
    trace gives a level far below its shallowest resonance.
    """
    dk = np.diff(y, order)
    scale = np.sqrt(comb(2 * order, order))
    return float(np.median(np.abs(dk - np.median(dk))) / 0.6745 / scale)


def detect_peaks(trace, min_prominence=None, width_factor=3.0, max_width=None):
    """Windows ``(f_lo, f_hi)`` around the local minima of ``|S|^2``.

    ``min_prominence`` defaults to eight times the estimated noise level of
    ``|S|^2`` (with a floor of 1e-9).  A window reaches ``width_factor``
    full widths at half prominence to either side of its minimum and is
    clipped at the midpoint to the neighbouring minima, so windows never
    overlap.  Minima wider than ``max_width`` (frequency units) are skipped.
    """
    y = np.abs(trace.s_values) ** 2
    f = trace.freqs
    if min_prominence is None:
        min_prominence = max(8 * noise_estimate(y), 1e-9)
    idx, props = signal.find_peaks(-y, prominence=min_prominence)
    if len(idx) == 0:
        return []
    widths = signal.peak_widths(-y, idx, rel_height=0.5, prominence_data=(
        props["prominences"], props["left_bases"], props["right_bases"]))[0]
    if max_width is not None:
        narrow = widths * trace.df <= max_width
        idx, widths = idx[narrow], widths[narrow]
        if len(idx) == 0:
            return []
    half = np.maximum(width_factor * widths, MIN_WINDOW_SAMPLES)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half, len(f) - 1)
    mid = (idx[1:] + idx[:-1]) / 2
    lo[1:] = np.maximum(lo[1:], mid)
    hi[:-1] = np.minimum(hi[:-1], mid)
    lo = np.ceil(lo).astype(int)
    hi = np.floor(hi).astype(int)
    return [(float(f[a]), float(f[b])) for a, b in zip(lo, hi)]


def _line(f, e, g, d):
    return -1j * d / (f - e + 0.5j * g)


def _initial_guess(f, y, baseline):
    i = int(np.argmin(y))
    depth = min(max(baseline - y[i], 1e-12), 0.999)
    below = np.flatnonzero(y <= y[i] + depth / 2)
    g = max((below.max() - below.min() + 1) * (f[1] - f[0]), 2 * (f[1] - f[0]))
    d = 0.5 * g * (1 - np.sqrt(1 - depth))
    return np.array([f[i], g, d])


def _fit_window(f, y, bg, p0):
    """Least-squares fit of one or more lines; ``p0`` is flat (E, G, d, ...)."""
    m = len(p0) // 3

    def model(p):
        z = f[None, :] - p[0::3, None] + 0.5j * p[1::3, None]
        return z, bg - 1j * np.sum(p[2::3, None] / z, axis=0)

    def resid(p):
        return np.abs(model(p)[1]) ** 2 - y

    def jac(p):
        z, s = model(p)
        d = p[2::3, None]
        ds = np.empty((len(f), 3 * m), complex)
        ds[:, 0::3] = (-1j * d / z ** 2).T
        ds[:, 1::3] = (-d / (2 * z ** 2)).T
        ds[:, 2::3] = (-1j / z).T
        return 2 * np.real(np.conj(s)[:, None] * ds)

    res = optimize.least_squares(resid, p0, jac=jac, method="lm", x_scale="jac",
                                 ftol=1e-15, xtol=1e-15, gtol=GRADIENT_TOL,
                                 max_nfev=MAX_ITERATIONS * m)
    return res


def _param_errors(res, n):
    m = len(res.x)
    dof = max(n - m, 1)
    s2 = 2 * res.cost / dof
    try:
        cov = np.linalg.inv(res.jac.T @ res.jac) * s2
        return np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        return np.full(m, np.inf)


def _flag(res, f, y, params, sigma):
    e, g, d = params
    rms = np.sqrt(np.mean(res.fun ** 2))
    if not res.success:
        return NO_CONVERGENCE
    if not np.all(np.isfinite(params)) or g <= 0 or d <= 0 or d >= g / 2:
        return INVALID
    if g < MIN_WIDTH_SAMPLES * (f[1] - f[0]):
        return INVALID
    if not f[0] <= e <= f[-1]:
        return OUTSIDE_WINDOW
    if rms > 3 * sigma + 0.01 * (1 - y.min()):
        return POOR_FIT
    return OK


def fit_resonances(trace, windows, n_sweeps=50, tol=1e-10, start=None):
    """Fit one Breit-Wigner line per window.

    Sweep zero treats every window in isolation.  Later sweeps are
    Gauss-Seidel updates: each window is refitted with the current tails of
    all other resonances as a fixed background, until the largest relative
    parameter change drops below ``tol``.  Peaks failing a check are
    flagged and left out of the background and of downstream sums.

    ``start`` (a ResonanceSet) warm-starts every window that contains one of
    its lines; those windows skip the isolated first fit.
    """
    f_all = trace.freqs
    y_all = np.abs(trace.s_values) ** 2
    sigma = noise_estimate(y_all)
    windows = sorted(windows)
    slices = []
    for lo, hi in windows:
        a, b = np.searchsorted(f_all, [lo, hi], side="left")
        b = min(b + 1, len(f_all))
        if b - a < MIN_WINDOW_SAMPLES:
            raise ValueError(f"window ({lo}, {hi}) has fewer than {MIN_WINDOW_SAMPLES} samples")
        slices.append(slice(a, b))

    n = len(windows)
    params = np.array([_initial_guess(f_all[sl], y_all[sl], 1.0) for sl in slices]).reshape(n, 3)
    errors = np.zeros((n, 3))
    flags = [OK] * n
    for k, sl in enumerate(slices):
        if start is not None:
            lo, hi = windows[k]
            inside = np.flatnonzero((start.energies >= lo) & (start.energies <= hi))
            if len(inside):
                j = inside[np.argmin(np.abs(start.energies[inside] - 0.5 * (lo + hi)))]
                params[k] = start.energies[j], start.widths[j], start.depths[j]
                continue
        res = _fit_window(f_all[sl], y_all[sl], 1.0, params[k])
        params[k] = res.x
        flags[k] = _flag(res, f_all[sl], y_all[sl], res.x, sigma)

    def usable(k):
        return flags[k] in (OK, POOR_FIT)

    # lines closer than their widths are fitted jointly over the union of
    # their windows; Gauss-Seidel between strongly coupled lines is slow
    clusters = [[0]] if n else []
    for k in range(1, n):
        prev = clusters[-1][-1]
        if (usable(k) and usable(prev)
                and abs(params[k, 0] - params[prev, 0]) < params[k, 1] + params[prev, 1]):
            clusters[-1].append(k)
        else:
            clusters.append([k])

    lines = np.zeros((n, len(f_all)), complex)
    for k in range(n):
        if usable(k):
            lines[k] = _line(f_all, *params[k])
    total = lines.sum(axis=0)
    sweeps = 0
    for sweeps in range(1, n_sweeps + 1):
        change = 0.0
        for members in clusters:
            sl = slice(slices[members[0]].start, slices[members[-1]].stop)
            f, y = f_all[sl], y_all[sl]
            bg = 1 + total[sl] - lines[members, sl].sum(axis=0)
            p0 = np.concatenate([params[k] if usable(k) else _initial_guess(f_all[slices[k]], y_all[slices[k]], 1.0)
                                 for k in members])
            res = _fit_window(f, y, bg, p0)
            err = _param_errors(res, len(f))
            for i, k in enumerate(members):
                x = res.x[3 * i:3 * i + 3]
                flags[k] = _flag(res, f, y, x, sigma)
                errors[k] = err[3 * i:3 * i + 3]
                if usable(k):
                    change = max(change, np.max(np.abs(x - params[k]) / np.abs(params[k])))
                    new = _line(f_all, *x)
                else:
                    new = np.zeros(len(f_all), complex)
                params[k] = x
                total += new - lines[k]
                lines[k] = new
        if change < tol:
            break

    model = np.ones(len(f_all), complex)
    good = [k for k in range(n) if flags[k] == OK]
    if good:
        model += lines[good].sum(axis=0)
    residual = float(np.sqrt(np.mean((np.abs(model) ** 2 - y_all) ** 2)))

    order = np.argsort(params[:, 0], kind="stable")
    params, errors = params[order], errors[order]
    flags = [flags[k] for k in order]
    windows = [windows[k] for k in order]
    depths = np.clip(params[:, 2], 0, None)
    widths = np.where(params[:, 1] > 0, params[:, 1], np.finfo(float).tiny)
    resonances = ResonanceSet(params[:, 0], widths, depths, provenance="fitted")
    meta = {"position_index": trace.position_index, "noise_sigma": sigma, "sweeps": sweeps}
    return FitReport(resonances, residual, windows, flags, errors, meta)


def fit_trace(trace, min_prominence=None, n_sweeps=50, max_rounds=3):
    """Detect and fit every resonance of a trace.

    A weak line on the flank of a strong neighbour leaves no local minimum
    in ``|S|^2``.  After each full fit two searches look for such lines:
    dips of the complex residual ``1 + S - S_fit``, and windows where a
    two-line fit beats the single line by a wide margin.  New lines are
    added as extra windows and the full fit is repeated, at most
    ``max_rounds`` times.
    """
    windows = detect_peaks(trace, min_prominence)
    report = fit_resonances(trace, windows, n_sweeps)
    for _ in range(max_rounds):
        new = _hidden_lines(trace, report, min_prominence)
        if not new:
            break
        merged = _non_overlapping(list(report.windows) + new, MIN_WINDOW_SAMPLES * trace.df)
        report = fit_resonances(trace, merged, n_sweeps, start=report.good())
    return report


def _hidden_lines(trace, report, min_prominence=None):
    """Windows around lines the current fit has missed."""
    keep = np.array([fl in (OK, POOR_FIT) for fl in report.flags], dtype=bool)
    if not keep.any():
        return []
    f_all = trace.freqs
    y_all = np.abs(trace.s_values) ** 2
    r = report.resonances
    e0, g0, d0 = r.energies[keep], r.widths[keep], r.depths[keep]
    lines = np.array([_line(f_all, *p) for p in zip(e0, g0, d0)])
    total = 1 + lines.sum(axis=0)
    g = float(np.median(g0))
    dips = 4 * d0 / g0
    sigma = noise_estimate(y_all - np.abs(total) ** 2)

    def plausible(res, f, y, params):
        return (_flag(res, f, y, params, sigma) in (OK, POOR_FIT)
                and 0.3 * g < params[1] < 3 * g)

    found = []
    # residual dips
    resid = np.abs(1 + trace.s_values - total) ** 2
    prom = min_prominence if min_prominence is not None else max(8 * sigma, 1e-12)
    idx, _ = signal.find_peaks(-resid, prominence=prom,
                               width=(0.3 * g / trace.df, 3 * g / trace.df))
    for i in idx:
        c = f_all[i]
        sl = slice(*np.searchsorted(f_all, [c - 1.5 * g, c + 1.5 * g]))
        f, y = f_all[sl], resid[sl]
        if len(f) < MIN_WINDOW_SAMPLES:
            continue
        res = _fit_window(f, y, 1.0, _initial_guess(f, y, 1.0))
        if not plausible(res, f, y, res.x):
            continue
        gain = np.sum(res.fun ** 2) / np.sum((y - 1) ** 2)
        near = np.abs(e0 - res.x[0]) < 3 * g
        ratio = 4 * res.x[2] / res.x[1] / dips[near].max() if near.any() else np.inf
        # misfit ripples of a strong neighbour are both imperfectly
        # Lorentzian and many orders of magnitude shallower than it
        if gain < CLEAN_GAIN or (gain < 0.1 and ratio > MIN_DIP_RATIO):
            found.append(res.x[0])

    # unresolved doublets
    for k, (e, w, d) in enumerate(zip(e0, g0, d0)):
        sl = slice(*np.searchsorted(f_all, [e - 2 * w, e + 2 * w]))
        f, y = f_all[sl], y_all[sl]
        bg = total[sl] - lines[k, sl]
        one = np.abs(bg + lines[k, sl]) ** 2 - y
        rss1 = np.sum(one ** 2)
        if rss1 < 50 * sigma ** 2 * len(f):
            continue
        r_c = trace.s_values[sl] - bg - lines[k, sl]
        j = int(np.argmax(np.abs(r_c)))
        p0 = np.array([e, w, d, f[j], g, 0.5 * g * np.abs(r_c[j])])
        res = _fit_window(f, y, bg, p0)
        p1, p2 = res.x[:3], res.x[3:]
        if not (plausible(res, f, y, p1) and plausible(res, f, y, p2)):
            continue
        if np.sum(res.fun ** 2) < SPLIT_GAIN * rss1 and abs(p1[0] - p2[0]) > 2 * trace.df:
            found.append(p2[0] if abs(p1[0] - e) < abs(p2[0] - e) else p1[0])

    fitted = np.sort(e0)
    out = []
    for c in sorted(found):
        if np.min(np.abs(fitted - c)) > 2 * trace.df and all(abs(c - o[0] - 1.5 * g) > 2 * trace.df for o in out):
            out.append((c - 1.5 * g, c + 1.5 * g))
    return out


def _non_overlapping(windows, min_span=0.0):
    """Split overlaps at the midpoint between window centres."""
    windows = sorted(windows, key=lambda w: w[0] + w[1])
    out = [list(w) for w in windows]
    for prev, cur in zip(out[:-1], out[1:]):
        if cur[0] < prev[1]:
            cut = 0.25 * (prev[0] + prev[1] + cur[0] + cur[1])
            prev[1] = min(prev[1], cut)
            cur[0] = max(cur[0], cut)
    return [tuple(w) for w in out if w[1] - w[0] > min_span]


def _as_resonances(item):
    if isinstance(item, FitReport):
        return item.good()
    return item


def match_levels(res0, res1, gate=0.5):
    """Mutual nearest neighbours in energy closer than ``gate`` spacings."""
    e0, e1 = res0.energies, res1.energies
    if len(e0) == 0 or len(e1) == 0:
        return np.zeros((0, 2), dtype=int)
    d = np.abs(e0[:, None] - e1[None, :])
    j = np.argmin(d, axis=1)
    i = np.argmin(d, axis=0)
    keep = (i[j] == np.arange(len(e0))) & (d[np.arange(len(e0)), j] < gate)
    return np.column_stack([np.flatnonzero(keep), j[keep]])


def ordinary_fidelity(reports0, reports1, times, gate=0.5, error_units="levels"):
    """Fidelity at the antenna from resonance positions and depths.

    Every pair ``(reports0[p], reports1[p])`` contributes
    ``sum_n sqrt(d0_n d1_n) exp(2 pi i (E0_n - E1_n) t)`` over matched
    levels.  Sums are averaged over pairs and then divided by
    ``sqrt(<sum d0> <sum d1>)``.  Items may be fit reports (only good
    peaks are used) or resonance sets.

    The jackknife deletes one level (``error_units="levels"``) or one
    position pair (``"pairs"``).  Levels are tracked across pairs by the
    nearest energy of the pair with the most matches.  All positions share
    one billiard and their amplitudes stay correlated over long distances,
    so pairs are not independent while different levels are.
    """
    if error_units not in ("levels", "pairs"):
        raise ValueError("error_units must be 'levels' or 'pairs'")
    if len(reports0) != len(reports1) or not reports0:
        raise ValueError("need equally many, and at least one, reports per side")
    times = np.asarray(times, dtype=float)
    terms = []
    dropped = 0
    for a, b in zip(reports0, reports1):
        r0, r1 = _as_resonances(a), _as_resonances(b)
        m = match_levels(r0, r1, gate)
        if len(m) < MIN_MATCHED:
            raise ValueError(f"only {len(m)} matched resonances (< {MIN_MATCHED})")
        dropped += len(r0) + len(r1) - 2 * len(m)
        e0, e1 = r0.energies[m[:, 0]], r1.energies[m[:, 1]]
        terms.append((0.5 * (e0 + e1), e0 - e1, r0.depths[m[:, 0]], r1.depths[m[:, 1]]))
    if dropped:
        warnings.warn(f"{dropped} unmatched resonances dropped", stacklevel=2)

    n_pairs = len(terms)
    if error_units == "pairs":
        unit_of = [np.full(len(t[0]), p) for p, t in enumerate(terms)]
        n_units = n_pairs
    else:
        ref = max(terms, key=lambda t: len(t[0]))[0]
        unit_of = [np.argmin(np.abs(t[0][:, None] - ref[None, :]), axis=1) for t in terms]
        n_units = len(ref)
    nums = np.zeros((n_units, len(times)), complex)
    w0s = np.zeros(n_units)
    w1s = np.zeros(n_units)
    for (_, de, d0, d1), u in zip(terms, unit_of):
        contrib = np.exp(2j * np.pi * np.multiply.outer(de, times)) * np.sqrt(d0 * d1)[:, None]
        np.add.at(nums, u, contrib)
        np.add.at(w0s, u, d0)
        np.add.at(w1s, u, d1)

    def estimator(num, w0, w1):
        return num / np.sqrt(np.multiply(w0, w1))[..., None]

    amp, err_re, err_im = jackknife(estimator, nums, w0s, w1s)
    has_err = n_units > 1
    return FidelityCurve(times, amp, err_re if has_err else None,
                         err_im if has_err else None, label="ordinary",
                         meta={"n_pairs": n_pairs, "gate": gate, "dropped": dropped,
                               "error_units": error_units,
                               "normalization": "sqrt(<sum d0><sum d1>)"})
