"""Random-plane-wave amplitudes and point-scatterer level shifts.

Energies are measured in units of the mean level spacing and wave
amplitudes in units of ``1/sqrt(area)``, so a level-shift strength
``alpha`` carries units of spacing times area.  Wavefunctions are real
(time-reversal invariant billiard).
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import constants, linalg, special

from .stats import shard_rngs, shard_sizes

SPEED_OF_LIGHT = constants.c

# smallest (-) value of J0 on the positive axis, attained at x ~ 3.8317
J0_MIN = -0.40275939570255315


@dataclass
class BilliardConfig:
    """Physical scenario: geometry, band, scatterer shifts and coupling.

    Defaults reproduce the rectangular microwave billiard of the
    measurement (340 mm x 240 mm, 3.5-6 GHz, disk moved in 1 mm steps).
    ``alpha`` defaults to one tenth of a mean spacing times the area.
    """

    side_a: float = 0.340
    side_b: float = 0.240
    freq_lo: float = 3.5e9
    freq_hi: float = 6.0e9
    alpha: float = 0.1 * 0.340 * 0.240
    shifts: tuple = (0.001, 0.002, 0.004)
    n_levels: int = 64
    antenna_pos_seed: int = 11
    scatterer_pos_seed: int = 12
    area: float | None = None
    guard: float = 0.2

    def __post_init__(self):
        if self.area is None:
            self.area = self.side_a * self.side_b
        self.shifts = tuple(float(s) for s in self.shifts)
        if self.area <= 0:
            raise ValueError(f"area must be positive, got {self.area}")
        if self.side_a <= 0 or self.side_b <= 0:
            raise ValueError("side lengths must be positive")
        if not self.freq_hi > self.freq_lo > 0:
            raise ValueError("need freq_hi > freq_lo > 0")
        if any(s < 0 for s in self.shifts):
            raise ValueError("shifts must be non-negative")
        if self.n_levels < 1:
            raise ValueError("n_levels must be >= 1")

    @property
    def k_center(self):
        """Band-centre wavenumber in rad/m."""
        return wavenumber(0.5 * (self.freq_lo + self.freq_hi))

    @property
    def strength(self):
        """alpha / (A * mean spacing): typical shift in spacing units."""
        return self.alpha / self.area

    @property
    def is_perturbative(self):
        return abs(self.strength) < self.guard


@dataclass
class WavePair:
    """Wave amplitudes at two scatterer positions, one entry per sample."""

    psi1: np.ndarray
    psi2: np.ndarray

    def __len__(self):
        return len(self.psi1)


@dataclass
class LevelEnsemble:
    """Unperturbed levels and wave amplitudes at every scan position.

    ``amplitudes[n, i]`` is psi_n at scan position ``i``; the scan is a set
    of short segments, each holding one position per entry of ``offsets``
    (distances along the segment direction).  Segments are laid out one
    after the other, so position ``s * len(offsets) + j`` is offset ``j``
    of segment ``s``.
    """

    energies_0: np.ndarray
    amplitudes: np.ndarray
    antenna_amp: np.ndarray
    positions: np.ndarray
    offsets: np.ndarray
    area: float
    alpha: float
    k: np.ndarray | float
    antenna_pos: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @property
    def n_levels(self):
        return len(self.energies_0)

    @property
    def n_positions(self):
        return self.amplitudes.shape[1]

    @property
    def n_segments(self):
        return self.n_positions // len(self.offsets)

    @property
    def intensity(self):
        return self.amplitudes ** 2

    @property
    def intensity_at(self):
        """Mapping position index -> psi_n(r_i)**2 over all levels."""
        inten = self.intensity
        return {i: inten[:, i] for i in range(self.n_positions)}

    def energies(self, position_index):
        """Perturbed levels with the scatterer at ``position_index``."""
        return self.energies_0 + level_shift(self.alpha, self.intensity[:, position_index])

    def pairs(self, dr):
        """Position-index pairs ``(start, start + dr)``, one per segment."""
        hit = np.flatnonzero(np.isclose(self.offsets, dr, rtol=0, atol=1e-12))
        if len(hit) == 0:
            raise ValueError(f"shift {dr!r} is not among the scan offsets {self.offsets.tolist()}")
        j = int(hit[0])
        start = np.arange(self.n_segments) * len(self.offsets)
        return np.column_stack([start, start + j])

    def shifts(self, dr):
        """Level shift differences E_n(r + dr) - E_n(r), shape (n_levels, n_pairs)."""
        p = self.pairs(dr)
        inten = self.intensity
        return self.alpha * (inten[:, p[:, 1]] - inten[:, p[:, 0]])


def wavenumber(freq):
    return 2 * np.pi * np.asarray(freq, dtype=float) / SPEED_OF_LIGHT


def two_point_correlation(k, dr, A):
    """<psi(r) psi(r + dr)> = J0(k |dr|) / A for random plane waves."""
    if np.any(np.asarray(A) <= 0):
        raise ValueError("area must be positive")
    if np.any(np.asarray(k) < 0) or np.any(np.asarray(dr) < 0):
        raise ValueError("k and dr must be non-negative")
    return special.j0(np.multiply(k, dr)) / A


def level_shift(alpha, intensity):
    """Point-scatterer shift of a level, alpha * |psi(r)|^2."""
    return np.multiply(alpha, intensity)


def sample_wave_pairs(k, dr, A, n, seed, n_shards=1, n_jobs=1):
    """Draw ``n`` jointly Gaussian amplitude pairs at distance ``dr``.

    Each shard draws from its own stream spawned from ``seed``; the result
    depends on ``n_shards`` but not on ``n_jobs``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    c = float(two_point_correlation(k, dr, A) * A)
    sizes = shard_sizes(n, n_shards)
    rngs = shard_rngs(seed, n_shards)

    def draw(rng, m):
        return rng.standard_normal((2, m))

    if n_jobs > 1 and n_shards > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            blocks = list(pool.map(draw, rngs, sizes))
    else:
        blocks = [draw(r, m) for r, m in zip(rngs, sizes)]
    z = np.concatenate(blocks, axis=1)
    scale = 1 / np.sqrt(A)
    psi1 = z[0] * scale
    if dr == 0:
        return WavePair(psi1, psi1.copy())
    psi2 = (c * z[0] + np.sqrt(1 - c * c) * z[1]) * scale
    return WavePair(psi1, psi2)


def _semicircle_cdf(x):
    x = np.clip(x, -1, 1)
    return 0.5 + (x * np.sqrt(1 - x * x) + np.arcsin(x)) / np.pi


def unfolded_goe_spectrum(n, rng, block=128):
    """``n`` increasing levels with GOE correlations and unit mean spacing.

    Built from independent GOE blocks: the central ``block`` levels of a
    ``2 * block`` matrix are unfolded with the semicircle law and blocks are
    joined by a Wigner-surmise gap.  The result is shifted to start at zero
    and rescaled to a mean spacing of exactly one.
    """
    size = 2 * block
    parts = []
    offset = 0.0
    remaining = n
    while remaining > 0:
        h = rng.standard_normal((size, size))
        h = (h + h.T) / 2
        ev = np.linalg.eigvalsh(h)
        radius = np.sqrt(2 * size)
        unf = size * _semicircle_cdf(ev / radius)
        lo = (size - block) // 2
        take = unf[lo:lo + min(block, remaining)]
        take = take - take[0] + offset
        parts.append(take)
        gap = np.sqrt(-4 / np.pi * np.log(1 - rng.random()))
        offset = take[-1] + gap
        remaining -= len(take)
    levels = np.concatenate(parts)
    levels -= levels[0]
    if n > 1:
        levels *= (n - 1) / levels[-1]
    return levels


def poisson_spectrum(n, rng):
    levels = np.concatenate([[0.0], np.cumsum(rng.exponential(size=n - 1))])
    if n > 1:
        levels *= (n - 1) / levels[-1]
    return levels


def scan_offsets(shifts):
    """Distances of the positions inside one scan segment."""
    return np.array(sorted({0.0, *[float(s) for s in shifts]}))


def scan_positions(config, n_positions):
    """Scatterer coordinates for ``n_positions`` along random short segments.

    Each segment starts at a uniform point of the rectangle and runs in a
    uniform random direction; its positions sit at the configured shifts
    from the start, so it stays inside the billiard.
    """
    offsets = scan_offsets(config.shifts)
    per = len(offsets)
    if n_positions < per or n_positions % per:
        raise ValueError(
            f"n_positions={n_positions} must be a positive multiple of the "
            f"{per} positions per scan segment")
    n_seg = n_positions // per
    rng = np.random.default_rng(config.scatterer_pos_seed)
    reach = offsets[-1]
    if 2 * reach >= min(config.side_a, config.side_b):
        raise ValueError("shifts too large for the billiard")
    start = np.column_stack([
        rng.uniform(reach, config.side_a - reach, n_seg),
        rng.uniform(reach, config.side_b - reach, n_seg),
    ])
    angle = rng.uniform(0, 2 * np.pi, n_seg)
    direction = np.column_stack([np.cos(angle), np.sin(angle)])
    pos = start[:, None, :] + offsets[None, :, None] * direction[:, None, :]
    return pos.reshape(-1, 2), offsets


def _merge_coincident(positions, tol=1e-12):
    """Map every position to a representative; returns (unique, index)."""
    d = np.hypot(*(positions[:, None, :] - positions[None, :, :]).transpose(2, 0, 1))
    first = np.argmax(d <= tol, axis=1)
    keep = np.flatnonzero(first == np.arange(len(positions)))
    relabel = np.full(len(positions), -1)
    relabel[keep] = np.arange(len(keep))
    return positions[keep], relabel[first]


def correlated_factor(cov):
    """Factor ``L`` with ``L @ L.T == cov`` for a PSD covariance.

    Cholesky when it succeeds; closely spaced scan positions make the J0
    kernel numerically singular, in which case the clipped symmetric
    eigen-decomposition is used instead.
    """
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        w, v = linalg.eigh(cov)
        return v * np.sqrt(np.clip(w, 0, None))


def level_frequencies(config, n_levels):
    """Weyl-law frequency of each level counted from the band bottom."""
    area = config.area
    n_lo = weyl_number(area, config.freq_lo)
    counts = n_lo + np.arange(n_levels) + 0.5
    return SPEED_OF_LIGHT * np.sqrt(counts / (np.pi * area))


def weyl_number(area, freq):
    return area * np.pi * freq ** 2 / SPEED_OF_LIGHT ** 2


def build_level_ensemble(config, n_positions, seed, base="goe", per_level_k=False):
    """Sample the unperturbed spectrum and amplitudes at every scan position.

    Amplitudes at all scan positions are drawn jointly Gaussian with
    covariance J0(k |r_i - r_j|) / A; the antenna amplitudes are drawn
    independently.  With ``per_level_k`` every level uses its own Weyl-law
    wavenumber instead of the band centre.
    """
    if config.n_levels < 16:
        raise ValueError("n_levels must be >= 16")
    if not config.is_perturbative:
        warnings.warn(
            f"alpha/(A*spacing) = {config.strength:.3g} exceeds the perturbative "
            f"guard {config.guard}", stacklevel=2)
    n = config.n_levels
    rng_levels, rng_amp, rng_ant = shard_rngs(seed, 3)

    if base == "goe":
        e0 = unfolded_goe_spectrum(n, rng_levels)
    elif base == "poisson":
        e0 = poisson_spectrum(n, rng_levels)
    else:
        raise ValueError(f"unknown base spectrum {base!r}")

    positions, offsets = scan_positions(config, n_positions)
    unique, index = _merge_coincident(positions)
    if len(unique) < len(positions):
        warnings.warn(
            f"{len(positions) - len(unique)} coincident scan positions merged",
            stacklevel=2)
    dist = np.hypot(*(unique[:, None, :] - unique[None, :, :]).transpose(2, 0, 1))
    z = rng_amp.standard_normal((n, len(unique)))
    scale = 1 / np.sqrt(config.area)
    if per_level_k:
        k = wavenumber(level_frequencies(config, n))
        amps = np.empty_like(z)
        for lvl in range(n):
            amps[lvl] = correlated_factor(special.j0(k[lvl] * dist)) @ z[lvl]
    else:
        k = config.k_center
        amps = z @ correlated_factor(special.j0(k * dist)).T
    amps = amps[:, index] * scale
    antenna = rng_ant.standard_normal(n) * scale
    ant_pos = np.random.default_rng(config.antenna_pos_seed).uniform(
        [0, 0], [config.side_a, config.side_b])
    return LevelEnsemble(
        energies_0=e0, amplitudes=amps, antenna_amp=antenna, positions=positions,
        offsets=offsets, area=config.area, alpha=config.alpha, k=k,
        antenna_pos=ant_pos)
