import warnings

import numpy as np
import pytest

from localfid.rpw import BilliardConfig, build_level_ensemble
from localfid.scatfid import (CorrelogramPair, WindowConfig, correlogram, fluctuating_part,
                              scattering_fidelity)
from localfid.spectra import (GridConfig, ResonanceSet, SpectrumTrace, WidthConfig, breit_wigner,
                              synth_spectrum)


def noise_trace(seed, n=1024, span=60.0):
    rng = np.random.default_rng(seed)
    f = np.linspace(0, span, n)
    return SpectrumTrace(f, rng.standard_normal(n) + 1j * rng.standard_normal(n), position_index=seed)


@pytest.fixture(scope="module")
def ensemble():
    return build_level_ensemble(BilliardConfig(), 40, seed=0)


@pytest.fixture(scope="module")
def traces(ensemble):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return [synth_spectrum(ensemble, i, WidthConfig(), GridConfig(4096)) for i in range(8)]


def test_constant_trace_fluctuation_vanishes():
    f = np.linspace(0, 50, 512)
    out = fluctuating_part(SpectrumTrace(f, np.full(512, 0.3 - 0.2j)))
    assert np.all(out.s_values == 0)


def test_single_line_fluctuation_zero_mean():
    f = np.linspace(-30, 30, 4096)
    s = breit_wigner(f, ResonanceSet([0.0], [0.15], [0.01]))
    out = fluctuating_part(SpectrumTrace(f, s))
    assert abs(out.s_values.mean()) < 1e-12


def test_default_trace_keeps_fluctuations(traces):
    out = fluctuating_part(traces[0])
    assert np.mean(np.abs(out.s_values)) > 0
    assert abs(out.s_values.mean()) < 1e-12


def test_fluctuating_part_errors():
    with pytest.raises(ValueError, match="at least"):
        fluctuating_part(SpectrumTrace(np.arange(32.0), np.ones(32)))
    with pytest.raises(ValueError, match="exceeds"):
        fluctuating_part(SpectrumTrace(np.linspace(0, 5, 100), np.ones(100)), window=10.0)


def test_window_config_validation():
    for bad in ({"window": 0}, {"n_bands": 0}, {"t_max": -1.0}, {"taper": "hann"}):
        with pytest.raises(ValueError):
            WindowConfig(**bad)


def test_identical_traces_correlograms_equal(traces):
    c = correlogram(traces[0], traces[0])
    assert np.array_equal(c.chat_cross, c.chat_auto0)
    assert np.array_equal(c.chat_auto0, c.chat_auto1)
    c2 = correlogram(traces[0], SpectrumTrace(traces[0].freqs, traces[0].s_values.copy()))
    assert np.array_equal(c2.chat_cross, c2.chat_auto0)


def test_global_phase_keeps_modulus(traces):
    phase = np.exp(0.7j)
    other = SpectrumTrace(traces[1].freqs, traces[1].s_values * phase)
    a = correlogram(traces[0], traces[1])
    b = correlogram(traces[0], other)
    assert np.allclose(np.abs(a.chat_cross), np.abs(b.chat_cross), rtol=1e-10, atol=1e-18)


def test_grid_mismatch_rejected(traces):
    shifted = SpectrumTrace(traces[0].freqs + 0.1, traces[0].s_values)
    with pytest.raises(ValueError, match="grid"):
        correlogram(traces[0], shifted)


def test_time_axis_heisenberg_units(traces):
    c = correlogram(traces[0], traces[1])
    tr = traces[0]
    assert c.times[0] == 0
    assert c.times[1] == pytest.approx(1 / (len(tr) * tr.df))
    assert c.meta["heisenberg_time"] == 1.0
    cut = correlogram(traces[0], traces[1], WindowConfig(t_max=5.0))
    assert cut.times[-1] <= 5.0 < c.times[len(cut.times)]
    assert np.array_equal(cut.chat_cross, c.chat_cross[:len(cut.times)])


def test_phase_convention_matches_level_shift():
    # a line moved by +delta gives cross ~ exp(2 pi i (E0 - E1) t) = exp(-2 pi i delta t)
    f = np.linspace(-40, 40, 8192)
    delta = 0.2
    t0 = SpectrumTrace(f, breit_wigner(f, ResonanceSet([0.0], [0.1], [0.01])))
    t1 = SpectrumTrace(f, breit_wigner(f, ResonanceSet([delta], [0.1], [0.01])))
    c = correlogram(t0, t1, WindowConfig(window=30.0, t_max=2.0))
    ratio = c.chat_cross / np.sqrt(c.chat_auto0 * c.chat_auto1)
    ok = c.times > 0.2
    assert np.allclose(np.angle(ratio[ok]), np.angle(np.exp(-2j * np.pi * delta * c.times[ok])),
                       atol=0.05)


def test_uncorrelated_traces_null():
    pairs = [correlogram(noise_trace(2 * i), noise_trace(2 * i + 1), WindowConfig(window=5.0))
             for i in range(100)]
    cross = np.array([p.chat_cross for p in pairs])
    mean = cross.mean(axis=0)
    err_re = cross.real.std(axis=0, ddof=1) / 10
    err_im = cross.imag.std(axis=0, ddof=1) / 10
    z = np.concatenate([mean.real[1:] / err_re[1:], mean.imag[1:] / err_im[1:]])
    # about a thousand z-scores: allow the Gaussian extreme
    assert np.max(np.abs(z)) < 4.5
    assert abs(np.mean(z)) < 0.15


def test_identical_pairs_give_unit_fidelity(traces):
    pairs = [correlogram(t, t) for t in traces[:3]]
    f = scattering_fidelity(pairs)
    assert np.allclose(f.amplitude, 1, atol=1e-12)


def test_band_split_identical_pairs(traces):
    cfg = WindowConfig(n_bands=4, t_max=10.0)
    pairs = [correlogram(t, t, cfg) for t in traces[:3]]
    assert pairs[0].bands.shape[:2] == (3, 4)
    f = scattering_fidelity(pairs)
    assert np.allclose(f.amplitude, 1, atol=1e-12)
    assert f.meta["error_units"] == "bands"


def test_band_sum_equals_total(traces):
    c = correlogram(traces[0], traces[1], WindowConfig(n_bands=8, t_max=10.0))
    assert np.allclose(c.bands[0].sum(axis=0), c.chat_cross)


def toy_pair(cross, a0, a1):
    t = np.arange(3.0)
    return CorrelogramPair(t, np.asarray(cross, complex), np.asarray(a0, float),
                           np.asarray(a1, float))


def test_average_before_quotient():
    pairs = [toy_pair([1, 1, 1], [1, 1, 1], [1, 1, 1]),
             toy_pair([2, 1, 0], [4, 2, 1], [1, 2, 4]),
             toy_pair([0, 3, 1], [1, 9, 1], [1, 1, 9])]
    f = scattering_fidelity(pairs)
    c = np.array([[1, 1, 1], [2, 1, 0], [0, 3, 1]], float)
    a0 = np.array([[1, 1, 1], [4, 2, 1], [1, 9, 1]], float)
    a1 = np.array([[1, 1, 1], [1, 2, 4], [1, 1, 9]], float)
    before = c.mean(0) / np.sqrt(a0.mean(0) * a1.mean(0))
    after = (c / np.sqrt(a0 * a1)).mean(0)
    assert np.allclose(f.amplitude, before, atol=1e-14)
    assert not np.allclose(before, after)
    assert f.stderr is not None and f.meta["error_units"] == "pairs"


def test_single_pair_warns_without_errors(traces):
    with pytest.warns(UserWarning, match="no error bars"):
        f = scattering_fidelity([correlogram(traces[0], traces[1])])
    assert f.stderr is None


def test_zero_power_rejected():
    with pytest.raises(ValueError, match="power"):
        scattering_fidelity([toy_pair([0, 0, 0], [0, 0, 0], [0, 0, 0])] * 2)
    with pytest.raises(ValueError):
        scattering_fidelity([])


def test_mixed_band_splits_rejected(traces):
    a = correlogram(traces[0], traces[1], WindowConfig(n_bands=4, t_max=5.0))
    b = correlogram(traces[2], traces[3], WindowConfig(n_bands=2, t_max=5.0))
    with pytest.raises(ValueError):
        scattering_fidelity([a, b])


def test_welch_taper_runs(traces):
    c = correlogram(traces[0], traces[1], WindowConfig(taper="welch"))
    assert c.meta["taper"] == "welch"
    assert np.all(c.chat_auto0 >= 0)
