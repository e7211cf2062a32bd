"""Fidelity decay of a chaotic billiard under a shifted point scatterer."""

__version__ = "0.1.0"

from .rpw import (BilliardConfig, LevelEnsemble, WavePair, build_level_ensemble,  # noqa: E402
                  level_shift, sample_wave_pairs, two_point_correlation)
from .theory import (FidelityCurve, analytic_fidelity, lambda_param, mc_fidelity,  # noqa: E402
                     perturbative_fidelity, rescale_time)
from .spectra import (GridConfig, NoiseConfig, ResonanceSet, SpectrumTrace,  # noqa: E402
                      WidthConfig, synth_spectrum, true_resonances, weyl_count)
from .scatfid import (CorrelogramPair, WindowConfig, correlogram, fluctuating_part,  # noqa: E402
                      scattering_fidelity)
from .resfit import FitReport, detect_peaks, fit_resonances, fit_trace, ordinary_fidelity  # noqa: E402
from .calibrate import (VelocityStats, alpha_from_fidelity, alpha_from_variance,  # noqa: E402
                        shift_distribution_test, shift_variance)
