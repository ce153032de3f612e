"""Statistical models of turbulence-induced intensity fading.

Seven unit-mean fading families, their scintillation indices and moments,
random variates and correlated series, histogram goodness-of-fit fitting,
and coherence-time estimation from the temporal covariance of irradiance.
"""

__version__ = "0.1.0"

from .distributions import (Family, FadingModel, from_scintillation_index, g_converged, g_series,
                            normalize)
from .errors import (ConstraintError, DegenerateError, DomainError, FadingError, InfeasibleError,
                     InputError, NumericalError, ParameterCapError, ParseError, QuadratureError)
from .estimation import (FitConfig, FitResult, Histogram, IntensitySeries, NormalizedFadingSeries,
                         RegimeFlag, build_histogram, estimate_scintillation_index, fit, fit_all,
                         goodness_of_fit, normalize_series)
from .sampling import RngStream, SimulationSpec, sample, simulate_fading_series
from .temporal import CoherenceEstimate, CovarianceCurve, coherence_time, covariance_coefficient

__all__ = [
    "Family", "FadingModel", "from_scintillation_index", "g_converged", "g_series", "normalize",
    "ConstraintError", "DegenerateError", "DomainError", "FadingError", "InfeasibleError",
    "InputError", "NumericalError", "ParameterCapError", "ParseError", "QuadratureError",
    "FitConfig", "FitResult", "Histogram", "IntensitySeries", "NormalizedFadingSeries",
    "RegimeFlag", "build_histogram", "estimate_scintillation_index", "fit", "fit_all",
    "goodness_of_fit", "normalize_series",
    "RngStream", "SimulationSpec", "sample", "simulate_fading_series",
    "CoherenceEstimate", "CovarianceCurve", "coherence_time", "covariance_coefficient",
]
