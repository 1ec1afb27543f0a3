"""Optimal transport distances, kernels, and Gaussian-process transport maps
for finite weighted cell complexes."""

from .complexes import (
    Chain,
    Cochain,
    CWComplex,
    boundary_apply,
    complex_hash,
    from_json_dict,
    hodge_laplacian,
    load_complex,
    random_complex,
    save_complex,
    symmetric_representative,
    to_json_dict,
    validate,
)
from .exceptions import CellotError, NumericalError, ValidationError
from .fgw import FGWInstance, build_instance, fgw_limit_check, fgw_objective, fgw_solve
from .gp import GPModel, TransportMapGP, fit, log_marginal_likelihood, mll, predict
from .kernels import (
    GramModel,
    KernelSpec,
    WassersteinFeatures,
    gram,
    min_eigenvalue,
    pairwise_distance,
    sigma_psd_search,
    truncate_and_features,
)
from .spectral import SpectralOperator, decompose, pinv, pinv_sqrt, sqrt_psd
from .transport import (
    DiscreteMeasure,
    GaussianSignal,
    TransportPlan,
    gaussian_signal,
    optimal_map,
    ot_exact,
    pad_to,
    pushforward_check,
    sample,
    sinkhorn,
    w2_closed_form,
    wp_empirical,
)

__version__ = "0.1.0"

__all__ = [
    "CWComplex", "Chain", "Cochain", "validate", "boundary_apply",
    "hodge_laplacian", "symmetric_representative", "random_complex",
    "to_json_dict", "from_json_dict", "save_complex", "load_complex",
    "complex_hash",
    "SpectralOperator", "decompose", "pinv", "sqrt_psd", "pinv_sqrt",
    "GaussianSignal", "DiscreteMeasure", "TransportPlan", "gaussian_signal",
    "pad_to", "w2_closed_form", "optimal_map", "pushforward_check", "sample",
    "ot_exact", "sinkhorn", "wp_empirical",
    "FGWInstance", "build_instance", "fgw_objective", "fgw_solve",
    "fgw_limit_check",
    "KernelSpec", "GramModel", "WassersteinFeatures", "pairwise_distance",
    "gram", "min_eigenvalue", "sigma_psd_search", "truncate_and_features",
    "GPModel", "TransportMapGP", "fit", "predict", "mll",
    "log_marginal_likelihood",
    "CellotError", "ValidationError", "NumericalError",
]
