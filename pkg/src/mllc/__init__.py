"""Latent class, multilevel latent class, and random-intercept regression
models for two-level categorical survey data, with BIC model selection,
synthetic-data oracles, and report emission."""

__version__ = "0.1.0"

from .data import (
    CodedDesign,
    Covariate,
    Item,
    ItemSchema,
    TwoLevelDataset,
    build_design,
    effect_code,
    effects_with_reference,
    normalize_weights,
    validate_dataset,
)
from .errors import InputError, MllcError, NumericalError
from .lc import EmConfig, FitResult, LcParams, bic, lc_em_fit, lc_loglik, lc_posteriors
from .multilevel import (
    ConcomitantCoefs,
    MllcParams,
    MllcPosteriors,
    canonicalize_labels,
    classify_groups,
    concomitant_mstep,
    mllc_em_fit,
    mllc_loglik,
    mllc_posteriors,
)
from .regression import (
    RegressionFit,
    RegressionSpec,
    compute_icc,
    fit_ri_logit,
    fit_ri_ordinal,
    ri_logit_loglik,
    ri_logit_score,
    ri_ordinal_loglik,
    ri_ordinal_score,
)
from .reports import ProfileReport, profile_report
from .selection import GridSpec, grid_search, multi_start_fit
from .synth import (
    RegressionScenario,
    ScenarioSpec,
    brute_force_loglik,
    reference_profile_params,
    simulate_mllc,
    simulate_ri_logit,
)

__all__ = [
    "CodedDesign",
    "ConcomitantCoefs",
    "Covariate",
    "EmConfig",
    "FitResult",
    "GridSpec",
    "InputError",
    "Item",
    "ItemSchema",
    "LcParams",
    "MllcError",
    "MllcParams",
    "MllcPosteriors",
    "NumericalError",
    "ProfileReport",
    "RegressionFit",
    "RegressionScenario",
    "RegressionSpec",
    "ScenarioSpec",
    "TwoLevelDataset",
    "bic",
    "brute_force_loglik",
    "build_design",
    "canonicalize_labels",
    "classify_groups",
    "compute_icc",
    "concomitant_mstep",
    "effect_code",
    "effects_with_reference",
    "fit_ri_logit",
    "fit_ri_ordinal",
    "grid_search",
    "lc_em_fit",
    "lc_loglik",
    "lc_posteriors",
    "mllc_em_fit",
    "mllc_loglik",
    "mllc_posteriors",
    "multi_start_fit",
    "normalize_weights",
    "profile_report",
    "reference_profile_params",
    "ri_logit_loglik",
    "ri_logit_score",
    "ri_ordinal_loglik",
    "ri_ordinal_score",
    "simulate_mllc",
    "simulate_ri_logit",
    "validate_dataset",
]
