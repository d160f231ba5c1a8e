"""Empirical-Bayes priors for the signal strength and per-cell posteriors."""

from .efron import efron_aic, efron_loglik, fit_efron, select_efron, structure_matrix
from .general_gamma import fit_general_gamma, general_gamma_loglik
from .gps import fit_gps, fit_single_gamma, gps_loglik
from .marginal import cell_data, nb_logpmf, nb_marginal
from .npmle import fit_km, km_loglik, select_grid
from .posterior import (
    EbSignalTable,
    PosteriorSummary,
    eb_signal_table,
    parse_eb_rule,
    posterior_cell,
    posterior_summaries,
)
from .priors import EfronPrior, GammaComponent, MixturePrior, prior_from_json

__all__ = [
    "EbSignalTable",
    "EfronPrior",
    "GammaComponent",
    "MixturePrior",
    "PosteriorSummary",
    "cell_data",
    "eb_signal_table",
    "efron_aic",
    "efron_loglik",
    "fit_efron",
    "fit_general_gamma",
    "fit_gps",
    "fit_km",
    "fit_single_gamma",
    "general_gamma_loglik",
    "gps_loglik",
    "km_loglik",
    "nb_logpmf",
    "nb_marginal",
    "parse_eb_rule",
    "posterior_cell",
    "posterior_summaries",
    "prior_from_json",
    "select_efron",
    "select_grid",
    "structure_matrix",
]
