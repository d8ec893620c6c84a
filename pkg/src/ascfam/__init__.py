"""ascfam: secondary-phenotype analysis for ascertained family designs.

A library and CLI for fitting a joint model of a binary primary phenotype
and a continuous secondary phenotype in families sampled through the
primary phenotype (multiple-cases designs), using a retrospective
likelihood that corrects for the ascertainment, plus a seeded simulation
engine for bias / RMSE / coverage / type-I-error experiments.
"""

from ascfam.pedigree import Cohort, Family, Individual, parse_pedigree
from ascfam.jointmodel import Theta
from ascfam.estimate import FitOptions, FitResult, fit, fit_naive, lrt
from ascfam.simulate import Scenario, SummaryMetrics, run_scenario

__version__ = "0.1.0"

__all__ = [
    "Cohort",
    "Family",
    "Individual",
    "Theta",
    "FitOptions",
    "FitResult",
    "Scenario",
    "SummaryMetrics",
    "fit",
    "fit_naive",
    "lrt",
    "parse_pedigree",
    "run_scenario",
    "__version__",
]
