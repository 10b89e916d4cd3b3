"""
Interventional effects (IE) and marginal interventional effects (MIE) of a binary treatment.

Estimators are available under unconfoundedness (``interventional.unconfounded``) and under a
latent-index instrumental-variable model (``interventional.iv``). Synthetic DGPs with exact oracles
live in ``interventional.dgp``.
"""

from interventional.config import Config
from interventional.data import Dataset, EstimateReport, validate
from interventional.interventions import InterventionFamily

__version__ = "0.1.0"

__all__ = ["Config", "Dataset", "EstimateReport", "InterventionFamily", "validate"]
