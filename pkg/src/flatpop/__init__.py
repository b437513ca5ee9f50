"""Flat-metric numerics for linear structured population models."""
from __future__ import annotations

from .bl_functions import PiecewiseLinearFn, bl_norm_classic, bl_norm_paper, evaluate
from .flat_metric import NormVariant, flat_distance, flat_norm, flat_norm_oracle
from .measures import AtomicMeasure, coalesce, pair, tv_norm
from .model_config import Kernel, ModelIngredients, lotka_model, validate_assumptions

__version__ = "0.1.0"

__all__ = [
    "AtomicMeasure",
    "Kernel",
    "ModelIngredients",
    "NormVariant",
    "PiecewiseLinearFn",
    "bl_norm_classic",
    "bl_norm_paper",
    "coalesce",
    "evaluate",
    "flat_distance",
    "flat_norm",
    "flat_norm_oracle",
    "lotka_model",
    "pair",
    "tv_norm",
    "validate_assumptions",
]
