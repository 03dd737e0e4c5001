from .base import (
    FAMILIES,
    HYPERPARAMETER_DEFAULTS,
    ClassifierSpec,
    TrainedModel,
    default_specs,
    default_threshold,
    fit,
    load_model,
    make_spec,
    mlp_grid,
    save_model,
)
from .gridsearch import GridSearchResult, grid_search_cv, stratified_fold_indices
from .tree import cart_split_gain, gini

__all__ = [
    "FAMILIES",
    "HYPERPARAMETER_DEFAULTS",
    "ClassifierSpec",
    "TrainedModel",
    "GridSearchResult",
    "cart_split_gain",
    "default_specs",
    "default_threshold",
    "fit",
    "gini",
    "grid_search_cv",
    "load_model",
    "make_spec",
    "mlp_grid",
    "save_model",
    "stratified_fold_indices",
]
