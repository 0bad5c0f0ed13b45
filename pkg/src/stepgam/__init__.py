"""Piecewise-constant additive models fitted by greedy block coordinate descent."""

import warnings

# numba probes TBB first and warns when the system copy is too old; it then
# falls back to another threading layer on its own.
warnings.filterwarnings("ignore", message="The TBB threading layer", module="numba")

from .data import BinMap, Dataset, build_bins, build_sorted_index, load_csv  # noqa: E402
from .flsa import WeightedSignal, flsa_objective, solve_flsa  # noqa: E402
from .model import PCAModel, ShapeFunction, export_sql, extract_model, load, predict, predict_batch, save  # noqa: E402
from .optimizer import BlockState, FitConfig, fit, fit_cbcd, fit_gbcd  # noqa: E402
from .sparsity import agis_fit, group_l0_fit  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "BinMap", "BlockState", "Dataset", "FitConfig", "PCAModel", "ShapeFunction", "WeightedSignal",
    "agis_fit", "build_bins", "build_sorted_index", "export_sql", "extract_model", "fit", "fit_cbcd",
    "fit_gbcd", "flsa_objective", "group_l0_fit", "load", "load_csv", "predict", "predict_batch", "save",
    "solve_flsa",
]
