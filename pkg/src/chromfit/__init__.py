"""Chromatography simulation and adsorption-isotherm estimation toolkit.

The package splits into five layers:

- `isotherm` / `column`: the physical model, a competitive two-site
  adsorption law inside a convection-diffusion column solved by a
  conservative finite-volume scheme;
- `datagen`: labeled synthetic chromatogram datasets with noise models,
  shift augmentation, normalization, and persisted splits;
- `fnn`: a small feed-forward network (manual backpropagation) mapping
  injection-tagged chromatograms to the eight adsorption parameters,
  with grid search and k-fold assessment;
- `variational`: classical regularized least-squares fitting of the same
  parameters directly against observed chromatograms;
- `cli`: the `chromfit` command gluing the stages into reproducible runs.
"""

from .column import (Chromatogram, ColumnConfig, DetectorSpec, InjectionProfile,
                     SimulationResult, read_chromatogram, simulate,
                     total_response, write_chromatogram)
from .datagen import (Dataset, NoiseSpec, NormStats, Sample, SplitSpec,
                      augment_shift, corrupt, corrupt_dataset, fit_norm,
                      generate, normalize_matrix, read_dataset, regrid, split,
                      write_dataset)
from .errors import ChromfitError, ConfigError, DivergenceError, SolverError
from .fnn import (CvReport, FnnModel, GridSpace, TrainConfig, TrainResult,
                  cross_validate, forward, grid_search, predict, r_squared,
                  read_model, train, write_model)
from .isotherm import PARAM_NAMES, IsothermParams
from .variational import FitResult, Observation, VariationalConfig, fit

__version__ = "0.1.0"

__all__ = [
    "ChromfitError",
    "Chromatogram",
    "ColumnConfig",
    "ConfigError",
    "CvReport",
    "Dataset",
    "DetectorSpec",
    "DivergenceError",
    "FitResult",
    "FnnModel",
    "GridSpace",
    "InjectionProfile",
    "IsothermParams",
    "NoiseSpec",
    "NormStats",
    "Observation",
    "PARAM_NAMES",
    "Sample",
    "SimulationResult",
    "SolverError",
    "SplitSpec",
    "TrainConfig",
    "TrainResult",
    "VariationalConfig",
    "augment_shift",
    "corrupt",
    "corrupt_dataset",
    "cross_validate",
    "fit",
    "fit_norm",
    "forward",
    "generate",
    "grid_search",
    "normalize_matrix",
    "predict",
    "r_squared",
    "read_chromatogram",
    "read_dataset",
    "read_model",
    "regrid",
    "simulate",
    "split",
    "total_response",
    "train",
    "write_chromatogram",
    "write_dataset",
    "write_model",
    "__version__",
]
