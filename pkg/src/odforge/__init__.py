"""Synthetic outlier-detection benchmark toolkit.

Priors that generate labelled tabular datasets, reference detectors,
evaluation metrics and dataset curation utilities.
"""

from ._accel import backend
from .core import LabeledDataset, Metadata, SplitDataset, derive_seed, make_split, read_dataset, write_dataset
from .exceptions import OdForgeError

__version__ = "0.1.0"

__all__ = [
    "LabeledDataset",
    "Metadata",
    "OdForgeError",
    "SplitDataset",
    "backend",
    "derive_seed",
    "make_split",
    "read_dataset",
    "write_dataset",
    "__version__",
]
