"""Partition-aggregate PCA with phi-generalized matrix means."""

from ._version import __version__

from .aggregate import (
    AggregatedModel,
    PartitionPlan,
    ProductModel,
    aggregate,
    default_m,
    default_ridge,
    fit_phi_pca,
    fit_ppca,
    fit_standard_pca,
    make_partition,
    subsample_covariances,
)
from .estimators import PhiPCA, ProductPCA
from .linalg import SpectralDecomp, eigh, matrix_exp, matrix_log, matrix_phi
from .phi import AM, GM, HM, Custom, LogLimit, PhiSpec, Power, as_phi

__all__ = [
    "AggregatedModel",
    "PartitionPlan",
    "ProductModel",
    "aggregate",
    "default_m",
    "default_ridge",
    "fit_phi_pca",
    "fit_ppca",
    "fit_standard_pca",
    "make_partition",
    "subsample_covariances",
    "PhiPCA",
    "ProductPCA",
    "SpectralDecomp",
    "eigh",
    "matrix_exp",
    "matrix_log",
    "matrix_phi",
    "AM",
    "GM",
    "HM",
    "Custom",
    "LogLimit",
    "PhiSpec",
    "Power",
    "as_phi",
    "__version__",
]
