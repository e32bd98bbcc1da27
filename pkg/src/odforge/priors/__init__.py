"""Synthetic data priors: Gaussian mixtures, structural causal models, copulas."""

from .copula import CopulaConfig, generate_copula_dataset, sample_copula_config
from .gmm import GmmConfig, generate_gmm_dataset, sample_gmm_config
from .scm import ScmConfig, generate_scm_dataset, sample_scm_config

__all__ = [
    "CopulaConfig",
    "GmmConfig",
    "ScmConfig",
    "generate_copula_dataset",
    "generate_gmm_dataset",
    "generate_scm_dataset",
    "sample_copula_config",
    "sample_gmm_config",
    "sample_scm_config",
]
