"""PAC-Bayes generalization certificates for Bayesian linear regression with iid and ARX inputs."""

from .bounds import (
    BoundCertificate,
    PriorSpec,
    PsiEstimate,
    assemble_certificate,
    certify,
    finiteness_check,
    psi_bounded,
    psi_cor6_limit,
    psi_thm2_term,
    psi_thm3_exact,
    psi_thm3_relaxed,
    psi_thm4,
)
from .datagen import load_dataset_csv, recast_arx, sample_correlated, sample_dataset, sample_iid, simulate_arx
from .model import ARX, CorrelatedGaussian, Dataset, IIDIsotropic, empirical_loss, generalization_loss, squared_loss
from .posterior import GaussianWeightMeasure, expected_empirical_loss, gibbs_posterior, kl_gaussian
from .rng import SeedSpec
from .spectral import arx_state_covariance, joint_covariance, rho_sequence

__version__ = "0.1.0"
