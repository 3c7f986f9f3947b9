"""Moment dynamics, thermodynamic rates and second-law audits for Gaussian feedback cooling."""

from .dynamics import (
    Estimator,
    FeedbackLaw,
    OperatingPoint,
    Scheme,
    StageRates,
    operating_point,
    sigma_c_rhs,
    sigma_m_rhs,
    direct_moment_rhs,
    stability_eigenvalues,
    steady_sigma_c,
    steady_sigma_m,
)
from .gaussian import (
    CovarianceMatrix,
    GaussianMoments,
    MeanVector,
    SystemParams,
    decompose,
    entropy,
    default_params,
)
from .thermo import (
    RateReport,
    cooling_limit,
    heat_rate,
    inequality_report,
    qci_flow_rate,
    qct_rate,
    s_ba_rate,
    work_rates,
)
from .trajectories import EnsembleStats, SimConfig, TrajectoryState, direct_step, kalman_step, run_ensemble

__version__ = "0.1.0"
