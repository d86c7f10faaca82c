"""Joint TDOA localization and uncertainty-aware mixture noise-model learning."""

from .bilevel import (BilevelConfig, BilevelResult, extract_residual_samples, initialize,
                      run_baseline, run_bilevel)
from .dataset_io import (ExperimentRecord, read_dataset, read_models, read_results,
                         read_trajectory, rmse, write_dataset, write_models, write_results,
                         write_trajectory)
from .errors import (AngleNearPi, ConfigInvalid, CovarianceNotPSD, LengthMismatch,
                     MissingTheta, MixlocError, ParseError, SchemaVersionMismatch,
                     SingularInformation, SolverDiverged, TagAtAnchor, TooFewSamples)
from .lie import Pose, retract, se3_adjoint, se3_exp, se3_log, sigma_points
from .mixture import Gmm1D, fit_gauss, gmm_kl, gmm_pdf, gmm_sample, kl_divergence
from .msm import MsmConfig, msm_cost, msm_jacobian
from .scene import (AnchorConstellation, Dataset, OdometryIncrement, SensorRig,
                    TdoaMeasurement, motion_jacobians, motion_predict, motion_residual,
                    tdoa_jacobian, tdoa_predict, tdoa_residual)
from .simulator import ScenarioConfig, default_scenario, perturb_for_study, simulate
from .solver import (SolverConfig, TrajectoryEstimate, build_graph, laplace_covariances,
                     solve_map)
from .vbgmm import ResidualSample, VbPriors, fit_cgmm, fit_ugmm

__version__ = "0.1.0"
