"""Mean field, TAP, expectation propagation and belief propagation for
Ising and latent Gaussian models, with exact oracles and EP corrections."""

from .bp import BPResult, Factor, FactorGraph, bethe_log_z, bp_run, enumerate_factor_graph, ising_to_factor_graph
from .corrections import (
    CorrectedMarginal,
    CorrectionReport,
    correction_report,
    cseke_heskes_marginal,
    cumulant_log_r,
    epsilon_corrected_marginal,
    r_second_order,
)
from .doubleloop import ConvexSplit, DoubleLoopTrace, concave_bound, double_loop_minimize, mean_field_split
from .ep import ADFResult, EPState, adf_run, ep_run, moment_match_site, moment_mismatch
from .errors import (
    DegenerateSupport,
    EpkitError,
    InnerSolverFailure,
    NonFiniteResult,
    NotConverged,
    NotPositiveDefinite,
    OutOfRange,
    TooLarge,
    ZeroMessage,
)
from .exact import BACKEND, ExactStats, enumerate_ising, exact_gaussian_stats
from .meanfield import MFSolution, mf_free_energy, naive_mf_solve
from .models import GaussianLatentModel, IsingModel, load_model, model_from_json, save_model, validate_model
from .sites import (
    BoxIndicator,
    CavityParams,
    GaussianExp,
    GaussianSite,
    Probit,
    SitePotential,
    Spin,
    TabulatedGrid,
    TiltedSummary,
    tilted_moments,
)
from .tap import TAPSolution, adaptive_v_update, tap_free_energy, tap_gibbs, tap_solve

__version__ = "0.1.0"
