//! CMA-ES trajectory optimizer over waypoint sequences.

mod cma;
mod driver;
mod encode;

pub use cma::{jacobi_eigen, CmaError, CmaParams, CmaState};
pub use driver::{
    evaluate_candidate, initial_trajectory_from_track, optimize_trajectory, refine_velocity_init,
    scalar_trajectory_from_track, velocity_trajectory_from_centroids,
    zero_displacement_trajectory, CandidateEvaluator, CmaConfig, EvalOutcome, EvalRecord,
    OptimizationResult, OptimizeError, SerialEvaluator, DIVERGED_COST,
};
pub use encode::{coordinate_scales, decode, dimension, encode, EncodeError};
