//! Least-favourable spectral densities over the four `D₀ × D_ε` class pairs,
//! saddle-point verification and minimax characteristics.

mod anderson;
mod class;
mod saddle;
mod side;
mod solver;

pub use class::{ClassKind, ClassMode, ClassParams, UncertaintyClass};
pub use saddle::{minimax_characteristic, verify_saddle, MinimaxCharacteristic, SaddleOptions, SaddleReport};
pub use side::DegreeMultiplier;
pub use solver::{
    evaluate_candidate, fixed_point_step, optimality_residual, solve_least_favourable, ConvergenceReport,
    DegreeResidual, IterationRecord, LeastFavourableSolution, MinimaxOptions, Pairing, ResidualReport,
};

