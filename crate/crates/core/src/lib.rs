//! Optimal and minimax-robust linear interpolation of functionals of
//! periodically correlated, isotropic random fields on the sphere.

pub mod density;
pub mod document;
pub mod error;
pub mod gladyshev;
pub mod grid;
pub mod harmonics;
pub mod interpolation;
pub mod linalg;
pub mod minimax;
pub mod simulator;
pub mod spectral_ops;

pub use density::{DensityFamily, SpectralDensity, TrigPoly};
pub use document::Document;
pub use error::{Result, SpiError};
pub use grid::{MatrixGrid, DEFAULT_GRID};
pub use harmonics::{HarmonicIndex, SphereGeometry, SphereGrid};
pub use interpolation::{
    solve_interpolation, solve_interpolation_noiseless, FunctionalSpec, InterpolationOptions, InterpolationSolution,
    WindowedCharacteristic,
};
pub use linalg::{CMat, CVec, C64};
pub use minimax::{
    solve_least_favourable, verify_saddle, ClassKind, ClassMode, ClassParams, LeastFavourableSolution, MinimaxOptions,
    SaddleOptions, UncertaintyClass,
};
pub use spectral_ops::{check_minimality, MinimalityOptions, MinimalityReport};
