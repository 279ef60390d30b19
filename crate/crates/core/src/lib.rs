//! Nonlinear shrinkage of weighted sample covariance matrices.
//!
//! The limiting spectrum of `B = (1/N) Y* W Y` with `Y = X Σ^{1/2}` is described
//! through a scalar fixed point in the upper half-plane. From its boundary values
//! on the real axis follow the asymptotically optimal rotation-invariant
//! shrinkage intensities for the covariance and the precision matrix.

mod cmath;
pub mod error;
pub mod estimator;
pub mod fixedpoint;
pub mod shrinkage;
pub mod simulate;
pub mod spectra;

pub use error::{Error, Result};
pub use fixedpoint::{
    boundary_x, density_f, empirical_theta_g, solve_x, support_bounds, theta_g, BoundaryValue,
    EwmaKernel, FixedPointSolution, FixedPointSolver, SolverOptions,
};
pub use spectra::{
    bai_silverstein_h, five_dirac_weight_law, finite_weights, DiracMixture, ModelConfig,
    WeightLaw,
};
