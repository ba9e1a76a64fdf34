//! Numerical kernels for the fractional semilinear heat equation
//! `∂_t u + (−Δ)^{θ/2} u = u^p` on ℝ^N, N ∈ {1, 2}.
//!
//! The crate is organised bottom-up:
//!
//! * [`spectral_core`]: periodic grids, fields, the fractional Laplacian as a
//!   Fourier multiplier and as a principal-value integral, mollification.
//! * [`kernel`]: the fractional heat kernel Γ_θ and its structural checks.
//! * [`dirichlet`]: the restricted fractional Laplacian on the unit ball and
//!   its heat kernel.
//! * [`testfn`]: the adjoint test function built from the Dirichlet heat kernel.
//! * [`capacity`]: measures, ball suprema, capacity bounds and the test
//!   function functionals.
//! * [`she_solver`]: time integration with blow-up detection, Picard
//!   iteration, solution residuals and threshold sweeps.

pub mod capacity;
pub mod dirichlet;
pub mod error;
pub mod kernel;
pub mod quad;
pub mod she_solver;
pub mod spectral_core;
pub mod testfn;
pub mod tolerances;

pub use error::{Error, Result};
