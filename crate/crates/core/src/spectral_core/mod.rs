//! Periodic grids, sampled fields and the fractional Laplacian.
//!
//! The box `[-L, L)^N` stands in for ℝ^N. The operator is available both as
//! the Fourier multiplier `|ξ|^θ` on the grid and as the principal-value
//! singular integral of a closure; the two agree up to box truncation.

mod field;
mod fraclap;
mod grid;
pub mod io;
mod jensen;
mod mollifier;
mod params;
mod spectral;

pub use field::Field;
pub use fraclap::{
    apply_fraclap_pv, apply_fraclap_spectral, normalizing_constant, pv_constant, PvOptions,
};
pub use grid::Grid;
pub use jensen::{jensen_gap, selfadjoint_defect, selfadjoint_defect_pv, Support};
pub use mollifier::{bump, check_mollifier_antisymmetry, mollify, unit_sphere_area, Mollifier};
pub use params::FracParams;
pub use spectral::SpectralOperator;
