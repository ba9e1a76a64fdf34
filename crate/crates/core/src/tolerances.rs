//! Numerical thresholds shared by the checks in this crate.

/// Spectral imaginary residue, relative to the output max norm.
pub const SPECTRAL_IMAG_RESIDUE: f64 = 1e-10;

/// Rounding guard below which nonnegative quantities are clamped to zero.
pub const NEGATIVE_ROUNDING: f64 = 1e-12;

/// Discrete mass of a mollifier profile.
pub const MOLLIFIER_MASS: f64 = 1e-10;

/// Relative mass preservation of [`crate::spectral_core::mollify`].
pub const MOLLIFY_MASS: f64 = 1e-8;

/// Jensen gap floor, scaled by `max f^{p/(p-1)}`.
pub const JENSEN_GAP: f64 = 1e-8;

/// Radial monotonicity slack for the heat kernel.
pub const MONOTONE_SLACK: f64 = 1e-10;

/// Relative disagreement allowed between successive refinements.
pub const REFINEMENT: f64 = 1e-3;

/// Terminal value of a space-time test function.
pub const TERMINAL_VALUE: f64 = 1e-10;

/// Picard convergence, relative to the iterate max norm.
pub const PICARD_CONVERGENCE: f64 = 1e-6;

/// Per-step growth ratio of the sup norm that triggers dt halving.
pub const GROWTH_RATIO: f64 = 1.25;

/// Level (relative to the max) defining the essential support of a state.
pub const ESSENTIAL_SUPPORT_LEVEL: f64 = 1e-3;
