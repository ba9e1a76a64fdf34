use std::f64::consts::PI;

use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::quad::{self, Tolerance};

use super::{unit_sphere_area, Field, FracParams, SpectralOperator};

/// `Γ((N+θ)/2) / (π^{N/2} Γ(2−θ/2)) · (θ/2)(1−θ/2)`.
///
/// This is the Gamma-function constant in its customary closed form. The
/// singular integral that reproduces the multiplier `|ξ|^θ` uses
/// [`pv_constant`], which carries an extra factor `2^θ`.
pub fn normalizing_constant(params: &FracParams) -> Result<f64> {
    let theta = params.theta;
    if theta >= 2.0 {
        return Err(Error::ClassicalLaplacian);
    }
    let n = params.n_dim as f64;
    let s = 0.5 * theta;
    Ok(gamma(0.5 * (n + theta)) / (PI.powf(0.5 * n) * gamma(2.0 - s)) * s * (1.0 - s))
}

/// Constant `C(N,θ)` with `(−Δ)^{θ/2}u(x) = C · P.V.∫ (u(x)−u(y))/|x−y|^{N+θ} dy`
/// for the multiplier `|ξ|^θ`; equals `2^θ` times [`normalizing_constant`].
/// It is also the coefficient of the `|x|^{−N−θ}` tail of Γ_θ(·, 1).
pub fn pv_constant(n_dim: usize, theta: f64) -> Result<f64> {
    let p = FracParams {
        theta,
        n_dim,
        p_exponent: 2.0,
    };
    Ok(2f64.powf(theta) * normalizing_constant(&p)?)
}

/// Spectral fractional Laplacian `F^{-1}[|ξ|^θ F f]` on the periodic grid.
pub fn apply_fraclap_spectral(f: &Field, params: &FracParams) -> Field {
    SpectralOperator::new(*f.grid()).fraclap(f, params.theta)
}

/// Settings for [`apply_fraclap_pv`].
#[derive(Debug, Clone, Copy)]
pub struct PvOptions {
    /// The outer integral runs at least this far before the decay test applies.
    pub min_outer_radius: f64,
    /// Divergence is declared past this radius.
    pub max_outer_radius: f64,
    pub abs_tol: f64,
}

impl Default for PvOptions {
    fn default() -> Self {
        Self {
            min_outer_radius: 64.0,
            max_outer_radius: 1e10,
            abs_tol: 1e-14,
        }
    }
}

/// Principal-value fractional Laplacian of a closure at `x`.
///
/// The ball of radius `cutoff` is handled by the second-order term of the
/// symmetric difference `2u(x) − u(x+z) − u(x−z)`; the rest is integrated in
/// polar coordinates over dyadic shells, with the far field of the `u(x)`
/// term added in closed form.
pub fn apply_fraclap_pv<F: Fn(&[f64]) -> f64>(
    f: F,
    x: &[f64],
    params: &FracParams,
    cutoff: f64,
) -> Result<f64> {
    apply_fraclap_pv_with(f, x, params, cutoff, PvOptions::default())
}

pub fn apply_fraclap_pv_with<F: Fn(&[f64]) -> f64>(
    f: F,
    x: &[f64],
    params: &FracParams,
    cutoff: f64,
    opts: PvOptions,
) -> Result<f64> {
    let theta = params.theta;
    let n = params.n_dim;
    let c = pv_constant(n, theta)?;
    if x.len() != n {
        return Err(invalid(format!("point has {} coordinates, expected {n}", x.len())));
    }
    if !(cutoff > 0.0) {
        return Err(invalid("excision radius must be positive"));
    }
    let area = unit_sphere_area(n);
    let u0 = f(x);

    let lap = laplacian_fd(&f, x, cutoff);
    let inner = -(area * lap / (2.0 * n as f64)) * cutoff.powf(2.0 - theta) / (2.0 - theta);

    // M(r) = ∫_S (u(x) − u(x + rω)) dω in symmetrised form
    let shell = |r: f64| -> f64 {
        match n {
            1 => 2.0 * u0 - f(&[x[0] + r]) - f(&[x[0] - r]),
            _ => {
                let ang = |phi: f64| {
                    let (s, co) = phi.sin_cos();
                    2.0 * u0
                        - f(&[x[0] + r * co, x[1] + r * s])
                        - f(&[x[0] - r * co, x[1] - r * s])
                };
                quad::integrate(ang, 0.0, PI, &[0.5 * PI], Tolerance::new(1e-15, 1e-13))
                    .unwrap_or_else(|_| {
                        crate::quad::GaussLegendre::new(64).integrate(0.0, PI, ang)
                    })
            }
        }
    };

    let mut outer = 0.0;
    let mut lo = cutoff;
    let mut quiet = 0;
    let mut far_prev = f64::NAN;
    let far_level;
    loop {
        let hi = 2.0 * lo;
        // rounding in 2u(x) − u(x+z) − u(x−z) is amplified by r^{−1−θ}
        let noise = 16.0 * f64::EPSILON * u0.abs() * (lo.powf(-theta) - hi.powf(-theta)) / theta;
        let part = quad::integrate(
            |r| r.powf(-1.0 - theta) * shell(r),
            lo,
            hi,
            &[],
            Tolerance::new(opts.abs_tol.max(noise), 1e-12),
        )?;
        outer += part;
        // mean value of u on the sphere of radius hi; the panel is quiet when
        // it matches a constant far field at that level
        let far = u0 - shell(hi) / area;
        let flat = area * (u0 - far) * (lo.powf(-theta) - hi.powf(-theta)) / theta;
        let scale = u0.abs().max(far.abs()).max(1.0);
        if hi >= opts.min_outer_radius {
            let steady = (far - far_prev).abs() <= 1e-12 * scale;
            if steady && (part - flat).abs() <= opts.abs_tol + 1e-13 * outer.abs() {
                quiet += 1;
            } else {
                quiet = 0;
            }
            if quiet >= 3 {
                lo = hi;
                far_level = far;
                break;
            }
        }
        far_prev = far;
        lo = hi;
        if lo > opts.max_outer_radius {
            return Err(Error::Divergence(format!(
                "neighbour contributions have not decayed by radius {lo:e}"
            )));
        }
    }
    let tail = area * (u0 - far_level) * lo.powf(-theta) / theta;
    Ok(c * (inner + outer + tail))
}

fn laplacian_fd<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], h: f64) -> f64 {
    let mut lap = 0.0;
    let fx = f(x);
    for axis in 0..x.len() {
        let at = |d: f64| {
            let mut y = x.to_vec();
            y[axis] += d;
            f(&y)
        };
        lap += (-at(2.0 * h) + 16.0 * at(h) - 30.0 * fx + 16.0 * at(-h) - at(-2.0 * h))
            / (12.0 * h * h);
    }
    lap
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_core::Grid;

    fn p(theta: f64, n: usize) -> FracParams {
        FracParams::new(theta, n, 2.0).unwrap()
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn normalizing_constant_examples() {
        // Gamma formula evaluated with mpmath: 1/(2π) and 1/(4π)
        let a1 = normalizing_constant(&p(1.0, 1)).unwrap();
        assert!((a1 - 0.159_154_943_091_895_34).abs() < 1e-14);
        let a2 = normalizing_constant(&p(1.0, 2)).unwrap();
        assert!((a2 - 0.079_577_471_545_947_67).abs() < 1e-14);
        let near2 = normalizing_constant(&p(2.0 - 1e-9, 1)).unwrap();
        assert!(near2 < 1e-8 && near2 > 0.0);
        assert!(matches!(
            normalizing_constant(&p(2.0, 1)),
            Err(Error::ClassicalLaplacian)
        ));
    }

    #[test]
    fn pv_constant_matches_cauchy_tail() {
        // Cauchy density 1/(π(1+x²)) has tail coefficient 1/π
        let c = pv_constant(1, 1.0).unwrap();
        assert!((c - 1.0 / PI).abs() < 1e-14);
    }

    #[test]
    fn constant_function_gives_zero() {
        let v = apply_fraclap_pv(|_| 3.0, &[0.7], &p(1.3, 1), 0.01).unwrap();
        assert!(v.abs() < 1e-10, "{v}");
        let v2 = apply_fraclap_pv(|_| 3.0, &[0.1, 0.2], &p(0.8, 2), 0.02).unwrap();
        assert!(v2.abs() < 1e-10, "{v2}");
    }

    #[test]
    fn gaussian_half_laplacian_at_origin() {
        // (−Δ)^{1/2} e^{−x²/2} at 0 equals (1/π)∫ ξ √(2π) e^{−ξ²/2} dξ = √(2/π)
        let v = apply_fraclap_pv(|y| (-0.5 * y[0] * y[0]).exp(), &[0.0], &p(1.0, 1), 1e-3)
            .unwrap();
        assert!((v - (2.0 / PI).sqrt()).abs() < 1e-8, "{v}");
    }

    #[test]
    fn growing_function_diverges() {
        let r = apply_fraclap_pv(|y| y[0] * y[0], &[0.0], &p(1.0, 1), 0.01);
        assert!(matches!(r, Err(Error::Divergence(_))));
    }

    #[test]
    fn classical_branch_is_rejected() {
        let r = apply_fraclap_pv(|_| 1.0, &[0.0], &p(2.0, 1), 0.01);
        assert!(matches!(r, Err(Error::ClassicalLaplacian)));
    }

    #[test]
    fn spectral_constant_is_annihilated() {
        let g = Grid::new(1, 8.0, 64).unwrap();
        let f = Field::constant(g, 2.5);
        let lf = apply_fraclap_spectral(&f, &p(1.0, 1));
        assert!(lf.max_abs() < 1e-12);
    }

    #[test]
    fn spectral_theta_two_is_minus_laplacian() {
        let g = Grid::new(1, 8.0, 256).unwrap();
        let f = Field::from_fn(g, |x| (-x[0] * x[0]).exp());
        let lf = apply_fraclap_spectral(&f, &p(2.0, 1));
        for i in 0..g.len() {
            let x = g.point(i)[0];
            let exact = (2.0 - 4.0 * x * x) * (-x * x).exp();
            assert!((lf.values()[i] - exact).abs() < 1e-10);
        }
    }
}
