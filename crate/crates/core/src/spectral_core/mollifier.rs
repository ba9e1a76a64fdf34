use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{invalid, Result};
use crate::quad::{self, Tolerance};
use crate::tolerances::NEGATIVE_ROUNDING;

use super::{apply_fraclap_pv, Field, FracParams, Grid, SpectralOperator};

/// Surface measure of the unit sphere in ℝ^N (N = 1: two points).
pub fn unit_sphere_area(n_dim: usize) -> f64 {
    match n_dim {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => panic!("unsupported dimension {n_dim}"),
    }
}

/// Unnormalised bump `exp(−1/(1−r²))` for `r < 1`, zero otherwise.
pub fn bump(r: f64) -> f64 {
    let s = 1.0 - r * r;
    if s <= 0.0 {
        0.0
    } else {
        (-1.0 / s).exp()
    }
}

/// Mass of [`bump`] over the unit ball of ℝ^N.
pub(crate) fn bump_mass(n_dim: usize) -> f64 {
    static MASS: OnceLock<[f64; 2]> = OnceLock::new();
    let m = MASS.get_or_init(|| {
        let tol = Tolerance::new(1e-16, 1e-14);
        let m1 = 2.0 * quad::integrate(bump, 0.0, 1.0, &[0.5, 0.9], tol).expect("bump mass");
        let m2 = 2.0
            * PI
            * quad::integrate(|r| r * bump(r), 0.0, 1.0, &[0.5, 0.9], tol).expect("bump mass");
        [m1, m2]
    });
    m[n_dim - 1]
}

/// Radially symmetric unit-mass bump scaled to radius `epsilon`.
#[derive(Debug, Clone)]
pub struct Mollifier {
    epsilon: f64,
    profile: Field,
}

impl Mollifier {
    /// Builds the unit profile on `[-1.25, 1.25)^N` with 160 points per axis.
    pub fn new(epsilon: f64, n_dim: usize) -> Result<Self> {
        Self::with_profile_points(epsilon, n_dim, 160)
    }

    pub fn with_profile_points(epsilon: f64, n_dim: usize, points: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(invalid(format!("mollifier radius must be positive, got {epsilon}")));
        }
        let grid = Grid::new(n_dim, 1.25, points)?;
        let raw = Field::from_fn(grid, |x| bump((x[0] * x[0] + x[1] * x[1]).sqrt()));
        let mass = raw.integral();
        let profile = raw.scale(1.0 / mass);
        Ok(Self { epsilon, profile })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.profile.grid().dim()
    }

    /// Unit-radius profile sampled on its own grid.
    pub fn profile(&self) -> &Field {
        &self.profile
    }

    /// Continuous `η_ε(x) = ε^{−N} η(x/ε)` with exact unit mass.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt() / self.epsilon;
        bump(r) / (bump_mass(n) * self.epsilon.powi(n as i32))
    }

    /// Kernel sampled at periodic offsets of `grid`, renormalised to unit
    /// discrete mass.
    pub fn offsets_on(&self, grid: &Grid) -> Vec<f64> {
        let n = grid.points_per_axis();
        let h = grid.spacing();
        let mut k: Vec<f64> = (0..grid.len())
            .map(|idx| {
                let (a, b) = match grid.dim() {
                    1 => (idx, 0),
                    _ => (idx / n, idx % n),
                };
                let dx = grid.wrap(a as f64 * h);
                let dy = if grid.dim() == 2 { grid.wrap(b as f64 * h) } else { 0.0 };
                self.eval(&[dx, dy][..grid.dim()])
            })
            .collect();
        let mass: f64 = k.iter().sum::<f64>() * grid.cell_volume();
        for v in &mut k {
            *v /= mass;
        }
        k
    }
}

/// Periodic convolution of `f` with the mollifier.
pub fn mollify(f: &Field, m: &Mollifier) -> Result<Field> {
    let grid = *f.grid();
    if m.dim() != grid.dim() {
        return Err(invalid("mollifier and field dimensions differ"));
    }
    if m.epsilon() < grid.spacing() {
        return Err(invalid(format!(
            "mollifier radius {} is below the grid spacing {}",
            m.epsilon(),
            grid.spacing()
        )));
    }
    let op = SpectralOperator::new(grid);
    let mut out = op.convolve(f.values(), &m.offsets_on(&grid));
    let nonneg = f.min() >= 0.0;
    if nonneg {
        let scale = f.max_abs().max(1.0);
        for v in &mut out {
            if *v < 0.0 {
                debug_assert!(*v > -NEGATIVE_ROUNDING * scale);
                *v = 0.0;
            }
        }
    }
    Field::new(grid, out)
}

/// Largest discrepancy between `(−Δ)_x η_ε(x−y)` and `(−Δ)_y η_ε(y−x)` over
/// the sampled pairs, both evaluated by the principal-value quadrature.
pub fn check_mollifier_antisymmetry(
    m: &Mollifier,
    params: &FracParams,
    pairs: &[(Vec<f64>, Vec<f64>)],
    cutoff: f64,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for (x, y) in pairs {
        let lhs = apply_fraclap_pv(
            |z| {
                let d: Vec<f64> = z.iter().zip(y).map(|(a, b)| a - b).collect();
                m.eval(&d)
            },
            x,
            params,
            cutoff,
        )?;
        let rhs = apply_fraclap_pv(
            |z| {
                let d: Vec<f64> = z.iter().zip(x).map(|(a, b)| a - b).collect();
                m.eval(&d)
            },
            y,
            params,
            cutoff,
        )?;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_masses_match_reference() {
        // scipy.integrate.quad of the unnormalised bump
        assert!((bump_mass(1) - 0.443_993_816_168_079_4).abs() < 1e-12);
        assert!((bump_mass(2) - 0.466_512_393_178_330).abs() < 1e-12);
    }

    #[test]
    fn profile_invariants() {
        for dim in [1, 2] {
            let m = Mollifier::new(0.5, dim).unwrap();
            let p = m.profile();
            assert!((p.integral() - 1.0).abs() < 1e-10);
            assert!(p.min() >= 0.0);
            for i in 0..p.grid().len() {
                if p.grid().radius(i) > 1.0 {
                    assert_eq!(p.values()[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn profile_is_radially_symmetric() {
        let m = Mollifier::new(1.0, 2).unwrap();
        let p = m.profile();
        let g = p.grid();
        let n = g.points_per_axis();
        for a in 0..n {
            for b in 0..n {
                let v = p.values()[a * n + b];
                // swapping the axes and reflecting keep |x|
                let w = p.values()[b * n + a];
                assert!((v - w).abs() < 1e-12);
                if a > 0 {
                    let r = p.values()[(n - a) * n + b];
                    assert!((v - r).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_sub_grid_radius() {
        let g = Grid::new(1, 4.0, 64).unwrap();
        let f = Field::constant(g, 1.0);
        let m = Mollifier::new(0.05, 1).unwrap();
        assert!(mollify(&f, &m).is_err());
    }

    #[test]
    fn constant_is_preserved() {
        let g = Grid::new(2, 2.0, 32).unwrap();
        let f = Field::constant(g, 1.7);
        let m = Mollifier::new(0.4, 2).unwrap();
        let out = mollify(&f, &m).unwrap();
        for v in out.values() {
            assert!((v - 1.7).abs() < 1e-12);
        }
    }

    #[test]
    fn indicator_mass_preserved_at_four_spacings() {
        let g = Grid::new(1, 4.0, 256).unwrap();
        let f = Field::from_fn(g, |x| if x[0].abs() < 1.0 { 1.0 } else { 0.0 });
        let m = Mollifier::new(4.0 * g.spacing(), 1).unwrap();
        let out = mollify(&f, &m).unwrap();
        // direct summation of the input
        let direct: f64 = f.values().iter().sum::<f64>() * g.spacing();
        assert!((out.integral() - direct).abs() <= 1e-8 * direct);
        assert!(out.min() >= 0.0);
    }

    #[test]
    fn antisymmetry_is_exact_on_the_diagonal() {
        let m = Mollifier::new(0.5, 1).unwrap();
        let p = FracParams::new(1.0, 1, 2.0).unwrap();
        let d = check_mollifier_antisymmetry(&m, &p, &[(vec![0.3], vec![0.3])], 1e-3).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn antisymmetry_near_the_centre_converges() {
        // the inner shell here is dominated by rounding in u(x) − u(x ± r)
        let m = Mollifier::new(0.5, 1).unwrap();
        let p = FracParams::new(1.5, 1, 2.0).unwrap();
        let d = check_mollifier_antisymmetry(&m, &p, &[(vec![0.029379002187034264], vec![0.4060451613071504])], 1e-3)
            .unwrap();
        assert!(d < 1e-6, "{d}");
    }
}
