use crate::error::{Error, Result};
use crate::quad::GaussLegendre;
use crate::tolerances::NEGATIVE_ROUNDING;

use super::{apply_fraclap_pv, Field, FracParams, SpectralOperator};

/// `q f^{q−1} (−Δ)^{θ/2} f − (−Δ)^{θ/2} f^q` with `q = p/(p−1)`, which is
/// pointwise nonnegative for nonnegative `f`.
pub fn jensen_gap(f: &Field, params: &FracParams) -> Result<Field> {
    let scale = f.max_abs().max(1.0);
    let min = f.min();
    if min < -NEGATIVE_ROUNDING * scale {
        return Err(Error::Negative(format!("field minimum {min:e} is below zero")));
    }
    let q = params.conjugate();
    let f = f.map(|v| v.max(0.0));
    let op = SpectralOperator::new(*f.grid());
    let lf = op.fraclap(&f, params.theta);
    let fq = f.map(|v| v.powf(q));
    let lfq = op.fraclap(&fq, params.theta);
    let lead = f.map(|v| q * v.powf(q - 1.0));
    Ok(lead.zip_map(&lf, |a, b| a * b).zip_map(&lfq, |a, b| a - b))
}

/// `|⟨(−Δ)^{θ/2} f, g⟩ − ⟨f, (−Δ)^{θ/2} g⟩|` with the spectral operator.
pub fn selfadjoint_defect(f: &Field, g: &Field, params: &FracParams) -> f64 {
    let op = SpectralOperator::new(*f.grid());
    let lf = op.fraclap(f, params.theta);
    let lg = op.fraclap(g, params.theta);
    (lf.inner(g) - f.inner(&lg)).abs()
}

/// Ball containing the support of a closure.
#[derive(Debug, Clone)]
pub struct Support {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Relative self-adjointness defect of the principal-value operator for two
/// compactly supported closures; each pairing is integrated with a
/// Gauss–Legendre rule (`panels` × 16 nodes per axis) over the support of the
/// second factor.
pub fn selfadjoint_defect_pv<F, G>(
    f: F,
    g: G,
    supp_f: &Support,
    supp_g: &Support,
    params: &FracParams,
    cutoff: f64,
    panels: usize,
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    let lf_g = pairing(&f, &g, supp_g, params, cutoff, panels)?;
    let f_lg = pairing(&g, &f, supp_f, params, cutoff, panels)?;
    let denom = lf_g.abs().max(f_lg.abs()).max(f64::MIN_POSITIVE);
    Ok((lf_g - f_lg).abs() / denom)
}

// ∫ (L a)(x) b(x) dx over the support of b
fn pairing<A, B>(
    a: &A,
    b: &B,
    supp_b: &Support,
    params: &FracParams,
    cutoff: f64,
    panels: usize,
) -> Result<f64>
where
    A: Fn(&[f64]) -> f64 + Sync,
    B: Fn(&[f64]) -> f64 + Sync,
{
    use rayon::prelude::*;
    let gl = GaussLegendre::new(16);
    let axis_nodes = |c: f64| -> Vec<(f64, f64)> {
        let lo = c - supp_b.radius;
        let w = 2.0 * supp_b.radius / panels as f64;
        (0..panels)
            .flat_map(|k| {
                let a0 = lo + k as f64 * w;
                gl.mapped(a0, a0 + w).collect::<Vec<_>>()
            })
            .collect()
    };
    let points: Vec<(Vec<f64>, f64)> = match params.n_dim {
        1 => axis_nodes(supp_b.center[0])
            .into_iter()
            .map(|(x, w)| (vec![x], w))
            .collect(),
        _ => {
            let xs = axis_nodes(supp_b.center[0]);
            let ys = axis_nodes(supp_b.center[1]);
            xs.iter()
                .flat_map(|&(x, wx)| ys.iter().map(move |&(y, wy)| (vec![x, y], wx * wy)))
                .collect()
        }
    };
    let terms: Vec<Result<f64>> = points
        .par_iter()
        .map(|(x, w)| {
            let bx = b(x);
            if bx == 0.0 {
                return Ok(0.0);
            }
            Ok(w * bx * apply_fraclap_pv(a, x, params, cutoff)?)
        })
        .collect();
    let mut s = 0.0;
    for t in terms {
        s += t?;
    }
    Ok(s)
}
