//! One-sided weighted local-polynomial least squares: the engine every
//! estimator in this crate builds on.

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::linalg::qr_least_squares;
use crate::sample::{Sample, Side};

/// Singular values below this fraction of the largest trigger `SingularDesign`.
/// Deterministic failure beats silently unstable near-singular estimates.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// A one-sided weighted local-polynomial fit.
///
/// Coefficients solve the kernel- and sampling-weight-weighted least-squares
/// normal equations for the basis `(1, x, …, x^p)` in centered running-variable
/// units. Internally the basis is rescaled so the design is well conditioned;
/// everything exposed here is in natural units.
#[derive(Debug, Clone)]
pub struct LocalFit {
    pub side: Side,
    pub order: usize,
    pub bandwidth: f64,
    /// Intercept first.
    pub coefficients: Vec<f64>,
    /// Per included observation, aligned with `sample_indices`.
    pub residuals: Vec<f64>,
    pub hat_diagonals: Vec<f64>,
    /// Kernel weight K(x/h) alone, excluding the sampling weight.
    pub kernel_weights: Vec<f64>,
    /// Count of observations with positive total weight.
    pub effective_n: usize,
    pub(crate) sample_indices: Vec<usize>,
    pub(crate) xs: Vec<f64>,
    pub(crate) total_weights: Vec<f64>,
    /// `(XᵀWX)⁻¹` in the scaled basis, row-major (p+1)².
    gram_inv_scaled: Vec<f64>,
    scale: f64,
}

impl LocalFit {
    /// Positions of the included observations in the source sample.
    pub fn sample_indices(&self) -> &[usize] {
        &self.sample_indices
    }

    /// Fitted-polynomial prediction at centered x.
    pub fn predict(&self, x: f64) -> f64 {
        let z = x / self.scale;
        let mut acc = 0.0;
        let mut zp = 1.0;
        for j in 0..=self.order {
            acc += self.coefficients[j] * self.scale.powi(j as i32) * zp;
            zp *= z;
        }
        acc
    }

    /// Per-observation weights `λ_i` such that coefficient `coef` equals
    /// `Σ λ_i y_i`: the row of `(XᵀWX)⁻¹XᵀW` for that coefficient.
    pub fn extraction_weights(&self, coef: usize) -> Vec<f64> {
        let k = self.order + 1;
        assert!(coef < k, "coefficient index out of range");
        let mut out = Vec::with_capacity(self.xs.len());
        for (i, &x) in self.xs.iter().enumerate() {
            let z = x / self.scale;
            let mut zi = vec![0.0; k];
            let mut zp = 1.0;
            for item in zi.iter_mut() {
                *item = zp;
                zp *= z;
            }
            let mut s = 0.0;
            for (q, &zq) in zi.iter().enumerate() {
                s += self.gram_inv_scaled[coef * k + q] * zq;
            }
            out.push(s * self.total_weights[i] / self.scale.powi(coef as i32));
        }
        out
    }

    /// `Σ_i λ_i x_i^pow` for the intercept weights: the design-based factor the
    /// bias correction multiplies against an estimated higher-order coefficient.
    pub fn intercept_moment(&self, pow: usize) -> f64 {
        let lambda = self.extraction_weights(0);
        lambda
            .iter()
            .zip(&self.xs)
            .map(|(&l, &x)| l * x.powi(pow as i32))
            .sum()
    }
}

/// Fit a local polynomial of order `p` on one side of the cutoff.
///
/// Observations with centered `x >= 0` belong to the right side and `x < 0`
/// to the left. Per-observation weight is `w_i · K(x_i / h)`; rows whose total
/// weight is zero are excluded and do not influence the fit. With
/// `use_weights = false` the sampling weights are replaced by 1.
pub fn fit_local_poly(
    sample: &Sample,
    side: Side,
    p: usize,
    h: f64,
    kernel: Kernel,
    use_weights: bool,
) -> Result<LocalFit> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidInput(format!("bandwidth must be positive, got {h}")));
    }
    let k = p + 1;

    let mut sample_indices = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut kernel_weights = Vec::new();
    let mut total_weights = Vec::new();
    for (i, obs) in sample.observations().iter().enumerate() {
        if !side.contains(obs.x) {
            continue;
        }
        let kw = kernel.weight(obs.x / h);
        let sw = if use_weights { obs.w } else { 1.0 };
        let tw = kw * sw;
        if tw > 0.0 {
            sample_indices.push(i);
            xs.push(obs.x);
            ys.push(obs.y);
            kernel_weights.push(kw);
            total_weights.push(tw);
        }
    }

    let m = xs.len();
    if m < k {
        return Err(Error::InsufficientData(format!(
            "order-{p} fit on {side:?} side needs {k} effective observations, found {m}"
        )));
    }

    // Rescale x so basis columns stay well conditioned regardless of how the
    // bandwidth compares with the data span.
    let scale = xs.iter().fold(0.0f64, |a, &x| a.max(x.abs())).max(f64::MIN_POSITIVE);

    let mut design = Vec::with_capacity(m * k);
    let mut yw = Vec::with_capacity(m);
    for i in 0..m {
        let sw = total_weights[i].sqrt();
        let z = xs[i] / scale;
        let mut zp = 1.0;
        for _ in 0..k {
            design.push(sw * zp);
            zp *= z;
        }
        yw.push(sw * ys[i]);
    }

    let ls = qr_least_squares(design, yw, k).ok_or_else(|| {
        Error::InsufficientData(format!("{m} rows for {k} basis columns"))
    })?;
    if ls.sv_min < RANK_TOLERANCE * ls.sv_max || ls.sv_max == 0.0 {
        return Err(Error::SingularDesign(format!(
            "singular value ratio {:.3e} below tolerance {RANK_TOLERANCE:.0e} \
             (order {p}, bandwidth {h}, {m} effective observations)",
            ls.sv_min / ls.sv_max.max(f64::MIN_POSITIVE)
        )));
    }

    let coefficients: Vec<f64> = ls
        .coeffs
        .iter()
        .enumerate()
        .map(|(j, &b)| b / scale.powi(j as i32))
        .collect();

    let mut residuals = Vec::with_capacity(m);
    let mut hat_diagonals = Vec::with_capacity(m);
    for i in 0..m {
        let z = xs[i] / scale;
        let mut pred = 0.0;
        let mut zp = 1.0;
        let mut zrow = vec![0.0; k];
        for j in 0..k {
            pred += ls.coeffs[j] * zp;
            zrow[j] = zp;
            zp *= z;
        }
        residuals.push(ys[i] - pred);
        let mut hat = 0.0;
        for pidx in 0..k {
            for qidx in 0..k {
                hat += zrow[pidx] * ls.gram_inv[pidx * k + qidx] * zrow[qidx];
            }
        }
        hat_diagonals.push(hat * total_weights[i]);
    }

    Ok(LocalFit {
        side,
        order: p,
        bandwidth: h,
        coefficients,
        residuals,
        hat_diagonals,
        kernel_weights,
        effective_n: m,
        sample_indices,
        xs,
        total_weights,
        gram_inv_scaled: ls.gram_inv,
        scale,
    })
}

/// Jump at the cutoff: difference of the two one-sided intercepts,
/// right minus left.
pub fn jump_estimate(left: &LocalFit, right: &LocalFit) -> f64 {
    debug_assert_eq!(left.order, right.order);
    right.coefficients[0] - left.coefficients[0]
}
