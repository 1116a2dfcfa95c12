//! Data-driven MSE-optimal bandwidth selection and the manual-override
//! ratio rule.
//!
//! The selector is a two-stage plug-in. For a jump estimator built from
//! one-sided local polynomials of order `p` with kernel `K`, the asymptotic
//! mean squared error is
//!
//! ```text
//! MSE(h) = h^{2(p+1)} B² + V / (n h)
//! ```
//!
//! with `B` the curvature-driven bias constant and `V` the variance constant,
//! giving the minimizer
//!
//! ```text
//! h* = [ V / (2 (p+1) B² n) ]^{1 / (2p+3)}
//! ```
//!
//! The bias-correction bandwidth `b` minimizes the analogous MSE of the
//! order-`q` estimator of the (p+1)-th coefficient, with exponent
//! `1 / (2q+3)`. Plug-in ingredients:
//!
//! * pilot window `c_n = 2.576 · min(sd(x), IQR(x)/1.349) · n^{-1/5}`,
//! * density at the cutoff from the share of observations inside the window,
//! * one-sided residual variances from local fits inside the window,
//! * one-sided derivatives from global polynomial fits of order
//!   `max(4, p+2)` per side,
//! * exact one-sided kernel moment matrices for the constants.
//!
//! Every constant is computed here rather than copied from any particular
//! software release; different implementations of the same plug-in are known
//! to disagree in low-order digits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::linalg::qr_least_squares;
use crate::local::fit_local_poly;
use crate::sample::{Sample, Side};
use crate::stats::quantile;

/// An estimation bandwidth, a bias-correction bandwidth, and their ratio
/// recorded at selection time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPair {
    pub h: f64,
    pub b: f64,
    pub rho: f64,
}

impl BandwidthPair {
    pub fn new(h: f64, b: f64) -> BandwidthPair {
        BandwidthPair { h, b, rho: h / b }
    }
}

/// How bandwidths are chosen for an estimation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum BandwidthMode {
    /// Select both bandwidths by the MSE plug-in.
    #[default]
    MseOptimal,
    /// Manual estimation bandwidth; `b` scaled to preserve the automatically
    /// selected ratio.
    Manual { h: f64 },
    /// Both bandwidths fixed by hand.
    ManualBoth { h: f64, b: f64 },
}

/// Full conditioning set for bandwidth selection. Selected bandwidths are a
/// function of the sample, outcome, polynomial orders, kernel, weighting, and
/// clustering; changing any of these changes the answer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSpec {
    pub mode: BandwidthMode,
    /// Estimation polynomial order.
    pub p: usize,
    /// Bias-estimation order, strictly greater than `p`.
    pub q: usize,
    pub kernel: Kernel,
    /// Inflate the pilot variance by a cluster-robust residual aggregate.
    pub cluster_aware: bool,
    /// Use sampling weights in the pilot fits.
    pub weighted: bool,
}

impl Default for BandwidthSpec {
    fn default() -> Self {
        BandwidthSpec {
            mode: BandwidthMode::MseOptimal,
            p: 1,
            q: 2,
            kernel: Kernel::Triangular,
            cluster_aware: false,
            weighted: false,
        }
    }
}

impl BandwidthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.q <= self.p {
            return Err(Error::InvalidInput(format!(
                "bias order q ({}) must exceed estimation order p ({})",
                self.q, self.p
            )));
        }
        match self.mode {
            BandwidthMode::Manual { h } if !(h > 0.0) => {
                Err(Error::InvalidInput(format!("manual bandwidth must be positive, got {h}")))
            }
            BandwidthMode::ManualBoth { h, b } if !(h > 0.0 && b > 0.0) => Err(Error::InvalidInput(
                format!("manual bandwidths must be positive, got h={h}, b={b}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Kernel constants for estimating coefficient `nu` with an order-`m`
/// one-sided fit: the bias factor `e_ν' Γ⁻¹ ϑ` and the variance factor
/// `e_ν' Γ⁻¹ Ψ Γ⁻¹ e_ν`, from exact kernel moments on [0, 1].
fn kernel_constants(kernel: Kernel, m: usize, nu: usize) -> (f64, f64) {
    let k = m + 1;
    // Γ row-major, ϑ vector, Ψ row-major.
    let mut gamma = vec![0.0; k * k];
    let mut psi = vec![0.0; k * k];
    let mut theta = vec![0.0; k];
    for i in 0..k {
        for j in 0..k {
            gamma[i * k + j] = kernel.moment(i + j);
            psi[i * k + j] = kernel.moment_sq(i + j);
        }
        theta[i] = kernel.moment(m + 1 + i);
    }
    // Solve Γ a = ϑ and Γ e_ν = row of the inverse.
    let a = qr_least_squares(gamma.clone(), theta, k).expect("kernel moment system");
    let mut e_nu = vec![0.0; k];
    e_nu[nu] = 1.0;
    let g = qr_least_squares(gamma, e_nu, k).expect("kernel moment system");
    let bias = a.coeffs[nu];
    let mut var = 0.0;
    for i in 0..k {
        for j in 0..k {
            var += g.coeffs[i] * psi[i * k + j] * g.coeffs[j];
        }
    }
    (bias, var)
}

struct SidePilot {
    /// Estimates of m^{(k)}(0±)/k! from the global polynomial fit.
    derivative_coeffs: Vec<f64>,
    /// Residual variance near the cutoff, cluster-inflated when requested.
    sigma2: f64,
    /// Sorted absolute distances from the cutoff.
    abs_x: Vec<f64>,
    /// Magnitude scale of the fitted polynomial over the side's span,
    /// used to recognize derivative estimates that are pure rounding noise.
    coef_scale: f64,
}

fn side_pilot(
    sample: &Sample,
    side: Side,
    spec: &BandwidthSpec,
    pilot_window: f64,
) -> Result<SidePilot> {
    let global_order = (spec.p + 2).max(4);
    let mut abs_x: Vec<f64> = sample
        .observations()
        .iter()
        .filter(|o| side.contains(o.x))
        .map(|o| o.x.abs())
        .collect();
    abs_x.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let span = *abs_x.last().unwrap_or(&0.0);
    if span <= 0.0 {
        return Err(Error::InsufficientData(format!(
            "no spread in the running variable on the {side:?} side"
        )));
    }

    // Global one-sided fit for derivative estimates: uniform kernel over the
    // whole side.
    let global = fit_local_poly(sample, side, global_order, span * 2.0, Kernel::Uniform, spec.weighted)?;

    // Local variance window: the pilot bandwidth, widened if needed so the
    // order-p variance fit keeps at least two residual degrees of freedom.
    let min_pts = spec.p + 3;
    let mut window = pilot_window;
    if abs_x.len() >= min_pts {
        window = window.max(abs_x[min_pts - 1] * (1.0 + 1e-9));
    }
    let var_fit = fit_local_poly(sample, side, spec.p, window, Kernel::Uniform, spec.weighted)?;
    let m = var_fit.effective_n as f64;
    let wsum: f64 = var_fit.total_weights.iter().sum();
    let ssr: f64 = var_fit
        .residuals
        .iter()
        .zip(&var_fit.total_weights)
        .map(|(e, w)| w * e * e)
        .sum();
    let dof = (m - (spec.p as f64 + 1.0)).max(1.0);
    let mut sigma2 = (ssr / wsum) * (m / dof);

    if spec.cluster_aware {
        // Inflate by the ratio of clustered to heteroskedastic residual sums;
        // the ordered map keeps summation order deterministic.
        use std::collections::BTreeMap;
        let mut by_cluster: BTreeMap<u64, f64> = BTreeMap::new();
        let mut hetero = 0.0;
        for (pos, &idx) in var_fit.sample_indices().iter().enumerate() {
            let e = var_fit.residuals[pos] * var_fit.total_weights[pos].sqrt();
            *by_cluster
                .entry(sample.observations()[idx].cluster.0)
                .or_insert(0.0) += e;
            hetero += e * e;
        }
        let clustered: f64 = by_cluster.values().map(|s| s * s).sum();
        if hetero > 0.0 {
            sigma2 *= clustered / hetero;
        }
    }

    let coef_scale = global
        .coefficients
        .iter()
        .enumerate()
        .map(|(j, c)| c.abs() * span.powi(j as i32))
        .fold(0.0f64, f64::max);

    Ok(SidePilot {
        derivative_coeffs: global.coefficients,
        sigma2,
        abs_x,
        coef_scale,
    })
}

/// Smallest bandwidth leaving at least `count` observations with positive
/// kernel weight on the side described by `abs_x` (sorted).
fn bandwidth_floor(abs_x: &[f64], count: usize) -> f64 {
    if abs_x.len() < count {
        return *abs_x.last().unwrap_or(&0.0) * (1.0 + 1e-9);
    }
    abs_x[count - 1] * (1.0 + 1e-9)
}

/// Select the MSE-optimal bandwidth pair for the jump estimator.
///
/// Requires at least `3 (p+2)` observations on each side. Exactly zero
/// estimated curvature cannot feed the plug-in denominator; that degenerate
/// case falls back to the span of the narrower side, with a warning.
pub fn select_mse_bandwidth(sample: &Sample, spec: &BandwidthSpec) -> Result<BandwidthPair> {
    spec.validate()?;
    let (n_left, n_right) = sample.side_counts();
    let need = 3 * (spec.p + 2);
    if n_left < need || n_right < need {
        return Err(Error::InsufficientData(format!(
            "bandwidth selection needs {need} observations per side, found left {n_left}, right {n_right}"
        )));
    }

    let n = sample.len() as f64;
    let xs: Vec<f64> = sample.observations().iter().map(|o| o.x).collect();
    let sd = crate::stats::std_dev(&xs);
    let mut sorted = xs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.349) } else { sd };
    if !(spread > 0.0) {
        return Err(Error::InsufficientData(
            "running variable has no spread".into(),
        ));
    }
    let c_n = 2.576 * spread * n.powf(-0.2);

    let left = side_pilot(sample, Side::Left, spec, c_n)?;
    let right = side_pilot(sample, Side::Right, spec, c_n)?;

    // Density at the cutoff from a window wide enough to hold a few points.
    let mut dens_window = c_n;
    let mut in_window = xs.iter().filter(|x| x.abs() <= dens_window).count();
    if in_window < 4 {
        let mut abs_all: Vec<f64> = xs.iter().map(|x| x.abs()).collect();
        abs_all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        dens_window = abs_all[3.min(abs_all.len() - 1)].max(f64::MIN_POSITIVE);
        in_window = xs.iter().filter(|x| x.abs() <= dens_window).count();
    }
    let f0 = in_window as f64 / (2.0 * n * dens_window);

    let sigma2_sum = left.sigma2 + right.sigma2;
    let span_narrow = left
        .abs_x
        .last()
        .unwrap()
        .min(*right.abs_x.last().unwrap());

    let p = spec.p;
    let q = spec.q;
    let sign_h = if (p + 1) % 2 == 0 { 1.0 } else { -1.0 };
    let sign_b = if (q + 1) % 2 == 0 { 1.0 } else { -1.0 };

    let (c_h, w_h) = kernel_constants(spec.kernel, p, 0);
    let (c_b, w_b) = kernel_constants(spec.kernel, q, p + 1);

    // Curvature differences entering the bias constants. The reflection of the
    // left-side basis flips odd derivatives, hence the parity signs.
    let d_h = right.derivative_coeffs[p + 1] - sign_h * left.derivative_coeffs[p + 1];
    let d_b = right.derivative_coeffs[q + 1] - sign_b * left.derivative_coeffs[q + 1];

    // A derivative estimate counts as zero when it is rounding noise relative
    // to the pilot polynomial's own scale; exact-zero tests never fire in
    // floating point on noiseless polynomial data.
    let coef_scale = left.coef_scale.max(right.coef_scale);
    let is_zero = |d: f64, order: usize| {
        d == 0.0 || d.abs() * span_narrow.powi(order as i32) <= 1e-9 * coef_scale
    };

    let v_h = w_h * sigma2_sum / f0;
    let v_b = w_b * sigma2_sum / f0;

    let h = if is_zero(d_h, p + 1) {
        log::warn!(
            "degenerate pilot: estimated order-{} curvature difference is zero; \
             falling back to the narrower side span {span_narrow:.6}",
            p + 1
        );
        span_narrow
    } else {
        let bias2 = (c_h * d_h).powi(2);
        (v_h / (2.0 * (p as f64 + 1.0) * bias2 * n)).powf(1.0 / (2.0 * p as f64 + 3.0))
    };

    let b = if is_zero(d_b, q + 1) {
        log::warn!(
            "degenerate pilot: estimated order-{} derivative difference is zero; \
             falling back to the narrower side span {span_narrow:.6}",
            q + 1
        );
        span_narrow
    } else {
        let bias2 = (c_b * d_b).powi(2);
        let num = (2.0 * p as f64 + 3.0) * v_b;
        let den = 2.0 * (q - p) as f64 * bias2 * n;
        (num / den).powf(1.0 / (2.0 * q as f64 + 3.0))
    };

    // Keep enough effective observations per side for both fit orders.
    let h_floor = bandwidth_floor(&left.abs_x, p + 2).max(bandwidth_floor(&right.abs_x, p + 2));
    let b_floor = bandwidth_floor(&left.abs_x, q + 2).max(bandwidth_floor(&right.abs_x, q + 2));
    let h = h.max(h_floor);
    let b = b.max(b_floor);

    if !(h > 0.0 && b > 0.0 && h.is_finite() && b.is_finite()) {
        return Err(Error::InsufficientData(format!(
            "bandwidth selection produced a non-positive or non-finite pair (h={h}, b={b})"
        )));
    }

    Ok(BandwidthPair::new(h, b))
}

/// Manual estimation bandwidth with the bias bandwidth scaled to preserve the
/// automatically selected ratio. Passing the reference's own `h` returns the
/// reference unchanged.
pub fn manual_pair(h: f64, reference: &BandwidthPair) -> Result<BandwidthPair> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidInput(format!(
            "manual bandwidth must be positive, got {h}"
        )));
    }
    if h == reference.h {
        return Ok(*reference);
    }
    Ok(BandwidthPair {
        h,
        b: h / reference.rho,
        rho: reference.rho,
    })
}

/// Resolve a bandwidth spec to a concrete pair for the given sample.
pub fn resolve(sample: &Sample, spec: &BandwidthSpec) -> Result<BandwidthPair> {
    spec.validate()?;
    match spec.mode {
        BandwidthMode::MseOptimal => select_mse_bandwidth(sample, spec),
        BandwidthMode::Manual { h } => {
            let auto = select_mse_bandwidth(
                sample,
                &BandwidthSpec {
                    mode: BandwidthMode::MseOptimal,
                    ..*spec
                },
            )?;
            manual_pair(h, &auto)
        }
        BandwidthMode::ManualBoth { h, b } => Ok(BandwidthPair::new(h, b)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::ClusterId;

    fn smooth_sample(n: usize, seed: u64) -> Sample {
        // Deterministic pseudo-noise, asymmetric curvature across the cutoff.
        let mut rows = Vec::with_capacity(n);
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for i in 0..n {
            let x = next() * 2.0 - 1.0;
            let curve = if x >= 0.0 { 2.5 * x * x } else { -1.5 * x * x };
            let y = 0.5 * x + curve + (next() - 0.5) * 0.4;
            rows.push((x, y, 0.0, ClusterId(i as u64), 1.0));
        }
        Sample::from_raw(rows, 0.0).unwrap()
    }

    #[test]
    fn selection_is_deterministic() {
        let s = smooth_sample(600, 7);
        let spec = BandwidthSpec::default();
        let a = select_mse_bandwidth(&s, &spec).unwrap();
        let b = select_mse_bandwidth(&s, &spec).unwrap();
        assert_eq!(a.h.to_bits(), b.h.to_bits());
        assert_eq!(a.b.to_bits(), b.b.to_bits());
        assert!(a.h > 0.0 && a.b > 0.0 && a.rho > 0.0);
    }

    #[test]
    fn scale_equivariance() {
        let s = smooth_sample(500, 3);
        let spec = BandwidthSpec::default();
        let base = select_mse_bandwidth(&s, &spec).unwrap();

        let scaled_rows: Vec<_> = s
            .observations()
            .iter()
            .map(|o| (o.x * 10.0, o.y, o.t, o.cluster, o.w))
            .collect();
        let scaled = Sample::from_raw(scaled_rows, 0.0).unwrap();
        let pair = select_mse_bandwidth(&scaled, &spec).unwrap();
        assert!(
            (pair.h / base.h - 10.0).abs() < 1e-8,
            "h ratio {}",
            pair.h / base.h
        );
        assert!((pair.b / base.b - 10.0).abs() < 1e-8);
    }

    #[test]
    fn recomputed_per_outcome() {
        let s = smooth_sample(500, 11);
        // Same x design, different outcome: selection must change.
        let other_rows: Vec<_> = s
            .observations()
            .iter()
            .map(|o| {
                let x = o.x;
                let curve = if x >= 0.0 { 9.0 * x * x } else { -0.5 * x * x };
                (x, curve + 0.1 * o.y, o.t, o.cluster, o.w)
            })
            .collect();
        let other = Sample::from_raw(other_rows, 0.0).unwrap();
        let spec = BandwidthSpec::default();
        let a = select_mse_bandwidth(&s, &spec).unwrap();
        let b = select_mse_bandwidth(&other, &spec).unwrap();
        assert_ne!(a.h, b.h);
    }

    #[test]
    fn kernel_changes_selection() {
        let s = smooth_sample(500, 5);
        let tri = select_mse_bandwidth(&s, &BandwidthSpec::default()).unwrap();
        let uni = select_mse_bandwidth(
            &s,
            &BandwidthSpec {
                kernel: Kernel::Uniform,
                ..BandwidthSpec::default()
            },
        )
        .unwrap();
        assert_ne!(tri.h, uni.h);
    }

    #[test]
    fn manual_pair_preserves_ratio() {
        let reference = BandwidthPair::new(0.05, 0.10);
        let out = manual_pair(0.10, &reference).unwrap();
        assert_eq!(out.h, 0.10);
        assert!((out.b - 0.20).abs() < 1e-15);
        assert_eq!(out.rho, reference.rho);

        let fixed = manual_pair(0.05, &reference).unwrap();
        assert_eq!(fixed, reference);

        let c = manual_pair(0.033, &reference).unwrap();
        assert!((c.b - 0.066).abs() < 1e-15);

        assert!(manual_pair(-0.1, &reference).is_err());
        assert!(manual_pair(0.0, &reference).is_err());
    }

    #[test]
    fn degenerate_pilot_falls_back_to_span() {
        // Exactly linear truth: zero curvature on both sides.
        let rows: Vec<_> = (0..120)
            .map(|i| {
                let x = (i as f64 - 59.5) / 60.0;
                (x, 1.0 + 2.0 * x + 0.7 * f64::from(x >= 0.0), 0.0, ClusterId(i), 1.0)
            })
            .collect();
        let s = Sample::from_raw(rows, 0.0).unwrap();
        let pair = select_mse_bandwidth(&s, &BandwidthSpec::default()).unwrap();
        let span_narrow: f64 = 59.5 / 60.0;
        assert!((pair.h - span_narrow).abs() < 1e-12);
        assert!((pair.b - span_narrow).abs() < 1e-12);
    }

    #[test]
    fn insufficient_data_rejected() {
        let rows: Vec<_> = (0..5)
            .map(|i| (i as f64 - 2.0, 1.0, 0.0, ClusterId(i as u64), 1.0))
            .collect();
        let s = Sample::from_raw(rows, 0.0).unwrap();
        assert!(matches!(
            select_mse_bandwidth(&s, &BandwidthSpec::default()),
            Err(Error::InsufficientData(_))
        ));
    }
}
