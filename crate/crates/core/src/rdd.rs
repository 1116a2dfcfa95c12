//! Estimation orchestration: sharp and fuzzy designs, donut exclusion,
//! binned discontinuity-plot data, and sensitivity sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{self, BandwidthPair, BandwidthSpec};
use crate::error::{Error, Result};
use crate::inference::{
    assemble_result, Combination, FirstStage, JumpComponents, RddResult, VarianceSpec,
};
use crate::local::fit_local_poly;
use crate::sample::{Observation, Sample, Side};

/// Everything one estimation run needs besides the data. The `outcome` and
/// `exposure` names are metadata resolved by the file layer; estimators
/// receive a `Sample` whose `y` is the outcome and whose `t` is the exposure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationRequest {
    pub outcome: String,
    /// `None` estimates a sharp design; `Some(column)` a fuzzy one.
    pub exposure: Option<String>,
    pub cutoff: f64,
    pub bandwidth: BandwidthSpec,
    pub variance: VarianceSpec,
    /// Exclusion radius around the cutoff in running-variable units; 0 = off.
    pub donut_radius: f64,
    pub weighted: bool,
    /// Report below-cutoff minus above-cutoff instead of the default
    /// right-minus-left. Intention-to-treat holds below the cutoff here, so
    /// program impacts are conventionally reported with this flag set.
    pub flip_sign: bool,
}

impl Default for EstimationRequest {
    fn default() -> Self {
        EstimationRequest {
            outcome: "y".into(),
            exposure: None,
            cutoff: 0.0,
            bandwidth: BandwidthSpec::default(),
            variance: VarianceSpec::default(),
            donut_radius: 0.0,
            weighted: false,
            flip_sign: false,
        }
    }
}

impl EstimationRequest {
    pub fn validate(&self) -> Result<()> {
        if self.donut_radius < 0.0 {
            return Err(Error::InvalidInput(format!(
                "donut radius must be nonnegative, got {}",
                self.donut_radius
            )));
        }
        if let Some(exposure) = &self.exposure {
            if exposure == &self.outcome {
                return Err(Error::InvalidInput(
                    "outcome and exposure columns must differ".into(),
                ));
            }
        }
        self.bandwidth.validate()?;
        self.variance.validate()
    }

    fn prepare(&self, sample: &Sample) -> Result<Sample> {
        self.validate()?;
        let filtered = donut_filter(sample, self.donut_radius);
        let ready = if self.weighted {
            filtered
        } else {
            filtered.unweighted()
        };
        ready.require_two_sided()?;
        Ok(ready)
    }
}

/// Remove observations with `|x - c| < radius`. A radius of zero is the
/// identity.
pub fn donut_filter(sample: &Sample, radius: f64) -> Sample {
    if radius <= 0.0 {
        return sample.clone();
    }
    sample.filter(|o| o.x.abs() >= radius)
}

/// Sharp RDD: donut filter, bandwidth resolution, one-sided fits, robust
/// bias-corrected inference.
pub fn estimate_sharp(sample: &Sample, req: &EstimationRequest) -> Result<RddResult> {
    let data = req.prepare(sample)?;
    let bw = bandwidth::resolve(&data, &req.bandwidth)?;
    let comp = JumpComponents::estimate(&data, req.bandwidth.p, req.bandwidth.kernel, bw, req.weighted)?;
    let var_conv = comp
        .conventional_combination(&data)
        .variance(req.variance.flavor)?;
    let var_robust = comp.robust_combination(&data).variance(req.variance.flavor)?;
    let result = assemble_result(&comp, var_conv, var_robust, bw, &req.variance, None);
    Ok(if req.flip_sign { result.flipped() } else { result })
}

/// Fuzzy RDD: the ratio of the outcome jump to the exposure jump, both
/// estimated with the same kernel, bandwidths, and sample.
///
/// Bandwidths are selected on the reduced form. Standard errors use the
/// delta method via the instrumental-variables residual
/// `(e_y − τ̂_F e_t) / τ̂_T`, which shares the design (and hence leverages)
/// with the reduced form. The bias-corrected variant corrects numerator and
/// denominator jointly. The sign convention cancels in the ratio, so
/// `flip_sign` has no effect here. A weak first stage is reported through the
/// attached t statistic, never raised as an error; only an exactly zero
/// first-stage jump is.
pub fn estimate_fuzzy(sample: &Sample, req: &EstimationRequest) -> Result<RddResult> {
    let data = req.prepare(sample)?;
    let bw = bandwidth::resolve(&data, &req.bandwidth)?;
    let p = req.bandwidth.p;
    let kernel = req.bandwidth.kernel;

    let comp_y = JumpComponents::estimate(&data, p, kernel, bw, req.weighted)?;
    // Same rows with the exposure as the outcome.
    let exposure_sample = Sample::from_centered(
        data.observations()
            .iter()
            .map(|o| Observation { y: o.t, ..*o })
            .collect(),
        data.cutoff(),
    )?;
    let comp_t = JumpComponents::estimate(&exposure_sample, p, kernel, bw, req.weighted)?;

    if comp_t.tau_conventional == 0.0 || comp_t.tau_bias_corrected == 0.0 {
        return Err(Error::ZeroFirstStage);
    }

    let tau_conv = comp_y.tau_conventional / comp_t.tau_conventional;
    let tau_bc = comp_y.tau_bias_corrected / comp_t.tau_bias_corrected;

    let conv = iv_combination(
        &comp_y.conventional_combination(&data),
        &comp_t.conventional_combination(&exposure_sample),
        tau_conv,
        comp_t.tau_conventional,
    );
    let robust = iv_combination(
        &comp_y.robust_combination(&data),
        &comp_t.robust_combination(&exposure_sample),
        tau_bc,
        comp_t.tau_bias_corrected,
    );
    let var_conv = conv.variance(req.variance.flavor)?;
    let var_robust = robust.variance(req.variance.flavor)?;

    let first_stage_var = comp_t
        .conventional_combination(&exposure_sample)
        .variance(req.variance.flavor)?;
    let fs_se = first_stage_var.max(0.0).sqrt();
    let first_stage = FirstStage {
        jump: comp_t.tau_conventional,
        se: fs_se,
        t_statistic: if fs_se > 0.0 {
            comp_t.tau_conventional / fs_se
        } else {
            f64::INFINITY
        },
    };

    // Package the ratio as a JumpComponents-free result: the ratio's "bias"
    // is whatever the joint correction removed.
    let fuzzy_comp = FuzzyScalars {
        tau_conventional: tau_conv,
        tau_bias_corrected: tau_bc,
    };
    Ok(fuzzy_comp.assemble(var_conv, var_robust, bw, &req.variance, first_stage, &comp_y))
}

struct FuzzyScalars {
    tau_conventional: f64,
    tau_bias_corrected: f64,
}

impl FuzzyScalars {
    fn assemble(
        &self,
        var_conv: f64,
        var_robust: f64,
        bw: BandwidthPair,
        vspec: &VarianceSpec,
        first_stage: FirstStage,
        comp_y: &JumpComponents,
    ) -> RddResult {
        let se_conventional = var_conv.max(0.0).sqrt();
        let se_robust = var_robust.max(0.0).sqrt();
        let z = crate::stats::normal_quantile(0.5 + vspec.confidence / 2.0);
        let tau_bc = self.tau_bias_corrected;
        RddResult {
            tau_conventional: self.tau_conventional,
            tau_bias_corrected: tau_bc,
            bias_estimate: self.tau_conventional - tau_bc,
            se_conventional,
            se_robust,
            ci_robust: (tau_bc - z * se_robust, tau_bc + z * se_robust),
            p_value_robust: if se_robust > 0.0 {
                crate::stats::two_sided_p(tau_bc / se_robust)
            } else if tau_bc == 0.0 {
                1.0
            } else {
                0.0
            },
            bandwidths: bw,
            n_left: comp_y.left_h.effective_n,
            n_right: comp_y.right_h.effective_n,
            first_stage: Some(first_stage),
        }
    }
}

/// Combine reduced-form and first-stage scores into the ratio estimator's
/// influence terms: same weights, residual `(e_y − τ e_t) / τ_T`.
fn iv_combination(y: &Combination, t: &Combination, ratio: f64, tau_t: f64) -> Combination {
    debug_assert_eq!(y.terms.len(), t.terms.len());
    let terms = y
        .terms
        .iter()
        .zip(&t.terms)
        .map(|(ty, tt)| {
            debug_assert_eq!(ty.sample_index, tt.sample_index);
            crate::inference::Term {
                resid: (ty.resid - ratio * tt.resid) / tau_t,
                nn_value: (ty.nn_value - ratio * tt.nn_value) / tau_t,
                ..*ty
            }
        })
        .collect();
    Combination {
        terms,
        params: y.params,
    }
}

/// Dispatch on the request's exposure field.
pub fn estimate(sample: &Sample, req: &EstimationRequest) -> Result<RddResult> {
    if req.exposure.is_some() {
        estimate_fuzzy(sample, req)
    } else {
        estimate_sharp(sample, req)
    }
}

// ---------------------------------------------------------------------------
// Discontinuity plots
// ---------------------------------------------------------------------------

/// Rule choosing the number of evenly spaced bins per side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum BinningRule {
    /// Minimize the integrated MSE of the binned approximation of the
    /// regression function: balancing squared bias `(span²/12) E[μ'(x)²] / J²`
    /// against sampling variance `span σ² J / n` gives `J = (2 B n / V)^{1/3}`.
    MseEvenlySpaced,
    /// Mimic the raw scatter's variability: the bin means' total sampling
    /// variance `σ² J² / n` is set equal to the outcome variance, giving
    /// `J = √(n) · s_y / σ̂`.
    VarianceMimicking,
    Manual { left: usize, right: usize },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlotBin {
    pub center: f64,
    pub mean_y: f64,
    pub count: usize,
}

/// Scatter bins plus global polynomial overlays for a discontinuity plot.
/// Bin centers are strictly increasing and no bin straddles the cutoff;
/// polynomial coefficients are in centered running-variable units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotData {
    pub bins: Vec<PlotBin>,
    pub fit_left: Vec<f64>,
    pub fit_right: Vec<f64>,
    pub binning_rule: BinningRule,
    pub poly_order: usize,
    pub j_left: usize,
    pub j_right: usize,
    pub cutoff: f64,
}

struct SidePlotInput {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ws: Vec<f64>,
}

fn side_input(sample: &Sample, side: Side) -> SidePlotInput {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    for o in sample.observations() {
        if side.contains(o.x) {
            xs.push(o.x);
            ys.push(o.y);
            ws.push(o.w);
        }
    }
    SidePlotInput { xs, ys, ws }
}

fn choose_bins(
    input: &SidePlotInput,
    fit: &crate::local::LocalFit,
    rule: BinningRule,
    side: Side,
    manual: usize,
) -> usize {
    let n = input.xs.len();
    if n == 0 {
        return 1;
    }
    match rule {
        BinningRule::Manual { .. } => manual.max(1),
        BinningRule::MseEvenlySpaced => {
            let span = span_of(&input.xs, side);
            if span <= 0.0 {
                return 1;
            }
            let sigma2 = residual_variance(fit, &input.ws);
            let deriv_sq = input
                .xs
                .iter()
                .map(|&x| {
                    let d = poly_derivative(&fit.coefficients, x);
                    d * d
                })
                .sum::<f64>()
                / n as f64;
            let bias = span * span / 12.0 * deriv_sq;
            let var = span * sigma2;
            if !(bias > 0.0) || !(var > 0.0) {
                return 1;
            }
            let j = (2.0 * bias * n as f64 / var).powf(1.0 / 3.0).ceil() as usize;
            j.clamp(1, n)
        }
        BinningRule::VarianceMimicking => {
            let sigma2 = residual_variance(fit, &input.ws);
            let sy2 = crate::stats::variance(&input.ys);
            if !(sigma2 > 0.0) || !(sy2 > 0.0) {
                return 1;
            }
            let j = (n as f64 * sy2 / sigma2).sqrt().ceil() as usize;
            j.clamp(1, n)
        }
    }
}

fn span_of(xs: &[f64], side: Side) -> f64 {
    match side {
        Side::Left => -xs.iter().cloned().fold(0.0f64, f64::min),
        Side::Right => xs.iter().cloned().fold(0.0f64, f64::max),
    }
}

fn residual_variance(fit: &crate::local::LocalFit, ws: &[f64]) -> f64 {
    let _ = ws;
    let wsum: f64 = fit.total_weights.iter().sum();
    let ssr: f64 = fit
        .residuals
        .iter()
        .zip(&fit.total_weights)
        .map(|(e, w)| w * e * e)
        .sum();
    let m = fit.effective_n as f64;
    let dof = (m - (fit.order as f64 + 1.0)).max(1.0);
    (ssr / wsum) * (m / dof)
}

fn poly_derivative(coeffs: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    let mut xp = 1.0;
    for (j, &c) in coeffs.iter().enumerate().skip(1) {
        acc += j as f64 * c * xp;
        xp *= x;
    }
    acc
}

fn bin_side(input: &SidePlotInput, side: Side, j: usize) -> Vec<PlotBin> {
    if input.xs.is_empty() {
        return Vec::new();
    }
    let (lo, width) = match side {
        Side::Left => {
            let min = input.xs.iter().cloned().fold(f64::INFINITY, f64::min);
            (min, (0.0 - min) / j as f64)
        }
        Side::Right => {
            let max = input.xs.iter().cloned().fold(0.0f64, f64::max);
            (0.0, max / j as f64)
        }
    };
    let mut sums = vec![0.0; j];
    let mut weights = vec![0.0; j];
    let mut counts = vec![0usize; j];
    for ((&x, &y), &w) in input.xs.iter().zip(&input.ys).zip(&input.ws) {
        let idx = if width > 0.0 {
            (((x - lo) / width).floor() as isize).clamp(0, j as isize - 1) as usize
        } else {
            0
        };
        sums[idx] += w * y;
        weights[idx] += w;
        counts[idx] += 1;
    }
    (0..j)
        .filter(|&b| counts[b] > 0)
        .map(|b| PlotBin {
            center: lo + (b as f64 + 0.5) * width,
            mean_y: sums[b] / weights[b],
            count: counts[b],
        })
        .collect()
}

/// Binned scatter data plus per-side global polynomial fits on the unbinned
/// observations.
pub fn binned_plot_data(
    sample: &Sample,
    rule: BinningRule,
    poly_order: usize,
) -> Result<PlotData> {
    sample.require_two_sided()?;
    let left_in = side_input(sample, Side::Left);
    let right_in = side_input(sample, Side::Right);

    // Global fits: uniform kernel over the full side span.
    let span_l = span_of(&left_in.xs, Side::Left);
    let span_r = span_of(&right_in.xs, Side::Right);
    let fit_l = fit_local_poly(
        sample,
        Side::Left,
        poly_order,
        (span_l * 2.0).max(f64::MIN_POSITIVE),
        crate::kernel::Kernel::Uniform,
        true,
    )?;
    let fit_r = fit_local_poly(
        sample,
        Side::Right,
        poly_order,
        (span_r * 2.0).max(f64::MIN_POSITIVE),
        crate::kernel::Kernel::Uniform,
        true,
    )?;

    let (man_l, man_r) = match rule {
        BinningRule::Manual { left, right } => (left, right),
        _ => (0, 0),
    };
    let j_left = choose_bins(&left_in, &fit_l, rule, Side::Left, man_l);
    let j_right = choose_bins(&right_in, &fit_r, rule, Side::Right, man_r);

    let mut bins = bin_side(&left_in, Side::Left, j_left);
    bins.extend(bin_side(&right_in, Side::Right, j_right));

    Ok(PlotData {
        bins,
        fit_left: fit_l.coefficients,
        fit_right: fit_r.coefficients,
        binning_rule: rule,
        poly_order,
        j_left,
        j_right,
        cutoff: sample.cutoff(),
    })
}

// ---------------------------------------------------------------------------
// Treatment-fraction histogram
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub treated: usize,
    pub count: usize,
    /// Treated share; `None` for empty intervals.
    pub fraction: Option<f64>,
}

/// Fraction of districts treated within successive half-open literacy
/// intervals `[k·w, (k+1)·w)`. Empty intervals inside the observed range are
/// emitted with a zero count.
pub fn treatment_fraction_histogram(
    districts: &[(f64, bool)],
    bin_width: f64,
) -> Result<Vec<HistogramBin>> {
    if !(bin_width > 0.0) {
        return Err(Error::InvalidInput(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    if districts.is_empty() {
        return Ok(Vec::new());
    }
    // Values within 1e-9 of an interval boundary belong to the upper interval,
    // preserving half-open semantics under floating point.
    let index = |value: f64| -> i64 {
        let ratio = value / bin_width;
        let rounded = ratio.round();
        if (ratio - rounded).abs() < 1e-9 {
            rounded as i64
        } else {
            ratio.floor() as i64
        }
    };
    let k_min = districts.iter().map(|&(v, _)| index(v)).min().unwrap();
    let k_max = districts.iter().map(|&(v, _)| index(v)).max().unwrap();
    let mut treated = vec![0usize; (k_max - k_min + 1) as usize];
    let mut counts = vec![0usize; (k_max - k_min + 1) as usize];
    for &(v, t) in districts {
        let k = (index(v) - k_min) as usize;
        counts[k] += 1;
        if t {
            treated[k] += 1;
        }
    }
    Ok((k_min..=k_max)
        .map(|k| {
            let i = (k - k_min) as usize;
            HistogramBin {
                lo: k as f64 * bin_width,
                hi: (k + 1) as f64 * bin_width,
                treated: treated[i],
                count: counts[i],
                fraction: if counts[i] > 0 {
                    Some(treated[i] as f64 / counts[i] as f64)
                } else {
                    None
                },
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Sensitivity sweeps
// ---------------------------------------------------------------------------

/// One grid point of a sensitivity sweep. Failures are recorded, not fatal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    /// The cutoff or bandwidth this row was computed at.
    pub at: f64,
    pub result: Option<RddResult>,
    pub error: Option<String>,
    /// Marks the row matching the automatically selected bandwidth.
    pub is_mse_optimal: bool,
}

/// Re-center, re-select bandwidths, and re-estimate at every candidate cutoff.
pub fn sweep_threshold(
    sample: &Sample,
    cutoffs: &[f64],
    req: &EstimationRequest,
) -> Vec<SweepPoint> {
    cutoffs
        .par_iter()
        .map(|&c| {
            let recentered = sample.recenter(c);
            let mut point_req = req.clone();
            point_req.cutoff = c;
            match estimate(&recentered, &point_req) {
                Ok(result) => SweepPoint {
                    at: c,
                    result: Some(result),
                    error: None,
                    is_mse_optimal: false,
                },
                Err(e) => SweepPoint {
                    at: c,
                    result: None,
                    error: Some(e.to_string()),
                    is_mse_optimal: false,
                },
            }
        })
        .collect()
}

/// Vary the estimation bandwidth over a grid at a fixed cutoff, holding the
/// bias-to-estimation bandwidth ratio at its automatically selected value.
/// Returns the sweep rows and the reference pair.
pub fn sweep_bandwidth(
    sample: &Sample,
    grid: &[f64],
    req: &EstimationRequest,
) -> Result<(Vec<SweepPoint>, BandwidthPair)> {
    // Reference selection happens on the same filtered sample estimation uses.
    let prepared = req.prepare(sample)?;
    let auto = bandwidth::resolve(
        &prepared,
        &BandwidthSpec {
            mode: crate::bandwidth::BandwidthMode::MseOptimal,
            ..req.bandwidth
        },
    )?;

    let rows = grid
        .par_iter()
        .map(|&h| {
            let pair = match bandwidth::manual_pair(h, &auto) {
                Ok(p) => p,
                Err(e) => {
                    return SweepPoint {
                        at: h,
                        result: None,
                        error: Some(e.to_string()),
                        is_mse_optimal: false,
                    }
                }
            };
            let mut point_req = req.clone();
            point_req.bandwidth.mode = crate::bandwidth::BandwidthMode::ManualBoth {
                h: pair.h,
                b: pair.b,
            };
            let is_mse_optimal = (h - auto.h).abs() <= 1e-9 * auto.h.abs().max(1e-12);
            match estimate(sample, &point_req) {
                Ok(result) => SweepPoint {
                    at: h,
                    result: Some(result),
                    error: None,
                    is_mse_optimal,
                },
                Err(e) => SweepPoint {
                    at: h,
                    result: None,
                    error: Some(e.to_string()),
                    is_mse_optimal,
                },
            }
        })
        .collect();
    Ok((rows, auto))
}
