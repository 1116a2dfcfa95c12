//! Variance estimators and the robust bias-corrected point estimate and
//! confidence interval.
//!
//! Every estimator here is a linear combination of outcomes, `Σ a_i y_i`,
//! so all variance flavors reduce to a sandwich over per-observation scores
//! `a_i ê_i`:
//!
//! * HC0: `Σ a_i² ê_i²`; HC1 scales by `n/(n-p-1)`;
//! * HC2 / HC3 deflate `ê_i²` by `(1-h_ii)` and `(1-h_ii)²`;
//! * nearest-neighbor replaces `ê_i²` with `J/(J+1) (y_i - ȳ_J)²` from the
//!   `J` nearest same-side neighbors;
//! * cluster sums scores within clusters before squaring.
//!
//! The bias-corrected estimator subtracts the design-based leading bias: with
//! `λ` the intercept weights of the order-`p` fit at `h` and `ν` the weights
//! extracting the (p+1)-th coefficient from the order-`q` fit at `b`, the bias
//! is `(Σ λ_i x_i^{p+1}) · β̂_{q,p+1}` per side, and the bias-corrected
//! estimate is again linear in outcomes with combined weights
//! `λ_i − (Σ λ x^{p+1}) ν_i`. Its variance ("robust") therefore accounts for
//! the sampling noise of the bias estimate. When the two bandwidths differ,
//! residuals and leverages for the robust variance come from the order-`q`
//! fit at `b`; observations inside the `h` window but outside the `b` window
//! use the order-`q` polynomial prediction for their residual and zero
//! leverage.

use serde::{Deserialize, Serialize};

use crate::bandwidth::BandwidthPair;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::local::{fit_local_poly, jump_estimate, LocalFit};
use crate::sample::{ClusterId, Sample, Side};
use crate::stats::{normal_quantile, two_sided_p};

/// Sandwich flavor for standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VarianceFlavor {
    ConventionalHc0,
    Hc1,
    Hc2,
    #[default]
    Hc3Jackknife,
    NearestNeighbor(usize),
    Cluster,
}

impl std::str::FromStr for VarianceFlavor {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hc0" | "conventional" => Ok(VarianceFlavor::ConventionalHc0),
            "hc1" => Ok(VarianceFlavor::Hc1),
            "hc2" => Ok(VarianceFlavor::Hc2),
            "hc3" | "jackknife" => Ok(VarianceFlavor::Hc3Jackknife),
            "nn" | "nearest-neighbor" => Ok(VarianceFlavor::NearestNeighbor(3)),
            "cluster" => Ok(VarianceFlavor::Cluster),
            other => Err(format!("unknown variance flavor: {other}")),
        }
    }
}

/// Variance flavor plus the confidence level used for intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceSpec {
    pub flavor: VarianceFlavor,
    pub confidence: f64,
}

impl Default for VarianceSpec {
    fn default() -> Self {
        VarianceSpec {
            flavor: VarianceFlavor::Hc3Jackknife,
            confidence: 0.95,
        }
    }
}

impl VarianceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidInput(format!(
                "confidence level must lie in (0,1), got {}",
                self.confidence
            )));
        }
        if let VarianceFlavor::NearestNeighbor(j) = self.flavor {
            if j == 0 {
                return Err(Error::InvalidInput(
                    "nearest-neighbor variance needs J >= 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Conventional and bias-corrected estimates with their standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RddResult {
    pub tau_conventional: f64,
    pub tau_bias_corrected: f64,
    pub bias_estimate: f64,
    pub se_conventional: f64,
    pub se_robust: f64,
    pub ci_robust: (f64, f64),
    pub p_value_robust: f64,
    pub bandwidths: BandwidthPair,
    pub n_left: usize,
    pub n_right: usize,
    /// First-stage jump and its t statistic, present for fuzzy designs.
    pub first_stage: Option<FirstStage>,
}

/// Weak-instrument diagnostic attached to fuzzy results.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FirstStage {
    pub jump: f64,
    pub se: f64,
    pub t_statistic: f64,
}

impl RddResult {
    /// Flip the reporting sign convention (below-cutoff minus above-cutoff).
    pub fn flipped(&self) -> RddResult {
        RddResult {
            tau_conventional: -self.tau_conventional,
            tau_bias_corrected: -self.tau_bias_corrected,
            bias_estimate: -self.bias_estimate,
            ci_robust: (-self.ci_robust.1, -self.ci_robust.0),
            ..self.clone()
        }
    }
}

/// One scored observation inside a linear-combination variance computation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Term {
    pub sample_index: usize,
    /// Signed contribution weight of this observation to the estimate.
    pub a: f64,
    pub resid: f64,
    pub hat: f64,
    pub x: f64,
    pub side: Side,
    /// Value differenced by the nearest-neighbor variance method.
    pub nn_value: f64,
    pub cluster: ClusterId,
}

/// A linear estimator `Σ a_i y_i` with the residuals and leverages needed to
/// estimate its sampling variance.
#[derive(Debug, Clone)]
pub(crate) struct Combination {
    pub terms: Vec<Term>,
    /// Parameter count used by degrees-of-freedom corrections.
    pub params: usize,
}

impl Combination {
    /// Sandwich variance under the requested flavor.
    pub fn variance(&self, flavor: VarianceFlavor) -> Result<f64> {
        let n = self.terms.len() as f64;
        let k = self.params as f64;
        match flavor {
            VarianceFlavor::ConventionalHc0 => Ok(self.hc_sum(|_t, e2| e2)?),
            VarianceFlavor::Hc1 => {
                let scale = n / (n - k).max(1.0);
                Ok(self.hc_sum(|_t, e2| e2)? * scale)
            }
            VarianceFlavor::Hc2 => self.hc_sum_checked(1, "HC2"),
            VarianceFlavor::Hc3Jackknife => self.hc_sum_checked(2, "HC3"),
            VarianceFlavor::NearestNeighbor(j) => {
                let sigma2 = self.nearest_neighbor_sigma2(j);
                if sigma2.iter().all(|&s| s == 0.0) {
                    // Constant outcomes within neighborhoods leave nothing to
                    // difference; fall back to the jackknife flavor.
                    log::warn!(
                        "nearest-neighbor residuals are all zero; switching to the HC3 variance"
                    );
                    return self.hc_sum_checked(2, "HC3");
                }
                Ok(self
                    .terms
                    .iter()
                    .zip(&sigma2)
                    .map(|(t, &s)| t.a * t.a * s)
                    .sum())
            }
            VarianceFlavor::Cluster => {
                // Ordered map keeps the summation order deterministic.
                let mut sums: std::collections::BTreeMap<ClusterId, f64> =
                    std::collections::BTreeMap::new();
                for t in &self.terms {
                    *sums.entry(t.cluster).or_insert(0.0) += t.a * t.resid;
                }
                Ok(sums.values().map(|s| s * s).sum())
            }
        }
    }

    fn hc_sum(&self, f: impl Fn(&Term, f64) -> f64) -> Result<f64> {
        Ok(self
            .terms
            .iter()
            .map(|t| t.a * t.a * f(t, t.resid * t.resid))
            .sum())
    }

    fn hc_sum_checked(&self, power: i32, flavor: &str) -> Result<f64> {
        let mut acc = 0.0;
        for t in &self.terms {
            let defl = 1.0 - t.hat;
            if defl <= 0.0 {
                return Err(Error::LeverageOne {
                    index: t.sample_index,
                    flavor: flavor.to_string(),
                });
            }
            acc += t.a * t.a * t.resid * t.resid / defl.powi(power);
        }
        Ok(acc)
    }

    /// Per-term variance estimates from differencing against the J nearest
    /// same-side neighbors: `J/(J+1) · (v_i − v̄_J)²`. Distance ties break on
    /// observation index.
    fn nearest_neighbor_sigma2(&self, j: usize) -> Vec<f64> {
        let mut order: Vec<usize> = (0..self.terms.len()).collect();
        order.sort_by(|&a, &b| {
            self.terms[a]
                .x
                .partial_cmp(&self.terms[b].x)
                .unwrap()
                .then(self.terms[a].sample_index.cmp(&self.terms[b].sample_index))
        });

        let mut sigma2 = vec![0.0; self.terms.len()];
        for side in [Side::Left, Side::Right] {
            let members: Vec<usize> = order
                .iter()
                .copied()
                .filter(|&i| self.terms[i].side == side)
                .collect();
            for (pos, &i) in members.iter().enumerate() {
                let xi = self.terms[i].x;
                let mut lo = pos;
                let mut hi = pos + 1;
                let mut acc = 0.0;
                let mut taken = 0usize;
                while taken < j && (lo > 0 || hi < members.len()) {
                    let dl = if lo > 0 {
                        Some((xi - self.terms[members[lo - 1]].x).abs())
                    } else {
                        None
                    };
                    let dr = if hi < members.len() {
                        Some((self.terms[members[hi]].x - xi).abs())
                    } else {
                        None
                    };
                    let take_left = match (dl, dr) {
                        (Some(l), Some(r)) => {
                            if l < r {
                                true
                            } else if r < l {
                                false
                            } else {
                                self.terms[members[lo - 1]].sample_index
                                    < self.terms[members[hi]].sample_index
                            }
                        }
                        (Some(_), None) => true,
                        (None, Some(_)) => false,
                        (None, None) => break,
                    };
                    if take_left {
                        lo -= 1;
                        acc += self.terms[members[lo]].nn_value;
                    } else {
                        acc += self.terms[members[hi]].nn_value;
                        hi += 1;
                    }
                    taken += 1;
                }
                if taken > 0 {
                    let diff = self.terms[i].nn_value - acc / taken as f64;
                    sigma2[i] = (taken as f64 / (taken as f64 + 1.0)) * diff * diff;
                }
            }
        }
        sigma2
    }
}

/// The four one-sided fits behind one outcome's conventional and
/// bias-corrected jump estimates.
#[derive(Debug, Clone)]
pub struct JumpComponents {
    pub left_h: LocalFit,
    pub right_h: LocalFit,
    pub left_b: LocalFit,
    pub right_b: LocalFit,
    pub tau_conventional: f64,
    pub bias_estimate: f64,
    pub tau_bias_corrected: f64,
    s_left: f64,
    s_right: f64,
}

impl JumpComponents {
    pub fn estimate(
        sample: &Sample,
        p: usize,
        kernel: Kernel,
        bw: BandwidthPair,
        use_weights: bool,
    ) -> Result<JumpComponents> {
        let q = p + 1;
        let left_h = fit_local_poly(sample, Side::Left, p, bw.h, kernel, use_weights)?;
        let right_h = fit_local_poly(sample, Side::Right, p, bw.h, kernel, use_weights)?;
        let left_b = fit_local_poly(sample, Side::Left, q, bw.b, kernel, use_weights)?;
        let right_b = fit_local_poly(sample, Side::Right, q, bw.b, kernel, use_weights)?;

        let tau_conventional = jump_estimate(&left_h, &right_h);
        let s_left = left_h.intercept_moment(p + 1);
        let s_right = right_h.intercept_moment(p + 1);
        let bias_estimate =
            s_right * right_b.coefficients[p + 1] - s_left * left_b.coefficients[p + 1];
        let tau_bias_corrected = tau_conventional - bias_estimate;

        Ok(JumpComponents {
            left_h,
            right_h,
            left_b,
            right_b,
            tau_conventional,
            bias_estimate,
            tau_bias_corrected,
            s_left,
            s_right,
        })
    }

    /// Scores of the conventional estimator: intercept weights at `h` with
    /// residuals and leverages from the order-`p` fits.
    pub(crate) fn conventional_combination(&self, sample: &Sample) -> Combination {
        let mut terms = Vec::new();
        for (fit, sign) in [(&self.left_h, -1.0), (&self.right_h, 1.0)] {
            let lambda = fit.extraction_weights(0);
            for (pos, &idx) in fit.sample_indices().iter().enumerate() {
                let obs = &sample.observations()[idx];
                terms.push(Term {
                    sample_index: idx,
                    a: sign * lambda[pos],
                    resid: fit.residuals[pos],
                    hat: fit.hat_diagonals[pos],
                    x: obs.x,
                    side: fit.side,
                    nn_value: obs.y,
                    cluster: obs.cluster,
                });
            }
        }
        Combination {
            terms,
            params: self.left_h.order + 1,
        }
    }

    /// Scores of the bias-corrected estimator: combined weights over the union
    /// of the `h` and `b` windows, residuals from the order-`q` fits.
    pub(crate) fn robust_combination(&self, sample: &Sample) -> Combination {
        use std::collections::HashMap;
        let mut terms = Vec::new();
        for (fit_h, fit_b, s, sign) in [
            (&self.left_h, &self.left_b, self.s_left, -1.0),
            (&self.right_h, &self.right_b, self.s_right, 1.0),
        ] {
            let q_coef = fit_b.order; // extracts coefficient p+1 = q
            let nu = fit_b.extraction_weights(q_coef);
            let lambda = fit_h.extraction_weights(0);

            let mut weight: HashMap<usize, f64> = HashMap::new();
            for (pos, &idx) in fit_b.sample_indices().iter().enumerate() {
                *weight.entry(idx).or_insert(0.0) -= s * nu[pos];
            }
            for (pos, &idx) in fit_h.sample_indices().iter().enumerate() {
                *weight.entry(idx).or_insert(0.0) += lambda[pos];
            }

            let in_b: HashMap<usize, usize> = fit_b
                .sample_indices()
                .iter()
                .enumerate()
                .map(|(pos, &idx)| (idx, pos))
                .collect();

            let mut indices: Vec<usize> = weight.keys().copied().collect();
            indices.sort_unstable();
            for idx in indices {
                let obs = &sample.observations()[idx];
                let (resid, hat) = match in_b.get(&idx) {
                    Some(&pos) => (fit_b.residuals[pos], fit_b.hat_diagonals[pos]),
                    None => (obs.y - fit_b.predict(obs.x), 0.0),
                };
                terms.push(Term {
                    sample_index: idx,
                    a: sign * weight[&idx],
                    resid,
                    hat,
                    x: obs.x,
                    side: fit_b.side,
                    nn_value: obs.y,
                    cluster: obs.cluster,
                });
            }
        }
        Combination {
            terms,
            params: self.left_b.order + 1,
        }
    }
}

/// Variance of the intercept difference of two one-sided fits under the
/// requested flavor (the "conventional" sandwich).
pub fn sandwich_variance(
    sample: &Sample,
    left: &LocalFit,
    right: &LocalFit,
    spec: &VarianceSpec,
) -> Result<f64> {
    spec.validate()?;
    let mut terms = Vec::new();
    for (fit, sign) in [(left, -1.0), (right, 1.0)] {
        let lambda = fit.extraction_weights(0);
        for (pos, &idx) in fit.sample_indices().iter().enumerate() {
            let obs = &sample.observations()[idx];
            terms.push(Term {
                sample_index: idx,
                a: sign * lambda[pos],
                resid: fit.residuals[pos],
                hat: fit.hat_diagonals[pos],
                x: obs.x,
                side: fit.side,
                nn_value: obs.y,
                cluster: obs.cluster,
            });
        }
    }
    Combination {
        terms,
        params: left.order + 1,
    }
    .variance(spec.flavor)
}

/// Variance of a single fit's intercept.
pub fn intercept_variance(sample: &Sample, fit: &LocalFit, spec: &VarianceSpec) -> Result<f64> {
    spec.validate()?;
    let lambda = fit.extraction_weights(0);
    let terms = fit
        .sample_indices()
        .iter()
        .enumerate()
        .map(|(pos, &idx)| {
            let obs = &sample.observations()[idx];
            Term {
                sample_index: idx,
                a: lambda[pos],
                resid: fit.residuals[pos],
                hat: fit.hat_diagonals[pos],
                x: obs.x,
                side: fit.side,
                nn_value: obs.y,
                cluster: obs.cluster,
            }
        })
        .collect();
    Combination {
        terms,
        params: fit.order + 1,
    }
    .variance(spec.flavor)
}

/// Cluster every observation by the exact value of its (raw) running
/// variable: all individuals from one source district share one literacy
/// value, hence one cluster.
pub fn cluster_by_running_variable(sample: &Sample) -> Sample {
    let cutoff = sample.cutoff();
    let observations = sample
        .observations()
        .iter()
        .map(|o| crate::sample::Observation {
            cluster: ClusterId::from_running_variable(o.x + cutoff),
            ..*o
        })
        .collect();
    Sample::from_centered(observations, cutoff).expect("revalidating an already-valid sample")
}

/// Sharp robust bias-corrected estimation at fixed bandwidths.
///
/// The conventional estimate comes from order-`p` fits at `h`; the leading
/// bias is estimated from order-`p+1` fits at `b` and subtracted; the robust
/// standard error accounts for the bias estimate's own sampling noise. The
/// interval and p-value use the normal reference distribution.
pub fn robust_bias_corrected(
    sample: &Sample,
    p: usize,
    kernel: Kernel,
    bw: BandwidthPair,
    vspec: &VarianceSpec,
    use_weights: bool,
) -> Result<RddResult> {
    vspec.validate()?;
    let comp = JumpComponents::estimate(sample, p, kernel, bw, use_weights)?;
    let var_conv = comp.conventional_combination(sample).variance(vspec.flavor)?;
    let var_robust = comp.robust_combination(sample).variance(vspec.flavor)?;
    Ok(assemble_result(&comp, var_conv, var_robust, bw, vspec, None))
}

pub(crate) fn assemble_result(
    comp: &JumpComponents,
    var_conv: f64,
    var_robust: f64,
    bw: BandwidthPair,
    vspec: &VarianceSpec,
    first_stage: Option<FirstStage>,
) -> RddResult {
    let se_conventional = var_conv.max(0.0).sqrt();
    let se_robust = var_robust.max(0.0).sqrt();
    let z = normal_quantile(0.5 + vspec.confidence / 2.0);
    let tau_bc = comp.tau_bias_corrected;
    let ci_robust = (tau_bc - z * se_robust, tau_bc + z * se_robust);
    let p_value_robust = if se_robust > 0.0 {
        two_sided_p(tau_bc / se_robust)
    } else if tau_bc == 0.0 {
        1.0
    } else {
        0.0
    };
    RddResult {
        tau_conventional: comp.tau_conventional,
        tau_bias_corrected: tau_bc,
        bias_estimate: comp.bias_estimate,
        se_conventional,
        se_robust,
        ci_robust,
        p_value_robust,
        bandwidths: bw,
        n_left: comp.left_h.effective_n,
        n_right: comp.right_h.effective_n,
        first_stage,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{ClusterId, Observation};

    fn obs(x: f64, y: f64, cluster: u64) -> Observation {
        Observation {
            x,
            y,
            t: 0.0,
            cluster: ClusterId(cluster),
            w: 1.0,
        }
    }

    #[test]
    fn hc0_and_hc3_closed_form_for_two_point_mean() {
        // Intercept-only fit on y = {0, 2}: hat = 1/2 each, HC0 = 0.5, HC3 = 2.
        let s = Sample::from_centered(vec![obs(0.1, 0.0, 0), obs(0.2, 2.0, 1)], 0.0).unwrap();
        let fit = fit_local_poly(&s, Side::Right, 0, 1.0, Kernel::Uniform, true).unwrap();
        assert!((fit.hat_diagonals[0] - 0.5).abs() < 1e-12);

        let hc0 = intercept_variance(
            &s,
            &fit,
            &VarianceSpec {
                flavor: VarianceFlavor::ConventionalHc0,
                confidence: 0.95,
            },
        )
        .unwrap();
        assert!((hc0 - 0.5).abs() < 1e-12, "HC0 {hc0}");

        let hc3 = intercept_variance(
            &s,
            &fit,
            &VarianceSpec {
                flavor: VarianceFlavor::Hc3Jackknife,
                confidence: 0.95,
            },
        )
        .unwrap();
        assert!((hc3 - 2.0).abs() < 1e-12, "HC3 {hc3}");
    }

    #[test]
    fn singleton_clusters_reproduce_hc0() {
        let rows: Vec<Observation> = (0..40)
            .map(|i| {
                let x = (i as f64 - 19.5) / 20.0;
                obs(x, x * 1.3 + ((i * 37) % 11) as f64 * 0.1, i as u64)
            })
            .collect();
        let s = Sample::from_centered(rows, 0.0).unwrap();
        let left = fit_local_poly(&s, Side::Left, 1, 1.0, Kernel::Triangular, true).unwrap();
        let right = fit_local_poly(&s, Side::Right, 1, 1.0, Kernel::Triangular, true).unwrap();
        let hc0 = sandwich_variance(
            &s,
            &left,
            &right,
            &VarianceSpec {
                flavor: VarianceFlavor::ConventionalHc0,
                confidence: 0.95,
            },
        )
        .unwrap();
        let cl = sandwich_variance(
            &s,
            &left,
            &right,
            &VarianceSpec {
                flavor: VarianceFlavor::Cluster,
                confidence: 0.95,
            },
        )
        .unwrap();
        assert!((hc0 - cl).abs() < 1e-12 * hc0.max(1.0));
    }

    #[test]
    fn hc_ordering_holds_pointwise() {
        let rows: Vec<Observation> = (0..30)
            .map(|i| {
                let x = (i as f64 - 14.5) / 15.0;
                obs(x, (x * 3.0).sin() + 0.2 * ((i % 7) as f64), i as u64 % 5)
            })
            .collect();
        let s = Sample::from_centered(rows, 0.0).unwrap();
        let left = fit_local_poly(&s, Side::Left, 1, 1.0, Kernel::Triangular, true).unwrap();
        let right = fit_local_poly(&s, Side::Right, 1, 1.0, Kernel::Triangular, true).unwrap();
        let var = |flavor| {
            sandwich_variance(
                &s,
                &left,
                &right,
                &VarianceSpec {
                    flavor,
                    confidence: 0.95,
                },
            )
            .unwrap()
        };
        let hc0 = var(VarianceFlavor::ConventionalHc0);
        let hc2 = var(VarianceFlavor::Hc2);
        let hc3 = var(VarianceFlavor::Hc3Jackknife);
        assert!(hc3 >= hc2 && hc2 >= hc0);
    }

    #[test]
    fn constant_shift_leaves_variances_unchanged() {
        let rows: Vec<Observation> = (0..36)
            .map(|i| {
                let x = (i as f64 - 17.5) / 18.0;
                obs(x, x + ((i * 13) % 5) as f64 * 0.3, i as u64)
            })
            .collect();
        let s = Sample::from_centered(rows.clone(), 0.0).unwrap();
        let shifted = Sample::from_centered(
            rows.into_iter().map(|o| Observation { y: o.y + 100.0, ..o }).collect(),
            0.0,
        )
        .unwrap();
        for flavor in [
            VarianceFlavor::ConventionalHc0,
            VarianceFlavor::Hc3Jackknife,
            VarianceFlavor::NearestNeighbor(3),
            VarianceFlavor::Cluster,
        ] {
            let spec = VarianceSpec {
                flavor,
                confidence: 0.95,
            };
            let v1 = {
                let l = fit_local_poly(&s, Side::Left, 1, 1.0, Kernel::Triangular, true).unwrap();
                let r = fit_local_poly(&s, Side::Right, 1, 1.0, Kernel::Triangular, true).unwrap();
                sandwich_variance(&s, &l, &r, &spec).unwrap()
            };
            let v2 = {
                let l =
                    fit_local_poly(&shifted, Side::Left, 1, 1.0, Kernel::Triangular, true).unwrap();
                let r =
                    fit_local_poly(&shifted, Side::Right, 1, 1.0, Kernel::Triangular, true)
                        .unwrap();
                sandwich_variance(&shifted, &l, &r, &spec).unwrap()
            };
            assert!(
                (v1 - v2).abs() < 1e-9 * v1.max(1e-12),
                "{flavor:?}: {v1} vs {v2}"
            );
        }
    }

    #[test]
    fn nn_degenerate_falls_back_to_hc3() {
        // Constant outcome: every NN difference is zero.
        let rows: Vec<Observation> = (0..20)
            .map(|i| obs((i as f64 - 9.5) / 10.0, 1.0, i as u64))
            .collect();
        let s = Sample::from_centered(rows, 0.0).unwrap();
        let l = fit_local_poly(&s, Side::Left, 1, 1.0, Kernel::Uniform, true).unwrap();
        let r = fit_local_poly(&s, Side::Right, 1, 1.0, Kernel::Uniform, true).unwrap();
        let nn = sandwich_variance(
            &s,
            &l,
            &r,
            &VarianceSpec {
                flavor: VarianceFlavor::NearestNeighbor(3),
                confidence: 0.95,
            },
        )
        .unwrap();
        let hc3 = sandwich_variance(
            &s,
            &l,
            &r,
            &VarianceSpec {
                flavor: VarianceFlavor::Hc3Jackknife,
                confidence: 0.95,
            },
        )
        .unwrap();
        assert_eq!(nn, hc3);
    }

    #[test]
    fn no_curvature_means_no_bias_correction() {
        let rows: Vec<Observation> = (1..=40)
            .map(|i| {
                let x = i as f64 / 40.0;
                let side = if i % 2 == 0 { x } else { -x };
                let jump = if side >= 0.0 { 0.7 } else { 0.0 };
                obs(side, 1.0 + 2.0 * side + jump, i as u64)
            })
            .collect();
        let s = Sample::from_centered(rows, 0.0).unwrap();
        let res = robust_bias_corrected(
            &s,
            1,
            Kernel::Triangular,
            BandwidthPair::new(0.8, 1.0),
            &VarianceSpec::default(),
            true,
        )
        .unwrap();
        assert!((res.tau_conventional - 0.7).abs() < 1e-9);
        assert!(res.bias_estimate.abs() < 1e-9);
        assert!((res.tau_bias_corrected - 0.7).abs() < 1e-9);
    }

    #[test]
    fn quadratic_bias_is_removed_exactly_in_noiseless_case() {
        // y = x² + 0.5·1{x>=0}: curvature estimated exactly by the order-2
        // fits, so the correction removes the entire finite-sample bias.
        let mut rows = Vec::new();
        for i in 1..=25 {
            let x = i as f64 / 25.0;
            rows.push(obs(x, x * x + 0.5, i as u64));
            let xl = -(i as f64 + 0.3) / 26.0;
            rows.push(obs(xl, xl * xl, 100 + i as u64));
        }
        let s = Sample::from_centered(rows, 0.0).unwrap();
        let res = robust_bias_corrected(
            &s,
            1,
            Kernel::Triangular,
            BandwidthPair::new(0.6, 0.9),
            &VarianceSpec::default(),
            true,
        )
        .unwrap();
        assert!(
            (res.tau_bias_corrected - 0.5).abs() < 1e-10,
            "bias-corrected {}",
            res.tau_bias_corrected
        );
        assert!(
            (res.tau_bias_corrected - 0.5).abs() < (res.tau_conventional - 0.5).abs(),
            "correction should shrink the error"
        );
    }

    #[test]
    fn ci_centered_at_bias_corrected_estimate() {
        let rows: Vec<Observation> = (0..60)
            .map(|i| {
                let x = (i as f64 - 29.5) / 30.0;
                let y = 0.3 * x + 0.8 * x * x * f64::from(x >= 0.0) + ((i * 29) % 13) as f64 * 0.05;
                obs(x, y, i as u64)
            })
            .collect();
        let s = Sample::from_centered(rows, 0.0).unwrap();
        let res = robust_bias_corrected(
            &s,
            1,
            Kernel::Triangular,
            BandwidthPair::new(0.7, 1.0),
            &VarianceSpec::default(),
            true,
        )
        .unwrap();
        let mid = 0.5 * (res.ci_robust.0 + res.ci_robust.1);
        assert!((mid - res.tau_bias_corrected).abs() < 1e-12);
        assert!(res.se_robust >= 0.0);
        assert!(
            (res.tau_bias_corrected - (res.tau_conventional - res.bias_estimate)).abs() < 1e-12
        );
    }

    #[test]
    fn wider_estimation_than_bias_bandwidth_is_supported() {
        // h > b: observations inside the h window but outside the b window
        // take polynomial-extrapolated residuals and zero leverage.
        let rows: Vec<Observation> = (0..80)
            .map(|i| {
                let x = (i as f64 - 39.5) / 40.0;
                obs(x, 0.4 * x + 0.1 * ((i * 31) % 7) as f64, i as u64)
            })
            .collect();
        let s = Sample::from_centered(rows, 0.0).unwrap();
        let res = robust_bias_corrected(
            &s,
            1,
            Kernel::Triangular,
            BandwidthPair::new(0.9, 0.3),
            &VarianceSpec::default(),
            true,
        )
        .unwrap();
        assert!(res.se_robust.is_finite() && res.se_robust > 0.0);
        assert!(res.tau_bias_corrected.is_finite());
    }

    #[test]
    fn nearest_neighbor_variance_flows_through_estimation() {
        let rows: Vec<Observation> = (0..60)
            .map(|i| {
                let x = (i as f64 - 29.5) / 30.0;
                obs(x, x + ((i * 17) % 5) as f64 * 0.2, i as u64)
            })
            .collect();
        let s = Sample::from_centered(rows, 0.0).unwrap();
        let res = robust_bias_corrected(
            &s,
            1,
            Kernel::Triangular,
            BandwidthPair::new(0.7, 1.0),
            &VarianceSpec {
                flavor: VarianceFlavor::NearestNeighbor(3),
                confidence: 0.95,
            },
            true,
        )
        .unwrap();
        assert!(res.se_conventional > 0.0 && res.se_robust > 0.0);
    }

    #[test]
    fn running_variable_clustering_groups_districts() {
        let s = Sample::from_raw(
            vec![
                (0.35, 1.0, 0.0, ClusterId(0), 1.0),
                (0.35, 2.0, 0.0, ClusterId(1), 1.0),
                (0.41, 3.0, 0.0, ClusterId(2), 1.0),
            ],
            0.3929,
        )
        .unwrap();
        let clustered = cluster_by_running_variable(&s);
        let keys: std::collections::HashSet<_> = clustered
            .observations()
            .iter()
            .map(|o| o.cluster)
            .collect();
        assert_eq!(keys.len(), 2);

        let distinct = Sample::from_raw(
            vec![
                (0.30, 1.0, 0.0, ClusterId(0), 1.0),
                (0.35, 2.0, 0.0, ClusterId(0), 1.0),
                (0.41, 3.0, 0.0, ClusterId(0), 1.0),
            ],
            0.3929,
        )
        .unwrap();
        let clustered = cluster_by_running_variable(&distinct);
        let keys: std::collections::HashSet<_> = clustered
            .observations()
            .iter()
            .map(|o| o.cluster)
            .collect();
        assert_eq!(keys.len(), 3);
    }
}
