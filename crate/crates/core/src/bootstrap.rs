//! Nonparametric bootstrap: iid and cluster resampling, reproducible seeded
//! replication streams, bootstrap standard errors, medians, and one-sided
//! sign p-values.

use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::Sample;
use crate::stats::{quantile, std_dev};

/// How replications redraw the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    /// Draw n observations with replacement.
    Iid,
    /// Draw whole clusters with replacement, keeping their rows verbatim.
    #[default]
    ByCluster,
}

/// Replication plan. A fixed seed makes the replication stream fully
/// reproducible at any worker count: each replication derives its own RNG
/// from `(seed, replication index)`, so scheduling cannot change results.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BootstrapPlan {
    pub replications: usize,
    pub resampling: Resampling,
    pub seed: u64,
}

impl Default for BootstrapPlan {
    fn default() -> Self {
        BootstrapPlan {
            replications: 1500,
            resampling: Resampling::ByCluster,
            seed: 0,
        }
    }
}

/// Aggregate over replications for one statistic output.
///
/// Replications where the statistic errors are counted in `n_failed` and
/// dropped: hollow resamples that break an estimator are informative about
/// tail behavior, and silently retrying them would bias the spread. Non-finite
/// replication values are likewise excluded from the moments and counted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub name: String,
    /// Statistic on the full sample.
    pub point: f64,
    /// Standard deviation across replications.
    pub se: f64,
    /// Replication median.
    pub median: f64,
    /// Share of replications whose sign is opposite the full-sample point;
    /// exact zeros count half.
    pub p_one_sided: f64,
    pub n_failed: usize,
    pub n_nonfinite: usize,
    pub n_used: usize,
}

/// Derive the replication-specific RNG stream.
fn replication_rng(seed: u64, replication: usize) -> Pcg64 {
    // splitmix64 finalizer over (seed, index): well-spread, stable, and
    // independent of how replications are scheduled across workers.
    let mut z = seed ^ (replication as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    Pcg64::seed_from_u64(z)
}

/// Draw one bootstrap resample.
///
/// Cluster resampling draws G clusters with replacement and concatenates
/// their observations intact, in original within-cluster order.
pub fn resample(sample: &Sample, resampling: Resampling, rng: &mut impl RngExt) -> Sample {
    let obs = sample.observations();
    let n = obs.len();
    let drawn = match resampling {
        Resampling::Iid => (0..n).map(|_| obs[rng.random_range(0..n)]).collect(),
        Resampling::ByCluster => {
            // Clusters in first-appearance order.
            let mut order = Vec::new();
            let mut members: std::collections::HashMap<crate::sample::ClusterId, Vec<usize>> =
                std::collections::HashMap::new();
            for (i, o) in obs.iter().enumerate() {
                members
                    .entry(o.cluster)
                    .or_insert_with(|| {
                        order.push(o.cluster);
                        Vec::new()
                    })
                    .push(i);
            }
            let g = order.len();
            let mut out = Vec::with_capacity(n);
            for _ in 0..g {
                let pick = order[rng.random_range(0..g)];
                out.extend(members[&pick].iter().map(|&i| obs[i]));
            }
            out
        }
    };
    Sample::from_centered(drawn, sample.cutoff()).expect("resampled rows were already valid")
}

/// The RNG type handed to replication resamplers.
pub type ReplicationRng = Pcg64;

/// Run the bootstrap for a multi-output statistic over any resampleable data.
///
/// `statistic` is recomputed end-to-end on every resample — including any
/// internal data-driven choices it makes, such as bandwidth selection. Output
/// `names` label the statistic's outputs in order.
pub fn run_bootstrap_with<T, R, F>(
    data: &T,
    plan: &BootstrapPlan,
    names: &[&str],
    resampler: R,
    statistic: F,
) -> Result<Vec<BootstrapSummary>>
where
    T: Sync,
    R: Fn(&T, &mut ReplicationRng) -> T + Sync,
    F: Fn(&T) -> Result<Vec<f64>> + Sync,
{
    if plan.replications == 0 {
        return Err(Error::InvalidInput("bootstrap needs at least 1 replication".into()));
    }
    let point = statistic(data)?;
    if point.len() != names.len() {
        return Err(Error::InvalidInput(format!(
            "statistic produced {} outputs for {} names",
            point.len(),
            names.len()
        )));
    }

    let reps: Vec<Result<Vec<f64>>> = (0..plan.replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = replication_rng(plan.seed, r);
            let draw = resampler(data, &mut rng);
            statistic(&draw)
        })
        .collect();

    let n_failed = reps.iter().filter(|r| r.is_err()).count();
    if n_failed == plan.replications {
        return Err(Error::AllReplicationsFailed(plan.replications));
    }

    let mut summaries = Vec::with_capacity(names.len());
    for (k, name) in names.iter().enumerate() {
        let mut values = Vec::with_capacity(plan.replications - n_failed);
        let mut n_nonfinite = 0usize;
        for rep in reps.iter().flatten() {
            let v = rep[k];
            if v.is_finite() {
                values.push(v);
            } else {
                n_nonfinite += 1;
            }
        }
        if n_nonfinite > 0 {
            log::warn!(
                "bootstrap output '{name}': {n_nonfinite} non-finite replication values excluded"
            );
        }
        let (se, median, p_one_sided) = if values.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = quantile(&sorted, 0.5);
            let se = std_dev(&values);
            // Opposite-sign share relative to the full-sample point; a zero
            // point takes the positive orientation.
            let p = if point[k].is_nan() {
                f64::NAN
            } else {
                let positive = point[k] >= 0.0;
                let mut opposite = 0.0;
                for &v in &values {
                    if v == 0.0 {
                        opposite += 0.5;
                    } else if (v < 0.0) == positive {
                        opposite += 1.0;
                    }
                }
                opposite / values.len() as f64
            };
            (se, median, p)
        };
        summaries.push(BootstrapSummary {
            name: name.to_string(),
            point: point[k],
            se,
            median,
            p_one_sided,
            n_failed,
            n_nonfinite,
            n_used: values.len(),
        });
    }
    Ok(summaries)
}

/// Run the bootstrap on an estimation sample with the plan's resampling rule.
pub fn run_bootstrap<F>(
    sample: &Sample,
    plan: &BootstrapPlan,
    names: &[&str],
    statistic: F,
) -> Result<Vec<BootstrapSummary>>
where
    F: Fn(&Sample) -> Result<Vec<f64>> + Sync,
{
    run_bootstrap_with(
        sample,
        plan,
        names,
        |s, rng| resample(s, plan.resampling, rng),
        statistic,
    )
}

/// Cluster-resample a person-level table by district (or iid over rows),
/// keeping within-district rows verbatim.
pub fn resample_person_sample(
    sample: &crate::ingest::PersonSample,
    resampling: Resampling,
    rng: &mut ReplicationRng,
) -> crate::ingest::PersonSample {
    let rows = &sample.rows;
    let n = rows.len();
    let drawn = match resampling {
        Resampling::Iid => (0..n).map(|_| rows[rng.random_range(0..n)].clone()).collect(),
        Resampling::ByCluster => {
            let mut order = Vec::new();
            let mut members: std::collections::HashMap<u64, Vec<usize>> =
                std::collections::HashMap::new();
            for (i, r) in rows.iter().enumerate() {
                members
                    .entry(r.district)
                    .or_insert_with(|| {
                        order.push(r.district);
                        Vec::new()
                    })
                    .push(i);
            }
            let g = order.len();
            let mut out = Vec::with_capacity(n);
            for _ in 0..g {
                let pick = order[rng.random_range(0..g)];
                out.extend(members[&pick].iter().map(|&i| rows[i].clone()));
            }
            out
        }
    };
    crate::ingest::PersonSample {
        rows: drawn,
        cutoff: sample.cutoff,
    }
}
