//! Command implementations. Each writes its outputs plus the resolved
//! config (with the seed) into the output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rdsuite_core::error::{Error, Result};
use rdsuite_core::{
    binned_plot_data, cell_aggregates, estimate, ge_estimates, resample_person_sample,
    run_bootstrap, run_bootstrap_with, sweep_bandwidth, sweep_threshold,
    treatment_fraction_histogram, BandwidthMode, BandwidthSpec, BinningRule, BootstrapPlan,
    BootstrapSummary, CellConfig, EstimationRequest, GeConfig, GeMethod, Kernel, PersonSample,
    Resampling, Sample, VarianceFlavor, VarianceSpec,
};

use crate::config::*;
use crate::data::{load_columns, load_sample};
use crate::output;

/// Interval grid `start..=end` by `step`, endpoint included within tolerance.
pub fn grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || end < start {
        return Err(Error::InvalidInput(format!(
            "bad grid: start {start}, end {end}, step {step}"
        )));
    }
    let count = ((end - start) / step).round() as usize;
    Ok((0..=count).map(|i| start + i as f64 * step).collect())
}

fn parse_kernel(s: &str) -> Result<Kernel> {
    s.parse::<Kernel>().map_err(Error::InvalidInput)
}

fn parse_variance(s: &str) -> Result<VarianceFlavor> {
    s.parse::<VarianceFlavor>().map_err(Error::InvalidInput)
}

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::InvalidInput(format!("missing required --{what}")))
}

fn build_request(data: &DataArgs, est: &EstimationArgs) -> Result<EstimationRequest> {
    let kernel = parse_kernel(&est.kernel)?;
    let mode = match (est.bandwidth, est.bandwidth_bias) {
        (None, None) => BandwidthMode::MseOptimal,
        (Some(h), None) => BandwidthMode::Manual { h },
        (Some(h), Some(b)) => BandwidthMode::ManualBoth { h, b },
        (None, Some(_)) => {
            return Err(Error::InvalidInput(
                "--bandwidth-bias requires --bandwidth".into(),
            ))
        }
    };
    let flavor = parse_variance(&est.variance)?;
    if flavor == VarianceFlavor::Cluster && data.cluster.is_none() && !data.cluster_by_running {
        return Err(Error::InvalidInput(
            "cluster variance needs --cluster or --cluster-by-running".into(),
        ));
    }
    let req = EstimationRequest {
        outcome: data.outcome.clone(),
        exposure: data.exposure.clone(),
        cutoff: est.cutoff,
        bandwidth: BandwidthSpec {
            mode,
            p: est.order,
            q: est.order + 1,
            kernel,
            cluster_aware: flavor == VarianceFlavor::Cluster,
            weighted: est.weighted,
        },
        variance: VarianceSpec {
            flavor,
            confidence: est.confidence,
        },
        donut_radius: est.donut,
        weighted: est.weighted,
        flip_sign: est.flip_sign,
    };
    req.validate()?;
    Ok(req)
}

fn load_estimation_sample(data: &DataArgs, est: &EstimationArgs) -> Result<Sample> {
    let path = required(&data.input, "input")?;
    let loaded = load_sample(path, data, est.cutoff)?;
    log::info!(
        "loaded {} of {} rows ({} missing outcome, {} missing running variable dropped)",
        loaded.sample.len(),
        loaded.n_input,
        loaded.dropped_missing_outcome,
        loaded.dropped_missing_running
    );
    if est.weighted {
        // Trim extreme weights over the loaded table.
        let weights: Vec<f64> = loaded.sample.observations().iter().map(|o| o.w).collect();
        let trimmed = rdsuite_core::trim_weights(&weights);
        loaded.sample.with_weights(&trimmed)
    } else {
        Ok(loaded.sample)
    }
}

fn write_config(out: &Path, config: &RunConfig) -> Result<()> {
    output::write_json(&out.join("config.json"), config)
}

pub fn cmd_estimate(out: &Path, seed: u64, args: &EstimateArgs) -> Result<()> {
    let req = build_request(&args.data, &args.estimation)?;
    let sample = load_estimation_sample(&args.data, &args.estimation)?;
    let result = estimate(&sample, &req)?;

    output::write_json(&out.join("result.json"), &result)?;
    let row = output::result_row(&args.data.outcome, &result);
    std::fs::write(out.join("result.txt"), format!("{row}\n"))?;
    println!("{row}");
    write_config(
        out,
        &RunConfig::Estimate {
            seed,
            args: args.clone(),
        },
    )
}

pub fn cmd_sweep_threshold(out: &Path, seed: u64, args: &SweepArgs) -> Result<()> {
    let req = build_request(&args.data, &args.estimation)?;
    let sample = load_estimation_sample(&args.data, &args.estimation)?;
    let cutoffs = grid(
        args.grid.grid_start.unwrap_or(0.30),
        args.grid.grid_end.unwrap_or(0.50),
        args.grid.grid_step.unwrap_or(0.005),
    )?;
    let rows = sweep_threshold(&sample, &cutoffs, &req);
    output::write_sweep_csv(&out.join("sweep_threshold.csv"), &rows, None)?;
    output::write_sweep_csv(&out.join("sweep_threshold_plot.csv"), &rows, Some(3.0))?;
    let ok = rows.iter().filter(|r| r.result.is_some()).count();
    println!("threshold sweep: {ok}/{} grid points estimated", rows.len());
    write_config(
        out,
        &RunConfig::SweepThreshold {
            seed,
            args: args.clone(),
        },
    )
}

pub fn cmd_sweep_bandwidth(out: &Path, seed: u64, args: &SweepArgs) -> Result<()> {
    let req = build_request(&args.data, &args.estimation)?;
    let sample = load_estimation_sample(&args.data, &args.estimation)?;
    let hs = grid(
        args.grid.grid_start.unwrap_or(0.02),
        args.grid.grid_end.unwrap_or(0.20),
        args.grid.grid_step.unwrap_or(0.01),
    )?;
    let (rows, reference) = sweep_bandwidth(&sample, &hs, &req)?;
    output::write_sweep_csv(&out.join("sweep_bandwidth.csv"), &rows, None)?;
    output::write_sweep_csv(&out.join("sweep_bandwidth_plot.csv"), &rows, Some(3.0))?;
    println!(
        "bandwidth sweep over {} points; MSE-optimal h = {:.6}, b = {:.6} (ratio {:.4})",
        rows.len(),
        reference.h,
        reference.b,
        reference.rho
    );
    write_config(
        out,
        &RunConfig::SweepBandwidth {
            seed,
            args: args.clone(),
        },
    )
}

pub fn cmd_balance(out: &Path, seed: u64, args: &BalanceArgs) -> Result<()> {
    let path = required(&args.input, "input")?;
    let mut w = csv::Writer::from_path(out.join("balance.csv"))?;
    let mut header = vec!["threshold".to_string()];
    header.extend(args.covariates.iter().cloned());
    w.write_record(&header)?;

    for &threshold in &args.thresholds {
        let mut record = vec![threshold.to_string()];
        for cov in &args.covariates {
            let cell = balance_cell(path, &args.running, cov, threshold);
            record.push(match cell {
                Ok(p) => p.to_string(),
                Err(e) => {
                    log::warn!("balance cell ({threshold}, {cov}) failed: {e}");
                    String::new()
                }
            });
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    println!(
        "balance: {} thresholds × {} covariates written",
        args.thresholds.len(),
        args.covariates.len()
    );
    write_config(
        out,
        &RunConfig::Balance {
            seed,
            args: args.clone(),
        },
    )
}

/// Robust bias-corrected p-value for one (threshold, covariate) cell,
/// HC3 variance, district-level observations.
fn balance_cell(path: &Path, running: &str, covariate: &str, threshold: f64) -> Result<f64> {
    let rows = load_columns(path, running, covariate)?;
    let points = rows
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| (x, y, 0.0, rdsuite_core::ClusterId(i as u64), 1.0))
        .collect();
    let sample = Sample::from_raw(points, threshold)?;
    let req = EstimationRequest {
        outcome: covariate.to_string(),
        cutoff: threshold,
        variance: VarianceSpec {
            flavor: VarianceFlavor::Hc3Jackknife,
            confidence: 0.95,
        },
        ..EstimationRequest::default()
    };
    Ok(estimate(&sample, &req)?.p_value_robust)
}

pub fn cmd_plot(out: &Path, seed: u64, args: &PlotArgs) -> Result<()> {
    if args.histogram {
        let path = required(&args.data.input, "input")?;
        let rows = load_columns(path, &args.data.running, &args.treatment_column)?;
        let districts: Vec<(f64, bool)> = rows.iter().map(|&(x, t)| (x, t != 0.0)).collect();
        let bins = treatment_fraction_histogram(&districts, args.bin_width)?;
        output::write_histogram_csv(&out.join("histogram.csv"), &bins)?;
        println!("histogram: {} intervals written", bins.len());
    } else {
        let rule = match args.rule.as_str() {
            "imse" | "mse" => BinningRule::MseEvenlySpaced,
            "variance-mimicking" | "vm" => BinningRule::VarianceMimicking,
            "manual" => BinningRule::Manual {
                left: args.j_left,
                right: args.j_right,
            },
            other => {
                return Err(Error::InvalidInput(format!("unknown binning rule: {other}")))
            }
        };
        let path = required(&args.data.input, "input")?;
        let loaded = load_sample(path, &args.data, args.cutoff)?;
        let plot = binned_plot_data(&loaded.sample, rule, args.poly_order)?;
        output::write_plot_bins_csv(&out.join("bins.csv"), &plot)?;
        output::write_json(&out.join("fits.json"), &plot)?;
        if args.svg {
            output::write_plot_svg(&out.join("plot.svg"), &plot)?;
        }
        println!(
            "plot: {} bins (J left {}, right {}), polynomial order {}",
            plot.bins.len(),
            plot.j_left,
            plot.j_right,
            plot.poly_order
        );
    }
    write_config(
        out,
        &RunConfig::Plot {
            seed,
            args: args.clone(),
        },
    )
}

pub fn cmd_ingest(out: &Path, seed: u64, args: &IngestArgs) -> Result<()> {
    use rdsuite_core::ingest::{
        self, build_person_sample, link_districts, DistrictAssignment, LinkRule,
    };

    let districts = ingest::read_districts(required(&args.districts, "districts")?)?;
    let edges = ingest::read_lineage(required(&args.lineage, "lineage")?)?;
    let persons = ingest::read_persons(required(&args.persons, "persons")?)?;
    let linked = link_districts(&districts, &edges, args.sd_threshold)?;

    // Treatment per follow-up district: explicit list if given, otherwise
    // inherited from a single or dominant parent.
    let mut treatments: BTreeMap<String, u8> = BTreeMap::new();
    if let Some(path) = &args.treatments {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let id = headers
            .iter()
            .position(|h| h.trim() == "district_id")
            .ok_or_else(|| Error::Schema("treatments file needs 'district_id'".into()))?;
        let trt = headers
            .iter()
            .position(|h| h.trim() == "treatment")
            .ok_or_else(|| Error::Schema("treatments file needs 'treatment'".into()))?;
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let v: f64 = record[trt].trim().parse().map_err(|_| Error::Parse {
                line: i + 2,
                message: format!("cannot parse treatment from '{}'", &record[trt]),
            })?;
            if v != 0.0 && v != 1.0 {
                return Err(Error::Parse {
                    line: i + 2,
                    message: format!("treatment must be 0 or 1, got {v}"),
                });
            }
            treatments.insert(record[id].trim().to_string(), v as u8);
        }
    } else {
        let parent_treatment: BTreeMap<&str, Option<u8>> =
            districts.iter().map(|d| (d.id.as_str(), d.treatment)).collect();
        let mut grouped: BTreeMap<&str, Vec<&rdsuite_core::LineageEdge>> = BTreeMap::new();
        for e in &edges {
            grouped.entry(e.child_id.as_str()).or_default().push(e);
        }
        for l in &linked {
            if matches!(l.rule, LinkRule::SingleParent | LinkRule::DominantParent) {
                let dominant = grouped[l.child_id.as_str()]
                    .iter()
                    .max_by(|a, b| {
                        a.population_contribution
                            .partial_cmp(&b.population_contribution)
                            .unwrap()
                    })
                    .unwrap();
                if let Some(Some(t)) = parent_treatment.get(dominant.parent_id.as_str()) {
                    treatments.insert(l.child_id.clone(), *t);
                }
            }
        }
    }

    let assignment: BTreeMap<String, DistrictAssignment> = linked
        .iter()
        .map(|l| {
            (
                l.child_id.clone(),
                DistrictAssignment {
                    literacy: l.literacy,
                    treatment: treatments.get(&l.child_id).copied(),
                },
            )
        })
        .collect();

    let (sample, report) = build_person_sample(&persons, &assignment, args.cutoff);
    ingest::write_person_sample(&out.join("sample.csv"), &sample)?;
    output::write_json(&out.join("exclusions.json"), &report)?;

    // Linked-district table for balance tests and histograms.
    let mut w = csv::Writer::from_path(out.join("districts_linked.csv"))?;
    w.write_record(["district_id", "literacy", "itt", "treatment", "rule", "weighted_sd"])?;
    for l in &linked {
        w.write_record(&[
            l.child_id.clone(),
            l.literacy.map(|v| v.to_string()).unwrap_or_default(),
            l.literacy
                .map(|v| ingest::assign_itt(v, args.cutoff).to_string())
                .unwrap_or_default(),
            treatments
                .get(&l.child_id)
                .map(|t| t.to_string())
                .unwrap_or_default(),
            format!("{:?}", l.rule),
            l.weighted_sd.to_string(),
        ])?;
    }
    w.flush()?;

    println!(
        "ingest: {} persons retained of {} ({} districts linked, {} excluded by lineage)",
        report.retained_rows,
        report.input_rows,
        linked.iter().filter(|l| l.literacy.is_some()).count(),
        linked.iter().filter(|l| l.literacy.is_none()).count(),
    );
    write_config(
        out,
        &RunConfig::Ingest {
            seed,
            args: args.clone(),
        },
    )
}

const GE_OUTPUTS: [&str; 8] = [
    "beta0",
    "beta1",
    "delta_beta",
    "beta0_per_year",
    "beta1_per_year",
    "delta_beta_per_year",
    "sigma_e",
    "sigma_a",
];

fn ge_statistic(ps: &PersonSample, cfg: &GeConfig, method: GeMethod, weighted: bool) -> Result<Vec<f64>> {
    let effective = if weighted {
        ps.with_trimmed_weights()
    } else {
        ps.clone()
    };
    let agg = cell_aggregates(&effective, &cfg.cells)?;
    let deltas = rdsuite_core::ge::estimate_delta_inputs(&effective, cfg)?;
    let ge = ge_estimates(&deltas, &agg, method)?;
    Ok(vec![
        ge.beta0,
        ge.beta1,
        ge.delta_beta,
        ge.beta0_per_year.unwrap_or(f64::NAN),
        ge.beta1_per_year.unwrap_or(f64::NAN),
        ge.delta_beta_per_year.unwrap_or(f64::NAN),
        ge.sigma_e.unwrap_or(f64::NAN),
        ge.sigma_a.unwrap_or(f64::NAN),
    ])
}

#[derive(serde::Serialize)]
struct GeMethodReport {
    method: GeMethod,
    /// These statistics are ratios of noisy estimates; read them with the
    /// bootstrap medians, and expect heavy tails.
    heavy_tailed: bool,
    estimates: rdsuite_core::GeEstimates,
    deltas: rdsuite_core::DeltaInputs,
    bootstrap: Option<Vec<BootstrapSummary>>,
}

pub fn cmd_ge(out: &Path, seed: u64, args: &GeArgs) -> Result<()> {
    let path = required(&args.input, "input")?;
    let person_sample = rdsuite_core::ingest::read_person_sample(path, args.cutoff)?;
    let kernel = parse_kernel(&args.kernel)?;
    let flavor = parse_variance(&args.variance)?;
    let cfg = GeConfig {
        cells: CellConfig {
            skill_cut: args.skill_cut,
            young_cut: args.young_cut,
        },
        request: EstimationRequest {
            exposure: Some("treatment".into()),
            cutoff: args.cutoff,
            bandwidth: BandwidthSpec {
                kernel,
                weighted: args.weighted,
                cluster_aware: flavor == VarianceFlavor::Cluster,
                ..BandwidthSpec::default()
            },
            variance: VarianceSpec {
                flavor,
                confidence: 0.95,
            },
            weighted: args.weighted,
            ..EstimationRequest::default()
        },
        use_bias_corrected: args.bias_corrected,
        theta_log_ratio_change: args.theta_change,
    };
    let methods: Vec<GeMethod> = match args.method.as_str() {
        "indirect" => vec![GeMethod::Indirect],
        "direct" => vec![GeMethod::Direct],
        "both" => vec![GeMethod::Indirect, GeMethod::Direct],
        other => return Err(Error::InvalidInput(format!("unknown method: {other}"))),
    };
    let resampling = match args.resample.as_str() {
        "cluster" => Resampling::ByCluster,
        "iid" => Resampling::Iid,
        other => return Err(Error::InvalidInput(format!("unknown resampling: {other}"))),
    };

    let mut reports = Vec::new();
    let mut table = String::new();
    for method in methods {
        let effective = if args.weighted {
            person_sample.with_trimmed_weights()
        } else {
            person_sample.clone()
        };
        let agg = cell_aggregates(&effective, &cfg.cells)?;
        let deltas = rdsuite_core::ge::estimate_delta_inputs(&effective, &cfg)?;
        let estimates = ge_estimates(&deltas, &agg, method)?;

        let bootstrap = if args.reps > 0 {
            let plan = BootstrapPlan {
                replications: args.reps,
                resampling,
                seed,
            };
            Some(run_bootstrap_with(
                &person_sample,
                &plan,
                &GE_OUTPUTS,
                |ps, rng| resample_person_sample(ps, plan.resampling, rng),
                |ps| ge_statistic(ps, &cfg, method, args.weighted),
            )?)
        } else {
            None
        };

        let method_name = match method {
            GeMethod::Indirect => "indirect",
            GeMethod::Direct => "direct",
        };
        if let Some(b) = &bootstrap {
            table.push_str(&output::ge_table(method_name, b));
        } else {
            table.push_str(&format!(
                "method: {method_name}\nbeta0 {:.5}  beta1 {:.5}  delta {:.5}  \
                 per-year ({:.5}, {:.5}, {:.5})  sigma_e {:.4}  sigma_a {:.4}\n",
                estimates.beta0,
                estimates.beta1,
                estimates.delta_beta,
                estimates.beta0_per_year.unwrap_or(f64::NAN),
                estimates.beta1_per_year.unwrap_or(f64::NAN),
                estimates.delta_beta_per_year.unwrap_or(f64::NAN),
                estimates.sigma_e.unwrap_or(f64::NAN),
                estimates.sigma_a.unwrap_or(f64::NAN),
            ));
        }
        table.push('\n');
        reports.push(GeMethodReport {
            method,
            heavy_tailed: true,
            estimates,
            deltas,
            bootstrap,
        });
    }

    output::write_json(&out.join("ge_report.json"), &reports)?;
    std::fs::write(out.join("ge_table.txt"), &table)?;
    print!("{table}");
    write_config(
        out,
        &RunConfig::Ge {
            seed,
            args: args.clone(),
        },
    )
}

pub fn cmd_bootstrap(out: &Path, seed: u64, args: &BootstrapArgs) -> Result<()> {
    let req = build_request(&args.data, &args.estimation)?;
    let sample = load_estimation_sample(&args.data, &args.estimation)?;
    let resampling = match args.resample.as_str() {
        "cluster" => Resampling::ByCluster,
        "iid" => Resampling::Iid,
        other => return Err(Error::InvalidInput(format!("unknown resampling: {other}"))),
    };
    let plan = BootstrapPlan {
        replications: args.reps,
        resampling,
        seed,
    };
    let summaries = run_bootstrap(
        &sample,
        &plan,
        &["tau_conventional", "tau_bias_corrected"],
        |s| {
            let r = estimate(s, &req)?;
            Ok(vec![r.tau_conventional, r.tau_bias_corrected])
        },
    )?;
    output::write_json(&out.join("bootstrap.json"), &summaries)?;
    for s in &summaries {
        println!(
            "{}: {:.6} (boot se {:.6}) [p sign {:.4}] median {:.6} ({} used, {} failed)",
            s.name, s.point, s.se, s.p_one_sided, s.median, s.n_used, s.n_failed
        );
    }
    write_config(
        out,
        &RunConfig::Bootstrap {
            seed,
            args: args.clone(),
        },
    )
}
