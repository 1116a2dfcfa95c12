//! Resolved run configurations. Every command writes its resolved config and
//! seed beside its outputs; re-running from that file reproduces the outputs.

use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

/// Column bindings for a generic estimation table.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DataArgs {
    /// Input CSV file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Running-variable column.
    #[arg(long, default_value = "x")]
    pub running: String,
    /// Outcome column.
    #[arg(long, default_value = "y")]
    pub outcome: String,
    /// Exposure column; estimates a fuzzy design when set.
    #[arg(long)]
    pub exposure: Option<String>,
    /// Cluster column.
    #[arg(long)]
    pub cluster: Option<String>,
    /// Sampling-weight column.
    #[arg(long)]
    pub weight: Option<String>,
    /// Cluster observations by the exact running-variable value.
    #[arg(long, default_value_t = false)]
    pub cluster_by_running: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EstimationArgs {
    /// Identifying threshold of the running variable.
    #[arg(long, default_value_t = rdsuite_core::ingest::DEFAULT_CUTOFF)]
    pub cutoff: f64,
    /// Local polynomial order.
    #[arg(long, default_value_t = 1)]
    pub order: usize,
    /// Weighting kernel: triangular, uniform, or epanechnikov.
    #[arg(long, default_value = "triangular")]
    pub kernel: String,
    /// Manual estimation bandwidth; the bias bandwidth keeps the
    /// automatically selected ratio unless --bandwidth-bias is also given.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Manual bias-correction bandwidth.
    #[arg(long)]
    pub bandwidth_bias: Option<f64>,
    /// Variance flavor: hc0, hc1, hc2, hc3, nn, cluster.
    #[arg(long, default_value = "hc3")]
    pub variance: String,
    /// Confidence level for intervals.
    #[arg(long, default_value_t = 0.95)]
    pub confidence: f64,
    /// Exclusion radius around the cutoff (running-variable units).
    #[arg(long, default_value_t = 0.0)]
    pub donut: f64,
    /// Use (trimmed) sampling weights.
    #[arg(long, default_value_t = false)]
    pub weighted: bool,
    /// Report below-cutoff minus above-cutoff.
    #[arg(long, default_value_t = false)]
    pub flip_sign: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct IngestArgs {
    /// Source-district CSV (id, name, female_literacy, population, ...).
    #[arg(long)]
    pub districts: Option<PathBuf>,
    /// Lineage edges CSV (child_id, parent_id, population_contribution).
    #[arg(long)]
    pub lineage: Option<PathBuf>,
    /// Person-level survey CSV.
    #[arg(long)]
    pub persons: Option<PathBuf>,
    /// Optional follow-up-district treatment list (district_id, treatment);
    /// without it, children inherit single- or dominant-parent treatment.
    #[arg(long)]
    pub treatments: Option<PathBuf>,
    #[arg(long, default_value_t = rdsuite_core::ingest::DEFAULT_CUTOFF)]
    pub cutoff: f64,
    /// Multi-parent retention threshold on the weighted SD of parent literacy.
    #[arg(long, default_value_t = 0.01)]
    pub sd_threshold: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepGridArgs {
    #[arg(long)]
    pub grid_start: Option<f64>,
    #[arg(long)]
    pub grid_end: Option<f64>,
    #[arg(long)]
    pub grid_step: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BalanceArgs {
    /// District-level CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Running-variable column.
    #[arg(long, default_value = "literacy")]
    pub running: String,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Comma-separated candidate thresholds.
    #[arg(long, value_delimiter = ',', default_values_t = [0.3929, 0.40, 0.41])]
    pub thresholds: Vec<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PlotArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = rdsuite_core::ingest::DEFAULT_CUTOFF)]
    pub cutoff: f64,
    /// Binning rule: imse, variance-mimicking, or manual.
    #[arg(long, default_value = "imse")]
    pub rule: String,
    #[arg(long, default_value_t = 10)]
    pub j_left: usize,
    #[arg(long, default_value_t = 10)]
    pub j_right: usize,
    /// Global overlay polynomial order.
    #[arg(long, default_value_t = 4)]
    pub poly_order: usize,
    /// Also write a self-contained SVG.
    #[arg(long, default_value_t = false)]
    pub svg: bool,
    /// Emit a treatment-fraction histogram instead of a discontinuity plot.
    #[arg(long, default_value_t = false)]
    pub histogram: bool,
    /// Histogram column holding the treatment indicator.
    #[arg(long, default_value = "treatment")]
    pub treatment_column: String,
    /// Histogram bin width.
    #[arg(long, default_value_t = 0.01)]
    pub bin_width: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GeArgs {
    /// Canonical person-level sample CSV (from `ingest`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = rdsuite_core::ingest::DEFAULT_CUTOFF)]
    pub cutoff: f64,
    /// Method: indirect, direct, or both.
    #[arg(long, default_value = "both")]
    pub method: String,
    /// Bootstrap replications (0 disables the bootstrap).
    #[arg(long, default_value_t = 1500)]
    pub reps: usize,
    /// Resampling rule: cluster (by district) or iid.
    #[arg(long, default_value = "cluster")]
    pub resample: String,
    #[arg(long, default_value_t = false)]
    pub weighted: bool,
    /// Feed bias-corrected instead of conventional estimates into the deltas.
    #[arg(long, default_value_t = false)]
    pub bias_corrected: bool,
    /// Assumed change in the log productivity ratio.
    #[arg(long, default_value_t = 0.0)]
    pub theta_change: f64,
    /// Skill threshold in years of schooling.
    #[arg(long, default_value_t = 8.0)]
    pub skill_cut: f64,
    /// Age below which workers count as young.
    #[arg(long, default_value_t = 35)]
    pub young_cut: u32,
    #[arg(long, default_value = "triangular")]
    pub kernel: String,
    #[arg(long, default_value = "hc3")]
    pub variance: String,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimation: EstimationArgs,
    #[arg(long, default_value_t = 1500)]
    pub reps: usize,
    /// Resampling rule: cluster or iid.
    #[arg(long, default_value = "cluster")]
    pub resample: String,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimation: EstimationArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimation: EstimationArgs,
    #[command(flatten)]
    pub grid: SweepGridArgs,
}

/// The serialized form of one run: command tag, seed, and arguments.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Ingest { seed: u64, args: IngestArgs },
    Estimate { seed: u64, args: EstimateArgs },
    SweepThreshold { seed: u64, args: SweepArgs },
    SweepBandwidth { seed: u64, args: SweepArgs },
    Balance { seed: u64, args: BalanceArgs },
    Plot { seed: u64, args: PlotArgs },
    Ge { seed: u64, args: GeArgs },
    Bootstrap { seed: u64, args: BootstrapArgs },
}

impl RunConfig {
    pub fn command_name(&self) -> &'static str {
        match self {
            RunConfig::Ingest { .. } => "ingest",
            RunConfig::Estimate { .. } => "estimate",
            RunConfig::SweepThreshold { .. } => "sweep-threshold",
            RunConfig::SweepBandwidth { .. } => "sweep-bandwidth",
            RunConfig::Balance { .. } => "balance",
            RunConfig::Plot { .. } => "plot",
            RunConfig::Ge { .. } => "ge",
            RunConfig::Bootstrap { .. } => "bootstrap",
        }
    }
}
