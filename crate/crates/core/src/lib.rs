//! Regression-discontinuity estimation and replication tooling.
//!
//! The crate covers the full pipeline for discontinuity-based program
//! evaluation on district-assigned treatments:
//!
//! * one-sided weighted local-polynomial fitting ([`local`]);
//! * data-driven MSE-optimal bandwidth selection with a manual ratio rule
//!   ([`bandwidth`]);
//! * heteroskedasticity- and cluster-robust sandwich variances and robust
//!   bias-corrected confidence intervals ([`inference`]);
//! * sharp and fuzzy estimation, donut exclusion, discontinuity-plot data,
//!   and threshold/bandwidth sensitivity sweeps ([`rdd`]);
//! * a seeded, reproducible nonparametric bootstrap with iid and clustered
//!   resampling ([`bootstrap`]);
//! * skill-premium decompositions and elasticities of substitution
//!   ([`ge`]);
//! * CSV ingestion, district-lineage linkage, and survey-weight trimming
//!   ([`ingest`]).
//!
//! Samples are immutable after construction and every estimator is a pure
//! function of its inputs, so sweeps and bootstrap replications parallelize
//! freely.

pub mod bandwidth;
pub mod bootstrap;
pub mod error;
pub mod ge;
pub mod inference;
pub mod ingest;
pub mod kernel;
pub mod linalg;
pub mod local;
pub mod rdd;
pub mod sample;
pub mod stats;

pub use bandwidth::{manual_pair, select_mse_bandwidth, BandwidthMode, BandwidthPair, BandwidthSpec};
pub use bootstrap::{
    resample, resample_person_sample, run_bootstrap, run_bootstrap_with, BootstrapPlan,
    BootstrapSummary, ReplicationRng, Resampling,
};
pub use error::{Error, Result};
pub use ge::{
    accounting_identity_check, cell_aggregates, direct_premia, elasticities,
    estimate_delta_inputs, ge_estimates, indirect_premia, per_year, regime_level_split,
    CellAggregates, CellConfig, CellDelta, DeltaInputs, GeConfig, GeEstimates, GeMethod,
};
pub use inference::{
    cluster_by_running_variable, intercept_variance, robust_bias_corrected, sandwich_variance,
    FirstStage, RddResult, VarianceFlavor, VarianceSpec,
};
pub use ingest::{
    assign_itt, build_person_sample, link_districts, national_rate, trim_weights, DistrictRecord,
    ExclusionReport, LineageEdge, LinkedDistrict, PersonRow, PersonSample,
};
pub use kernel::Kernel;
pub use local::{fit_local_poly, jump_estimate, LocalFit};
pub use rdd::{
    binned_plot_data, donut_filter, estimate, estimate_fuzzy, estimate_sharp, sweep_bandwidth,
    sweep_threshold, treatment_fraction_histogram, BinningRule, EstimationRequest, HistogramBin,
    PlotBin, PlotData, SweepPoint,
};
pub use sample::{ClusterId, Observation, Sample, Side};
