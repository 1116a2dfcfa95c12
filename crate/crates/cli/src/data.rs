//! Generic estimation-table loading: named columns out of a CSV, missing
//! outcomes dropped with a count, string cluster keys mapped to stable ids.

use std::collections::BTreeMap;
use std::path::Path;

use rdsuite_core::error::{Error, Result};
use rdsuite_core::{cluster_by_running_variable, ClusterId, Sample};

use crate::config::DataArgs;

pub struct LoadedSample {
    pub sample: Sample,
    pub n_input: usize,
    pub dropped_missing_outcome: usize,
    pub dropped_missing_running: usize,
}

fn find(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Schema(format!("missing required column '{name}'")))
}

fn is_missing(field: &str) -> bool {
    let v = field.trim();
    v.is_empty() || v.eq_ignore_ascii_case("na") || v.eq_ignore_ascii_case("nan")
}

pub fn load_sample(path: &Path, spec: &DataArgs, cutoff: f64) -> Result<LoadedSample> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let running = find(&headers, &spec.running)?;
    let outcome = find(&headers, &spec.outcome)?;
    let exposure = spec
        .exposure
        .as_deref()
        .map(|c| find(&headers, c))
        .transpose()?;
    let cluster = spec
        .cluster
        .as_deref()
        .map(|c| find(&headers, c))
        .transpose()?;
    let weight = spec
        .weight
        .as_deref()
        .map(|c| find(&headers, c))
        .transpose()?;

    struct Row {
        x: f64,
        y: f64,
        t: f64,
        cluster: Option<String>,
        w: f64,
    }

    let mut rows: Vec<Row> = Vec::new();
    let mut dropped_missing_outcome = 0usize;
    let mut dropped_missing_running = 0usize;
    let mut n_input = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        n_input += 1;
        if is_missing(&record[running]) {
            dropped_missing_running += 1;
            continue;
        }
        if is_missing(&record[outcome]) {
            dropped_missing_outcome += 1;
            continue;
        }
        let parse = |idx: usize, what: &str| -> Result<f64> {
            record[idx].trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("cannot parse {what} from '{}'", &record[idx]),
            })
        };
        rows.push(Row {
            x: parse(running, "running variable")?,
            y: parse(outcome, "outcome")?,
            t: exposure.map(|c| parse(c, "exposure")).transpose()?.unwrap_or(0.0),
            cluster: cluster.map(|c| record[c].trim().to_string()),
            w: weight.map(|c| parse(c, "weight")).transpose()?.unwrap_or(1.0),
        });
    }

    // Stable cluster ids: sorted unique key order.
    let mut key_ids: BTreeMap<String, u64> = BTreeMap::new();
    for r in &rows {
        if let Some(k) = &r.cluster {
            let next = key_ids.len() as u64;
            key_ids.entry(k.clone()).or_insert(next);
        }
    }
    let key_ids: BTreeMap<String, u64> = key_ids
        .keys()
        .enumerate()
        .map(|(i, k)| (k.clone(), i as u64))
        .collect();

    let points = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let cid = match &r.cluster {
                Some(k) => ClusterId(key_ids[k]),
                // Singleton clusters when no cluster column is bound.
                None => ClusterId(u64::MAX - i as u64),
            };
            (r.x, r.y, r.t, cid, r.w)
        })
        .collect();
    let mut sample = Sample::from_raw(points, cutoff)?;
    if spec.cluster_by_running {
        sample = cluster_by_running_variable(&sample);
    }
    Ok(LoadedSample {
        sample,
        n_input,
        dropped_missing_outcome,
        dropped_missing_running,
    })
}

/// Load a district-level column pair (running variable, numeric column).
pub fn load_columns(
    path: &Path,
    running: &str,
    column: &str,
) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let xi = find(&headers, running)?;
    let yi = find(&headers, column)?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        if is_missing(&record[xi]) || is_missing(&record[yi]) {
            continue;
        }
        let parse = |idx: usize, what: &str| -> Result<f64> {
            record[idx].trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("cannot parse {what} from '{}'", &record[idx]),
            })
        };
        out.push((parse(xi, running)?, parse(yi, column)?));
    }
    Ok(out)
}
