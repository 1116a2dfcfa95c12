//! File ingestion: district records, lineage linkage across census rounds,
//! intention-to-treat assignment, person-level variable construction, and
//! survey-weight trimming.
//!
//! File formats (UTF-8 CSV with headers, '.' decimal separator):
//!
//! * `districts.csv`: `district_id,name,female_literacy,population,treatment,
//!   area,houses,households,agricultural_share` — literacy as a decimal
//!   fraction in [0,1]; percent-scaled values are rejected. `treatment` may
//!   be empty (unknown).
//! * `lineage.csv`: `child_id,parent_id,population_contribution` — one row per
//!   (child, parent) edge; contributions per child must sum to 1 (±1e-6).
//! * `persons.csv`: `district_id,age,schooling_years,literate_without_schooling,
//!   activity_wages,week_fraction,weight` — `activity_wages` is a
//!   semicolon-separated list of wage earnings across work activities.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{ClusterId, Sample};
use crate::stats::quantile;

/// Default identifying threshold: the 1991 national female literacy rate.
pub const DEFAULT_CUTOFF: f64 = 0.3929;

/// A district with its qualifying variable and predetermined covariates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistrictRecord {
    pub id: String,
    pub name: String,
    /// Female literacy as a fraction in [0,1].
    pub female_literacy: f64,
    pub population: f64,
    /// Program receipt; `None` when unknown.
    pub treatment: Option<u8>,
    pub area: Option<f64>,
    pub houses: Option<f64>,
    pub households: Option<f64>,
    pub agricultural_share: Option<f64>,
}

/// One (child, parent) edge of the district genealogy with the parent's
/// population contribution to the child.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineageEdge {
    pub child_id: String,
    pub parent_id: String,
    pub population_contribution: f64,
}

/// Outcome of linking one follow-up district to its census-round parents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkedDistrict {
    pub child_id: String,
    /// Population-weighted parent literacy; `None` when excluded.
    pub literacy: Option<f64>,
    pub rule: LinkRule,
    pub weighted_sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkRule {
    SingleParent,
    /// One parent contributes at least the de-minimis share of population.
    DominantParent,
    /// Parents' literacy rates nearly agree (weighted SD below threshold).
    MultiParentRetained,
    MultiParentExcluded,
}

/// Contribution share above which a multi-parent district is treated as
/// single-parent. The source rule states the principle without a number;
/// this value is configurable at the call site and recorded in output.
pub const DE_MINIMIS_SHARE: f64 = 0.99;

/// Exact ratio of two counts, e.g. the national literacy rate.
pub fn national_rate(numerator: u64, denominator: u64) -> Result<f64> {
    if denominator == 0 {
        return Err(Error::InvalidInput("zero denominator".into()));
    }
    Ok(numerator as f64 / denominator as f64)
}

/// Intention to treat: 1 iff literacy is strictly below the threshold.
pub fn assign_itt(literacy: f64, threshold: f64) -> u8 {
    u8::from(literacy < threshold)
}

/// Link follow-up districts to their parents.
///
/// Single-parent children inherit the parent's literacy. Multi-parent
/// children take the population-weighted mean, retained only if the weighted
/// standard deviation of parent literacies falls below `sd_threshold`
/// (default 1%), or if one parent's contribution is de minimis-dominant.
/// Excluded districts propagate as missing, never as untreated.
///
/// Output is keyed and ordered by child id, independent of edge order.
pub fn link_districts(
    parents: &[DistrictRecord],
    edges: &[LineageEdge],
    sd_threshold: f64,
) -> Result<Vec<LinkedDistrict>> {
    let by_id: BTreeMap<&str, &DistrictRecord> =
        parents.iter().map(|d| (d.id.as_str(), d)).collect();

    let mut grouped: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
    for e in edges {
        if !by_id.contains_key(e.parent_id.as_str()) {
            return Err(Error::Schema(format!(
                "lineage edge references unknown parent district '{}'",
                e.parent_id
            )));
        }
        grouped
            .entry(e.child_id.as_str())
            .or_default()
            .push((e.parent_id.as_str(), e.population_contribution));
    }

    let mut out = Vec::with_capacity(grouped.len());
    for (child, mut contribs) in grouped {
        contribs.sort_by(|a, b| a.0.cmp(b.0));
        let total: f64 = contribs.iter().map(|c| c.1).sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Schema(format!(
                "population contributions for district '{child}' sum to {total}, expected 1"
            )));
        }
        let mean: f64 = contribs
            .iter()
            .map(|&(p, c)| c * by_id[p].female_literacy)
            .sum();
        let var: f64 = contribs
            .iter()
            .map(|&(p, c)| {
                let d = by_id[p].female_literacy - mean;
                c * d * d
            })
            .sum();
        let weighted_sd = var.max(0.0).sqrt();
        let max_share = contribs.iter().map(|c| c.1).fold(0.0f64, f64::max);

        let (rule, literacy) = if contribs.len() == 1 {
            (LinkRule::SingleParent, Some(mean))
        } else if max_share >= DE_MINIMIS_SHARE {
            (LinkRule::DominantParent, Some(mean))
        } else if weighted_sd < sd_threshold {
            (LinkRule::MultiParentRetained, Some(mean))
        } else {
            (LinkRule::MultiParentExcluded, None)
        };
        out.push(LinkedDistrict {
            child_id: child.to_string(),
            literacy,
            rule,
            weighted_sd,
        });
    }
    Ok(out)
}

/// Trim weights to the median plus five interquartile ranges, quartiles by
/// linear interpolation between order statistics. Order-preserving and
/// monotone; idempotent because the cap never falls below the upper quartile,
/// so re-trimming finds the same quartiles.
pub fn trim_weights(weights: &[f64]) -> Vec<f64> {
    if weights.is_empty() {
        return Vec::new();
    }
    let mut sorted = weights.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = quantile(&sorted, 0.5);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let cap = median + 5.0 * iqr;
    weights.iter().map(|&w| w.min(cap)).collect()
}

// ---------------------------------------------------------------------------
// Person-level data
// ---------------------------------------------------------------------------

/// One survey respondent after variable construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersonRow {
    /// District index assigned at ingestion (stable, sorted by district id).
    pub district: u64,
    /// District female literacy (raw fraction).
    pub literacy: f64,
    pub itt: u8,
    /// Program receipt of the district; missing treatment drops the row.
    pub treatment: u8,
    pub age: u32,
    pub schooling: f64,
    /// Only wage earners carry a log wage.
    pub log_wage: Option<f64>,
    pub weight: f64,
}

/// Person-level analysis table plus the cutoff its ITT was assigned at.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersonSample {
    pub rows: Vec<PersonRow>,
    pub cutoff: f64,
}

/// Itemized exclusion counts: every dropped input row lands in exactly one
/// bucket, so input count = output count + exclusions.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub input_rows: usize,
    pub retained_rows: usize,
    pub unlinked_district: usize,
    pub missing_district_literacy: usize,
    pub missing_treatment: usize,
    pub over_age_cap: usize,
    /// District id → excluded-by-lineage flag, for auditing.
    pub excluded_districts: Vec<String>,
}

/// Raw person input before variable construction.
#[derive(Debug, Clone)]
pub struct PersonInput {
    pub district_id: String,
    pub age: u32,
    pub schooling_raw: f64,
    pub literate_without_schooling: bool,
    pub activity_wages: Vec<f64>,
    pub week_fraction: f64,
    pub weight: f64,
}

/// Age above which respondents are excluded entirely.
pub const AGE_CAP: u32 = 75;

/// District-level inputs to person-sample construction.
#[derive(Debug, Clone)]
pub struct DistrictAssignment {
    pub literacy: Option<f64>,
    pub treatment: Option<u8>,
}

/// Construct the person-level analysis table.
///
/// Wage = sum of earnings across all activities divided by the fraction of
/// the week worked; the log wage exists only for positive wages. Schooling is
/// recoded to 0 years for respondents literate without formal schooling.
/// Respondents above the age cap, in unlinked or lineage-excluded districts,
/// or in districts with unknown treatment are dropped with itemized counts.
pub fn build_person_sample(
    persons: &[PersonInput],
    districts: &BTreeMap<String, DistrictAssignment>,
    cutoff: f64,
) -> (PersonSample, ExclusionReport) {
    let mut report = ExclusionReport {
        input_rows: persons.len(),
        ..Default::default()
    };
    // Stable district indices in sorted-id order.
    let index: BTreeMap<&str, u64> = districts
        .keys()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i as u64))
        .collect();

    let mut excluded_districts: std::collections::BTreeSet<String> = Default::default();
    let mut rows = Vec::with_capacity(persons.len());
    for p in persons {
        let Some(district) = districts.get(&p.district_id) else {
            report.unlinked_district += 1;
            excluded_districts.insert(p.district_id.clone());
            continue;
        };
        let Some(literacy) = district.literacy else {
            report.missing_district_literacy += 1;
            excluded_districts.insert(p.district_id.clone());
            continue;
        };
        let Some(treatment) = district.treatment else {
            report.missing_treatment += 1;
            continue;
        };
        if p.age > AGE_CAP {
            report.over_age_cap += 1;
            continue;
        }
        let schooling = if p.literate_without_schooling {
            0.0
        } else {
            p.schooling_raw
        };
        let wage: f64 = p.activity_wages.iter().sum::<f64>() / p.week_fraction;
        let log_wage = if wage > 0.0 { Some(wage.ln()) } else { None };
        rows.push(PersonRow {
            district: index[p.district_id.as_str()],
            literacy,
            itt: assign_itt(literacy, cutoff),
            treatment,
            age: p.age,
            schooling,
            log_wage,
            weight: p.weight,
        });
    }
    report.retained_rows = rows.len();
    report.excluded_districts = excluded_districts.into_iter().collect();
    (PersonSample { rows, cutoff }, report)
}

impl PersonSample {
    /// Rows with the survey weights trimmed over the whole table.
    pub fn with_trimmed_weights(&self) -> PersonSample {
        let weights: Vec<f64> = self.rows.iter().map(|r| r.weight).collect();
        let trimmed = trim_weights(&weights);
        let rows = self
            .rows
            .iter()
            .zip(trimmed)
            .map(|(r, w)| PersonRow { weight: w, ..r.clone() })
            .collect();
        PersonSample {
            rows,
            cutoff: self.cutoff,
        }
    }

    /// Build an estimation sample: `x` = district literacy centered at the
    /// cutoff, `t` = the chosen exposure, cluster = district. Rows where the
    /// outcome is missing are excluded here, never inside fitting.
    pub fn to_estimation_sample(
        &self,
        outcome: impl Fn(&PersonRow) -> Option<f64>,
        exposure: impl Fn(&PersonRow) -> f64,
    ) -> Result<Sample> {
        let mut points = Vec::new();
        for r in &self.rows {
            if let Some(y) = outcome(r) {
                points.push((r.literacy, y, exposure(r), ClusterId(r.district), r.weight));
            }
        }
        Sample::from_raw(points, self.cutoff)
    }
}

// ---------------------------------------------------------------------------
// CSV readers and writers
// ---------------------------------------------------------------------------

fn parse_f64(field: &str, line: usize, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse {what} from '{field}'"),
    })
}

fn parse_fraction(field: &str, line: usize, what: &str) -> Result<f64> {
    let v = parse_f64(field, line, what)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Parse {
            line,
            message: format!(
                "{what} must be a decimal fraction in [0,1], got {v} \
                 (percent-scaled inputs are rejected)"
            ),
        });
    }
    Ok(v)
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Schema(format!("missing required column '{name}'")))
}

/// Read `districts.csv`.
pub fn read_districts(path: &Path) -> Result<Vec<DistrictRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let id = header_index(&headers, "district_id")?;
    let name = header_index(&headers, "name")?;
    let lit = header_index(&headers, "female_literacy")?;
    let pop = header_index(&headers, "population")?;
    let trt = headers.iter().position(|h| h.trim() == "treatment");
    let opt = |col: &str| headers.iter().position(|h| h.trim() == col);
    let (area, houses, households, agri) = (
        opt("area"),
        opt("houses"),
        opt("households"),
        opt("agricultural_share"),
    );

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let population = parse_f64(&record[pop], line, "population")?;
        if !(population > 0.0) {
            return Err(Error::Parse {
                line,
                message: format!("population must be positive, got {population}"),
            });
        }
        let parse_opt = |idx: Option<usize>, what: &str| -> Result<Option<f64>> {
            match idx {
                Some(c) if !record[c].trim().is_empty() => {
                    parse_f64(&record[c], line, what).map(Some)
                }
                _ => Ok(None),
            }
        };
        let treatment = match trt {
            Some(c) if !record[c].trim().is_empty() => {
                let v = parse_f64(&record[c], line, "treatment")?;
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Parse {
                        line,
                        message: format!("treatment must be 0 or 1, got {v}"),
                    });
                }
                Some(v as u8)
            }
            _ => None,
        };
        out.push(DistrictRecord {
            id: record[id].trim().to_string(),
            name: record[name].trim().to_string(),
            female_literacy: parse_fraction(&record[lit], line, "female_literacy")?,
            population,
            treatment,
            area: parse_opt(area, "area")?,
            houses: parse_opt(houses, "houses")?,
            households: parse_opt(households, "households")?,
            agricultural_share: parse_opt(agri, "agricultural_share")?,
        });
    }
    Ok(out)
}

/// Read `lineage.csv`.
pub fn read_lineage(path: &Path) -> Result<Vec<LineageEdge>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let child = header_index(&headers, "child_id")?;
    let parent = header_index(&headers, "parent_id")?;
    let contrib = header_index(&headers, "population_contribution")?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        out.push(LineageEdge {
            child_id: record[child].trim().to_string(),
            parent_id: record[parent].trim().to_string(),
            population_contribution: parse_fraction(
                &record[contrib],
                line,
                "population_contribution",
            )?,
        });
    }
    Ok(out)
}

/// Read `persons.csv`.
pub fn read_persons(path: &Path) -> Result<Vec<PersonInput>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let district = header_index(&headers, "district_id")?;
    let age = header_index(&headers, "age")?;
    let school = header_index(&headers, "schooling_years")?;
    let lws = header_index(&headers, "literate_without_schooling")?;
    let wages = header_index(&headers, "activity_wages")?;
    let week = header_index(&headers, "week_fraction")?;
    let weight = header_index(&headers, "weight")?;

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let age_v = parse_f64(&record[age], line, "age")?;
        if age_v < 0.0 || age_v.fract() != 0.0 {
            return Err(Error::Parse {
                line,
                message: format!("age must be a nonnegative integer, got {age_v}"),
            });
        }
        let week_v = parse_f64(&record[week], line, "week_fraction")?;
        if !(week_v > 0.0 && week_v <= 1.0) {
            return Err(Error::Parse {
                line,
                message: format!("week_fraction must lie in (0,1], got {week_v}"),
            });
        }
        let weight_v = parse_f64(&record[weight], line, "weight")?;
        if !(weight_v > 0.0) {
            return Err(Error::Parse {
                line,
                message: format!("weight must be positive, got {weight_v}"),
            });
        }
        let activity_wages = record[wages]
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|s| parse_f64(s, line, "activity wage"))
            .collect::<Result<Vec<f64>>>()?;
        let lws_v = parse_f64(&record[lws], line, "literate_without_schooling")?;
        out.push(PersonInput {
            district_id: record[district].trim().to_string(),
            age: age_v as u32,
            schooling_raw: parse_f64(&record[school], line, "schooling_years")?,
            literate_without_schooling: lws_v != 0.0,
            activity_wages,
            week_fraction: week_v,
            weight: weight_v,
        });
    }
    Ok(out)
}

/// Write the canonical person-level sample CSV.
pub fn write_person_sample(path: &Path, sample: &PersonSample) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "district", "literacy", "itt", "treatment", "age", "schooling", "log_wage", "weight",
    ])?;
    for r in &sample.rows {
        w.write_record(&[
            r.district.to_string(),
            r.literacy.to_string(),
            r.itt.to_string(),
            r.treatment.to_string(),
            r.age.to_string(),
            r.schooling.to_string(),
            r.log_wage.map(|v| v.to_string()).unwrap_or_default(),
            r.weight.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Read a canonical person-level sample CSV back.
pub fn read_person_sample(path: &Path, cutoff: f64) -> Result<PersonSample> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let cols: Result<Vec<usize>> = [
        "district", "literacy", "itt", "treatment", "age", "schooling", "log_wage", "weight",
    ]
    .iter()
    .map(|c| header_index(&headers, c))
    .collect();
    let cols = cols?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let log_wage = if record[cols[6]].trim().is_empty() {
            None
        } else {
            Some(parse_f64(&record[cols[6]], line, "log_wage")?)
        };
        rows.push(PersonRow {
            district: parse_f64(&record[cols[0]], line, "district")? as u64,
            literacy: parse_fraction(&record[cols[1]], line, "literacy")?,
            itt: parse_f64(&record[cols[2]], line, "itt")? as u8,
            treatment: parse_f64(&record[cols[3]], line, "treatment")? as u8,
            age: parse_f64(&record[cols[4]], line, "age")? as u32,
            schooling: parse_f64(&record[cols[5]], line, "schooling")?,
            log_wage,
            weight: parse_f64(&record[cols[7]], line, "weight")?,
        });
    }
    Ok(PersonSample { rows, cutoff })
}
