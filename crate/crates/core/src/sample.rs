//! The estimation sample: observations of a running variable, outcome,
//! treatment indicator, cluster key, and sampling weight, centered at a cutoff.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque cluster key. Districts map to arbitrary integers at ingestion;
/// clustering by running variable uses the bit pattern of the x value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClusterId(pub u64);

impl ClusterId {
    /// Cluster key carrying the exact value of a running variable.
    pub fn from_running_variable(x: f64) -> Self {
        ClusterId(x.to_bits())
    }
}

/// Which side of the cutoff a one-sided fit uses. Observations with centered
/// `x >= 0` belong to the right side, `x < 0` to the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn contains(self, centered_x: f64) -> bool {
        match self {
            Side::Left => centered_x < 0.0,
            Side::Right => centered_x >= 0.0,
        }
    }
}

/// One observation. `x` is stored centered at the sample cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Running variable, centered at the cutoff.
    pub x: f64,
    /// Outcome. Rows with missing outcomes are excluded before a `Sample` is built.
    pub y: f64,
    /// Treatment indicator (0 or 1). Used as the exposure in fuzzy designs.
    pub t: f64,
    /// Cluster key (district).
    pub cluster: ClusterId,
    /// Sampling weight, strictly positive.
    pub w: f64,
}

impl Observation {
    pub fn validate(&self, index: usize) -> Result<()> {
        if !self.x.is_finite() {
            return Err(Error::Schema(format!("observation {index}: x not finite")));
        }
        if !self.y.is_finite() {
            return Err(Error::Schema(format!("observation {index}: y not finite")));
        }
        if !(self.w > 0.0) {
            return Err(Error::Schema(format!(
                "observation {index}: weight must be positive, got {}",
                self.w
            )));
        }
        if self.t != 0.0 && self.t != 1.0 {
            return Err(Error::Schema(format!(
                "observation {index}: treatment must be 0 or 1, got {}",
                self.t
            )));
        }
        Ok(())
    }
}

/// An immutable sample centered at a cutoff. All estimators consume this type;
/// none mutate it, so it can be shared freely across worker threads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    observations: Vec<Observation>,
    cutoff: f64,
    centered: bool,
}

impl Sample {
    /// Build a sample from raw (uncentered) points, centering x at `cutoff`.
    ///
    /// `points` are `(x_raw, y, t, cluster, w)`. Validation rejects nonfinite
    /// values, nonpositive weights, and non-binary treatment.
    pub fn from_raw(points: Vec<(f64, f64, f64, ClusterId, f64)>, cutoff: f64) -> Result<Sample> {
        let observations = points
            .into_iter()
            .map(|(x, y, t, cluster, w)| Observation {
                x: x - cutoff,
                y,
                t,
                cluster,
                w,
            })
            .collect();
        Sample::from_centered(observations, cutoff)
    }

    /// Build a sample whose observations are already centered at `cutoff`.
    pub fn from_centered(observations: Vec<Observation>, cutoff: f64) -> Result<Sample> {
        for (i, obs) in observations.iter().enumerate() {
            obs.validate(i)?;
        }
        Ok(Sample {
            observations,
            cutoff,
            centered: true,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn centered(&self) -> bool {
        self.centered
    }

    /// Raw (uncentered) running-variable value of observation `i`.
    pub fn raw_x(&self, i: usize) -> f64 {
        self.observations[i].x + self.cutoff
    }

    /// Rebuild the sample around a different cutoff.
    pub fn recenter(&self, new_cutoff: f64) -> Sample {
        let shift = self.cutoff - new_cutoff;
        let observations = self
            .observations
            .iter()
            .map(|o| Observation {
                x: o.x + shift,
                ..*o
            })
            .collect();
        Sample {
            observations,
            cutoff: new_cutoff,
            centered: true,
        }
    }

    /// Number of observations on each side of the cutoff: `(left, right)`.
    pub fn side_counts(&self) -> (usize, usize) {
        let left = self.observations.iter().filter(|o| o.x < 0.0).count();
        (left, self.observations.len() - left)
    }

    /// Error unless both sides of the cutoff are nonempty.
    pub fn require_two_sided(&self) -> Result<()> {
        let (l, r) = self.side_counts();
        if l == 0 || r == 0 {
            return Err(Error::InsufficientData(format!(
                "need observations on both sides of the cutoff (left: {l}, right: {r})"
            )));
        }
        Ok(())
    }

    /// A copy with all sampling weights replaced by 1.
    pub fn unweighted(&self) -> Sample {
        let observations = self
            .observations
            .iter()
            .map(|o| Observation { w: 1.0, ..*o })
            .collect();
        Sample {
            observations,
            cutoff: self.cutoff,
            centered: self.centered,
        }
    }

    /// A copy with the given weights (must match length and be positive).
    pub fn with_weights(&self, weights: &[f64]) -> Result<Sample> {
        if weights.len() != self.observations.len() {
            return Err(Error::InvalidInput(format!(
                "weight vector length {} does not match sample size {}",
                weights.len(),
                self.observations.len()
            )));
        }
        let observations = self
            .observations
            .iter()
            .zip(weights)
            .map(|(o, &w)| Observation { w, ..*o })
            .collect();
        Sample::from_centered(observations, self.cutoff)
    }

    /// A copy retaining only observations selected by `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&Observation) -> bool) -> Sample {
        Sample {
            observations: self.observations.iter().copied().filter(|o| keep(o)).collect(),
            cutoff: self.cutoff,
            centered: self.centered,
        }
    }
}
