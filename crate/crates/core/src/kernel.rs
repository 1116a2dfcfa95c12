//! Weighting kernels for local polynomial estimation.

use serde::{Deserialize, Serialize};

/// Kernel family used to downweight observations by distance from the cutoff.
///
/// All kernels are symmetric, nonnegative, and vanish outside `|u| > 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Triangular,
    Uniform,
    Epanechnikov,
}

impl Kernel {
    /// Kernel weight at normalized distance `u` (typically `x / h`).
    pub fn weight(self, u: f64) -> f64 {
        let a = u.abs();
        match self {
            Kernel::Triangular => (1.0 - a).max(0.0),
            Kernel::Uniform => {
                if a <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::Epanechnikov => (0.75 * (1.0 - u * u)).max(0.0),
        }
    }

    /// One-sided moment `∫_0^1 K(u) u^j du`, exact.
    pub(crate) fn moment(self, j: usize) -> f64 {
        let j = j as f64;
        match self {
            Kernel::Triangular => 1.0 / (j + 1.0) - 1.0 / (j + 2.0),
            Kernel::Uniform => 1.0 / (j + 1.0),
            Kernel::Epanechnikov => 0.75 * (1.0 / (j + 1.0) - 1.0 / (j + 3.0)),
        }
    }

    /// One-sided squared moment `∫_0^1 K(u)^2 u^j du`, exact.
    pub(crate) fn moment_sq(self, j: usize) -> f64 {
        let j = j as f64;
        match self {
            Kernel::Triangular => 1.0 / (j + 1.0) - 2.0 / (j + 2.0) + 1.0 / (j + 3.0),
            Kernel::Uniform => 1.0 / (j + 1.0),
            Kernel::Epanechnikov => {
                0.5625 * (1.0 / (j + 1.0) - 2.0 / (j + 3.0) + 1.0 / (j + 5.0))
            }
        }
    }
}

impl std::fmt::Display for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Kernel::Triangular => "triangular",
            Kernel::Uniform => "uniform",
            Kernel::Epanechnikov => "epanechnikov",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for Kernel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "triangular" | "tri" => Ok(Kernel::Triangular),
            "uniform" | "uni" => Ok(Kernel::Uniform),
            "epanechnikov" | "epa" => Ok(Kernel::Epanechnikov),
            other => Err(format!("unknown kernel: {other}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangular_apex_and_decay() {
        assert_eq!(Kernel::Triangular.weight(0.0), 1.0);
        assert_eq!(Kernel::Triangular.weight(0.5), 0.5);
        assert_eq!(Kernel::Triangular.weight(-0.5), 0.5);
        assert_eq!(Kernel::Triangular.weight(1.0), 0.0);
    }

    #[test]
    fn uniform_support() {
        assert_eq!(Kernel::Uniform.weight(1.5), 0.0);
        assert_eq!(Kernel::Uniform.weight(1.0), 1.0);
        assert_eq!(Kernel::Uniform.weight(-0.3), 1.0);
    }

    #[test]
    fn epanechnikov_shape() {
        assert!((Kernel::Epanechnikov.weight(0.0) - 0.75).abs() < 1e-15);
        assert_eq!(Kernel::Epanechnikov.weight(2.0), 0.0);
        assert!((Kernel::Epanechnikov.weight(0.5) - 0.75 * 0.75).abs() < 1e-15);
    }

    #[test]
    fn moments_match_quadrature() {
        // Exact closed forms against a fine midpoint rule.
        let m = 200_000;
        for kernel in [Kernel::Triangular, Kernel::Uniform, Kernel::Epanechnikov] {
            for j in 0..8 {
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in 0..m {
                    let u = (i as f64 + 0.5) / m as f64;
                    let k = kernel.weight(u);
                    let uj = u.powi(j as i32);
                    s += k * uj;
                    s2 += k * k * uj;
                }
                s /= m as f64;
                s2 /= m as f64;
                assert!((s - kernel.moment(j)).abs() < 1e-9, "{kernel} moment {j}");
                assert!(
                    (s2 - kernel.moment_sq(j)).abs() < 1e-9,
                    "{kernel} sq moment {j}"
                );
            }
        }
    }
}
