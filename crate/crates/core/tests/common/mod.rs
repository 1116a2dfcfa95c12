//! Shared test helpers: deterministic RNG streams, data-generating processes,
//! and a brute-force weighted least-squares oracle kept independent of the
//! library's QR path.

#![allow(dead_code)]

use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;
use rdsuite_core::{ClusterId, Kernel, Sample, Side};

pub fn rng(seed: u64) -> Pcg64 {
    Pcg64::seed_from_u64(seed)
}

/// Standard normal draw via Box-Muller.
pub fn normal(rng: &mut Pcg64) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn uniform(rng: &mut Pcg64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Brute-force weighted least squares of y on (1, x, …, x^p): build the
/// normal equations with column scaling, solve by Gauss-Jordan elimination
/// with partial pivoting, then apply iterative refinement so the oracle's
/// own rounding does not dominate the comparison. No code shared with the
/// library solver.
pub fn oracle_wls(xs: &[f64], ys: &[f64], weights: &[f64], p: usize) -> Vec<f64> {
    let k = p + 1;
    let n = xs.len();
    assert!(n >= k, "oracle needs at least p+1 points");
    let scale = xs.iter().fold(0.0f64, |a, &x| a.max(x.abs())).max(1e-300);

    // Normal equations in the scaled basis z = x / scale.
    let mut gram = vec![vec![0.0f64; k]; k];
    let mut rhs = vec![0.0f64; k];
    for i in 0..n {
        let z = xs[i] / scale;
        let mut zp = vec![0.0; k];
        let mut acc = 1.0;
        for item in zp.iter_mut() {
            *item = acc;
            acc *= z;
        }
        for r in 0..k {
            for c in 0..k {
                gram[r][c] += weights[i] * zp[r] * zp[c];
            }
            rhs[r] += weights[i] * zp[r] * ys[i];
        }
    }

    let solve = |b: &[f64]| -> Vec<f64> {
        let mut a: Vec<Vec<f64>> = gram
            .iter()
            .zip(b)
            .map(|(row, &bi)| {
                let mut r = row.clone();
                r.push(bi);
                r
            })
            .collect();
        for col in 0..k {
            let pivot = (col..k)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            let diag = a[col][col];
            assert!(diag.abs() > 0.0, "oracle system is singular");
            for row in 0..k {
                if row != col {
                    let f = a[row][col] / diag;
                    for c in col..=k {
                        let sub = f * a[col][c];
                        a[row][c] -= sub;
                    }
                }
            }
        }
        (0..k).map(|j| a[j][k] / a[j][j]).collect()
    };

    let mut beta = solve(&rhs);
    for _ in 0..4 {
        // Residual of the normal equations, then a correction solve.
        let mut resid = rhs.clone();
        for r in 0..k {
            for c in 0..k {
                resid[r] -= gram[r][c] * beta[c];
            }
        }
        let correction = solve(&resid);
        for j in 0..k {
            beta[j] += correction[j];
        }
    }
    beta.iter()
        .enumerate()
        .map(|(j, b)| b / scale.powi(j as i32))
        .collect()
}

/// Condition number of the weighted, max-|x|-scaled polynomial design: the
/// square root of the eigenvalue ratio of its Gram matrix (Jacobi iteration).
/// Comparisons between independent solvers are only meaningful when this is
/// small enough that double precision pins the coefficients.
pub fn design_condition(xs: &[f64], weights: &[f64], p: usize) -> f64 {
    let k = p + 1;
    let scale = xs.iter().fold(0.0f64, |a, &x| a.max(x.abs())).max(1e-300);
    let mut g = vec![0.0f64; k * k];
    for (&x, &w) in xs.iter().zip(weights) {
        let z = x / scale;
        let mut zp = vec![0.0; k];
        let mut acc = 1.0;
        for item in zp.iter_mut() {
            *item = acc;
            acc *= z;
        }
        for r in 0..k {
            for c in 0..k {
                g[r * k + c] += w * zp[r] * zp[c];
            }
        }
    }
    // Jacobi eigenvalue sweeps on the symmetric Gram matrix.
    for _ in 0..50 {
        let mut off = 0.0f64;
        for pi in 0..k {
            for qi in (pi + 1)..k {
                off = off.max(g[pi * k + qi].abs());
            }
        }
        if off < 1e-14 * (0..k).map(|i| g[i * k + i].abs()).fold(0.0, f64::max) {
            break;
        }
        for pi in 0..k {
            for qi in (pi + 1)..k {
                let apq = g[pi * k + qi];
                if apq == 0.0 {
                    continue;
                }
                let app = g[pi * k + pi];
                let aqq = g[qi * k + qi];
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..k {
                    let gip = g[i * k + pi];
                    let giq = g[i * k + qi];
                    g[i * k + pi] = c * gip - s * giq;
                    g[i * k + qi] = s * gip + c * giq;
                }
                for i in 0..k {
                    let gpi = g[pi * k + i];
                    let gqi = g[qi * k + i];
                    g[pi * k + i] = c * gpi - s * gqi;
                    g[qi * k + i] = s * gpi + c * gqi;
                }
            }
        }
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for i in 0..k {
        let v = g[i * k + i].abs();
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (hi / lo.max(f64::MIN_POSITIVE)).sqrt()
}

/// Kernel-and-sampling weights for a one-sided subsample, matching the
/// estimator's weighting rule.
pub fn side_subsample(
    sample: &Sample,
    side: Side,
    h: f64,
    kernel: Kernel,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    for o in sample.observations() {
        let on_side = match side {
            Side::Left => o.x < 0.0,
            Side::Right => o.x >= 0.0,
        };
        if !on_side {
            continue;
        }
        let w = o.w * kernel.weight(o.x / h);
        if w > 0.0 {
            xs.push(o.x);
            ys.push(o.y);
            ws.push(w);
        }
    }
    (xs, ys, ws)
}

/// Smooth noisy DGP with asymmetric curvature across the cutoff and a jump.
/// `x ~ U(-1, 1)`; `m(x) = jump·1{x≥0} + 1.2x + c₊x²·1{x≥0} + c₋x²·1{x<0}`.
pub struct SmoothDgp {
    pub jump: f64,
    pub curvature_right: f64,
    pub curvature_left: f64,
    pub noise: f64,
}

impl Default for SmoothDgp {
    fn default() -> Self {
        SmoothDgp {
            jump: 0.4,
            curvature_right: 4.0,
            curvature_left: -2.0,
            noise: 0.5,
        }
    }
}

impl SmoothDgp {
    pub fn mean(&self, x: f64) -> f64 {
        let curve = if x >= 0.0 {
            self.curvature_right * x * x
        } else {
            self.curvature_left * x * x
        };
        f64::from(x >= 0.0) * self.jump + 1.2 * x + curve
    }

    pub fn sample(&self, n: usize, rng: &mut Pcg64) -> Sample {
        let rows = (0..n)
            .map(|i| {
                let x = uniform(rng, -1.0, 1.0);
                let y = self.mean(x) + self.noise * normal(rng);
                (x, y, f64::from(x < 0.0), ClusterId(i as u64), 1.0)
            })
            .collect();
        Sample::from_raw(rows, 0.0).unwrap()
    }
}

/// Cluster-level running variable and treatment with intra-cluster error
/// correlation `icc`: y = jump·1{x≥0} + slope·x + α_g + ε.
pub fn clustered_sample(
    clusters: usize,
    per_cluster: usize,
    icc: f64,
    jump: f64,
    rng: &mut Pcg64,
) -> Sample {
    let sd_alpha = icc.sqrt();
    let sd_eps = (1.0 - icc).sqrt();
    let mut rows = Vec::with_capacity(clusters * per_cluster);
    for g in 0..clusters {
        // Keep both sides populated.
        let x = if g % 2 == 0 {
            uniform(rng, -1.0, -0.02)
        } else {
            uniform(rng, 0.02, 1.0)
        };
        let alpha = sd_alpha * normal(rng);
        for _ in 0..per_cluster {
            let y = f64::from(x >= 0.0) * jump + 0.7 * x + alpha + sd_eps * normal(rng);
            rows.push((x, y, f64::from(x >= 0.0), ClusterId(g as u64), 1.0));
        }
    }
    Sample::from_raw(rows, 0.0).unwrap()
}
