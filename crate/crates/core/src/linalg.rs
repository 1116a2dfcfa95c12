//! Small dense least-squares machinery: Householder QR for tall-thin systems
//! (the polynomial basis never exceeds a handful of columns) and a Jacobi
//! singular-value routine for the rank check.

/// Solution of `min ||A b - y||` for a full-rank n×k matrix `A` (row-major).
pub(crate) struct LeastSquares {
    /// Coefficients in the basis of `A`'s columns.
    pub coeffs: Vec<f64>,
    /// `(AᵀA)⁻¹`, k×k row-major.
    pub gram_inv: Vec<f64>,
    /// Smallest and largest singular values of `A`.
    pub sv_min: f64,
    pub sv_max: f64,
}

/// Householder QR solve. `a` is n×k row-major, consumed; `y` has length n.
/// Returns `None` only when `n < k`; rank deficiency is reported through the
/// singular values, which the caller checks against its own tolerance.
pub(crate) fn qr_least_squares(mut a: Vec<f64>, mut y: Vec<f64>, k: usize) -> Option<LeastSquares> {
    let n = y.len();
    if n < k {
        return None;
    }
    debug_assert_eq!(a.len(), n * k);
    let a_orig = a.clone();
    let y_orig = y.clone();

    for j in 0..k {
        let mut norm2 = 0.0;
        for i in j..n {
            let v = a[i * k + j];
            norm2 += v * v;
        }
        if norm2 == 0.0 {
            // Column is already zero below and on the diagonal.
            continue;
        }
        let norm = norm2.sqrt();
        let alpha = if a[j * k + j] > 0.0 { -norm } else { norm };
        let vjj = a[j * k + j] - alpha;
        let mut vtv = vjj * vjj;
        for i in (j + 1)..n {
            let v = a[i * k + j];
            vtv += v * v;
        }
        if vtv > 0.0 {
            for c in (j + 1)..k {
                let mut dot = vjj * a[j * k + c];
                for i in (j + 1)..n {
                    dot += a[i * k + j] * a[i * k + c];
                }
                let f = 2.0 * dot / vtv;
                a[j * k + c] -= f * vjj;
                for i in (j + 1)..n {
                    a[i * k + c] -= f * a[i * k + j];
                }
            }
            let mut dot = vjj * y[j];
            for i in (j + 1)..n {
                dot += a[i * k + j] * y[i];
            }
            let f = 2.0 * dot / vtv;
            y[j] -= f * vjj;
            for i in (j + 1)..n {
                y[i] -= f * a[i * k + j];
            }
        }
        a[j * k + j] = alpha;
    }

    // Upper triangle of the transformed matrix is R.
    let mut r = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            r[i * k + j] = a[i * k + j];
        }
    }

    let (sv_min, sv_max) = singular_values_extent(&r, k);
    if sv_min <= 0.0 || !sv_min.is_finite() {
        return Some(LeastSquares {
            coeffs: vec![0.0; k],
            gram_inv: vec![0.0; k * k],
            sv_min: 0.0,
            sv_max,
        });
    }

    // Back-substitute R b = Qᵀy.
    let mut coeffs = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = y[i];
        for j in (i + 1)..k {
            s -= r[i * k + j] * coeffs[j];
        }
        coeffs[i] = s / r[i * k + i];
    }

    // One refinement pass through the triangular factor: solve
    // RᵀR d = Aᵀ(y − A b) and correct. Tightens ill-conditioned solves
    // toward the exact least-squares solution at O(nk) extra cost.
    {
        let mut normal_resid = vec![0.0; k];
        for i in 0..n {
            let mut e = y_orig[i];
            for j in 0..k {
                e -= a_orig[i * k + j] * coeffs[j];
            }
            for j in 0..k {
                normal_resid[j] += a_orig[i * k + j] * e;
            }
        }
        let mut u = vec![0.0; k];
        for i in 0..k {
            let mut s = normal_resid[i];
            for j in 0..i {
                s -= r[j * k + i] * u[j];
            }
            u[i] = s / r[i * k + i];
        }
        for i in (0..k).rev() {
            let mut s = u[i];
            for j in (i + 1)..k {
                s -= r[i * k + j] * u[j];
            }
            u[i] = s / r[i * k + i];
        }
        for j in 0..k {
            coeffs[j] += u[j];
        }
    }

    // Invert R column by column, then (AᵀA)⁻¹ = R⁻¹ R⁻ᵀ.
    let mut rinv = vec![0.0; k * k];
    for c in 0..k {
        let mut col = vec![0.0; k];
        col[c] = 1.0;
        for i in (0..=c).rev() {
            let mut s = col[i];
            for j in (i + 1)..k {
                s -= r[i * k + j] * col[j];
            }
            col[i] = s / r[i * k + i];
        }
        for i in 0..k {
            rinv[i * k + c] = col[i];
        }
    }
    let mut gram_inv = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let mut s = 0.0;
            for m in 0..k {
                s += rinv[i * k + m] * rinv[j * k + m];
            }
            gram_inv[i * k + j] = s;
        }
    }

    Some(LeastSquares {
        coeffs,
        gram_inv,
        sv_min,
        sv_max,
    })
}

/// Smallest and largest singular values of a k×k matrix via one-sided Jacobi.
fn singular_values_extent(m: &[f64], k: usize) -> (f64, f64) {
    if k == 0 {
        return (0.0, 0.0);
    }
    let mut b = m.to_vec();
    let eps = 1e-14;
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..k {
            for q in (p + 1)..k {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..k {
                    let bp = b[i * k + p];
                    let bq = b[i * k + q];
                    app += bp * bp;
                    aqq += bq * bq;
                    apq += bp * bq;
                }
                off = off.max(apq.abs() / (app * aqq).sqrt().max(f64::MIN_POSITIVE));
                if apq.abs() <= eps * (app * aqq).sqrt() {
                    continue;
                }
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..k {
                    let bp = b[i * k + p];
                    let bq = b[i * k + q];
                    b[i * k + p] = c * bp - s * bq;
                    b[i * k + q] = s * bp + c * bq;
                }
            }
        }
        if off < eps {
            break;
        }
    }
    let mut sv_min = f64::INFINITY;
    let mut sv_max = 0.0f64;
    for j in 0..k {
        let mut norm2 = 0.0;
        for i in 0..k {
            let v = b[i * k + j];
            norm2 += v * v;
        }
        let sv = norm2.sqrt();
        sv_min = sv_min.min(sv);
        sv_max = sv_max.max(sv);
    }
    (sv_min, sv_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_exact_linear_system() {
        // y = 3 + 2x at x = 0, 1, 2
        let a = vec![1.0, 0.0, 1.0, 1.0, 1.0, 2.0];
        let y = vec![3.0, 5.0, 7.0];
        let ls = qr_least_squares(a, y, 2).unwrap();
        assert!((ls.coeffs[0] - 3.0).abs() < 1e-12);
        assert!((ls.coeffs[1] - 2.0).abs() < 1e-12);
        assert!(ls.sv_min > 0.0);
    }

    #[test]
    fn gram_inverse_matches_direct_computation() {
        let a = vec![1.0, 0.5, 1.0, 1.5, 1.0, 2.5, 1.0, 4.0];
        let y = vec![0.0; 4];
        let ls = qr_least_squares(a.clone(), y, 2).unwrap();
        // Direct AᵀA
        let mut g = [[0.0f64; 2]; 2];
        for i in 0..4 {
            for p in 0..2 {
                for q in 0..2 {
                    g[p][q] += a[i * 2 + p] * a[i * 2 + q];
                }
            }
        }
        // Check G * gram_inv = I
        for p in 0..2 {
            for q in 0..2 {
                let mut s = 0.0;
                for m in 0..2 {
                    s += g[p][m] * ls.gram_inv[m * 2 + q];
                }
                let expect = if p == q { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-10, "G * Ginv mismatch at ({p},{q})");
            }
        }
    }

    #[test]
    fn detects_rank_deficiency() {
        // Second column is a multiple of the first.
        let a = vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0];
        let y = vec![1.0, 1.0, 1.0];
        let ls = qr_least_squares(a, y, 2).unwrap();
        assert!(ls.sv_min / ls.sv_max < 1e-12);
    }

    #[test]
    fn singular_values_match_known_diagonal() {
        let m = vec![3.0, 0.0, 0.0, 0.5];
        let (lo, hi) = singular_values_extent(&m, 2);
        assert!((lo - 0.5).abs() < 1e-12);
        assert!((hi - 3.0).abs() < 1e-12);
    }
}
