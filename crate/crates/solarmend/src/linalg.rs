//! Small dense linear-algebra kernels.
//!
//! Everything in the pipeline that needs factorizations works on matrices
//! whose *smaller* side is at most a few hundred, so classic Jacobi methods
//! are both simple and accurate here: cyclic Jacobi for symmetric
//! eigendecomposition, and one-sided (Hestenes) Jacobi for singular values.
//! The one-sided variant computes singular values to near machine precision,
//! which matters when shrinkage objectives are compared across iterations.

use crate::{Error, Result};

/// Eigendecomposition of a symmetric matrix, `a = V · diag(λ) · Vᵀ`.
///
/// `a` is `n × n` row-major. Returns eigenvalues in ascending order and the
/// matching eigenvectors as columns of a row-major `n × n` matrix.
pub fn sym_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != n * n {
        return Err(Error::Shape(format!(
            "sym_eigen: expected {}x{} matrix, got {} elements",
            n,
            n,
            a.len()
        )));
    }
    let mut m = a.to_vec();
    // v starts as identity and accumulates the rotations.
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off_diag: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off_diag += m[i * n + j] * m[i * n + j];
            }
        }
        if off_diag.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q of m.
                for i in 0..n {
                    let mip = m[i * n + p];
                    let miq = m[i * n + q];
                    m[i * n + p] = c * mip - s * miq;
                    m[i * n + q] = s * mip + c * miq;
                }
                for j in 0..n {
                    let mpj = m[p * n + j];
                    let mqj = m[q * n + j];
                    m[p * n + j] = c * mpj - s * mqj;
                    m[q * n + j] = s * mpj + c * mqj;
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).expect("finite eigenvalues"));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut eigenvectors = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for row in 0..n {
            eigenvectors[row * n + new_col] = v[row * n + old_col];
        }
    }
    Ok((eigenvalues, eigenvectors))
}

/// Result of [`svd_shrink`]: the original spectrum and the rebuilt matrix.
pub struct ShrunkSvd {
    /// Singular values of the input, descending.
    pub singular_values: Vec<f64>,
    /// `U · diag(f(σ)) · Vᵀ`, row-major, same shape as the input.
    pub matrix: Vec<f64>,
}

/// Applies a spectral shrinkage `σ → f(σ)` to an `m × n` matrix.
///
/// The map `f` receives the singular values in descending order and must
/// return the shrunk values in the same order, each within `[0, σ]`. Uses
/// one-sided Jacobi on the smaller dimension, so only `min(m, n)` rotations
/// per sweep are needed and `V` is never formed for the long side.
pub fn svd_shrink(
    a: &[f64],
    m: usize,
    n: usize,
    f: impl FnOnce(&[f64]) -> Vec<f64>,
) -> Result<ShrunkSvd> {
    if a.len() != m * n {
        return Err(Error::Shape(format!(
            "svd_shrink: expected {m}x{n}, got {} elements",
            a.len()
        )));
    }
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("svd_shrink of empty matrix".into()));
    }

    // Work on w with the smaller side as columns: w = a (m>=n) or w = aᵀ.
    let transposed = m < n;
    let (rows, cols) = if transposed { (n, m) } else { (m, n) };
    let mut w = vec![0.0; rows * cols];
    for i in 0..m {
        for j in 0..n {
            if transposed {
                w[j * cols + i] = a[i * n + j];
            } else {
                w[i * cols + j] = a[i * n + j];
            }
        }
    }

    // Accumulated right rotations: w_original = w_final · vᵀ.
    let mut v = vec![0.0; cols * cols];
    for i in 0..cols {
        v[i * cols + i] = 1.0;
    }

    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for r in 0..rows {
                    let wp = w[r * cols + p];
                    let wq = w[r * cols + q];
                    alpha += wp * wp;
                    beta += wq * wq;
                    gamma += wp * wq;
                }
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..rows {
                    let wp = w[r * cols + p];
                    let wq = w[r * cols + q];
                    w[r * cols + p] = c * wp - s * wq;
                    w[r * cols + q] = s * wp + c * wq;
                }
                for r in 0..cols {
                    let vp = v[r * cols + p];
                    let vq = v[r * cols + q];
                    v[r * cols + p] = c * vp - s * vq;
                    v[r * cols + q] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    // Column norms are the singular values.
    let mut sigma: Vec<f64> = (0..cols)
        .map(|j| {
            (0..rows)
                .map(|r| w[r * cols + j].powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).expect("finite singulars"));
    sigma = order.iter().map(|&j| sigma[j]).collect();

    let shrunk = f(&sigma);
    if shrunk.len() != sigma.len() {
        return Err(Error::InvalidArgument(
            "shrinkage map must preserve spectrum length".into(),
        ));
    }

    // Rebuild: original = w·vᵀ = Σ_j w_j v_jᵀ; shrunk scales column j by
    // f(σ_j)/σ_j, which stays in [0, 1] for any shrinkage.
    let mut out = vec![0.0; rows * cols];
    for (rank, &j) in order.iter().enumerate() {
        let ratio = if sigma[rank] > 0.0 {
            shrunk[rank] / sigma[rank]
        } else {
            0.0
        };
        if ratio == 0.0 {
            continue;
        }
        for r in 0..rows {
            let scaled = ratio * w[r * cols + j];
            if scaled == 0.0 {
                continue;
            }
            for jj in 0..cols {
                out[r * cols + jj] += scaled * v[jj * cols + j];
            }
        }
    }

    let mut matrix = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            matrix[i * n + j] = if transposed {
                out[j * cols + i]
            } else {
                out[i * cols + j]
            };
        }
    }
    Ok(ShrunkSvd {
        singular_values: sigma,
        matrix,
    })
}

/// Solves `a·x = b` for symmetric positive definite `a` via Cholesky.
///
/// Returns `None` when `a` is not numerically positive definite.
pub fn cholesky_solve(a: &[f64], n: usize, b: &[f64]) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    // Forward then backward substitution.
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    Some(x)
}
