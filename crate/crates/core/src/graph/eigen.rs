use super::{positional::canonicalize_sign, GraphError};
use crate::tensor::Tensor;

/// Sweeps stop once the off-diagonal Frobenius norm drops below this.
pub const JACOBI_THRESHOLD: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenpairs of a symmetric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralBasis {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// `[n × n]`; column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: Tensor<f64>,
}

impl SpectralBasis {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn vector(&self, i: usize) -> Vec<f64> {
        let n = self.n();
        (0..n).map(|r| self.eigenvectors.get2(r, i)).collect()
    }
}

fn off_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for p in 0..n {
        for q in p + 1..n {
            s += a[p * n + q] * a[p * n + q];
        }
    }
    (2.0 * s).sqrt()
}

/// Cyclic Jacobi eigendecomposition of a dense symmetric matrix.
///
/// Rotations visit `(p, q)` pairs in row-major order, eigenpairs are sorted
/// ascending (stable on ties) and every eigenvector is sign-normalized so its
/// largest-magnitude entry is positive. Identical input gives bit-identical
/// output.
pub fn eigendecompose(matrix: &Tensor<f64>) -> Result<SpectralBasis, GraphError> {
    let n = matrix.rows();
    assert_eq!(matrix.shape(), &[n, n], "eigendecompose needs a square matrix");
    let mut a = matrix.data().to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_norm(&a, n) <= JACOBI_THRESHOLD {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a[p * n + p], a[q * n + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    let new_kp = c * akp - s * akq;
                    let new_kq = s * akp + c * akq;
                    a[k * n + p] = new_kp;
                    a[p * n + k] = new_kp;
                    a[k * n + q] = new_kq;
                    a[q * n + k] = new_kq;
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        let off = off_norm(&a, n);
        if off > JACOBI_THRESHOLD {
            return Err(GraphError::ConvergenceFailure {
                sweeps: JACOBI_MAX_SWEEPS,
                off_norm: off,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let eigenvalues = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vecs = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            col[r] = v[r * n + src];
        }
        canonicalize_sign(&mut col);
        for r in 0..n {
            vecs[r * n + dst] = col[r];
        }
    }
    Ok(SpectralBasis {
        eigenvalues,
        eigenvectors: Tensor::new(vec![n, n], vecs).expect("square"),
    })
}
