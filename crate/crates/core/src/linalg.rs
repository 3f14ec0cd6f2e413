//! Small dense linear-algebra helpers shared across the crate.
//!
//! Everything here is deterministic, allocation-light, and sized for
//! desk-scale problems (N up to a few hundred).

use ndarray::{Array1, Array2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric within tolerance {tol:e} (max asymmetry {max:e})")]
    NotSymmetric { tol: f64, max: f64 },
    #[error("matrix is not positive definite (pivot {pivot:e} at column {col})")]
    NotPositiveDefinite { pivot: f64, col: usize },
}

/// Maximum absolute asymmetry `|a_ij - a_ji|` over the matrix.
pub fn max_asymmetry(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    worst
}

/// Lower-triangular Cholesky factor `L` with `L L^T = a`.
///
/// Requires strictly positive pivots; callers regularize first when the
/// input may be only semidefinite.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>, LinalgError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { pivot: d, col: j });
        }
        let dj = d.sqrt();
        l[[j, j]] = dj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / dj;
        }
    }
    Ok(l)
}

/// Cholesky-like factor of a positive *semi*definite matrix.
///
/// Columns with a vanishing pivot (relative to the largest diagonal entry)
/// are zeroed rather than rejected, so rank-deficient covariances still
/// produce a usable sampling factor with `L L^T = a` up to the drop
/// tolerance.
pub fn cholesky_psd(a: &Array2<f64>) -> Result<Array2<f64>, LinalgError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    let scale = (0..n).map(|i| a[[i, i]].abs()).fold(0.0f64, f64::max);
    let drop_tol = 1e-12 * scale.max(1e-300);
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d < -drop_tol.max(1e-10 * scale) || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { pivot: d, col: j });
        }
        if d <= drop_tol {
            // Rank-deficient column: leave it zero.
            continue;
        }
        let dj = d.sqrt();
        l[[j, j]] = dj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / dj;
        }
    }
    Ok(l)
}

/// Solve `a x = b` for symmetric positive definite `a` via its Cholesky factor.
pub fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        for k in 0..i {
            let v = y[k];
            y[i] -= l[[i, k]] * v;
        }
        y[i] /= l[[i, i]];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let v = y[k];
            y[i] -= l[[k, i]] * v;
        }
        y[i] /= l[[i, i]];
    }
    y
}

/// Eigenvalues and eigenvectors of a symmetric matrix by cyclic Jacobi
/// rotations. Returns `(values, vectors)` with columns of `vectors` being
/// the eigenvectors, eigenvalues ascending.
pub fn symmetric_eigen(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>), LinalgError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(m[[i, j]].abs());
            }
        }
        let scale = (0..n).map(|i| m[[i, i]].abs()).fold(0.0f64, f64::max);
        if off <= 1e-14 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].partial_cmp(&m[[j, j]]).unwrap());
    let values = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors[[row, col]] = v[[row, src]];
        }
    }
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_reconstructs() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.1], [0.6, 1.1, 3.0]];
        let l = cholesky(&a).unwrap();
        let back = l.dot(&l.t());
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[[i, j]] - a[[i, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(&a).is_err());
    }

    #[test]
    fn psd_factor_handles_zero_matrix() {
        let a = Array2::<f64>::zeros((3, 3));
        let l = cholesky_psd(&a).unwrap();
        assert!(l.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn psd_factor_handles_rank_one() {
        let u = array![1.0, -2.0, 0.5];
        let mut a = Array2::<f64>::zeros((3, 3));
        for i in 0..3 {
            for j in 0..3 {
                a[[i, j]] = u[i] * u[j];
            }
        }
        let l = cholesky_psd(&a).unwrap();
        let back = l.dot(&l.t());
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[[i, j]] - a[[i, j]]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cholesky_solve_roundtrip() {
        let a = array![[4.0, 1.0], [1.0, 3.0]];
        let l = cholesky(&a).unwrap();
        let b = array![1.0, 2.0];
        let x = cholesky_solve(&l, &b);
        let back = a.dot(&x);
        assert!((back[0] - 1.0).abs() < 1e-12);
        assert!((back[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_eigen_diagonalizes() {
        let a = array![[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]];
        let (vals, vecs) = symmetric_eigen(&a).unwrap();
        // Known eigenvalues: 2 - sqrt(2), 2, 2 + sqrt(2).
        let expect = [2.0 - 2f64.sqrt(), 2.0, 2.0 + 2f64.sqrt()];
        for (got, want) in vals.iter().zip(expect.iter()) {
            assert!((got - want).abs() < 1e-10);
        }
        // A v = lambda v for each column.
        for k in 0..3 {
            let v = vecs.column(k).to_owned();
            let av = a.dot(&v);
            for i in 0..3 {
                assert!((av[i] - vals[k] * v[i]).abs() < 1e-9);
            }
        }
    }
}
