//! Small linear-algebra kernels: dense solves for fitting, a banded Cholesky
//! factorization and a Jacobi-preconditioned conjugate gradient for the
//! bioheat systems. All SPD paths assume the assembly already produced a
//! symmetric matrix with positive diagonal.

use crate::{Error, Result};

/// Sparse symmetric matrix in CSR layout (full pattern, both triangles).
#[derive(Debug, Clone)]
pub struct SparseSym {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseSym {
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[p] * x[self.col_idx[p]];
            }
            y[i] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[p] == i {
                    d[i] = self.vals[p];
                }
            }
        }
        d
    }

    pub fn bandwidth(&self) -> usize {
        let mut bw = 0;
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                bw = bw.max(self.col_idx[p].abs_diff(i));
            }
        }
        bw
    }
}

/// Outcome of a linear solve, with enough diagnostics for reports.
#[derive(Debug, Clone)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradient. Converges on the relative
/// residual ||b - Ax|| / ||b||; errors out at the iteration cap.
pub fn pcg(a: &SparseSym, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.n;
    let norm_b = norm2(b);
    if norm_b == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|&d| 1.0 / d).collect();

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    for it in 0..max_iter {
        a.matvec(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = norm2(&r) / norm_b;
        if res <= tol {
            return Ok((
                x,
                SolveStats {
                    iterations: it + 1,
                    relative_residual: res,
                },
            ));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Numerical(format!(
        "conjugate gradient did not reach tol {tol:.1e} in {max_iter} iterations (residual {:.3e})",
        norm2(&r) / norm_b
    )))
}

/// Banded Cholesky factor of an SPD matrix. The factor is reusable across
/// right-hand sides, which is what the candidate search needs: the matrix
/// depends only on geometry and boundary conditions, not on the source.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    /// Lower band, row-major: band[i*w + d] = L[i][i-d], w = bw + 1.
    band: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &SparseSym) -> Result<Self> {
        let n = a.n;
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            for p in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col_idx[p];
                if j <= i {
                    band[i * w + (i - j)] = a.vals[p];
                }
            }
        }
        // Row-oriented factorization; inner products run over contiguous
        // band storage.
        for i in 0..n {
            let start = i.saturating_sub(bw);
            for j in start..=i {
                let mut sum = band[i * w + (i - j)];
                let lo = j.saturating_sub(bw).max(start);
                for k in lo..j {
                    sum -= band[i * w + (i - k)] * band[j * w + (j - k)];
                }
                if j < i {
                    band[i * w + (i - j)] = sum / band[j * w];
                } else {
                    if sum <= 0.0 {
                        return Err(Error::Numerical(format!(
                            "matrix not positive definite at pivot {i} (value {sum:.3e})"
                        )));
                    }
                    band[i * w] = sum.sqrt();
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut x = b.to_vec();
        for i in 0..n {
            let start = i.saturating_sub(bw);
            let mut acc = x[i];
            for j in start..i {
                acc -= self.band[i * w + (i - j)] * x[j];
            }
            x[i] = acc / self.band[i * w];
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            let top = (i + bw + 1).min(n);
            for j in (i + 1)..top {
                acc -= self.band[j * w + (j - i)] * x[j];
            }
            x[i] = acc / self.band[i * w];
        }
        x
    }
}

/// Dense solve by Gaussian elimination with partial pivoting; used for the
/// small normal-equation and circumsphere systems.
pub fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<Vec<f64>> {
    let n = b.len();
    debug_assert!(a.len() == n && a.iter().all(|r| r.len() == n));
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() < 1e-300 {
            return Err(Error::Numerical("singular dense system".into()));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in (col + 1)..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for c in (row + 1)..n {
            acc -= a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize, off: f64, diag: f64) -> SparseSym {
        let mut row_ptr = vec![0usize];
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        for i in 0..n {
            if i > 0 {
                col_idx.push(i - 1);
                vals.push(off);
            }
            col_idx.push(i);
            vals.push(diag);
            if i + 1 < n {
                col_idx.push(i + 1);
                vals.push(off);
            }
            row_ptr.push(col_idx.len());
        }
        SparseSym {
            n,
            row_ptr,
            col_idx,
            vals,
        }
    }

    #[test]
    fn cg_and_cholesky_agree_on_tridiagonal() {
        let a = tridiag(50, -1.0, 2.5);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let (x_cg, st) = pcg(&a, &b, 1e-12, 10_000).unwrap();
        let x_ch = BandCholesky::factor(&a).unwrap().solve(&b);
        assert!(st.relative_residual <= 1e-12);
        for i in 0..50 {
            assert!((x_cg[i] - x_ch[i]).abs() < 1e-9, "mismatch at {i}");
        }
    }

    #[test]
    fn dense_solve_recovers_known_solution() {
        let mut a = vec![
            vec![4.0, 1.0, 0.0],
            vec![1.0, 3.0, -1.0],
            vec![0.0, -1.0, 2.0],
        ];
        let x_true = [1.0, -2.0, 0.5];
        let mut b = vec![
            4.0 * 1.0 + 1.0 * -2.0,
            1.0 - 6.0 - 0.5,
            2.0 + 1.0,
        ];
        let x = solve_dense(&mut a, &mut b).unwrap();
        for i in 0..3 {
            assert!((x[i] - x_true[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_solve_rejects_singular() {
        let mut a = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        let mut b = vec![1.0, 2.0];
        assert!(solve_dense(&mut a, &mut b).is_err());
    }
}
