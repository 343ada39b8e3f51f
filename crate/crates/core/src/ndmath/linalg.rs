//! Dense kernels that sit underneath the tape: LU solves with a condition
//! check, numerical rank and eigenvalues.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// Condition estimates above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Default relative threshold for [`svd_rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Row-pivoted LU factorisation, stored packed (unit lower + upper).
#[derive(Debug, Clone)]
pub struct Lu {
    packed: Mat,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Mat) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::Dimension {
                op: "lu",
                left: a.shape(),
                right: a.shape(),
            });
        }
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut piv = k;
            let mut best = lu[(k, k)].abs();
            for i in (k + 1)..n {
                let v = lu[(i, k)].abs();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular {
                    condition: f64::INFINITY,
                });
            }
            if piv != k {
                lu.swap_rows(k, piv);
                perm.swap(k, piv);
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        lu[(i, j)] -= f * lu[(k, j)];
                    }
                }
            }
        }
        Ok(Lu { packed: lu, perm })
    }

    fn solve_unchecked(&self, b: &Mat) -> Mat {
        let n = self.packed.nrows();
        let mut x = Mat::zeros(n, b.ncols());
        for (i, &p) in self.perm.iter().enumerate() {
            x.set_row(i, &b.row(p));
        }
        for c in 0..x.ncols() {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= self.packed[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s;
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in (i + 1)..n {
                    s -= self.packed[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / self.packed[(i, i)];
            }
        }
        x
    }

    /// 1-norm condition estimate computed from the explicit inverse. Only
    /// used on the small systems that show up here (m×m, m ≤ a handful).
    pub fn condition(&self, a: &Mat) -> f64 {
        let n = a.nrows();
        let inv = self.solve_unchecked(&Mat::identity(n, n));
        one_norm(a) * one_norm(&inv)
    }
}

fn one_norm(m: &Mat) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solve `a · x = b` for `x`, refusing ill-conditioned `a`.
pub fn solve(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(Error::Dimension {
            op: "solve",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let lu = Lu::factor(a)?;
    let condition = lu.condition(a);
    if !(condition < MAX_CONDITION) {
        return Err(Error::Singular { condition });
    }
    let mut x = lu.solve_unchecked(b);
    // one step of iterative refinement
    let r = b - a * &x;
    x += lu.solve_unchecked(&r);
    Ok(x)
}

/// Number of singular values above `tol · σ_max`.
pub fn svd_rank(m: &Mat, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * max).count()
}

/// All eigenvalues of a square matrix, with multiplicity.
pub fn eigvals(m: &Mat) -> Result<Vec<Complex64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension {
            op: "eigvals",
            left: m.shape(),
            right: m.shape(),
        });
    }
    if m.is_empty() {
        return Ok(Vec::new());
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "matrix entry in eigvals".into(),
        });
    }
    Ok(m.complex_eigenvalues().iter().cloned().collect())
}

pub fn spectral_radius(poles: &[Complex64]) -> f64 {
    poles.iter().map(|p| p.norm()).fold(0.0, f64::max)
}
