//! Banded solvers used by the steppers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tridiagonal matrix stored by diagonals. `sub[i]` couples row `i+1` to
/// column `i`; `sup[i]` couples row `i` to column `i+1`.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self {
            sub: vec![0.0; n.saturating_sub(1)],
            diag: vec![0.0; n],
            sup: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n);
        t.diag.iter_mut().for_each(|d| *d = 1.0);
        t
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `y = self * x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut acc = self.diag[i] * x[i];
                if i > 0 {
                    acc += self.sub[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    acc += self.sup[i] * x[i + 1];
                }
                acc
            })
            .collect()
    }

    /// `a*I + b*self`
    pub fn affine(&self, a: f64, b: f64) -> Self {
        Self {
            sub: self.sub.iter().map(|v| b * v).collect(),
            diag: self.diag.iter().map(|v| a + b * v).collect(),
            sup: self.sup.iter().map(|v| b * v).collect(),
        }
    }

    /// Thomas algorithm, in place on `rhs`. No pivoting: callers only pass
    /// diagonally dominant systems.
    pub fn solve_in_place(&self, rhs: &mut [f64]) -> Result<()> {
        let n = self.len();
        if rhs.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: rhs.len(),
            });
        }
        if n == 0 {
            return Ok(());
        }
        let mut c = vec![0.0; n];
        let mut beta = self.diag[0];
        check_pivot(beta, 0)?;
        rhs[0] /= beta;
        for i in 1..n {
            c[i - 1] = self.sup[i - 1] / beta;
            beta = self.diag[i] - self.sub[i - 1] * c[i - 1];
            check_pivot(beta, i)?;
            rhs[i] = (rhs[i] - self.sub[i - 1] * rhs[i - 1]) / beta;
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= c[i] * rhs[i + 1];
        }
        Ok(())
    }

    /// Solves `(self + e_last * row^T) x = rhs` by Sherman-Morrison, where
    /// `row` is a dense coupling of the last equation to every unknown.
    pub fn solve_last_row_update(&self, row: &[f64], rhs: &mut [f64]) -> Result<()> {
        let n = self.len();
        if row.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: row.len(),
            });
        }
        self.solve_in_place(rhs)?;
        let mut z = vec![0.0; n];
        z[n - 1] = 1.0;
        self.solve_in_place(&mut z)?;
        let denom = 1.0 + dot(row, &z);
        if denom.abs() < 1e-300 {
            return Err(Error::LinearSolve(
                "rank-one update makes the system singular".into(),
            ));
        }
        let coef = dot(row, rhs) / denom;
        rhs.iter_mut().zip(&z).for_each(|(x, zi)| *x -= coef * zi);
        Ok(())
    }
}

fn check_pivot(p: f64, i: usize) -> Result<()> {
    if p.abs() < 1e-300 || !p.is_finite() {
        Err(Error::LinearSolve(format!("zero pivot at row {i}")))
    } else {
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Block-tridiagonal matrix with square `n x n` blocks; unknowns are laid
/// out node-major (`x[node * n + component]`).
#[derive(Debug, Clone)]
pub struct BlockTridiagonal {
    pub block: usize,
    pub sub: Vec<DMatrix<f64>>,
    pub diag: Vec<DMatrix<f64>>,
    pub sup: Vec<DMatrix<f64>>,
}

impl BlockTridiagonal {
    pub fn zeros(nodes: usize, block: usize) -> Self {
        let z = DMatrix::zeros(block, block);
        Self {
            block,
            sub: vec![z.clone(); nodes.saturating_sub(1)],
            diag: vec![z.clone(); nodes],
            sup: vec![z; nodes.saturating_sub(1)],
        }
    }

    pub fn nodes(&self) -> usize {
        self.diag.len()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.block;
        let m = self.nodes();
        let seg = |k: usize| DVector::from_column_slice(&x[k * n..(k + 1) * n]);
        let mut out = vec![0.0; n * m];
        for k in 0..m {
            let mut acc = &self.diag[k] * seg(k);
            if k > 0 {
                acc += &self.sub[k - 1] * seg(k - 1);
            }
            if k + 1 < m {
                acc += &self.sup[k] * seg(k + 1);
            }
            out[k * n..(k + 1) * n].copy_from_slice(acc.as_slice());
        }
        out
    }

    /// Block Thomas algorithm for several right-hand sides at once
    /// (`rhs` has `nodes * block` rows).
    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.block;
        let m = self.nodes();
        if rhs.nrows() != n * m {
            return Err(Error::DimensionMismatch {
                expected: n * m,
                got: rhs.nrows(),
            });
        }
        let cols = rhs.ncols();
        let mut c: Vec<DMatrix<f64>> = Vec::with_capacity(m);
        let mut d: Vec<DMatrix<f64>> = Vec::with_capacity(m);
        for k in 0..m {
            let mut beta = self.diag[k].clone();
            let mut r = rhs.rows(k * n, n).into_owned();
            if k > 0 {
                beta -= &self.sub[k - 1] * &c[k - 1];
                r -= &self.sub[k - 1] * &d[k - 1];
            }
            let lu = beta.lu();
            if k + 1 < m {
                let ck = lu
                    .solve(&self.sup[k])
                    .ok_or_else(|| Error::LinearSolve(format!("singular pivot block {k}")))?;
                c.push(ck);
            } else {
                c.push(DMatrix::zeros(n, n));
            }
            let dk = lu
                .solve(&r)
                .ok_or_else(|| Error::LinearSolve(format!("singular pivot block {k}")))?;
            d.push(dk);
        }
        let mut x = DMatrix::zeros(n * m, cols);
        let mut next = d[m - 1].clone();
        x.rows_mut((m - 1) * n, n).copy_from(&next);
        for k in (0..m - 1).rev() {
            let xk = &d[k] - &c[k] * &next;
            x.rows_mut(k * n, n).copy_from(&xk);
            next = xk;
        }
        Ok(x)
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let b = DMatrix::from_column_slice(rhs.len(), 1, rhs);
        Ok(self.solve_matrix(&b)?.column(0).iter().copied().collect())
    }

    /// Solves `(self + U V^T) x = rhs` where `U` selects the equations of the
    /// last node and `coupling = V^T` (`block x nodes*block`) is dense.
    pub fn solve_last_block_update(
        &self,
        coupling: &DMatrix<f64>,
        rhs: &[f64],
    ) -> Result<Vec<f64>> {
        let n = self.block;
        let m = self.nodes();
        let dim = n * m;
        if coupling.nrows() != n || coupling.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: coupling.ncols(),
            });
        }
        let mut b = DMatrix::zeros(dim, n + 1);
        for (r, v) in rhs.iter().enumerate() {
            b[(r, 0)] = *v;
        }
        for c in 0..n {
            b[((m - 1) * n + c, c + 1)] = 1.0;
        }
        let sol = self.solve_matrix(&b)?;
        let y = sol.column(0).into_owned();
        let z = sol.columns(1, n).into_owned();
        let small = DMatrix::identity(n, n) + coupling * &z;
        let corr = small
            .lu()
            .solve(&(coupling * &y))
            .ok_or_else(|| Error::LinearSolve("singular capacitance matrix".into()))?;
        let x = y - z * corr;
        Ok(x.iter().copied().collect())
    }
}
