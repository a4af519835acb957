//! Volterra transforms of the second kind and the adjoint, with trapezoid
//! quadrature on grids aligned with the kernel's triangle grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kernel::KernelSolution;
use crate::quad;

/// Samples on the uniform grid of `[0, l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledField {
    pub l: f64,
    pub values: Vec<f64>,
}

impl SampledField {
    pub fn new(l: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 || !(l > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sampled field needs l > 0 and >= 2 samples (l = {l}, n = {})",
                values.len()
            )));
        }
        Ok(Self { l, values })
    }

    pub fn from_fn(l: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let h = l / (n.max(2) - 1) as f64;
        Self::new(l, (0..n).map(|i| f(i as f64 * h)).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn h(&self) -> f64 {
        self.l / (self.values.len() - 1) as f64
    }

    pub fn l2_norm(&self) -> f64 {
        quad::l2_norm(&self.values, self.h())
    }

    pub fn inner(&self, other: &Self) -> f64 {
        quad::inner(&self.values, &other.values, self.h())
    }
}

fn check_grid(k: &KernelSolution, f: &SampledField) -> Result<()> {
    let g = k.grid();
    if g.n != f.len() || (g.l - f.l).abs() > 1e-12 * g.l.max(1.0) {
        return Err(Error::GridMismatch(format!(
            "kernel grid (L = {}, N = {}) vs field (L = {}, N = {})",
            g.l,
            g.n,
            f.l,
            f.len()
        )));
    }
    Ok(())
}

fn volterra(k: &KernelSolution, f: &SampledField, sign: f64, exec: Exec) -> Result<SampledField> {
    check_grid(k, f)?;
    let h = f.h();
    let v = &f.values;
    let values = exec.map(v.len(), |i| {
        if i == 0 {
            return v[0];
        }
        v[i] + sign * quad::inner(k.row(i), &v[..=i], h)
    });
    SampledField::new(f.l, values)
}

/// `(Tf)(x) = f(x) - int_0^x k(x, y) f(y) dy`.
pub fn apply_forward(k: &KernelSolution, f: &SampledField) -> Result<SampledField> {
    volterra(k, f, -1.0, Exec::default())
}

pub fn apply_forward_with(k: &KernelSolution, f: &SampledField, exec: Exec) -> Result<SampledField> {
    volterra(k, f, -1.0, exec)
}

/// `(T^{-1}g)(x) = g(x) + int_0^x l(x, y) g(y) dy`.
pub fn apply_inverse(l: &KernelSolution, g: &SampledField) -> Result<SampledField> {
    volterra(l, g, 1.0, Exec::default())
}

pub fn apply_inverse_with(l: &KernelSolution, g: &SampledField, exec: Exec) -> Result<SampledField> {
    volterra(l, g, 1.0, exec)
}

/// `(Gf)(y) = f(y) - int_y^L k(x, y) f(x) dx`.
pub fn apply_adjoint(k: &KernelSolution, f: &SampledField) -> Result<SampledField> {
    apply_adjoint_with(k, f, Exec::default())
}

pub fn apply_adjoint_with(k: &KernelSolution, f: &SampledField, exec: Exec) -> Result<SampledField> {
    check_grid(k, f)?;
    let n = f.len();
    let h = f.h();
    let v = &f.values;
    let values = exec.map(n, |j| {
        if j + 1 == n {
            return v[j];
        }
        let col: Vec<f64> = (j..n).map(|i| k.at(i, j) * v[i]).collect();
        v[j] - quad::trapezoid(&col, h)
    });
    SampledField::new(f.l, values)
}
