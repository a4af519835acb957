//! PVD cross-diffusion matrices, Boltzmann entropy, mobility, target states
//! and the spectral decoupling of the linearized system.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cross-diffusion coefficients `K_ij`, `0 <= i != j <= n`, stored as a full
/// symmetric `(n+1) x (n+1)` table whose diagonal is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvdParams {
    n: usize,
    k: Vec<Vec<f64>>,
}

impl PvdParams {
    pub fn new(k: Vec<Vec<f64>>) -> Result<Self> {
        let size = k.len();
        if size < 2 {
            return Err(Error::InvalidParameter(
                "need at least species 0 and 1".into(),
            ));
        }
        for (i, row) in k.iter().enumerate() {
            if row.len() != size {
                return Err(Error::DimensionMismatch {
                    expected: size,
                    got: row.len(),
                });
            }
            for j in 0..size {
                if i == j {
                    continue;
                }
                let (a, b) = (k[i][j], k[j][i]);
                if !(a > 0.0) || !a.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "K[{i}][{j}] = {a} must be positive"
                    )));
                }
                if a != b {
                    return Err(Error::InvalidParameter(format!(
                        "K is not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(Self { n: size - 1, k })
    }

    /// Builds the table from the strictly-upper pairs `(i, j, K_ij)`.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize, f64)]) -> Result<Self> {
        let mut k = vec![vec![0.0; n + 1]; n + 1];
        for &(i, j, v) in pairs {
            if i > n || j > n || i == j {
                return Err(Error::InvalidParameter(format!("bad pair ({i}, {j})")));
            }
            k[i][j] = v;
            k[j][i] = v;
        }
        Self::new(k)
    }

    pub fn uniform(n: usize, kappa: f64) -> Result<Self> {
        let k = (0..=n)
            .map(|i| (0..=n).map(|j| if i == j { 0.0 } else { kappa }).collect())
            .collect();
        Self::new(k)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn k(&self, i: usize, j: usize) -> f64 {
        self.k[i][j]
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.k
    }

    /// Relabels species `a`, `b` (both >= 1).
    pub fn swapped(&self, a: usize, b: usize) -> Self {
        let perm = |i: usize| {
            if i == a {
                b
            } else if i == b {
                a
            } else {
                i
            }
        };
        let size = self.n + 1;
        let k = (0..size)
            .map(|i| (0..size).map(|j| self.k[perm(i)][perm(j)]).collect())
            .collect();
        Self { n: self.n, k }
    }
}

/// Volume fractions of species `1..=n`; species 0 fills the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    u: Vec<f64>,
}

impl Composition {
    /// Strict interior of the simplex.
    pub fn new(u: Vec<f64>) -> Result<Self> {
        if u.is_empty() {
            return Err(Error::InvalidParameter("empty composition".into()));
        }
        if let Some(i) = u.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::SingularInput(format!("u[{i}] = {} is not positive", u[i])));
        }
        let rho: f64 = u.iter().sum();
        if !(rho < 1.0) {
            return Err(Error::SingularInput(format!("sum of fractions {rho} >= 1")));
        }
        Ok(Self { u })
    }

    /// Closure of the simplex; only `diffusion_matrix` accepts such points.
    pub fn closed(u: Vec<f64>) -> Result<Self> {
        if u.is_empty() {
            return Err(Error::InvalidParameter("empty composition".into()));
        }
        if u.iter().any(|v| !(*v >= 0.0)) || !(u.iter().sum::<f64>() <= 1.0) {
            return Err(Error::SingularInput("composition outside the closed simplex".into()));
        }
        Ok(Self { u })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.u
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn rho(&self) -> f64 {
        self.u.iter().sum()
    }

    fn is_interior(&self) -> bool {
        self.u.iter().all(|v| *v > 0.0) && self.rho() < 1.0
    }

    fn require_interior(&self) -> Result<()> {
        if self.is_interior() {
            Ok(())
        } else {
            Err(Error::SingularInput(
                "entropy is singular on the boundary of the simplex".into(),
            ))
        }
    }
}

fn check_dims(u: &Composition, p: &PvdParams) -> Result<()> {
    if u.len() != p.n() {
        Err(Error::DimensionMismatch {
            expected: p.n(),
            got: u.len(),
        })
    } else {
        Ok(())
    }
}

/// Uniform equilibrium driven by constant fluxes `phi_bar[0..=n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetState {
    pub phi_bar: Vec<f64>,
    pub v_bar: f64,
    pub u_bar: Composition,
    pub e0: f64,
}

impl TargetState {
    pub fn new(phi_bar: Vec<f64>, e0: f64) -> Result<Self> {
        if phi_bar.len() < 2 {
            return Err(Error::InvalidParameter("need n+1 >= 2 fluxes".into()));
        }
        if phi_bar.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::InvalidParameter("target fluxes must be positive".into()));
        }
        if !(e0 > 0.0) {
            return Err(Error::InvalidParameter(format!("e0 = {e0} must be positive")));
        }
        let v_bar: f64 = phi_bar.iter().sum();
        let u_bar = Composition::new(phi_bar[1..].iter().map(|f| f / v_bar).collect())?;
        Ok(Self {
            phi_bar,
            v_bar,
            u_bar,
            e0,
        })
    }

    /// Scalar setting used by the single-mode scenarios: only `v_bar` and
    /// `e0` matter there.
    pub fn scalar(v_bar: f64, e0: f64) -> Result<Self> {
        Self::new(vec![0.5 * v_bar, 0.5 * v_bar], e0)
    }

    pub fn n(&self) -> usize {
        self.u_bar.len()
    }

    #[inline]
    pub fn thickness(&self, t: f64) -> f64 {
        self.e0 + self.v_bar * t
    }
}

/// `A(u)`; accepts points on the boundary of the simplex.
pub fn diffusion_matrix(u: &Composition, p: &PvdParams) -> Result<DMatrix<f64>> {
    check_dims(u, p)?;
    let n = p.n();
    let u = u.as_slice();
    Ok(DMatrix::from_fn(n, n, |r, c| {
        let (i, j) = (r + 1, c + 1);
        if r == c {
            let s: f64 = (1..=n)
                .filter(|&m| m != i)
                .map(|m| (p.k(i, m) - p.k(i, 0)) * u[m - 1])
                .sum();
            s + p.k(i, 0)
        } else {
            -(p.k(i, j) - p.k(i, 0)) * u[r]
        }
    }))
}

pub fn entropy_density(u: &[f64]) -> f64 {
    let rho: f64 = u.iter().sum();
    let xlogx = |x: f64| if x > 0.0 { x * x.ln() } else { 0.0 };
    u.iter().map(|&v| xlogx(v)).sum::<f64>() + xlogx(1.0 - rho)
}

pub fn entropy_hessian(u: &Composition) -> Result<DMatrix<f64>> {
    u.require_interior()?;
    let n = u.len();
    let s = 1.0 / (1.0 - u.rho());
    let u = u.as_slice();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 / u[i] + s
        } else {
            s
        }
    }))
}

pub fn mobility(u: &Composition, p: &PvdParams) -> Result<DMatrix<f64>> {
    check_dims(u, p)?;
    u.require_interior()?;
    let n = p.n();
    let rho = u.rho();
    let u = u.as_slice();
    Ok(DMatrix::from_fn(n, n, |r, c| {
        let (i, j) = (r + 1, c + 1);
        if r == c {
            let s: f64 = (1..=n)
                .filter(|&m| m != i)
                .map(|m| p.k(i, m) * u[r] * u[m - 1])
                .sum();
            s + p.k(i, 0) * u[r] * (1.0 - rho)
        } else {
            -p.k(i, j) * u[r] * u[c]
        }
    }))
}

/// Eigen-decomposition of `A(u_bar) = Qinv diag(sigma) Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectral {
    pub q: DMatrix<f64>,
    pub qinv: DMatrix<f64>,
    pub sigma: DVector<f64>,
}

impl Spectral {
    pub fn n(&self) -> usize {
        self.sigma.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.qinv * DMatrix::from_diagonal(&self.sigma) * &self.q
    }
}

fn symmetric_sqrt(h: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(h.clone());
    if let Some((index, &value)) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0))
    {
        return Err(Error::NonPositiveEigenvalue { index, value });
    }
    let v = &eig.eigenvectors;
    let sq = eig.eigenvalues.map(f64::sqrt);
    let half = v * DMatrix::from_diagonal(&sq) * v.transpose();
    let inv_half = v * DMatrix::from_diagonal(&sq.map(|s| 1.0 / s)) * v.transpose();
    Ok((half, inv_half))
}

/// Diagonalizes `A(u_bar)` through the symmetric matrix `H^{1/2} M H^{1/2}`.
pub fn diagonalize_at(target: &TargetState, p: &PvdParams) -> Result<Spectral> {
    let u = &target.u_bar;
    check_dims(u, p)?;
    let h = entropy_hessian(u)?;
    let m = mobility(u, p)?;
    let (hh, hh_inv) = symmetric_sqrt(&h)?;
    let mut s = &hh * m * &hh;
    s = 0.5 * (&s + s.transpose());
    let eig = SymmetricEigen::new(s);

    // Sort ascending so mode order is reproducible.
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let sigma = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    if let Some((index, &value)) = sigma.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositiveEigenvalue { index, value });
    }
    let v = DMatrix::from_fn(sigma.len(), sigma.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    let q = v.transpose() * &hh;
    let qinv = hh_inv * v;
    Ok(Spectral { q, qinv, sigma })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropicReport {
    /// Smallest eigenvalue of the symmetric part of `D^2h(u) A(u)`.
    pub min_sym_eig: f64,
    /// Sampled lower bound of `z^T D^2h A z / sum z_i^2 / u_i`.
    pub empirical_alpha: f64,
}

fn entropic_quotient(ha: &DMatrix<f64>, u: &[f64], z: &DVector<f64>) -> f64 {
    let num = z.dot(&(ha * z));
    let den: f64 = z.iter().zip(u).map(|(zi, ui)| zi * zi / ui).sum();
    num / den
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let z = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let norm = z.norm();
        if norm > 1e-3 {
            return z / norm;
        }
    }
}

/// Sampled check of the entropic structure at a fixed composition.
pub fn check_entropic(
    u: &Composition,
    p: &PvdParams,
    trials: usize,
    seed: u64,
) -> Result<EntropicReport> {
    let ha = entropy_hessian(u)? * diffusion_matrix(u, p)?;
    let sym = 0.5 * (&ha + ha.transpose());
    let min_sym_eig = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let empirical_alpha = (0..trials.max(1))
        .map(|_| entropic_quotient(&ha, u.as_slice(), &unit_vector(&mut rng, p.n())))
        .fold(f64::INFINITY, f64::min);
    Ok(EntropicReport {
        min_sym_eig,
        empirical_alpha,
    })
}

/// Draws a composition uniformly from the open simplex (Dirichlet(1,..,1)).
pub fn random_composition(rng: &mut impl Rng, n: usize) -> Composition {
    loop {
        let e: Vec<f64> = (0..=n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let s: f64 = e.iter().sum();
        let u: Vec<f64> = e[1..].iter().map(|v| v / s).collect();
        if let Ok(c) = Composition::new(u) {
            return c;
        }
    }
}

/// Minimum of the entropic quotient over random compositions and directions.
pub fn sampled_alpha(p: &PvdParams, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alpha = f64::INFINITY;
    for _ in 0..samples {
        let u = random_composition(&mut rng, p.n());
        let ha = entropy_hessian(&u)? * diffusion_matrix(&u, p)?;
        let z = unit_vector(&mut rng, p.n());
        alpha = alpha.min(entropic_quotient(&ha, u.as_slice(), &z));
    }
    Ok(alpha)
}
