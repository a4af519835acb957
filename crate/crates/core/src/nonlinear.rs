//! Open-loop simulator of the full moving-boundary PVD system.
//!
//! With `q = e v` the rescaled equations take the conservative form
//! `q_t = d_y[(1/e) A(v) v_y + e' y v]`, flux zero at `y = 0` and equal to the
//! prescribed `phi` at `y = 1`. Cell-centred finite volumes on that form keep
//! the mass bookkeeping exact and make the uniform target state a discrete
//! equilibrium.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{linear_fit, LinearFit};
use crate::linalg::BlockTridiagonal;
use crate::model::{diffusion_matrix, entropy_density, Composition, PvdParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearConfig {
    pub cells: usize,
    pub dt: f64,
    /// Tolerance for constraint clipping.
    pub eps: f64,
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        Self {
            cells: 200,
            dt: 1e-2,
            eps: 1e-8,
        }
    }
}

impl NonlinearConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cells < 2 || !(self.dt > 0.0) || !(self.eps >= 0.0) {
            return Err(Error::InvalidParameter(format!("bad nonlinear config {self:?}")));
        }
        Ok(())
    }

    pub fn h(&self) -> f64 {
        1.0 / self.cells as f64
    }
}

/// Cell averages of the rescaled volume fractions, cell-major
/// (`v[cell * n + i]` holds species `i + 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearState {
    pub n: usize,
    pub v: Vec<f64>,
    pub e: f64,
    pub t: f64,
}

impl NonlinearState {
    pub fn new(n: usize, v: Vec<f64>, e: f64, t: f64) -> Result<Self> {
        if n == 0 || v.is_empty() || !v.len().is_multiple_of(n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: v.len(),
            });
        }
        if !(e > 0.0) {
            return Err(Error::InvalidParameter(format!("thickness {e} must be positive")));
        }
        let s = Self { n, v, e, t };
        s.check_constraints(0.0)?;
        Ok(s)
    }

    pub fn uniform(u: &Composition, cells: usize, e: f64, t: f64) -> Result<Self> {
        let v = (0..cells).flat_map(|_| u.as_slice().iter().copied()).collect();
        Self::new(u.len(), v, e, t)
    }

    /// Samples `f(y)` at cell centres.
    pub fn from_fn(n: usize, cells: usize, e: f64, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let h = 1.0 / cells as f64;
        let mut v = Vec::with_capacity(n * cells);
        for j in 0..cells {
            let u = f((j as f64 + 0.5) * h);
            if u.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: u.len(),
                });
            }
            v.extend(u);
        }
        Self::new(n, v, e, 0.0)
    }

    pub fn cells(&self) -> usize {
        self.v.len() / self.n
    }

    pub fn cell(&self, j: usize) -> &[f64] {
        &self.v[j * self.n..(j + 1) * self.n]
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        (0..self.cells()).map(|j| self.v[j * self.n + i]).collect()
    }

    /// `int_0^e u_i dx = e int_0^1 v_i dy`.
    pub fn mass(&self) -> Vec<f64> {
        let h = 1.0 / self.cells() as f64;
        (0..self.n)
            .map(|i| self.e * h * self.component(i).iter().sum::<f64>())
            .collect()
    }

    fn check_constraints(&self, eps: f64) -> Result<()> {
        for j in 0..self.cells() {
            let c = self.cell(j);
            if let Some(i) = c.iter().position(|x| !(*x >= -eps)) {
                return Err(Error::ConstraintViolation {
                    node: j,
                    detail: format!("v_{} = {}", i + 1, c[i]),
                });
            }
            let s: f64 = c.iter().sum();
            if !(s <= 1.0 + eps) {
                return Err(Error::ConstraintViolation {
                    node: j,
                    detail: format!("sum of fractions {s}"),
                });
            }
        }
        Ok(())
    }

    /// Projects tiny violations (within `eps`) back onto the simplex.
    fn clip(&mut self, eps: f64) -> Result<()> {
        self.check_constraints(eps)?;
        let n = self.n;
        for c in self.v.chunks_mut(n) {
            for x in c.iter_mut() {
                *x = x.max(0.0);
            }
            let s: f64 = c.iter().sum();
            if s > 1.0 {
                c.iter_mut().for_each(|x| *x /= s);
            }
        }
        Ok(())
    }
}

/// Prescribed fluxes `phi_0..=phi_n`, piecewise constant in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxProgram {
    /// Start times of the pieces, increasing, first one `<= 0`.
    pub starts: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl FluxProgram {
    pub fn constant(phi: Vec<f64>) -> Result<Self> {
        Self::piecewise(vec![0.0], vec![phi])
    }

    pub fn piecewise(starts: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if starts.is_empty() || starts.len() != values.len() || starts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("malformed flux program".into()));
        }
        let n1 = values[0].len();
        if n1 < 2 || values.iter().any(|v| v.len() != n1) {
            return Err(Error::InvalidParameter("need n+1 >= 2 fluxes per piece".into()));
        }
        if values.iter().flatten().any(|f| !(*f >= 0.0)) {
            return Err(Error::InvalidParameter("fluxes must be nonnegative".into()));
        }
        Ok(Self { starts, values })
    }

    pub fn at(&self, t: f64) -> &[f64] {
        let k = self.starts.iter().rposition(|s| *s <= t).unwrap_or(0);
        &self.values[k]
    }
}

fn face_matrix(a: &[f64], b: &[f64], p: &PvdParams) -> Result<DMatrix<f64>> {
    let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
    diffusion_matrix(&Composition::closed(mid)?, p)
}

/// One step: `A` lagged at the current state, diffusion implicit, advection
/// explicit (central), thickness updated exactly.
pub fn step_nonlinear(
    s: &NonlinearState,
    phi: &[f64],
    p: &PvdParams,
    cfg: &NonlinearConfig,
) -> Result<NonlinearState> {
    cfg.validate()?;
    let n = s.n;
    let m = s.cells();
    if p.n() != n || phi.len() != n + 1 {
        return Err(Error::DimensionMismatch {
            expected: n + 1,
            got: phi.len(),
        });
    }
    let h = 1.0 / m as f64;
    let dt = cfg.dt;
    let ep: f64 = phi.iter().sum();
    if ep > 0.0 && dt > h * s.e / (2.0 * ep) {
        return Err(Error::InvalidParameter(format!(
            "advection CFL violated: dt = {dt} > {}",
            h * s.e / (2.0 * ep)
        )));
    }
    let e1 = s.e + dt * ep;
    let mut sys = BlockTridiagonal::zeros(m, n);
    let mut rhs: Vec<f64> = s.v.iter().map(|x| s.e * x).collect();
    for j in 0..m {
        sys.diag[j] = DMatrix::identity(n, n) * e1;
    }
    for j in 0..m - 1 {
        let d = face_matrix(s.cell(j), s.cell(j + 1), p)? * (dt / (h * h * e1));
        sys.diag[j] += &d;
        sys.diag[j + 1] += &d;
        sys.sup[j] = -&d;
        sys.sub[j] = -d;
        let y = (j + 1) as f64 * h;
        for i in 0..n {
            let adv = dt / h * ep * y * 0.5 * (s.v[j * n + i] + s.v[(j + 1) * n + i]);
            rhs[j * n + i] += adv;
            rhs[(j + 1) * n + i] -= adv;
        }
    }
    for i in 0..n {
        rhs[(m - 1) * n + i] += dt / h * phi[i + 1];
    }
    let v = sys.solve(&rhs)?;
    let mut out = NonlinearState {
        n,
        v,
        e: e1,
        t: s.t + dt,
    };
    out.clip(cfg.eps)?;
    Ok(out)
}

/// `int_0^1 h(v) dy` (midpoint rule) with the mixing entropy density.
pub fn entropy_monitor(s: &NonlinearState) -> Result<f64> {
    let h = 1.0 / s.cells() as f64;
    let mut acc = 0.0;
    for j in 0..s.cells() {
        let c = s.cell(j);
        if c.iter().any(|x| !(*x > 0.0)) || !(c.iter().sum::<f64>() < 1.0) {
            return Err(Error::SingularInput(format!(
                "cell {j} is on the boundary of the simplex"
            )));
        }
        acc += h * entropy_density(c);
    }
    Ok(acc)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpenLoopRun {
    pub u_bar: Vec<f64>,
    pub times: Vec<f64>,
    pub thickness: Vec<f64>,
    /// `residuals[i][k] = ||v_i(t_k) - u_i||_{L^1(0,1)}`
    pub residuals: Vec<Vec<f64>>,
    /// Largest `|mass(t) - mass(0) - t phi|` over the run, per species.
    pub mass_defect: Vec<f64>,
    pub final_state: NonlinearState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    /// `r_i ~ C (t+1)^(-beta)`
    pub beta: f64,
    /// Linear fit of `sqrt(t+1) r_i(t)` against `t`.
    pub envelope: LinearFit,
}

impl OpenLoopRun {
    pub fn decay_fits(&self, t_from: f64, t_to: f64) -> Vec<DecayFit> {
        let idx: Vec<usize> = (0..self.times.len())
            .filter(|&k| self.times[k] >= t_from - 1e-12 && self.times[k] <= t_to + 1e-12)
            .collect();
        let ts: Vec<f64> = idx.iter().map(|&k| self.times[k]).collect();
        let lt: Vec<f64> = ts.iter().map(|t| (t + 1.0).ln()).collect();
        self.residuals
            .iter()
            .map(|r| {
                let lr: Vec<f64> = idx.iter().map(|&k| r[k].max(1e-300).ln()).collect();
                let env: Vec<f64> = idx
                    .iter()
                    .map(|&k| (self.times[k] + 1.0).sqrt() * r[k])
                    .collect();
                DecayFit {
                    beta: -linear_fit(&lt, &lr).slope,
                    envelope: linear_fit(&ts, &env),
                }
            })
            .collect()
    }
}

fn residuals(s: &NonlinearState, u: &[f64]) -> Vec<f64> {
    let h = 1.0 / s.cells() as f64;
    (0..s.n)
        .map(|i| s.component(i).iter().map(|x| (x - u[i]).abs()).sum::<f64>() * h)
        .collect()
}

/// Runs with constant fluxes `phi_bar`; the limit composition is
/// `u_i = phi_i / sum(phi)`.
pub fn simulate_open_loop(
    u0: &NonlinearState,
    phi_bar: &[f64],
    t_end: f64,
    p: &PvdParams,
    cfg: &NonlinearConfig,
    output_every: usize,
) -> Result<OpenLoopRun> {
    let program = FluxProgram::constant(phi_bar.to_vec())?;
    let vb: f64 = phi_bar.iter().sum();
    if !(vb > 0.0) {
        return Err(Error::InvalidParameter("total flux must be positive".into()));
    }
    let u_bar: Vec<f64> = phi_bar[1..].iter().map(|f| f / vb).collect();
    let steps = crate::pde::step_count(t_end - u0.t, cfg.dt);
    let mass0 = u0.mass();
    let mut s = u0.clone();
    let mut run = OpenLoopRun {
        times: vec![s.t],
        thickness: vec![s.e],
        residuals: residuals(&s, &u_bar).into_iter().map(|r| vec![r]).collect(),
        mass_defect: vec![0.0; s.n],
        u_bar: u_bar.clone(),
        final_state: s.clone(),
    };
    for k in 0..steps {
        s = step_nonlinear(&s, program.at(s.t), p, cfg)?;
        let elapsed = s.t - u0.t;
        for (i, (m, m0)) in s.mass().iter().zip(&mass0).enumerate() {
            let d = (m - m0 - elapsed * phi_bar[i + 1]).abs();
            run.mass_defect[i] = run.mass_defect[i].max(d);
        }
        if (k + 1) % output_every.max(1) == 0 || k + 1 == steps {
            run.times.push(s.t);
            run.thickness.push(s.e);
            for (i, r) in residuals(&s, &u_bar).into_iter().enumerate() {
                run.residuals[i].push(r);
            }
        }
    }
    run.final_state = s;
    Ok(run)
}
