//! Theta-scheme steppers for the rescaled target and plant equations on the
//! fixed unit interval.
//!
//! In rescaled coordinates `y = x / e(t)` both problems read
//! `w_t = (sigma/e^2) w_yy + (v/e) y w_y - lambda w` with `w_y(0) = 0` and
//! the flux condition `(sigma/e) w_y(1) + v w(1) = psi`; the target has
//! `psi = 0`, the plant carries the boundary control.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BlockTridiagonal, Tridiagonal};
use crate::model::TargetState;
use crate::quad;

/// Linear thickness law `e(t) = e0 + v t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub e0: f64,
    pub v_bar: f64,
}

impl Growth {
    pub fn new(e0: f64, v_bar: f64) -> Result<Self> {
        if !(e0 > 0.0) || !(v_bar >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need e0 > 0 and v >= 0, got e0 = {e0}, v = {v_bar}"
            )));
        }
        Ok(Self { e0, v_bar })
    }

    #[inline]
    pub fn thickness(&self, t: f64) -> f64 {
        self.e0 + self.v_bar * t
    }
}

impl From<&TargetState> for Growth {
    fn from(t: &TargetState) -> Self {
        Self {
            e0: t.e0,
            v_bar: t.v_bar,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Nodes on `[0, 1]`.
    pub m: usize,
    pub dt: f64,
    pub theta: f64,
    /// Backward-Euler steps taken at the start of a run and after every law
    /// switch, damping the stiff modes Crank-Nicolson leaves undamped.
    pub startup_steps: usize,
    pub upwind: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            m: 200,
            dt: 1e-3,
            theta: 0.5,
            startup_steps: 2,
            upwind: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 3 {
            return Err(Error::InvalidParameter(format!("need M >= 3, got {}", self.m)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt = {} must be positive", self.dt)));
        }
        if !(0.5..=1.0).contains(&self.theta) {
            return Err(Error::InvalidParameter(format!(
                "theta = {} must lie in [1/2, 1]",
                self.theta
            )));
        }
        Ok(())
    }

    pub fn hy(&self) -> f64 {
        1.0 / (self.m - 1) as f64
    }

    /// Halves `h` and `dt` `k` times.
    pub fn refined(&self, k: u32) -> Self {
        let f = 1usize << k;
        Self {
            m: (self.m - 1) * f + 1,
            dt: self.dt / f as f64,
            ..*self
        }
    }
}

/// A field on the uniform grid of `[0, 1]` at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledField {
    pub values: Vec<f64>,
    pub t: f64,
    pub growth: Growth,
}

impl RescaledField {
    pub fn new(values: Vec<f64>, t: f64, growth: Growth) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::InvalidParameter("need at least 3 nodes".into()));
        }
        if !(growth.thickness(t) > 0.0) {
            return Err(Error::InvalidParameter(format!("thickness at t = {t} is not positive")));
        }
        Ok(Self { values, t, growth })
    }

    pub fn from_fn(m: usize, t: f64, growth: Growth, f: impl Fn(f64) -> f64) -> Result<Self> {
        let h = 1.0 / (m.max(2) - 1) as f64;
        Self::new((0..m).map(|i| f(i as f64 * h)).collect(), t, growth)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn hy(&self) -> f64 {
        1.0 / (self.values.len() - 1) as f64
    }

    pub fn thickness(&self) -> f64 {
        self.growth.thickness(self.t)
    }

    pub fn l2_norm(&self) -> f64 {
        quad::l2_norm(&self.values, self.hy())
    }

    /// Cell-wise `int_0^1 w_y^2`.
    pub fn grad_norm_sq(&self) -> f64 {
        let h = self.hy();
        self.values
            .windows(2)
            .map(|w| (w[1] - w[0]) * (w[1] - w[0]) / h)
            .sum()
    }

    pub fn boundary_value(&self) -> f64 {
        *self.values.last().expect("non-empty field")
    }

    /// Samples on the physical interval `[0, e(t)]`: `u(x) = w(x / e)`.
    pub fn to_physical(&self) -> PhysicalField {
        PhysicalField {
            l: self.thickness(),
            values: self.values.clone(),
            t: self.t,
        }
    }

    pub fn from_physical(u: &PhysicalField, growth: Growth) -> Result<Self> {
        let e = growth.thickness(u.t);
        if (e - u.l).abs() > 1e-12 * e {
            return Err(Error::GridMismatch(format!(
                "physical length {} differs from e(t) = {e}",
                u.l
            )));
        }
        Self::new(u.values.clone(), u.t, growth)
    }
}

/// Samples of a field on the moving interval `[0, l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalField {
    pub l: f64,
    pub values: Vec<f64>,
    pub t: f64,
}

impl PhysicalField {
    pub fn l2_norm(&self) -> f64 {
        quad::l2_norm(&self.values, self.l / (self.values.len() - 1) as f64)
    }
}

/// Frozen-coefficient spatial operator: `L w = tri w + psi_coef psi e_last`.
#[derive(Debug, Clone)]
pub struct Operator {
    pub tri: Tridiagonal,
    pub psi_coef: f64,
}

pub fn operator(growth: Growth, t: f64, lambda: f64, sigma: f64, m: usize, upwind: bool) -> Operator {
    let e = growth.thickness(t);
    let h = 1.0 / (m - 1) as f64;
    let a = sigma / (e * e);
    let b = growth.v_bar / e;
    let mut tri = Tridiagonal::zeros(m);
    tri.diag[0] = -2.0 * a / (h * h) - lambda;
    tri.sup[0] = 2.0 * a / (h * h);
    for k in 1..m - 1 {
        let y = k as f64 * h;
        if upwind {
            tri.sub[k - 1] = a / (h * h);
            tri.diag[k] = -2.0 * a / (h * h) - b * y / h - lambda;
            tri.sup[k] = a / (h * h) + b * y / h;
        } else {
            tri.sub[k - 1] = a / (h * h) - b * y / (2.0 * h);
            tri.diag[k] = -2.0 * a / (h * h) - lambda;
            tri.sup[k] = a / (h * h) + b * y / (2.0 * h);
        }
    }
    // Ghost node from the flux condition: w_M = w_{M-2} + 2h (e/sigma)(psi - v w).
    let psi_coef = (2.0 * a / h + b) * e / sigma;
    tri.sub[m - 2] = 2.0 * a / (h * h);
    tri.diag[m - 1] = -2.0 * a / (h * h) - lambda - psi_coef * growth.v_bar;
    Operator { tri, psi_coef }
}

/// Boundary input of one step.
#[derive(Debug, Clone, Copy)]
pub enum Boundary<'a> {
    /// Prescribed flux at the old and the new time level.
    Flux { old: f64, new: f64 },
    /// Linear state feedback `psi = row . w`, rows at the old/new level; the
    /// new level is treated implicitly.
    Feedback { old: &'a [f64], new: &'a [f64] },
}

pub type Source<'a> = &'a (dyn Fn(f64, f64) -> f64 + Sync);

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub field: RescaledField,
    /// Boundary input at the new time level.
    pub psi: f64,
}

/// One theta-step of size `dt` with coefficients frozen at mid-step.
#[allow(clippy::too_many_arguments)]
pub fn theta_step(
    w: &RescaledField,
    lambda: f64,
    sigma: f64,
    boundary: Boundary<'_>,
    source: Option<Source<'_>>,
    dt: f64,
    theta: f64,
    upwind: bool,
) -> Result<StepOutput> {
    let m = w.len();
    let t = w.t;
    let op = operator(w.growth, t + 0.5 * dt, lambda, sigma, m, upwind);
    let lw = op.tri.mul_vec(&w.values);
    let mut rhs: Vec<f64> = w
        .values
        .iter()
        .zip(&lw)
        .map(|(v, l)| v + dt * (1.0 - theta) * l)
        .collect();
    if let Some(s) = source {
        let h = w.hy();
        for (k, r) in rhs.iter_mut().enumerate() {
            let y = k as f64 * h;
            *r += dt * ((1.0 - theta) * s(t, y) + theta * s(t + dt, y));
        }
    }
    let lhs = op.tri.affine(1.0, -dt * theta);
    let psi = match boundary {
        Boundary::Flux { old, new } => {
            rhs[m - 1] += dt * op.psi_coef * ((1.0 - theta) * old + theta * new);
            lhs.solve_in_place(&mut rhs)?;
            new
        }
        Boundary::Feedback { old, new } => {
            if old.len() != m || new.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: old.len().min(new.len()),
                });
            }
            let psi_old = crate::linalg::dot(old, &w.values);
            rhs[m - 1] += dt * op.psi_coef * (1.0 - theta) * psi_old;
            let row: Vec<f64> = new.iter().map(|r| -dt * theta * op.psi_coef * r).collect();
            lhs.solve_last_row_update(&row, &mut rhs)?;
            crate::linalg::dot(new, &rhs)
        }
    };
    Ok(StepOutput {
        field: RescaledField {
            values: rhs,
            t: t + dt,
            growth: w.growth,
        },
        psi,
    })
}

/// Target step: damped equation with the homogeneous flux condition.
pub fn step_target(w: &RescaledField, lambda: f64, sigma: f64, cfg: &SolverConfig) -> Result<RescaledField> {
    Ok(theta_step(
        w,
        lambda,
        sigma,
        Boundary::Flux { old: 0.0, new: 0.0 },
        None,
        cfg.dt,
        cfg.theta,
        cfg.upwind,
    )?
    .field)
}

/// Plant step: undamped equation driven by the boundary flux `dpsi`.
pub fn step_plant(z: &RescaledField, sigma: f64, dpsi: f64, cfg: &SolverConfig) -> Result<RescaledField> {
    Ok(theta_step(
        z,
        0.0,
        sigma,
        Boundary::Flux { old: dpsi, new: dpsi },
        None,
        cfg.dt,
        cfg.theta,
        cfg.upwind,
    )?
    .field)
}

/// Running totals of the energy estimate, each time integral by the
/// trapezoid rule in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub t: f64,
    /// `1/2 sup_s ||w(s)||^2`
    pub sup_term: f64,
    /// `int sigma/e(s)^2 ||w_y||^2 ds`
    pub gradient_term: f64,
    /// `int v/(2 e(s)) w(s,1)^2 ds`
    pub boundary_term: f64,
    /// `int (v/(2 e(s)) + lambda) ||w||^2 ds`
    pub damping_term: f64,
    /// Same terms with the coefficients frozen at `e(t)` as in the stated
    /// estimate; never larger than the time-resolved sum.
    pub frozen_total: f64,
    pub initial: f64,
}

impl EnergyLedger {
    pub fn total(&self) -> f64 {
        self.sup_term + self.gradient_term + self.boundary_term + self.damping_term
    }

    /// `total / ||w0||^2`; the estimate asserts this is at most one.
    pub fn ratio(&self) -> f64 {
        if self.initial == 0.0 {
            if self.total() == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.total().max(self.frozen_total) / self.initial
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct LedgerAcc {
    sup: f64,
    grad: f64,
    bdry: f64,
    damp: f64,
    grad_raw: f64,
    bdry_raw: f64,
    mass_raw: f64,
}

impl LedgerAcc {
    fn add(&mut self, dt: f64, a: &Sample, b: &Sample, lambda: f64) {
        let half = 0.5 * dt;
        self.grad += half * (a.sigma_e2 * a.grad + b.sigma_e2 * b.grad);
        self.bdry += half * (a.v_2e * a.bdry + b.v_2e * b.bdry);
        self.damp += half * ((a.v_2e + lambda) * a.mass + (b.v_2e + lambda) * b.mass);
        self.grad_raw += half * (a.grad + b.grad);
        self.bdry_raw += half * (a.bdry + b.bdry);
        self.mass_raw += half * (a.mass + b.mass);
    }
}

struct Sample {
    sigma_e2: f64,
    v_2e: f64,
    grad: f64,
    bdry: f64,
    mass: f64,
}

fn sample(w: &RescaledField, sigma: f64) -> Sample {
    let e = w.thickness();
    let b = w.boundary_value();
    Sample {
        sigma_e2: sigma / (e * e),
        v_2e: w.growth.v_bar / (2.0 * e),
        grad: w.grad_norm_sq(),
        bdry: b * b,
        mass: w.l2_norm().powi(2),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub l2_norms: Vec<f64>,
    pub boundary_values: Vec<f64>,
    pub controls: Vec<f64>,
    pub ledger: Vec<EnergyLedger>,
    pub final_field: RescaledField,
    /// Optional full-field snapshots `(t, values)`.
    pub snapshots: Vec<(f64, Vec<f64>)>,
}

/// Number of steps covering `[0, t_end]` with step at most `dt`.
pub fn step_count(t_end: f64, dt: f64) -> usize {
    ((t_end / dt) - 1e-9).ceil().max(1.0) as usize
}

/// Runs the target problem to time `t_end`, recording every
/// `output_every`-th step and the energy ledger.
pub fn simulate_target(
    w0: &RescaledField,
    lambda: f64,
    sigma: f64,
    t_end: f64,
    cfg: &SolverConfig,
    output_every: usize,
) -> Result<Trajectory> {
    simulate_target_with_snapshots(w0, lambda, sigma, t_end, cfg, output_every, &[])
}

pub fn simulate_target_with_snapshots(
    w0: &RescaledField,
    lambda: f64,
    sigma: f64,
    t_end: f64,
    cfg: &SolverConfig,
    output_every: usize,
    snapshot_times: &[f64],
) -> Result<Trajectory> {
    cfg.validate()?;
    if !(t_end > 0.0) {
        return Err(Error::InvalidParameter(format!("T = {t_end} must be positive")));
    }
    let steps = step_count(t_end, cfg.dt);
    let dt = t_end / steps as f64;
    let every = output_every.max(1);
    let initial = w0.l2_norm().powi(2);
    let mut w = w0.clone();
    let mut acc = LedgerAcc {
        sup: 0.5 * initial,
        ..Default::default()
    };
    let mut prev = sample(&w, sigma);
    let mut traj = Trajectory {
        times: vec![w.t],
        l2_norms: vec![w.l2_norm()],
        boundary_values: vec![w.boundary_value()],
        controls: vec![0.0],
        ledger: vec![ledger_entry(&acc, &w, lambda, sigma, initial)],
        final_field: w.clone(),
        snapshots: Vec::new(),
    };
    let mut snap_iter = snapshot_times.iter().copied().peekable();
    while let Some(&ts) = snap_iter.peek() {
        if ts <= w.t + 0.5 * dt {
            traj.snapshots.push((w.t, w.values.clone()));
            snap_iter.next();
        } else {
            break;
        }
    }
    for s in 0..steps {
        let theta = if s < cfg.startup_steps { 1.0 } else { cfg.theta };
        w = theta_step(
            &w,
            lambda,
            sigma,
            Boundary::Flux { old: 0.0, new: 0.0 },
            None,
            dt,
            theta,
            cfg.upwind,
        )?
        .field;
        let cur = sample(&w, sigma);
        acc.add(dt, &prev, &cur, lambda);
        acc.sup = acc.sup.max(0.5 * cur.mass);
        prev = cur;
        while let Some(&ts) = snap_iter.peek() {
            if ts <= w.t + 0.5 * dt {
                traj.snapshots.push((w.t, w.values.clone()));
                snap_iter.next();
            } else {
                break;
            }
        }
        if (s + 1) % every == 0 || s + 1 == steps {
            traj.times.push(w.t);
            traj.l2_norms.push(w.l2_norm());
            traj.boundary_values.push(w.boundary_value());
            traj.controls.push(0.0);
            traj.ledger.push(ledger_entry(&acc, &w, lambda, sigma, initial));
        }
    }
    traj.final_field = w;
    Ok(traj)
}

fn ledger_entry(acc: &LedgerAcc, w: &RescaledField, lambda: f64, sigma: f64, initial: f64) -> EnergyLedger {
    let e = w.thickness();
    let v_2e = w.growth.v_bar / (2.0 * e);
    EnergyLedger {
        t: w.t,
        sup_term: acc.sup,
        gradient_term: acc.grad,
        boundary_term: acc.bdry,
        damping_term: acc.damp,
        frozen_total: acc.sup
            + sigma / (e * e) * acc.grad_raw
            + v_2e * acc.bdry_raw
            + (v_2e + lambda) * acc.mass_raw,
        initial,
    }
}

/// Vector field `u[node][component]` on the unit interval, node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub n: usize,
    pub values: Vec<f64>,
    pub t: f64,
    pub growth: Growth,
}

impl VectorField {
    pub fn nodes(&self) -> usize {
        self.values.len() / self.n
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.n).copied().collect()
    }

    pub fn from_components(comps: &[Vec<f64>], t: f64, growth: Growth) -> Self {
        let n = comps.len();
        let m = comps[0].len();
        let mut values = vec![0.0; n * m];
        for (c, comp) in comps.iter().enumerate() {
            for (k, v) in comp.iter().enumerate() {
                values[k * n + c] = *v;
            }
        }
        Self {
            n,
            values,
            t,
            growth,
        }
    }
}

/// One theta-step of the coupled linearized system
/// `u_t = (A/e^2) u_yy + (v/e) y u_y`, `(A/e) u_y(1) + v u(1) = psi`,
/// with `psi = sum_k C_k u_k` (dense boundary feedback, `coupling[k] = C_k`)
/// at the new level. Block-tridiagonal solve with a rank-n Woodbury update.
pub fn theta_step_vector(
    u: &VectorField,
    a: &DMatrix<f64>,
    coupling_old: &[DMatrix<f64>],
    coupling_new: &[DMatrix<f64>],
    dt: f64,
    theta: f64,
) -> Result<VectorField> {
    let n = u.n;
    let m = u.nodes();
    if a.nrows() != n || coupling_old.len() != m || coupling_new.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: coupling_new.len(),
        });
    }
    let e = u.growth.thickness(u.t + 0.5 * dt);
    let v = u.growth.v_bar;
    let h = 1.0 / (m - 1) as f64;
    let ainv = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularInput("diffusion matrix is singular".into()))?;
    let id = DMatrix::<f64>::identity(n, n);
    let diff = a / (e * e * h * h);
    let bpsi = &id * (2.0 / (e * h)) + &ainv * v;

    let mut op = BlockTridiagonal::zeros(m, n);
    op.diag[0] = &diff * -2.0;
    op.sup[0] = &diff * 2.0;
    for k in 1..m - 1 {
        let adv = v / e * (k as f64 * h) / (2.0 * h);
        op.sub[k - 1] = &diff - &id * adv;
        op.diag[k] = &diff * -2.0;
        op.sup[k] = &diff + &id * adv;
    }
    op.sub[m - 2] = &diff * 2.0;
    op.diag[m - 1] = &diff * -2.0 - &bpsi * v;

    let lu = op.mul_vec(&u.values);
    let mut rhs: Vec<f64> = u
        .values
        .iter()
        .zip(&lu)
        .map(|(x, l)| x + dt * (1.0 - theta) * l)
        .collect();
    let mut psi_old = DVector::zeros(n);
    for (k, c) in coupling_old.iter().enumerate() {
        psi_old += c * DVector::from_column_slice(&u.values[k * n..(k + 1) * n]);
    }
    let kick = &bpsi * psi_old * (dt * (1.0 - theta));
    for c in 0..n {
        rhs[(m - 1) * n + c] += kick[c];
    }

    let mut lhs = op;
    for d in lhs.diag.iter_mut() {
        *d = &id - &*d * (dt * theta);
    }
    for s in lhs.sub.iter_mut().chain(lhs.sup.iter_mut()) {
        *s *= -dt * theta;
    }
    let mut vt = DMatrix::zeros(n, n * m);
    for (k, c) in coupling_new.iter().enumerate() {
        let blk = &bpsi * c * (-dt * theta);
        vt.view_mut((0, k * n), (n, n)).copy_from(&blk);
    }
    let values = lhs.solve_last_block_update(&vt, &rhs)?;
    Ok(VectorField {
        n,
        values,
        t: u.t + dt,
        growth: u.growth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn growth() -> Growth {
        Growth::new(1.0, 0.25).unwrap()
    }

    #[test]
    fn zero_stays_zero() {
        let cfg = SolverConfig::default();
        let w = RescaledField::from_fn(50, 0.0, growth(), |_| 0.0).unwrap();
        let w1 = step_target(&w, 5.0, 1.0, &cfg).unwrap();
        assert!(w1.values.iter().all(|v| *v == 0.0));
        let z1 = step_plant(&w, 1.0, 0.0, &cfg).unwrap();
        assert!(z1.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn strong_damping_decreases_norm() {
        let w = RescaledField::from_fn(40, 0.0, growth(), |y| 1.0 + y * y).unwrap();
        for lambda in [1.0, 10.0, 100.0] {
            let cfg = SolverConfig {
                m: 40,
                dt: 0.1 / lambda,
                ..Default::default()
            };
            assert!(step_target(&w, lambda, 1.0, &cfg).unwrap().l2_norm() < w.l2_norm());
        }
    }

    #[test]
    fn plant_without_input_does_not_grow() {
        let cfg = SolverConfig {
            m: 60,
            dt: 1e-3,
            ..Default::default()
        };
        let mut z = RescaledField::from_fn(60, 0.0, growth(), |_| 0.7).unwrap();
        let mut prev = z.l2_norm();
        for _ in 0..300 {
            z = step_plant(&z, 1.0, 0.0, &cfg).unwrap();
            let n = z.l2_norm();
            assert!(n <= prev * (1.0 + 1e-12));
            prev = n;
        }
    }

    #[test]
    fn physical_round_trip() {
        let g = Growth::new(1.0, 0.25).unwrap();
        let w = RescaledField::from_fn(101, 0.0, g, |y| (2.0 * y).cos()).unwrap();
        let u = w.to_physical();
        assert_eq!(u.values, w.values);
        assert_eq!(RescaledField::from_physical(&u, g).unwrap(), w);
        let w2 = RescaledField::from_fn(101, 2.0, g, |y| (2.0 * y).cos()).unwrap();
        let u2 = w2.to_physical();
        assert!((u2.l2_norm() - 1.5_f64.sqrt() * w2.l2_norm()).abs() < 1e-14);
    }

    #[test]
    fn feedback_row_matches_explicit_linear_solve() {
        // Implicit feedback through Sherman-Morrison against a dense solve.
        let g = growth();
        let m = 12;
        let w = RescaledField::from_fn(m, 0.1, g, |y| (3.0 * y).sin() + 0.5).unwrap();
        let row: Vec<f64> = (0..m).map(|k| 0.1 * (k as f64).cos()).collect();
        let (dt, theta) = (0.01, 0.5);
        let out = theta_step(
            &w,
            2.0,
            1.3,
            Boundary::Feedback { old: &row, new: &row },
            None,
            dt,
            theta,
            false,
        )
        .unwrap();
        let op = operator(g, 0.1 + 0.5 * dt, 2.0, 1.3, m, false);
        let mut dense = DMatrix::<f64>::identity(m, m);
        let mut expl = DVector::from_vec(w.values.clone());
        let lw = DVector::from_vec(op.tri.mul_vec(&w.values));
        expl += lw * (dt * (1.0 - theta));
        expl[m - 1] += dt * (1.0 - theta) * op.psi_coef * crate::linalg::dot(&row, &w.values);
        for i in 0..m {
            dense[(i, i)] -= dt * theta * op.tri.diag[i];
            if i > 0 {
                dense[(i, i - 1)] -= dt * theta * op.tri.sub[i - 1];
            }
            if i + 1 < m {
                dense[(i, i + 1)] -= dt * theta * op.tri.sup[i];
            }
        }
        for k in 0..m {
            dense[(m - 1, k)] -= dt * theta * op.psi_coef * row[k];
        }
        let x = dense.lu().solve(&expl).unwrap();
        for k in 0..m {
            assert!((x[k] - out.field.values[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn vector_step_with_scalar_matrix_matches_scalar_step() {
        let g = growth();
        let m = 30;
        let w = RescaledField::from_fn(m, 0.0, g, |y| (2.0 * y).cos()).unwrap();
        let a = DMatrix::from_element(1, 1, 1.7);
        let zero = vec![DMatrix::zeros(1, 1); m];
        let u = VectorField::from_components(std::slice::from_ref(&w.values), 0.0, g);
        let uv = theta_step_vector(&u, &a, &zero, &zero, 1e-3, 0.5).unwrap();
        let ws = theta_step(&w, 0.0, 1.7, Boundary::Flux { old: 0.0, new: 0.0 }, None, 1e-3, 0.5, false)
            .unwrap()
            .field;
        for (p, q) in uv.values.iter().zip(&ws.values) {
            assert!((p - q).abs() < 1e-13);
        }
    }
}
