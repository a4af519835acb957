//! Backstepping feedback laws, closed-loop runners, finite-time switching
//! schedules, thickness feedback and the control-variable inversion.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kernel::{self, KernelSolution, TriangleGrid};
use crate::model::{Composition, Spectral};
use crate::pde::{self, Boundary, Growth, RescaledField, SolverConfig, VectorField};
use crate::quad;
use crate::transform::{self, SampledField};

/// Feedback built from one forward kernel solved on `[0, L]` with `L` the
/// largest thickness a run will reach. Slices at earlier times are
/// restrictions of the same kernel.
#[derive(Debug, Clone)]
pub struct FeedbackLaw {
    kernel: Arc<KernelSolution>,
    pub sigma: f64,
    pub lambda: f64,
    pub growth: Growth,
}

/// `k(e, .)`, `d/dx k(e, .)` sampled on the `m`-node grid of `[0, e]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackSlices {
    pub e: f64,
    pub diag: f64,
    pub k: Vec<f64>,
    pub kx: Vec<f64>,
}

impl FeedbackLaw {
    pub fn new(lambda: f64, sigma: f64, growth: Growth, l_max: f64, kernel_nodes: usize) -> Result<Self> {
        let k = kernel::forward_kernel(lambda, sigma, l_max, kernel_nodes)?;
        Ok(Self::from_kernel(Arc::new(k), lambda, sigma, growth))
    }

    pub fn from_kernel(kernel: Arc<KernelSolution>, lambda: f64, sigma: f64, growth: Growth) -> Self {
        Self {
            kernel,
            sigma,
            lambda,
            growth,
        }
    }

    pub fn kernel(&self) -> &Arc<KernelSolution> {
        &self.kernel
    }

    fn check_reach(&self, e: f64) -> Result<()> {
        let l = self.kernel.grid().l;
        if e > l * (1.0 + 1e-12) {
            return Err(Error::GridMismatch(format!(
                "thickness {e} exceeds the kernel domain {l}"
            )));
        }
        Ok(())
    }

    /// `k(e, e)`; the diagonal trace is linear in x, so linear interpolation
    /// between stored diagonal nodes is exact.
    pub fn diag_at(&self, e: f64) -> f64 {
        let g = self.kernel.grid();
        let tr = self.kernel.diag_trace();
        let s = (e / g.h()).clamp(0.0, (g.n - 1) as f64);
        let i = (s.floor() as usize).min(g.n - 2);
        let f = s - i as f64;
        (1.0 - f) * tr[i] + f * tr[i + 1]
    }

    pub fn slices(&self, t: f64, m: usize) -> Result<FeedbackSlices> {
        let e = self.growth.thickness(t);
        self.check_reach(e)?;
        let h = e / (m - 1) as f64;
        let ys: Vec<f64> = (0..m).map(|j| (j as f64 * h).min(e)).collect();
        Ok(FeedbackSlices {
            e,
            diag: self.diag_at(e),
            k: ys.iter().map(|&y| self.kernel.eval(e, y)).collect(),
            kx: ys.iter().map(|&y| self.kernel.eval_dx(e, y)).collect(),
        })
    }

    /// Feedback as a row acting on samples of the state on the `m`-node
    /// grid (the grid is the same whether read on `[0, e]` or `[0, 1]`).
    pub fn row(&self, t: f64, m: usize) -> Result<Vec<f64>> {
        let s = self.slices(t, m)?;
        let w = quad::trapezoid_weights(m, s.e / (m - 1) as f64);
        let mut row: Vec<f64> = (0..m)
            .map(|j| w[j] * (self.sigma * s.kx[j] + self.growth.v_bar * s.k[j]))
            .collect();
        row[m - 1] += self.sigma * s.diag;
        Ok(row)
    }

    /// Local part `sigma k(e,e) zeta(e)` and integral part of the feedback.
    pub fn split(&self, t: f64, zeta: &SampledField) -> Result<(f64, f64)> {
        let m = zeta.len();
        let e = self.growth.thickness(t);
        if (zeta.l - e).abs() > 1e-12 * e {
            return Err(Error::GridMismatch(format!(
                "state sampled on [0, {}] but e(t) = {e}",
                zeta.l
            )));
        }
        let s = self.slices(t, m)?;
        let local = self.sigma * s.diag * zeta.values[m - 1];
        let dens: Vec<f64> = (0..m)
            .map(|j| (self.sigma * s.kx[j] + self.growth.v_bar * s.k[j]) * zeta.values[j])
            .collect();
        Ok((local, quad::trapezoid(&dens, zeta.h())))
    }
}

/// `delta psi = sigma k(e,e) zeta(e) + int_0^e (sigma k_x + v k)(e, y) zeta(y) dy`.
pub fn scalar_feedback(law: &FeedbackLaw, t: f64, zeta: &SampledField) -> Result<f64> {
    let (a, b) = law.split(t, zeta)?;
    Ok(a + b)
}

/// Per-mode laws for the diagonalized system.
#[derive(Debug, Clone)]
pub struct ModeLaws {
    pub spectral: Spectral,
    pub laws: Vec<FeedbackLaw>,
}

impl ModeLaws {
    pub fn new(
        spectral: Spectral,
        lambda: f64,
        growth: Growth,
        l_max: f64,
        kernel_nodes: usize,
        exec: Exec,
    ) -> Result<Self> {
        let sigmas: Vec<f64> = spectral.sigma.iter().copied().collect();
        let laws = exec
            .map_slice(&sigmas, |&s| FeedbackLaw::new(lambda, s, growth, l_max, kernel_nodes))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spectral, laws })
    }

    pub fn n(&self) -> usize {
        self.laws.len()
    }

    /// Dense boundary couplings `C_k = Qinv diag(row_i[k]) Q` such that
    /// `delta psi = sum_k C_k u_k`.
    pub fn couplings(&self, t: f64, m: usize) -> Result<Vec<DMatrix<f64>>> {
        let rows = self
            .laws
            .iter()
            .map(|l| l.row(t, m))
            .collect::<Result<Vec<_>>>()?;
        let q = &self.spectral.q;
        let qinv = &self.spectral.qinv;
        Ok((0..m)
            .map(|k| {
                let d = DVector::from_iterator(self.n(), rows.iter().map(|r| r[k]));
                qinv * DMatrix::from_diagonal(&d) * q
            })
            .collect())
    }
}

/// `z = Q du`, per-mode feedback, `delta psi = Qinv (psi_i)`.
pub fn vector_feedback(laws: &ModeLaws, t: f64, du: &[SampledField]) -> Result<Vec<f64>> {
    let n = laws.n();
    if du.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: du.len(),
        });
    }
    let modes = to_modes(&laws.spectral.q, du)?;
    let psi = modes
        .iter()
        .zip(&laws.laws)
        .map(|(z, law)| scalar_feedback(law, t, z))
        .collect::<Result<Vec<_>>>()?;
    Ok((&laws.spectral.qinv * DVector::from_vec(psi)).iter().copied().collect())
}

fn to_modes(q: &DMatrix<f64>, fields: &[SampledField]) -> Result<Vec<SampledField>> {
    let n = fields.len();
    let m = fields[0].len();
    if fields.iter().any(|f| f.len() != m) {
        return Err(Error::GridMismatch("components on different grids".into()));
    }
    let mut out = vec![vec![0.0; m]; n];
    for k in 0..m {
        for i in 0..n {
            out[i][k] = (0..n).map(|j| q[(i, j)] * fields[j].values[k]).sum();
        }
    }
    out.into_iter()
        .map(|v| SampledField::new(fields[0].l, v))
        .collect()
}

/// `delta phi_i = delta psi_i + delta theta u_i`, `delta phi_0 = delta theta - sum_i delta phi_i`.
pub fn recover_fluxes(dpsi: &[f64], dtheta: f64, u_bar: &Composition) -> Result<Vec<f64>> {
    if dpsi.len() != u_bar.len() {
        return Err(Error::DimensionMismatch {
            expected: u_bar.len(),
            got: dpsi.len(),
        });
    }
    let tail: Vec<f64> = dpsi
        .iter()
        .zip(u_bar.as_slice())
        .map(|(p, u)| p + dtheta * u)
        .collect();
    let mut out = Vec::with_capacity(tail.len() + 1);
    out.push(dtheta - tail.iter().sum::<f64>());
    out.extend(tail);
    Ok(out)
}

/// Inverse of [`recover_fluxes`]: `delta theta = sum delta phi`,
/// `delta psi_i = delta phi_i - delta theta u_i`.
pub fn control_variables(dphi: &[f64], u_bar: &Composition) -> Result<(Vec<f64>, f64)> {
    if dphi.len() != u_bar.len() + 1 {
        return Err(Error::DimensionMismatch {
            expected: u_bar.len() + 1,
            got: dphi.len(),
        });
    }
    let dtheta: f64 = dphi.iter().sum();
    let dpsi = dphi[1..]
        .iter()
        .zip(u_bar.as_slice())
        .map(|(p, u)| p - dtheta * u)
        .collect();
    Ok((dpsi, dtheta))
}

/// `delta e(t) = exp(-mu t) delta e0`.
pub fn thickness_exponential(mu: f64, de0: f64, t: f64) -> f64 {
    (-mu * t).exp() * de0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosedLoopOptions {
    /// Record every `output_every` steps.
    pub output_every: usize,
    /// Also run the target problem from `T zeta0` and track `T zeta(t)`.
    pub track_target: bool,
    /// Evaluate the transform-norm chain bound at output times.
    pub chain_bound: bool,
}

impl Default for ClosedLoopOptions {
    fn default() -> Self {
        Self {
            output_every: 10,
            track_target: true,
            chain_bound: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosedLoopRun {
    pub times: Vec<f64>,
    /// `||zeta(t)||_{L^2(0, e(t))}`
    pub norms: Vec<f64>,
    pub controls: Vec<f64>,
    /// `||g(t)||_{L^2(0, e(t))}` of the independently simulated target.
    pub target_norms: Vec<f64>,
    /// `||T zeta(t) - g(t)|| / ||g(t)||`
    pub tracking_error: Vec<f64>,
    /// `(1 + ||l||_{D_t})(1 + ||k||_{D_0}) e^{-lambda t} ||zeta0||`
    pub chain_bound: Vec<f64>,
    /// `(sigma/e) g_y(1) + v g(1)` for `g = T zeta`, relative to `||g||`.
    pub target_bc_residual: Vec<f64>,
    pub final_state: RescaledField,
}

fn physical(z: &RescaledField) -> Result<SampledField> {
    SampledField::new(z.thickness(), z.values.clone())
}

fn restricted(k: &KernelSolution, e: f64, m: usize) -> Result<KernelSolution> {
    k.resample(TriangleGrid::new(e, m)?)
}

/// Scalar closed loop from `z0` (rescaled samples at time `z0.t`) to `t_end`.
/// `inverse` is only needed for the chain bound.
pub fn run_closed_loop(
    law: &FeedbackLaw,
    inverse: Option<&KernelSolution>,
    z0: &RescaledField,
    t_end: f64,
    cfg: &SolverConfig,
    opts: &ClosedLoopOptions,
) -> Result<ClosedLoopRun> {
    cfg.validate()?;
    let m = z0.len();
    let span = t_end - z0.t;
    if !(span > 0.0) {
        return Err(Error::InvalidParameter("end time must follow start time".into()));
    }
    let steps = pde::step_count(span, cfg.dt);
    let dt = span / steps as f64;
    let every = opts.output_every.max(1);
    let lambda = law.lambda;
    let sigma = law.sigma;

    let k_small = |t: f64| restricted(law.kernel(), law.growth.thickness(t), m);
    let k0 = k_small(z0.t)?;
    let zeta0 = physical(z0)?;
    let mut target = if opts.track_target {
        let g0 = transform::apply_forward(&k0, &zeta0)?;
        Some(RescaledField::new(g0.values, z0.t, z0.growth)?)
    } else {
        None
    };
    let k0_norm = k0.l2_norm();
    let z0_norm = zeta0.l2_norm();

    let mut run = ClosedLoopRun {
        times: Vec::new(),
        norms: Vec::new(),
        controls: Vec::new(),
        target_norms: Vec::new(),
        tracking_error: Vec::new(),
        chain_bound: Vec::new(),
        target_bc_residual: Vec::new(),
        final_state: z0.clone(),
    };

    let record = |z: &RescaledField, g: Option<&RescaledField>, psi: f64, run: &mut ClosedLoopRun| -> Result<()> {
        let zeta = physical(z)?;
        run.times.push(z.t);
        run.norms.push(zeta.l2_norm());
        run.controls.push(psi);
        if let Some(g) = g {
            let ks = k_small(z.t)?;
            let tz = transform::apply_forward(&ks, &zeta)?;
            let gp = physical(g)?;
            let diff: Vec<f64> = tz.values.iter().zip(&gp.values).map(|(a, b)| a - b).collect();
            let gn = gp.l2_norm();
            run.target_norms.push(gn);
            run.tracking_error.push(quad::l2_norm(&diff, gp.h()) / gn);
            let e = z.thickness();
            let h = tz.h();
            let v = &tz.values;
            let gx = (3.0 * v[m - 1] - 4.0 * v[m - 2] + v[m - 3]) / (2.0 * h);
            run.target_bc_residual
                .push((sigma * gx + law.growth.v_bar * v[m - 1]).abs() / (tz.l2_norm() / e.sqrt()));
        }
        if opts.chain_bound {
            if let Some(l) = inverse {
                let ln = restricted(l, z.thickness(), m)?.l2_norm();
                run.chain_bound
                    .push((1.0 + ln) * (1.0 + k0_norm) * (-lambda * (z.t - z0.t)).exp() * z0_norm);
            }
        }
        Ok(())
    };

    let mut row_old = law.row(z0.t, m)?;
    let psi0 = crate::linalg::dot(&row_old, &z0.values);
    record(z0, target.as_ref(), psi0, &mut run)?;
    let mut z = z0.clone();
    for s in 0..steps {
        let theta = if s < cfg.startup_steps { 1.0 } else { cfg.theta };
        let row_new = law.row(z.t + dt, m)?;
        let out = pde::theta_step(
            &z,
            0.0,
            sigma,
            Boundary::Feedback {
                old: &row_old,
                new: &row_new,
            },
            None,
            dt,
            theta,
            cfg.upwind,
        )?;
        z = out.field;
        if let Some(g) = target.as_mut() {
            *g = pde::theta_step(
                g,
                lambda,
                sigma,
                Boundary::Flux { old: 0.0, new: 0.0 },
                None,
                dt,
                theta,
                cfg.upwind,
            )?
            .field;
        }
        row_old = row_new;
        if (s + 1) % every == 0 || s + 1 == steps {
            record(&z, target.as_ref(), out.psi, &mut run)?;
        }
    }
    run.final_state = z;
    Ok(run)
}

/// Coupled vector closed loop (block-tridiagonal stepper with the dense
/// boundary feedback); returns the state at each output time.
pub fn run_vector_closed_loop(
    laws: &ModeLaws,
    a: &DMatrix<f64>,
    u0: &VectorField,
    t_end: f64,
    cfg: &SolverConfig,
    output_every: usize,
) -> Result<Vec<VectorField>> {
    cfg.validate()?;
    let m = u0.nodes();
    let span = t_end - u0.t;
    let steps = pde::step_count(span, cfg.dt);
    let dt = span / steps as f64;
    let mut out = vec![u0.clone()];
    let mut u = u0.clone();
    let mut c_old = laws.couplings(u.t, m)?;
    for s in 0..steps {
        let theta = if s < cfg.startup_steps { 1.0 } else { cfg.theta };
        let c_new = laws.couplings(u.t + dt, m)?;
        u = pde::theta_step_vector(&u, a, &c_old, &c_new, dt, theta)?;
        c_old = c_new;
        if (s + 1) % output_every.max(1) == 0 || s + 1 == steps {
            out.push(u.clone());
        }
    }
    Ok(out)
}

/// Runs each mode's scalar loop separately (in parallel under `exec`) and
/// recombines through `Qinv`.
pub fn run_modal_closed_loop(
    laws: &ModeLaws,
    u0: &VectorField,
    t_end: f64,
    cfg: &SolverConfig,
    output_every: usize,
    exec: Exec,
) -> Result<Vec<VectorField>> {
    let n = laws.n();
    let m = u0.nodes();
    let comps: Vec<SampledField> = (0..n)
        .map(|c| SampledField::new(1.0, u0.component(c)))
        .collect::<Result<_>>()?;
    let modes = to_modes(&laws.spectral.q, &comps)?;
    let opts = ClosedLoopOptions {
        output_every,
        track_target: false,
        chain_bound: false,
    };
    let idx: Vec<usize> = (0..n).collect();
    let runs = exec
        .map_slice(&idx, |&i| -> Result<Vec<Vec<f64>>> {
            let z0 = RescaledField::new(modes[i].values.clone(), u0.t, u0.growth)?;
            let mut fields = vec![z0.values.clone()];
            let mut z = z0;
            // Re-run to collect fields at the output times.
            let span = t_end - u0.t;
            let steps = pde::step_count(span, cfg.dt);
            let dt = span / steps as f64;
            let law = &laws.laws[i];
            let mut row_old = law.row(z.t, m)?;
            for s in 0..steps {
                let theta = if s < cfg.startup_steps { 1.0 } else { cfg.theta };
                let row_new = law.row(z.t + dt, m)?;
                z = pde::theta_step(
                    &z,
                    0.0,
                    law.sigma,
                    Boundary::Feedback {
                        old: &row_old,
                        new: &row_new,
                    },
                    None,
                    dt,
                    theta,
                    cfg.upwind,
                )?
                .field;
                row_old = row_new;
                if (s + 1) % opts.output_every.max(1) == 0 || s + 1 == steps {
                    fields.push(z.values.clone());
                }
            }
            Ok(fields)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let outputs = runs[0].len();
    let span = t_end - u0.t;
    let steps = pde::step_count(span, cfg.dt);
    let dt = span / steps as f64;
    let mut times = vec![u0.t];
    for s in 0..steps {
        if (s + 1) % output_every.max(1) == 0 || s + 1 == steps {
            times.push(u0.t + (s + 1) as f64 * dt);
        }
    }
    let qinv = &laws.spectral.qinv;
    Ok((0..outputs)
        .map(|o| {
            let phys: Vec<Vec<f64>> = (0..n)
                .map(|c| {
                    (0..m)
                        .map(|k| (0..n).map(|i| qinv[(c, i)] * runs[i][o][k]).sum())
                        .collect()
                })
                .collect();
            VectorField::from_components(&phys, times[o], u0.growth)
        })
        .collect())
}

/// Switching times and gains with the certificates of the finite-time
/// lemma. Intervals are numbered from 1: interval `m` is
/// `[times[m-1], times[m])` with gain `lambdas[m-1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub t_end: f64,
    pub times: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub gamma: f64,
    /// `(t_{m+1} - t_m) sqrt(lambda_m)`
    pub gaps: Vec<f64>,
    pub hyp1: Vec<bool>,
    /// `s_m = sum_{k <= m} lambda_k (t_{k+1} - t_k)`
    pub partial_sums: Vec<f64>,
    pub s_over_m_increasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThicknessSchedule {
    pub times: Vec<f64>,
    pub mus: Vec<f64>,
    /// `sum_{k <= m} mu_k (t'_{k+1} - t'_k)`
    pub partial_sums: Vec<f64>,
}

impl Schedule {
    /// Computes the certificates without rejecting anything.
    pub fn certify(t_end: f64, times: Vec<f64>, lambdas: Vec<f64>, gamma: f64) -> Result<Self> {
        if times.len() != lambdas.len() + 1 || lambdas.is_empty() {
            return Err(Error::Schedule(format!(
                "need one more time than gains, got {} times and {} gains",
                times.len(),
                lambdas.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Schedule("switching times must increase".into()));
        }
        if times[0] != 0.0 || *times.last().unwrap() > t_end {
            return Err(Error::Schedule(format!(
                "times must start at 0 and stay within the horizon {t_end}"
            )));
        }
        if lambdas.iter().any(|l| !(*l > 0.0)) || lambdas.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Schedule("gains must be positive and nondecreasing".into()));
        }
        let gaps: Vec<f64> = lambdas
            .iter()
            .enumerate()
            .map(|(m, l)| (times[m + 1] - times[m]) * l.sqrt())
            .collect();
        let hyp1 = gaps.iter().map(|g| *g >= gamma * (1.0 - 1e-12)).collect();
        let mut s = 0.0;
        let partial_sums: Vec<f64> = lambdas
            .iter()
            .enumerate()
            .map(|(m, l)| {
                s += l * (times[m + 1] - times[m]);
                s
            })
            .collect();
        let ratios: Vec<f64> = partial_sums
            .iter()
            .enumerate()
            .map(|(m, s)| s / (m + 1) as f64)
            .collect();
        let s_over_m_increasing = ratios.windows(2).all(|w| w[1] > w[0]);
        Ok(Self {
            t_end,
            times,
            lambdas,
            gamma,
            gaps,
            hyp1,
            partial_sums,
            s_over_m_increasing,
        })
    }

    /// First interval (1-based) violating the gap condition, if any.
    pub fn first_gap_violation(&self) -> Option<usize> {
        self.hyp1.iter().position(|ok| !ok).map(|m| m + 1)
    }

    /// Accepts a user sequence only if every stored interval passes the gap
    /// condition.
    pub fn from_sequences(t_end: f64, times: Vec<f64>, lambdas: Vec<f64>, gamma: f64) -> Result<Self> {
        let s = Self::certify(t_end, times, lambdas, gamma)?;
        if let Some(m) = s.first_gap_violation() {
            return Err(Error::ScheduleGap {
                m,
                value: s.gaps[m - 1],
                gamma,
            });
        }
        Ok(s)
    }

    pub fn intervals(&self) -> usize {
        self.lambdas.len()
    }

    pub fn all_hyp1(&self) -> bool {
        self.hyp1.iter().all(|b| *b)
    }
}

/// Default sequences `t_m = T(1 - 1/m^2)`, `lambda_m = gamma^2 (m+1)^8 / T^2`
/// (for `T = 1` exactly the classical choice) and the thickness schedule
/// `t'_m = T(1 - 1/m)`, `mu_m = m / T`, for `m = 1..=m_max`.
pub fn finite_time_schedule(t_end: f64, gamma: f64, m_max: usize) -> Result<(Schedule, ThicknessSchedule)> {
    if !(t_end > 0.0) || !(gamma > 0.0) || m_max == 0 {
        return Err(Error::InvalidParameter(
            "need T > 0, gamma > 0 and at least one interval".into(),
        ));
    }
    let times: Vec<f64> = (1..=m_max + 1)
        .map(|m| t_end * (1.0 - 1.0 / (m * m) as f64))
        .collect();
    let lambdas: Vec<f64> = (1..=m_max)
        .map(|m| gamma * gamma * ((m + 1) as f64).powi(8) / (t_end * t_end))
        .collect();
    let sched = Schedule::from_sequences(t_end, times, lambdas, gamma)?;
    let ttimes: Vec<f64> = (1..=m_max + 1).map(|m| t_end * (1.0 - 1.0 / m as f64)).collect();
    let mus: Vec<f64> = (1..=m_max).map(|m| m as f64 / t_end).collect();
    Ok((sched, ThicknessSchedule::new(ttimes, mus)?))
}

impl ThicknessSchedule {
    pub fn new(times: Vec<f64>, mus: Vec<f64>) -> Result<Self> {
        if times.len() != mus.len() + 1 || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Schedule("thickness schedule times malformed".into()));
        }
        let mut s = 0.0;
        let partial_sums = mus
            .iter()
            .enumerate()
            .map(|(m, mu)| {
                s += mu * (times[m + 1] - times[m]);
                s
            })
            .collect();
        Ok(Self {
            times,
            mus,
            partial_sums,
        })
    }

    /// Closed-form solution of `de' = -mu(t) de` with piecewise-constant
    /// `mu`; past the last stored time the last gain is kept.
    pub fn value(&self, de0: f64, t: f64) -> f64 {
        let mut acc = 0.0;
        for (m, mu) in self.mus.iter().enumerate() {
            let a = self.times[m];
            let b = self.times[m + 1];
            if t <= a {
                break;
            }
            let last = m + 1 == self.mus.len();
            let end = if last { t } else { t.min(b) };
            acc += mu * (end - a);
        }
        de0 * (-acc).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub m: usize,
    pub t_m: f64,
    /// Gain used from `t_m` on; `None` at the end of the run.
    pub lambda_m: Option<f64>,
    pub norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiniteTimeRun {
    /// State norm at each switching time, including the start and the end.
    pub events: Vec<SwitchEvent>,
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    /// `exp(-s_{m-1}) ||z0||` at each event, the envelope up to the
    /// unspecified constants.
    pub envelope: Vec<f64>,
}

/// Closed loop with the gain switched at each schedule time; `z0` holds the
/// modal components, `sigmas` the matching eigenvalues.
pub fn run_finite_time(
    sigmas: &[f64],
    z0: &[RescaledField],
    schedule: &Schedule,
    intervals: usize,
    cfg: &SolverConfig,
    kernel_nodes: usize,
    exec: Exec,
) -> Result<FiniteTimeRun> {
    cfg.validate()?;
    if sigmas.len() != z0.len() || z0.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: sigmas.len(),
            got: z0.len(),
        });
    }
    let intervals = intervals.min(schedule.intervals());
    let growth = z0[0].growth;
    let total = |zs: &[RescaledField]| -> f64 {
        zs.iter()
            .map(|z| z.thickness() * z.l2_norm().powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let norm0 = total(z0);
    let mut run = FiniteTimeRun {
        events: vec![SwitchEvent {
            m: 1,
            t_m: schedule.times[0],
            lambda_m: Some(schedule.lambdas[0]),
            norm: norm0,
        }],
        times: vec![z0[0].t],
        norms: vec![norm0],
        envelope: vec![norm0],
    };
    let mut zs: Vec<RescaledField> = z0.to_vec();
    for m in 1..=intervals {
        let (ta, tb) = (schedule.times[m - 1], schedule.times[m]);
        let lambda = schedule.lambdas[m - 1];
        let l_max = growth.thickness(tb);
        let idx: Vec<usize> = (0..sigmas.len()).collect();
        let stepped = exec.map_slice(&idx, |&i| -> Result<(RescaledField, Vec<(f64, f64)>)> {
            let law = FeedbackLaw::new(lambda, sigmas[i], growth, l_max, kernel_nodes).map_err(|e| {
                Error::IntervalKernel {
                    interval: m,
                    source: Box::new(e),
                }
            })?;
            let mut z = zs[i].clone();
            z.t = ta;
            let steps = pde::step_count(tb - ta, cfg.dt);
            let dt = (tb - ta) / steps as f64;
            let mut row_old = law.row(ta, z.len())?;
            let mut trace = Vec::with_capacity(steps);
            for s in 0..steps {
                let theta = if s < cfg.startup_steps { 1.0 } else { cfg.theta };
                let row_new = law.row(z.t + dt, z.len())?;
                z = pde::theta_step(
                    &z,
                    0.0,
                    sigmas[i],
                    Boundary::Feedback {
                        old: &row_old,
                        new: &row_new,
                    },
                    None,
                    dt,
                    theta,
                    cfg.upwind,
                )?
                .field;
                row_old = row_new;
                trace.push((z.t, z.thickness() * z.l2_norm().powi(2)));
            }
            Ok((z, trace))
        });
        let mut traces = Vec::with_capacity(stepped.len());
        for (i, r) in stepped.into_iter().enumerate() {
            let (z, tr) = r?;
            zs[i] = z;
            traces.push(tr);
        }
        for s in 0..traces[0].len() {
            run.times.push(traces[0][s].0);
            run.norms.push(traces.iter().map(|t| t[s].1).sum::<f64>().sqrt());
        }
        let norm = total(&zs);
        run.events.push(SwitchEvent {
            m: m + 1,
            t_m: tb,
            lambda_m: if m < intervals { schedule.lambdas.get(m).copied() } else { None },
            norm,
        });
        run.envelope.push((-schedule.partial_sums[m - 1]).exp() * norm0);
    }
    Ok(run)
}
