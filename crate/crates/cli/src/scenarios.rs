//! One runner per verb. Runners only compute; writing files is left to the
//! caller so every verb produces the same artifact layout.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use backstep_core::control::{
    finite_time_schedule, run_closed_loop, run_finite_time, ClosedLoopOptions, FeedbackLaw, Schedule,
    ThicknessSchedule,
};
use backstep_core::fit::linear_fit;
use backstep_core::io::KernelMeta;
use backstep_core::kernel::{forward_kernel, inverse_kernel, TriangleGrid};
use backstep_core::model::{check_entropic, diagonalize_at, Composition};
use backstep_core::nonlinear::{simulate_open_loop, NonlinearConfig, NonlinearState};
use backstep_core::pde::{simulate_target, RescaledField};
use backstep_core::transform::{apply_adjoint, apply_forward, apply_inverse, SampledField};
use backstep_core::Exec;

use crate::config::Scenario;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detail: Option<String>,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            passed: value <= limit,
            value,
            limit,
            detail: None,
        }
    }

    fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            passed: value >= limit,
            value,
            limit,
            detail: None,
        }
    }

    fn flag(name: impl Into<String>, ok: bool, detail: Option<String>) -> Self {
        Self {
            name: name.into(),
            passed: ok,
            value: if ok { 1.0 } else { 0.0 },
            limit: 1.0,
            detail,
        }
    }
}

pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    fn new(file: &str, header: &[&str], columns: Vec<Vec<f64>>) -> Self {
        Self {
            file: file.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            columns,
        }
    }
}

#[derive(Default)]
pub struct Outcome {
    /// Resolution metadata every summary number depends on.
    pub grid: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, f64>,
    /// Quantities expected to shrink under refinement.
    pub errors: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
    pub documents: Vec<(String, serde_json::Value)>,
}

fn rel_l2(a: &[f64], b: &[f64], l: f64) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let h = l / (a.len() - 1) as f64;
    backstep_core::quad::l2_norm(&d, h) / backstep_core::quad::l2_norm(b, h)
}

fn fit_rate(times: &[f64], norms: &[f64], from: f64) -> f64 {
    let (xs, ys): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(norms)
        .filter(|(t, _)| **t >= from - 1e-12)
        .map(|(t, n)| (*t, n.ln()))
        .unzip();
    -linear_fit(&xs, &ys).slope
}

/// Mode eigenvalues: the PVD spectrum when the model is given, else the
/// scalar `sigma`.
fn sigmas(s: &Scenario, out: &mut Outcome) -> Result<Vec<f64>, CliError> {
    match (s.params()?, s.target()?) {
        (Some(p), Some(t)) => {
            let spec = diagonalize_at(&t, &p)?;
            let rep = check_entropic(&t.u_bar, &p, 1000, s.seed)?;
            out.metrics.insert("entropic_alpha".into(), rep.empirical_alpha);
            Ok(spec.sigma.iter().copied().collect())
        }
        (None, None) => {
            s.require_positive("[model] sigma", s.model.sigma)?;
            Ok(vec![s.model.sigma])
        }
        _ => Err(CliError::Config("[model] needs n, pairs and phi_bar together".into())),
    }
}

pub fn kernel(s: &Scenario, refine: u32) -> Result<Outcome, CliError> {
    let n = s.kernel_nodes(refine)?;
    let (lambda, sigma, l) = (s.control.lambda, s.model.sigma, s.kernel.l);
    s.require_positive("[kernel] l", l)?;
    let k = forward_kernel(lambda, sigma, l, n)?;
    let li = inverse_kernel(lambda, sigma, l, n)?;
    let h = k.grid().h();
    let mut out = Outcome::default();
    out.grid.insert("nodes".into(), n as f64);
    out.grid.insert("h".into(), h);
    out.grid.insert("l".into(), l);

    let f = SampledField::from_fn(l, n, |x| (PI * x / l).cos())?;
    let rt_a = rel_l2(&apply_inverse(&li, &apply_forward(&k, &f)?)?.values, &f.values, l);
    let rt_b = rel_l2(&apply_forward(&k, &apply_inverse(&li, &f)?)?.values, &f.values, l);
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut adj: f64 = 0.0;
    for _ in 0..20 {
        let c: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let smooth = |c: &[f64]| {
            SampledField::from_fn(l, n, |x| {
                (0..4)
                    .map(|j| c[2 * j] * (j as f64 * PI * x / l).cos() + c[2 * j + 1] * ((j + 1) as f64 * x).sin())
                    .sum()
            })
        };
        let (fa, ga) = (smooth(&c)?, smooth(&d)?);
        let gap = (apply_forward(&k, &fa)?.inner(&ga) - fa.inner(&apply_adjoint(&k, &ga)?)).abs();
        adj = adj.max(gap / (fa.l2_norm() * ga.l2_norm()));
    }
    out.metrics.insert("k_h1_norm".into(), k.h1_norm());
    out.metrics.insert("l_h1_norm".into(), li.h1_norm());
    out.errors.insert("diag_error".into(), k.diag_error());
    out.errors.insert("residual_rms".into(), k.residual_rms());
    out.errors.insert("round_trip_inverse_forward".into(), rt_a);
    out.errors.insert("round_trip_forward_inverse".into(), rt_b);
    out.errors.insert("adjoint_gap".into(), adj);
    out.checks.push(Check::at_most("diag_error", k.diag_error(), 1e-3));
    out.checks.push(Check::at_most(
        "outside_over_inside",
        k.outside_max(),
        5.0 * h * h * k.inside_max(),
    ));
    out.checks.push(Check::at_most("round_trip", rt_a.max(rt_b), 10.0 * h * h));
    out.checks.push(Check::at_most("adjoint_gap", adj, 10.0 * h * h));

    for (file, ker) in [("kernel.csv", &k), ("inverse_kernel.csv", &li)] {
        let g = ker.grid();
        let (mut xs, mut ys, mut vs) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..g.n {
            for j in 0..=i {
                xs.push(g.x(i));
                ys.push(g.x(j));
                vs.push(ker.at(i, j));
            }
        }
        out.tables.push(Table::new(file, &["x", "y", "k"], vec![xs, ys, vs]));
    }
    out.documents.push(("kernel.json".into(), serde_json::to_value(KernelMeta::of(&k))?));
    out.documents.push(("inverse_kernel.json".into(), serde_json::to_value(KernelMeta::of(&li))?));
    Ok(out)
}

pub fn target(s: &Scenario, refine: u32) -> Result<Outcome, CliError> {
    let cfg = s.solver(refine)?;
    let g = s.growth()?;
    let (lambda, sigma, t_end) = (s.control.lambda, s.model.sigma, s.control.t_end);
    s.require_positive("[control] t_end", t_end)?;
    let amp = s.control.amplitude;
    let w0 = RescaledField::from_fn(cfg.m, 0.0, g, |y| 1.0 + amp * (PI * y).cos())?;
    let every = s.solver.output_every.max(1) << refine;
    let tr = simulate_target(&w0, lambda, sigma, t_end, &cfg, every)?;
    let rate = fit_rate(&tr.times, &tr.l2_norms, 0.5 * t_end);
    let envelope = tr
        .times
        .iter()
        .zip(&tr.l2_norms)
        .map(|(t, n)| n / ((-lambda * t).exp() * tr.l2_norms[0]))
        .fold(0.0, f64::max);
    let ledger = tr.ledger.iter().map(|l| l.ratio()).fold(0.0, f64::max);
    let mut out = Outcome::default();
    out.grid.insert("m".into(), cfg.m as f64);
    out.grid.insert("dt".into(), cfg.dt);
    out.metrics.insert("decay_rate".into(), rate);
    out.metrics.insert("envelope_ratio".into(), envelope);
    out.metrics.insert("ledger_ratio".into(), ledger);
    out.errors.insert("decay_rate_gap".into(), (rate - lambda).abs() / lambda);
    out.checks.push(Check::at_most("decay_rate_rel_gap", (rate - lambda).abs() / lambda, 0.05));
    out.checks.push(Check::at_most("envelope_ratio", envelope, 1.05));
    out.checks.push(Check::at_most("ledger_ratio", ledger, 1.05));
    out.tables.push(Table::new(
        "target.csv",
        &["t", "l2_norm", "boundary_value"],
        vec![tr.times.clone(), tr.l2_norms.clone(), tr.boundary_values.clone()],
    ));
    out.tables.push(Table::new(
        "energy_ledger.csv",
        &["t", "sup", "gradient", "boundary", "damping", "initial", "ratio"],
        vec![
            tr.ledger.iter().map(|l| l.t).collect(),
            tr.ledger.iter().map(|l| l.sup_term).collect(),
            tr.ledger.iter().map(|l| l.gradient_term).collect(),
            tr.ledger.iter().map(|l| l.boundary_term).collect(),
            tr.ledger.iter().map(|l| l.damping_term).collect(),
            tr.ledger.iter().map(|l| l.initial).collect(),
            tr.ledger.iter().map(|l| l.ratio()).collect(),
        ],
    ));
    Ok(out)
}

pub fn closed_loop(s: &Scenario, refine: u32) -> Result<Outcome, CliError> {
    let cfg = s.solver(refine)?;
    let kn = s.kernel_nodes(refine)?;
    let g = s.growth()?;
    let (lambda, t_end) = (s.control.lambda, s.control.t_end);
    s.require_positive("[control] t_end", t_end)?;
    let mut out = Outcome::default();
    let sig = sigmas(s, &mut out)?;
    out.grid.insert("m".into(), cfg.m as f64);
    out.grid.insert("dt".into(), cfg.dt);
    out.grid.insert("kernel_nodes".into(), kn as f64);
    let e0 = g.thickness(0.0);
    let l_max = g.thickness(t_end);
    let m = cfg.m;
    let every = s.solver.output_every.max(1) << refine;
    for (i, &sigma) in sig.iter().enumerate() {
        let tag = if sig.len() == 1 { String::new() } else { format!("_mode{}", i + 1) };
        let law = FeedbackLaw::new(lambda, sigma, g, l_max, kn)?;
        let inv = inverse_kernel(lambda, sigma, l_max, kn)?;
        // cos + offset + quadratic fixing the target boundary condition
        let (a, vb) = (s.control.amplitude, g.v_bar);
        let c = vb * (1.0 - a) / (2.0 * sigma * e0 + vb * e0 * e0);
        let g0 = SampledField::from_fn(e0, m, |x| (PI * x / e0).cos() + a + c * x * x)?;
        let l0 = inv.resample(TriangleGrid::new(e0, m)?)?;
        let z0 = RescaledField::new(apply_inverse(&l0, &g0)?.values, 0.0, g)?;
        let opts = ClosedLoopOptions {
            output_every: every,
            track_target: true,
            chain_bound: true,
        };
        let run = run_closed_loop(&law, Some(&inv), &z0, t_end, &cfg, &opts)?;
        let chain = run
            .norms
            .iter()
            .zip(&run.chain_bound)
            .map(|(n, b)| n / b)
            .fold(0.0, f64::max);
        let ls: Vec<f64> = (0..4).map(|k| e0 + (l_max - e0) * k as f64 / 3.0).collect();
        let lnorm = ls
            .iter()
            .map(|&l| Ok((1.0 + inv.resample(TriangleGrid::new(l, m)?)?.l2_norm()).ln()))
            .collect::<Result<Vec<f64>, backstep_core::Error>>()?;
        let c_fit = linear_fit(&ls, &lnorm).slope;
        let rate = fit_rate(&run.times, &run.norms, 0.5 * t_end);
        let tracking = run
            .times
            .iter()
            .zip(&run.tracking_error)
            .map(|(t, e)| {
                let h = g.thickness(*t) / (m - 1) as f64;
                e / (10.0 * h * h)
            })
            .fold(0.0, f64::max);
        let worst_track = run.tracking_error.iter().cloned().fold(0.0, f64::max);
        out.metrics.insert(format!("decay_rate{tag}"), rate);
        out.metrics.insert(format!("c_fit{tag}"), c_fit);
        out.metrics.insert(format!("chain_ratio{tag}"), chain);
        out.metrics.insert(format!("sigma{tag}"), sigma);
        out.errors.insert(format!("tracking_error{tag}"), worst_track);
        out.checks.push(Check::at_most(format!("chain_ratio{tag}"), chain, 1.0));
        out.checks.push(Check::at_least(
            format!("decay_rate{tag}"),
            rate,
            0.8 * (lambda - c_fit * vb),
        ));
        out.checks.push(Check::at_most(format!("tracking_over_10h2{tag}"), tracking, 1.0));
        out.tables.push(Table::new(
            &format!("closed_loop{tag}.csv"),
            &["t", "norm", "control", "target_norm", "tracking_error", "chain_bound"],
            vec![
                run.times.clone(),
                run.norms.clone(),
                run.controls.clone(),
                run.target_norms.clone(),
                run.tracking_error.clone(),
                run.chain_bound.clone(),
            ],
        ));
    }
    Ok(out)
}

fn schedule_of(s: &Scenario) -> Result<(Schedule, Option<ThicknessSchedule>), CliError> {
    let sec = s
        .schedule
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [schedule] section".into()))?;
    match (&sec.times, &sec.lambdas) {
        (Some(t), Some(l)) => Ok((Schedule::certify(sec.t_end, t.clone(), l.clone(), sec.gamma)?, None)),
        (None, None) => {
            let m = sec.intervals.unwrap_or(6);
            let (a, b) = finite_time_schedule(sec.t_end, sec.gamma, m)?;
            Ok((a, Some(b)))
        }
        _ => Err(CliError::Config("[schedule] needs both times and lambdas, or neither".into())),
    }
}

fn certificate_checks(sched: &Schedule, out: &mut Outcome) {
    let first = sched.first_gap_violation();
    out.checks.push(Check::flag(
        "gap_condition",
        first.is_none(),
        first.map(|m| {
            format!(
                "first offending interval m = {m}: (t_(m+1) - t_m) sqrt(lambda_m) = {} < gamma = {}",
                sched.gaps[m - 1],
                sched.gamma
            )
        }),
    ));
    out.checks.push(Check::flag("s_over_m_increasing", sched.s_over_m_increasing, None));
    let mut m = Vec::new();
    let mut s_over_m = Vec::new();
    for k in 0..sched.intervals() {
        m.push((k + 1) as f64);
        s_over_m.push(sched.partial_sums[k] / (k + 1) as f64);
    }
    out.tables.push(Table::new(
        "schedule.csv",
        &["m", "t_m", "lambda_m", "gap", "s_m", "s_over_m"],
        vec![
            m,
            sched.times[..sched.intervals()].to_vec(),
            sched.lambdas.clone(),
            sched.gaps.clone(),
            sched.partial_sums.clone(),
            s_over_m,
        ],
    ));
}

pub fn schedule_check(s: &Scenario, _refine: u32) -> Result<Outcome, CliError> {
    let (sched, thick) = schedule_of(s)?;
    let mut out = Outcome::default();
    out.metrics.insert("intervals".into(), sched.intervals() as f64);
    out.metrics.insert("s_final".into(), *sched.partial_sums.last().unwrap());
    certificate_checks(&sched, &mut out);
    if let Some(th) = thick {
        out.documents.push(("thickness_schedule.json".into(), serde_json::to_value(&th)?));
    }
    Ok(out)
}

pub fn finite_time(s: &Scenario, refine: u32) -> Result<Outcome, CliError> {
    let cfg = s.solver(refine)?;
    let kn = s.kernel_nodes(refine)?;
    let g = s.growth()?;
    let (sched, _) = schedule_of(s)?;
    let mut out = Outcome::default();
    let sig = sigmas(s, &mut out)?;
    out.grid.insert("m".into(), cfg.m as f64);
    out.grid.insert("dt".into(), cfg.dt);
    out.grid.insert("kernel_nodes".into(), kn as f64);
    certificate_checks(&sched, &mut out);
    let intervals = s
        .schedule
        .as_ref()
        .and_then(|x| x.intervals)
        .unwrap_or(sched.intervals())
        .min(sched.intervals());
    let amp = s.control.amplitude;
    let z0 = (0..sig.len())
        .map(|i| RescaledField::from_fn(cfg.m, 0.0, g, |y| (PI * y).cos() + amp + 0.2 * i as f64))
        .collect::<Result<Vec<_>, _>>()?;
    let run = run_finite_time(&sig, &z0, &sched, intervals, &cfg, kn, Exec::default())?;
    let norms: Vec<f64> = run.events.iter().map(|e| e.norm).collect();
    let bad = norms.windows(2).position(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Less));
    out.checks.push(Check::flag(
        "norm_decreases_each_interval",
        bad.is_none(),
        bad.map(|m| format!("interval {} did not decrease the norm", m + 1)),
    ));
    let total = norms[0] / norms[norms.len() - 1];
    out.metrics.insert("total_decrease".into(), total);
    // thickness under the matching piecewise gains
    let sec = s.schedule.as_ref().unwrap();
    let (_, th) = finite_time_schedule(sec.t_end, sec.gamma, intervals.max(1))?;
    let de: Vec<f64> = th.times.iter().map(|&t| th.value(s.control.de0, t)).collect();
    out.checks.push(Check::flag(
        "thickness_decreases",
        de.windows(2).all(|w| w[1].abs() < w[0].abs()) || s.control.de0 == 0.0,
        None,
    ));
    out.tables.push(Table::new("finite_time.csv", &["t", "norm"], vec![run.times.clone(), run.norms.clone()]));
    out.tables.push(Table::new("thickness.csv", &["t", "delta_e"], vec![th.times.clone(), de]));
    out.documents.push(("switch_events.json".into(), serde_json::to_value(&run.events)?));
    Ok(out)
}

pub fn nonlinear(s: &Scenario, refine: u32) -> Result<Outcome, CliError> {
    let (p, t) = match (s.params()?, s.target()?) {
        (Some(p), Some(t)) => (p, t),
        _ => return Err(CliError::Config("simulate-nonlinear needs [model] n, pairs and phi_bar".into())),
    };
    let sec = &s.nonlinear;
    let n = p.n();
    if sec.offset.len() != n || sec.amplitude.len() != n {
        return Err(CliError::Config(format!("[nonlinear] offset and amplitude need {n} entries")));
    }
    let f = 1usize << refine;
    let cfg = NonlinearConfig {
        cells: sec.cells * f,
        dt: sec.dt / f as f64,
        eps: sec.eps,
    };
    cfg.validate()?;
    let ub = t.u_bar.as_slice().to_vec();
    let u0 = NonlinearState::from_fn(n, cfg.cells, t.e0, |y| {
        (0..n)
            .map(|i| ub[i] + sec.offset[i] + sec.amplitude[i] * (PI * y).cos())
            .collect()
    })?;
    Composition::closed(u0.cell(0).to_vec())?;
    let every = (0.1 / cfg.dt).round().max(1.0) as usize;
    let run = simulate_open_loop(&u0, &t.phi_bar, sec.t_end, &p, &cfg, every)?;
    let fits = run.decay_fits(sec.fit_from, sec.t_end);
    let mut out = Outcome::default();
    out.grid.insert("cells".into(), cfg.cells as f64);
    out.grid.insert("dt".into(), cfg.dt);
    for (i, fit) in fits.iter().enumerate() {
        out.metrics.insert(format!("beta_{}", i + 1), fit.beta);
        out.metrics.insert(format!("envelope_slope_{}", i + 1), fit.envelope.slope);
        out.checks.push(Check::at_most(
            format!("envelope_slope_{}", i + 1),
            fit.envelope.slope,
            2.0 * fit.envelope.slope_stderr,
        ));
    }
    let mass = run.mass_defect.iter().cloned().fold(0.0, f64::max);
    out.errors.insert("mass_defect".into(), mass);
    out.checks.push(Check::at_most("mass_defect", mass, 1e-9 * (1.0 + sec.t_end)));
    let mut header = vec!["t".to_string(), "e".to_string()];
    let mut cols = vec![run.times.clone(), run.thickness.clone()];
    for (i, r) in run.residuals.iter().enumerate() {
        header.push(format!("r_{}", i + 1));
        cols.push(r.clone());
    }
    out.tables.push(Table {
        file: "nonlinear.csv".into(),
        header,
        columns: cols,
    });
    Ok(out)
}
