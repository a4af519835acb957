//! Acceptance scenarios. Runs sequentially (runtimes are measured) and
//! prints one PASS/FAIL line per criterion.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use backstep_core::control::{
    finite_time_schedule, run_closed_loop, run_finite_time, run_modal_closed_loop,
    run_vector_closed_loop, thickness_exponential, vector_feedback, ClosedLoopOptions,
    FeedbackLaw, ModeLaws, Schedule, ThicknessSchedule,
};
use backstep_core::fit::{linear_fit, observed_orders};
use backstep_core::kernel::{
    forward_kernel, inverse_kernel, series_oracle, solve_kernel, TriangleGrid,
};
use backstep_core::model::{diagonalize_at, diffusion_matrix, PvdParams, TargetState};
use backstep_core::nonlinear::{simulate_open_loop, step_nonlinear, NonlinearConfig, NonlinearState};
use backstep_core::pde::{simulate_target, Growth, RescaledField, SolverConfig, VectorField};
use backstep_core::transform::{apply_adjoint, apply_forward, apply_inverse, SampledField};
use backstep_core::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let el = start.elapsed();
    (el < limit, format!("runtime {:.2?} (limit {:?})", el, limit))
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn rel_l2(a: &[f64], b: &[f64], h: f64) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    backstep_core::quad::l2_norm(&d, h) / backstep_core::quad::l2_norm(b, h)
}

fn pvd() -> PvdParams {
    PvdParams::from_pairs(2, &[(1, 2, 1.0), (1, 0, 2.0), (2, 0, 3.0)]).unwrap()
}

fn desk_target() -> TargetState {
    let vb = 0.25;
    TargetState::new(vec![0.3 * vb, 0.3 * vb, 0.4 * vb], 1.0).unwrap()
}

fn decay_run() -> (backstep_core::pde::Trajectory, Duration) {
    let g = Growth::new(1.0, 0.25).unwrap();
    let cfg = SolverConfig {
        m: 200,
        dt: 1e-3,
        ..Default::default()
    };
    let w0 = RescaledField::from_fn(cfg.m, 0.0, g, |y| 1.0 + 0.5 * (PI * y).cos()).unwrap();
    let t = Instant::now();
    let tr = simulate_target(&w0, 5.0, 1.0, 1.0, &cfg, 10).unwrap();
    (tr, t.elapsed())
}

fn c1_target_decay() -> Outcome {
    let (tr, el) = decay_run();
    let lambda = 5.0;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut worst: f64 = 0.0;
    for (t, n) in tr.times.iter().zip(&tr.l2_norms) {
        if *t >= 0.5 - 1e-12 {
            xs.push(*t);
            ys.push(n.ln());
        }
        worst = worst.max(n / ((-lambda * t).exp() * tr.l2_norms[0]));
    }
    let rate = -linear_fit(&xs, &ys).slope;
    let ok = (rate - lambda).abs() <= 0.05 * lambda && worst <= 1.05 && el < Duration::from_secs(5);
    check(
        ok,
        format!("decay exponent {rate:.4}, max ||w||/(e^-lt ||w0||) = {worst:.4}, runtime {el:.2?}"),
    )
}

fn c2_energy_ledger() -> Outcome {
    let (tr, _) = decay_run();
    let worst = tr.ledger.iter().map(|l| l.ratio()).fold(0.0, f64::max);
    check(
        worst <= 1.05 && !tr.ledger.is_empty(),
        format!("max ledger ratio {worst:.6} over {} entries", tr.ledger.len()),
    )
}

fn c3_kernel() -> Outcome {
    let start = Instant::now();
    let k = solve_kernel(1.0, 1.0, 401).map_err(|e| e.to_string())?;
    let diag = k.diag_error();
    let res: Vec<f64> = [101, 201, 401]
        .iter()
        .map(|&n| solve_kernel(1.0, 1.0, n).unwrap().residual_rms())
        .collect();
    let orders = observed_orders(&res);
    let min_order = orders.iter().cloned().fold(f64::INFINITY, f64::min);
    let series = series_oracle(1.0, 0.8, 0.4, 40).unwrap();
    // (0.8, 0.4) is node (320, 160) at N = 401
    let gap = (k.at(320, 160) - series.value).abs();
    let h = k.grid().h();
    let tol = (5.0 * h * h).max(1e-4);
    let (fast, rt) = within(Duration::from_secs(10), start);
    check(
        diag <= 1e-3 && min_order >= 1.8 && gap <= tol && series.converged && fast,
        format!("diag err {diag:.2e}, residual orders {orders:.3?}, series gap {gap:.2e} (tol {tol:.2e}), {rt}"),
    )
}

fn c4_localization() -> Outcome {
    let mut ratios = Vec::new();
    let mut outs = Vec::new();
    for n in [101, 201, 401] {
        let k = solve_kernel(1.0, 1.0, n).map_err(|e| e.to_string())?;
        let h = k.grid().h();
        outs.push(k.outside_max());
        ratios.push(k.outside_max() / (5.0 * h * h * k.inside_max()));
    }
    let bounded = ratios.iter().all(|r| *r <= 1.0);
    // an exactly vanishing outside part counts as decreasing
    let decreasing = outs
        .windows(2)
        .all(|w| w[1] == 0.0 || w[0] / w[1] >= 3.0);
    check(
        bounded && decreasing,
        format!("outside max {}, ratio to 5h^2 inside max {}", sci(&outs), sci(&ratios)),
    )
}

fn c5_round_trip() -> Outcome {
    let l = Growth::new(1.0, 0.25).unwrap().thickness(1.0);
    let n = 201;
    let k = forward_kernel(5.0, 1.0, l, n).map_err(|e| e.to_string())?;
    let li = inverse_kernel(5.0, 1.0, l, n).map_err(|e| e.to_string())?;
    let f = SampledField::from_fn(l, n, |x| (PI * x / l).cos()).unwrap();
    let a = apply_inverse(&li, &apply_forward(&k, &f).unwrap()).unwrap();
    let b = apply_forward(&k, &apply_inverse(&li, &f).unwrap()).unwrap();
    let h = f.h();
    let ea = rel_l2(&a.values, &f.values, h);
    let eb = rel_l2(&b.values, &f.values, h);
    let tol = 10.0 * h * h;
    check(
        ea <= tol && eb <= tol,
        format!("L = {l}, N = {n}: inverse(forward) {ea:.2e}, forward(inverse) {eb:.2e}, tol {tol:.2e}"),
    )
}

fn c6_adjoint() -> Outcome {
    let l = 1.25;
    let n = 201;
    let k = forward_kernel(5.0, 1.0, l, n).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_611);
    let smooth = |rng: &mut ChaCha8Rng| {
        let c: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SampledField::from_fn(l, n, move |x| {
            (0..4)
                .map(|j| c[2 * j] * (j as f64 * PI * x / l).cos() + c[2 * j + 1] * ((j + 1) as f64 * x).sin())
                .sum()
        })
        .unwrap()
    };
    let h = l / (n - 1) as f64;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let f = smooth(&mut rng);
        let g = smooth(&mut rng);
        let lhs = apply_forward(&k, &f).unwrap().inner(&g);
        let rhs = f.inner(&apply_adjoint(&k, &g).unwrap());
        worst = worst.max((lhs - rhs).abs() / (h * h * f.l2_norm() * g.l2_norm()));
    }
    check(worst <= 10.0, format!("max |<Tf,g> - <f,Gg>| / (h^2 |f||g|) = {worst:.3e} (limit 10)"))
}

fn c7_closed_loop() -> Outcome {
    let start = Instant::now();
    let (sigma, vb, e0, lambda, t_end) = (1.0, 0.25, 1.0, 8.0, 1.5);
    let g = Growth::new(e0, vb).unwrap();
    let l_max = g.thickness(t_end);
    let m = 101;
    let kn = 401;
    let law = FeedbackLaw::new(lambda, sigma, g, l_max, kn).map_err(|e| e.to_string())?;
    let inv = inverse_kernel(lambda, sigma, l_max, kn).map_err(|e| e.to_string())?;
    // smooth data compatible with the target boundary conditions
    let a = 0.5;
    let c = vb * (1.0 - a) / (2.0 * sigma * e0 + vb * e0 * e0);
    let g0 = SampledField::from_fn(e0, m, |x| (PI * x / e0).cos() + a + c * x * x).unwrap();
    let l0 = inv.resample(TriangleGrid::new(e0, m).unwrap()).unwrap();
    let zeta0 = apply_inverse(&l0, &g0).unwrap();
    let z0 = RescaledField::new(zeta0.values, 0.0, g).unwrap();
    let cfg = SolverConfig {
        m,
        dt: 1e-3,
        ..Default::default()
    };
    let run = run_closed_loop(&law, Some(&inv), &z0, t_end, &cfg, &ClosedLoopOptions::default())
        .map_err(|e| e.to_string())?;
    let chain_ok = run.norms.iter().zip(&run.chain_bound).all(|(n, b)| n <= b);
    let chain_worst = run.norms.iter().zip(&run.chain_bound).map(|(n, b)| n / b).fold(0.0, f64::max);
    // growth rate of log(1 + ||l||) over the thicknesses the run visits
    let ls: Vec<f64> = (0..4).map(|i| e0 + (l_max - e0) * i as f64 / 3.0).collect();
    let lnorm: Vec<f64> = ls
        .iter()
        .map(|&l| (1.0 + inv.resample(TriangleGrid::new(l, m).unwrap()).unwrap().l2_norm()).ln())
        .collect();
    let c_fit = linear_fit(&ls, &lnorm).slope;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (t, n) in run.times.iter().zip(&run.norms) {
        if *t >= 0.5 * t_end - 1e-12 {
            xs.push(*t);
            ys.push(n.ln());
        }
    }
    let rate = -linear_fit(&xs, &ys).slope;
    let floor = 0.8 * (lambda - c_fit * vb);
    // h is the physical spacing at each output time
    let track_worst = run
        .times
        .iter()
        .zip(&run.tracking_error)
        .map(|(t, err)| {
            let h = g.thickness(*t) / (m - 1) as f64;
            err / (10.0 * h * h)
        })
        .fold(0.0, f64::max);
    let (fast, rt) = within(Duration::from_secs(20), start);
    check(
        chain_ok && rate >= floor && track_worst <= 1.0 && fast,
        format!(
            "chain max ratio {chain_worst:.3}, tail rate {rate:.3} >= {floor:.3} (c_fit {c_fit:.3}), tracking/10h^2 max {track_worst:.3}, {rt}"
        ),
    )
}

fn c8_vector_decoupling() -> Outcome {
    let target = desk_target();
    let p = pvd();
    let spec = diagonalize_at(&target, &p).map_err(|e| e.to_string())?;
    let a = diffusion_matrix(&target.u_bar, &p).unwrap();
    let g = Growth::from(&target);
    let t_end = 0.5;
    let laws = ModeLaws::new(spec, 3.0, g, g.thickness(t_end), 201, Exec::default()).map_err(|e| e.to_string())?;
    let m = 101;
    let comps = vec![
        (0..m).map(|k| { let y = k as f64 / (m - 1) as f64; 0.2 * (PI * y).cos() + 0.1 }).collect::<Vec<f64>>(),
        (0..m).map(|k| { let y = k as f64 / (m - 1) as f64; -0.1 * (2.0 * PI * y).cos() + 0.05 * y * y }).collect(),
    ];
    let u0 = VectorField::from_components(&comps, 0.0, g);
    let cfg = SolverConfig { m, dt: 1e-3, ..Default::default() };
    let coupled = run_vector_closed_loop(&laws, &a, &u0, t_end, &cfg, 50).map_err(|e| e.to_string())?;
    let modal = run_modal_closed_loop(&laws, &u0, t_end, &cfg, 50, Exec::default()).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (c, d) in coupled.iter().zip(&modal) {
        let scale = d.values.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        let diff = c.values.iter().zip(&d.values).fold(0.0f64, |s, (x, y)| s.max((x - y).abs()));
        worst = worst.max(diff / scale);
    }
    // the couplings used by the coupled stepper reproduce vector_feedback
    let last = coupled.last().unwrap();
    let fields: Vec<SampledField> = (0..2)
        .map(|c| SampledField::new(g.thickness(last.t), last.component(c)).unwrap())
        .collect();
    let psi = vector_feedback(&laws, last.t, &fields).unwrap();
    let cs = laws.couplings(last.t, m).unwrap();
    let mut via_rows = [0.0; 2];
    for (k, ck) in cs.iter().enumerate() {
        for r in 0..2 {
            via_rows[r] += (0..2).map(|c| ck[(r, c)] * last.values[k * 2 + c]).sum::<f64>();
        }
    }
    let fb_gap = (0..2).map(|r| (psi[r] - via_rows[r]).abs()).fold(0.0, f64::max)
        / psi.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    check(
        worst <= 1e-9 && fb_gap <= 1e-9 && coupled.len() == modal.len(),
        format!("max relative gap coupled vs modal {worst:.2e}, feedback rows vs vector_feedback {fb_gap:.2e}"),
    )
}

fn c9_schedule() -> Outcome {
    let start = Instant::now();
    let (s, _) = finite_time_schedule(1.0, 1.0, 6).map_err(|e| e.to_string())?;
    let certs = s.all_hyp1() && s.s_over_m_increasing;
    let desk = Schedule::from_sequences(0.875, vec![0.0, 0.5, 0.75, 0.875], vec![4.0, 16.0, 64.0], 1.0)
        .map_err(|e| e.to_string())?;
    let target = desk_target();
    let spec = diagonalize_at(&target, &pvd()).unwrap();
    let g = Growth::from(&target);
    let z0: Vec<RescaledField> = (0..2)
        .map(|i| RescaledField::from_fn(201, 0.0, g, |y| (PI * y).cos() + 0.5 + 0.2 * i as f64).unwrap())
        .collect();
    let cfg = SolverConfig { m: 201, dt: 1e-3, ..Default::default() };
    let run = run_finite_time(spec.sigma.as_slice(), &z0, &desk, 3, &cfg, 401, Exec::default())
        .map_err(|e| e.to_string())?;
    let norms: Vec<f64> = run.events.iter().map(|e| e.norm).collect();
    let monotone = norms.windows(2).all(|w| w[1] < w[0]);
    let total = norms[0] / norms[norms.len() - 1];
    let (fast, rt) = within(Duration::from_secs(60), start);
    check(
        certs && monotone && total >= 10.0 && fast,
        format!("default certificates {certs}, norms at switches {}, total decrease {total:.1}x, {rt}", sci(&norms)),
    )
}

fn rk4_decay(mu: f64, y0: f64, t: f64, steps: usize) -> f64 {
    let h = t / steps as f64;
    let mut y = y0;
    for _ in 0..steps {
        let k1 = -mu * y;
        let k2 = -mu * (y + 0.5 * h * k1);
        let k3 = -mu * (y + 0.5 * h * k2);
        let k4 = -mu * (y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}

fn c10_thickness() -> Outcome {
    let (mu, de0) = (2.0, 0.3);
    let one_piece = ThicknessSchedule::new(vec![0.0, 10.0], vec![mu]).unwrap();
    let mut exp_gap: f64 = 0.0;
    let mut ode_gap: f64 = 0.0;
    for k in 0..=20 {
        let t = 0.1 * k as f64;
        let exact = (-mu * t).exp() * de0;
        exp_gap = exp_gap.max((thickness_exponential(mu, de0, t) - exact).abs() / de0);
        exp_gap = exp_gap.max((one_piece.value(de0, t) - exact).abs() / de0);
        ode_gap = ode_gap.max((rk4_decay(mu, de0, t, 4000) - exact).abs() / de0);
    }
    let (_, th) = finite_time_schedule(1.0, 1.0, 8).unwrap();
    let vals: Vec<f64> = th.times.iter().map(|&t| th.value(de0, t)).collect();
    let decreasing = vals.windows(2).all(|w| w[1].abs() < w[0].abs());
    // with t'_m = 1 - 1/m and mu_m = m each interval contributes 1/(m+1)
    let mut env_gap: f64 = 0.0;
    let mut harmonic = 0.0;
    for (m, v) in vals.iter().enumerate() {
        if m > 0 {
            harmonic += 1.0 / (m + 1) as f64;
        }
        env_gap = env_gap.max(((v / de0).ln() + harmonic).abs());
    }
    // piecewise RK4 through the switching times
    let mut y = de0;
    let mut rk_gap: f64 = 0.0;
    for (m, w) in th.times.windows(2).enumerate() {
        y = rk4_decay(th.mus[m], y, w[1] - w[0], 4000);
        rk_gap = rk_gap.max((y - vals[m + 1]).abs() / de0);
    }
    check(
        exp_gap <= 1e-15 && ode_gap <= 1e-12 && decreasing && env_gap <= 1e-13 && rk_gap <= 1e-12,
        format!(
            "closed form gap {exp_gap:.1e}, RK4 gap {ode_gap:.1e}, switching decreasing {decreasing}, log-envelope gap {env_gap:.1e}, piecewise RK4 gap {rk_gap:.1e}"
        ),
    )
}

fn c11_nonlinear() -> Outcome {
    let p = pvd();
    let target = desk_target();
    let cfg = NonlinearConfig { cells: 200, dt: 1e-2, eps: 1e-8 };
    let u0 = NonlinearState::from_fn(2, cfg.cells, 1.0, |y| {
        let c = (PI * y).cos();
        vec![0.35 + 0.1 * c, 0.35 - 0.05 * c]
    })
    .unwrap();
    let run = simulate_open_loop(&u0, &target.phi_bar, 50.0, &p, &cfg, 10).map_err(|e| e.to_string())?;
    let fits = run.decay_fits(5.0, 50.0);
    let no_growth = fits.iter().all(|f| f.envelope.slope <= 2.0 * f.envelope.slope_stderr);
    let mut s = NonlinearState::uniform(&target.u_bar, cfg.cells, 1.0, 0.0).unwrap();
    for _ in 0..1000 {
        s = step_nonlinear(&s, &target.phi_bar, &p, &cfg).map_err(|e| e.to_string())?;
    }
    let ub = target.u_bar.as_slice();
    let drift = s
        .v
        .chunks(2)
        .flat_map(|c| c.iter().zip(ub).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    let slopes: Vec<String> = fits
        .iter()
        .map(|f| format!("{:.2e}+-{:.1e} (beta {:.2})", f.envelope.slope, f.envelope.slope_stderr, f.beta))
        .collect();
    check(
        no_growth && drift <= 1e-8,
        format!("envelope slopes {}, target drift over 1000 steps {drift:.1e}", slopes.join(", ")),
    )
}

fn c12_growth_shapes() -> Outcome {
    let l = 1.0;
    let ratios = [1.0f64, 4.0, 16.0];
    let s: Vec<f64> = ratios.iter().map(|r| r.sqrt()).collect();
    let kn: Vec<f64> = ratios.iter().map(|&r| forward_kernel(r, 1.0, l, 401).unwrap().h1_norm().ln()).collect();
    // the inverse-kernel bound carries the factor lambda/sigma; divide it out
    let ln: Vec<f64> = ratios
        .iter()
        .map(|&r| (inverse_kernel(r, 1.0, l, 401).unwrap().h1_norm() / r).ln())
        .collect();
    let fk = linear_fit(&s, &kn);
    let fl = linear_fit(&s, &ln);
    check(
        fk.r2 >= 0.95 && fl.slope <= 0.1 * fk.slope,
        format!(
            "forward coefficient {:.3} (R^2 {:.4}), inverse coefficient {:.3} (ratio {:.3})",
            fk.slope,
            fk.r2,
            fl.slope,
            fl.slope / fk.slope
        ),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 12] = [
        ("target decay", c1_target_decay),
        ("energy ledger", c2_energy_ledger),
        ("kernel correctness", c3_kernel),
        ("localization", c4_localization),
        ("transform round trip", c5_round_trip),
        ("adjoint identity", c6_adjoint),
        ("closed-loop stabilization", c7_closed_loop),
        ("vector decoupling", c8_vector_decoupling),
        ("finite-time schedule", c9_schedule),
        ("thickness control", c10_thickness),
        ("nonlinear open loop", c11_nonlinear),
        ("growth shapes", c12_growth_shapes),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(d) => println!("PASS {:>2} {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
