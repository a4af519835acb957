use std::f64::consts::PI;

use proptest::prelude::*;

use backstep_core::control::{control_variables, finite_time_schedule, recover_fluxes, ThicknessSchedule};
use backstep_core::kernel::{forward_kernel, inverse_kernel, solve_kernel};
use backstep_core::linalg::Tridiagonal;
use backstep_core::model::{check_entropic, diffusion_matrix, Composition, PvdParams};
use backstep_core::nonlinear::{step_nonlinear, NonlinearConfig, NonlinearState};
use backstep_core::transform::{apply_forward, apply_inverse, SampledField};

fn composition(n: usize) -> impl Strategy<Value = Composition> {
    prop::collection::vec(0.05f64..1.0, n + 1).prop_map(|w| {
        let s: f64 = w.iter().sum();
        Composition::new(w[1..].iter().map(|x| x / s).collect()).unwrap()
    })
}

fn params(n: usize) -> impl Strategy<Value = PvdParams> {
    prop::collection::vec(0.2f64..5.0, (n + 1) * n / 2).prop_map(move |ks| {
        let mut pairs = Vec::new();
        let mut it = ks.into_iter();
        for i in 0..=n {
            for j in 0..i {
                pairs.push((i, j, it.next().unwrap()));
            }
        }
        PvdParams::from_pairs(n, &pairs).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn diffusion_matrix_is_entropic(p in params(3), u in composition(3), seed in 0u64..1000) {
        let r = check_entropic(&u, &p, 50, seed).unwrap();
        prop_assert!(r.min_sym_eig > 0.0);
    }

    #[test]
    fn relabelling_species_permutes_the_matrix(p in params(2), u in composition(2)) {
        let a = diffusion_matrix(&u, &p).unwrap();
        let sw = p.swapped(1, 2);
        let v = Composition::new(vec![u.as_slice()[1], u.as_slice()[0]]).unwrap();
        let b = diffusion_matrix(&v, &sw).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((a[(i, j)] - b[(1 - i, 1 - j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_diagonal_trace_is_exact(alpha in -20.0f64..20.0, l in 0.3f64..2.0) {
        let k = solve_kernel(alpha, l, 61).unwrap();
        prop_assert!(k.diag_error() <= 1e-12 * (1.0 + alpha.abs() * l));
    }

    #[test]
    fn transform_round_trip_is_second_order(lambda in 0.5f64..10.0, sigma in 0.5f64..2.0, a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let l = 1.2;
        let errs: Vec<f64> = [81, 161].iter().map(|&n| {
            let k = forward_kernel(lambda, sigma, l, n).unwrap();
            let li = inverse_kernel(lambda, sigma, l, n).unwrap();
            let f = SampledField::from_fn(l, n, |x| 1.0 + a * (PI * x / l).cos() + b * x * x).unwrap();
            let back = apply_inverse(&li, &apply_forward(&k, &f).unwrap()).unwrap();
            let d: Vec<f64> = back.values.iter().zip(&f.values).map(|(p, q)| p - q).collect();
            SampledField::new(l, d).unwrap().l2_norm() / f.l2_norm()
        }).collect();
        // the error constant grows with the kernel size
        let h = l / 80.0;
        let alpha = lambda / sigma;
        prop_assert!(errs[0] <= 10.0 * h * h * (1.0 + alpha).powi(2), "{errs:?}");
        prop_assert!(errs[1] < errs[0] / 3.0 || errs[1] < 1e-12, "{errs:?}");
    }

    #[test]
    fn forward_transform_is_linear(c in -3.0f64..3.0, s in 0.0f64..6.0) {
        let k = forward_kernel(4.0, 1.0, 1.0, 41).unwrap();
        let f = SampledField::from_fn(1.0, 41, |x| (s * x).sin()).unwrap();
        let g = SampledField::from_fn(1.0, 41, |x| x * x - c).unwrap();
        let sum = SampledField::new(1.0, f.values.iter().zip(&g.values).map(|(a, b)| c * a + b).collect()).unwrap();
        let lhs = apply_forward(&k, &sum).unwrap();
        let tf = apply_forward(&k, &f).unwrap();
        let tg = apply_forward(&k, &g).unwrap();
        for i in 0..41 {
            prop_assert!((lhs.values[i] - (c * tf.values[i] + tg.values[i])).abs() < 1e-12 * (1.0 + c.abs()) * 10.0);
        }
    }

    #[test]
    fn flux_variables_round_trip(u in composition(3), dphi in prop::collection::vec(-1.0f64..1.0, 4)) {
        let (dpsi, dtheta) = control_variables(&dphi, &u).unwrap();
        let back = recover_fluxes(&dpsi, dtheta, &u).unwrap();
        for (a, b) in back.iter().zip(&dphi) {
            prop_assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn default_schedule_certified_on_any_horizon(t_end in 0.1f64..20.0, gamma in 0.05f64..5.0) {
        let (s, th) = finite_time_schedule(t_end, gamma, 6).unwrap();
        prop_assert!(s.all_hyp1() && s.s_over_m_increasing);
        prop_assert!(s.times.iter().all(|t| *t < t_end));
        prop_assert!(th.partial_sums.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn piecewise_thickness_never_grows(mus in prop::collection::vec(0.0f64..5.0, 1..6), de0 in -1.0f64..1.0) {
        let times: Vec<f64> = (0..=mus.len()).map(|k| k as f64 * 0.3).collect();
        let th = ThicknessSchedule::new(times, mus).unwrap();
        let mut prev = de0.abs();
        for k in 0..40 {
            let v = th.value(de0, 0.05 * k as f64).abs();
            prop_assert!(v <= prev * (1.0 + 1e-15));
            prev = v;
        }
    }

    #[test]
    fn tridiagonal_solve_has_small_residual(d in prop::collection::vec(3.0f64..5.0, 8), o in prop::collection::vec(-1.0f64..1.0, 7), r in prop::collection::vec(-1.0f64..1.0, 8)) {
        let t = Tridiagonal { sub: o.clone(), diag: d, sup: o.iter().map(|x| 0.5 * x).collect() };
        let mut x = r.clone();
        t.solve_in_place(&mut x).unwrap();
        for (a, b) in t.mul_vec(&x).iter().zip(&r) {
            prop_assert!((a - b).abs() < 1e-13);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn uniform_target_is_stationary(u in composition(2), p in params(2), vb in 0.05f64..1.0) {
        let us = u.as_slice();
        let phi = [vb * (1.0 - u.rho()), vb * us[0], vb * us[1]];
        let cfg = NonlinearConfig { cells: 40, dt: 1e-2, eps: 1e-8 };
        let mut s = NonlinearState::uniform(&u, 40, 1.0, 0.0).unwrap();
        for _ in 0..100 {
            s = step_nonlinear(&s, &phi, &p, &cfg).unwrap();
        }
        let drift = s.v.chunks(2).map(|c| (c[0] - us[0]).abs().max((c[1] - us[1]).abs())).fold(0.0, f64::max);
        prop_assert!(drift < 1e-12);
    }

    #[test]
    fn mass_balance_is_exact(p in params(2), a in -0.1f64..0.1, vb in 0.0f64..0.5) {
        let cfg = NonlinearConfig { cells: 40, dt: 1e-2, eps: 1e-8 };
        let mut s = NonlinearState::from_fn(2, 40, 1.0, |y| vec![0.3 + a * (PI * y).cos(), 0.3 - a * y]).unwrap();
        let phi = [0.2 * vb, 0.5 * vb, 0.3 * vb];
        let m0 = s.mass();
        for _ in 0..50 {
            s = step_nonlinear(&s, &phi, &p, &cfg).unwrap();
        }
        for (i, (m, m0)) in s.mass().iter().zip(&m0).enumerate() {
            prop_assert!((m - m0 - s.t * phi[i + 1]).abs() < 1e-12);
        }
    }
}
