use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;

use qhaa::diffusion::DiffusionSolution;
use qhaa::dns::{run_dns, DnsConfig};
use qhaa::embedding::{assemble_with_guess, derive_embedding_with, slice, SourceMode};
use qhaa::grid::{build_first_derivative, build_second_derivative, inf_norm, BoundaryCondition, Grid1D};
use qhaa::homotopy::{GuessMode, Hierarchy, HomotopyConfig, Normalization, TimeScheme};
use qhaa::lcu::{
    apply_lcu_once, build_unitaries, richardson, sample_shots, Controls, LcuDecomposition, LcuMode, RegisterLayout,
    Statevector,
};
use qhaa::marching::{
    build_oneshot, condition_diagnostics, explicit_step, implicit_step, integrate, neumann_inverse, p_min,
    varah_gamma, ImplicitMethod, SchemeKind,
};

fn matrix(n: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v) * scale)
}

fn vector(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-1.0..1.0f64, n).prop_map(DVector::from_vec)
}

fn spectral(m: &DMatrix<Complex64>) -> f64 {
    m.singular_values().max()
}

/// Rows scaled so `||J||_inf = r`.
fn with_inf_norm(j: DMatrix<f64>, r: f64) -> DMatrix<f64> {
    let n = inf_norm(&j);
    if n == 0.0 {
        j
    } else {
        j * (r / n)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stencils_exact_on_quadratics(a in -2.0..2.0f64, b in -2.0..2.0f64, c in -2.0..2.0f64, k in 3u32..7) {
        let g = Grid1D::unit(1 << k).unwrap();
        let f = g.sample(|x| a + b * x + c * x * x);
        let d = build_first_derivative(&g).apply(&f);
        let dd = build_second_derivative(&g).apply(&f);
        for i in 1..g.n_points - 1 {
            let x = g.x(i);
            prop_assert!((d[i] - (b + 2.0 * c * x)).abs() < 1e-9);
            prop_assert!((dd[i] - 2.0 * c).abs() < 1e-7);
        }
        prop_assert_eq!(d[0], 0.0);
        prop_assert_eq!(dd[g.n_points - 1], 0.0);
    }

    #[test]
    fn lcu_reconstruction_within_taylor_bound(j in matrix(3, 1.0), e in 0.01..1.0f64, mode_split in any::<bool>()) {
        let delta = 0.9 / j.norm().max(1e-3);
        let mode = if mode_split { LcuMode::Split } else { LcuMode::Dilated };
        let d = build_unitaries(&j, e, delta, mode).unwrap();
        for u in &d.unitaries {
            let n = u.nrows();
            let id = DMatrix::<Complex64>::identity(n, n);
            prop_assert!((u.adjoint() * u - id).iter().all(|z| z.norm() <= 1e-12));
        }
        if mode == LcuMode::Dilated {
            let t = d.scaled_target();
            let err = spectral(&(d.reconstruct() - t.map(|x| Complex64::new(x, 0.0))));
            let tn = t.singular_values().max();
            prop_assert!(err <= e * e * tn.powi(3) / 6.0 * (1.0 + 1e-9) + 1e-14);
        }
    }

    #[test]
    fn lcu_application_preserves_norm(j in matrix(4, 1.0), v in vector(4), e in 0.05..1.0f64) {
        prop_assume!(v.norm() > 1e-3);
        let delta = 0.9 / inf_norm(&j).max(1e-3);
        let d = build_unitaries(&j, e, delta, LcuMode::Split).unwrap();
        let l = RegisterLayout::new(0, 2, 2).unwrap();
        let mut s = Statevector::prepare(l, 0, &v).unwrap();
        let p = apply_lcu_once(&mut s, &d, Controls::default()).unwrap();
        prop_assert!((s.norm() - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&p));
        // ancilla-zero branch is (2e/C) * reconstruct * psi
        let psi = v.map(|x| Complex64::new(x / v.norm(), 0.0));
        let want = d.reconstruct() * psi * Complex64::new(d.branch_factor(), 0.0);
        let got = DVector::from_vec(s.block(0, 0));
        prop_assert!((got - want).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn neumann_geometric_bound(j in matrix(5, 1.0), r in 0.05..0.95f64, p in 1usize..25) {
        let j = with_inf_norm(j, r);
        let n = j.nrows();
        let inv = (DMatrix::<f64>::identity(n, n) - &j).try_inverse().unwrap();
        let err = inf_norm(&(inv - neumann_inverse(&j, p).unwrap()));
        prop_assert!(err <= r.powi(p as i32) / (1.0 - r) * (1.0 + 1e-9) + 1e-13);
    }

    #[test]
    fn varah_bound_holds(j in matrix(6, 1.0), r in 0.05..0.95f64) {
        let j = with_inf_norm(j, r);
        let n = j.nrows();
        let m = DMatrix::<f64>::identity(n, n) - &j;
        if let Ok(g) = varah_gamma(&m) {
            let inv = m.try_inverse().unwrap();
            prop_assert!(inf_norm(&inv) <= (1.0 / g) * (1.0 + 1e-12));
        }
        let c = condition_diagnostics(&j).unwrap();
        prop_assert!(c.kappa >= 1.0 - 1e-12);
    }

    #[test]
    fn p_min_monotone(k1 in 1.01..1.99f64, k2 in 1.01..1.99f64, g in 0.01..1.0f64, e in 1e-12..1e-2f64) {
        let (lo, hi) = if k1 < k2 { (k1, k2) } else { (k2, k1) };
        prop_assert!(p_min(lo, g, e).unwrap() <= p_min(hi, g, e).unwrap());
    }

    #[test]
    fn richardson_cancels_quadratic_term(r0 in -2.0..2.0f64, c2 in -5.0..5.0f64, c4 in -5.0..5.0f64, e in 0.05..0.5f64) {
        let f = |x: f64| r0 + c2 * x * x + c4 * x.powi(4);
        let (e1, e2) = (e, e * 2.0 / 3.0);
        let r = richardson(&[f(e1)], &[f(e2)], e1, e2).unwrap()[0];
        // leftover is exactly -c4 e1^2 e2^2
        prop_assert!((r - r0 + c4 * e1 * e1 * e2 * e2).abs() < 1e-10);
    }

    #[test]
    fn shots_are_seed_deterministic(v in vector(8), seed in any::<u64>(), n in 1u64..5000) {
        prop_assume!(v.norm() > 1e-3);
        let l = RegisterLayout::new(0, 0, 3).unwrap();
        let s = Statevector::prepare(l, 0, &v).unwrap();
        let a = sample_shots(&s, n, seed).unwrap();
        prop_assert_eq!(&a, &sample_shots(&s, n, seed).unwrap());
        prop_assert_eq!(a.counts.values().sum::<u64>(), n);
        for (i, c) in &a.counts {
            prop_assert!(*c > 0 && v[*i] != 0.0);
        }
    }

    #[test]
    fn oneshot_blocks_match_iterated_steps(a in matrix(3, 0.5), b in vector(3), v0 in vector(3), tau in 1usize..4, c in 0usize..3, explicit in any::<bool>()) {
        let dt = 0.1;
        let steps: Vec<_> = (0..tau).map(|k| (&a * (1.0 + 0.1 * k as f64), b.clone())).collect();
        let os = build_oneshot(&steps, dt, c, &v0, explicit).unwrap();
        prop_assert_eq!(os.slots(), tau + c + 1);
        let x = os.solve_dense().unwrap();
        let mut v = v0.clone();
        for j in 0..os.slots() {
            if (1..=tau).contains(&j) {
                let (ak, bk) = &steps[j - 1];
                v = if explicit {
                    explicit_step(ak, bk, &v, dt)
                } else {
                    implicit_step(ak, bk, &v, dt, ImplicitMethod::Direct).unwrap()
                };
            }
            prop_assert!((os.slot(&x, j) - &v).amax() <= 1e-12);
        }
    }

    #[test]
    fn implicit_steps_contract_normal_modes(ls in prop::collection::vec(0.1..50.0f64, 4), dt in 0.01..10.0f64, v0 in vector(4)) {
        // A = Q diag(-l) Q^T with a fixed rotation
        let q = DMatrix::from_fn(4, 4, |i, j| ((i * 4 + j) as f64 * 0.7).sin()).qr().q();
        let a = &q * DMatrix::from_diagonal(&DVector::from_iterator(4, ls.iter().map(|l| -l))) * q.transpose();
        let tr = integrate(|_| (a.clone(), DVector::zeros(4)), &v0, dt, 6, SchemeKind::ImplicitIterative, ImplicitMethod::Direct).unwrap();
        for w in tr.states.windows(2) {
            let (p0, p1) = (q.transpose() * &w[0], q.transpose() * &w[1]);
            for k in 0..4 {
                prop_assert!(p1[k].abs() <= p0[k].abs() * (1.0 + 1e-12) + 1e-15);
            }
        }
    }

    #[test]
    fn embedded_low_orders_match_sequential(h in -1.0..-0.1f64, nu in 0.001..0.05f64) {
        let g = Grid1D::unit(16).unwrap();
        let u0 = DiffusionSolution::with_defaults(nu, 1.0).unwrap();
        let cfg = HomotopyConfig::new(h, 4, nu).unwrap();
        let sys = derive_embedding_with(&cfg, 64, SourceMode::Coupled).unwrap();
        let hier = Hierarchy::new(cfg, g, u0.clone()).unwrap().with_guess(GuessMode::DiscreteHeat);
        let (dt, tau) = (2e-3, 10);
        let terms = hier.solve(dt, tau, TimeScheme::Explicit).unwrap();
        let gs = hier.guess_trajectory(dt, tau, TimeScheme::Explicit);
        let v0 = sys.initial_state(&g, &u0);
        let tr = integrate(|k| assemble_with_guess(&sys, &g, &u0, k as f64 * dt, Some(&gs[k])), &v0, dt, tau, SchemeKind::ExplicitIterative, ImplicitMethod::Direct).unwrap();
        let last = tr.states.last().unwrap().as_slice();
        for p in 0..=2 {
            let e = slice(last, p, &g);
            let s = terms[p].final_field(Normalization::Normalized);
            for (x, y) in e.iter().zip(&s) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn dns_holds_dirichlet_ends(nu in 0.005..0.05f64) {
        let cfg = DnsConfig { n_dns: 64, t_final: 0.05, output_dt: Some(0.025), ..Default::default() };
        let tr = run_dns(&cfg, nu, &BoundaryCondition::burgers(1.0)).unwrap();
        for f in &tr.fields {
            prop_assert_eq!(f[0], 1.0);
            prop_assert_eq!(f[64], -1.0);
            prop_assert!(f.iter().all(|u| u.abs() <= 1.0 + 1e-9));
        }
    }
}

#[test]
fn kappa_form_of_neumann_bound_fails_on_scaled_identity() {
    // J = 0.5 I: kappa = 1 makes (kappa-1)^P / Gamma vanish while the truncation error is 0.0625
    let j = DMatrix::identity(2, 2) * 0.5;
    let c = condition_diagnostics(&j).unwrap();
    let g = c.gamma.unwrap();
    let err = inf_norm(&(DMatrix::identity(2, 2) * 2.0 - neumann_inverse(&j, 5).unwrap()));
    assert!((c.kappa - 1.0).abs() < 1e-15);
    assert!((err - 0.0625).abs() < 1e-15);
    assert!(err > (c.kappa - 1.0).powi(5) / g);
}

#[test]
fn pauli_branch_matches_sine() {
    let x = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let d = LcuDecomposition::from_hermitian(&x, 0.1).unwrap();
    let r = d.reconstruct();
    assert!((r[(0, 1)].re - 0.1f64.sin() / 0.1).abs() < 1e-14);
}
