use proptest::prelude::*;
use tokmoe::kernel::{Tensor, TrainRng};
use tokmoe::theory::instances::{
    aligned_witness, random_routed, random_slice, random_witness, scaled_identity_witness, separation_instance,
    three_expert_instance, linear_psi_slice,
};
use tokmoe::theory::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn zero_reliance_is_perfectly_stable() {
    let (m, suite) = scaled_identity_witness(3, 2.0, 0.0, 1.0).unwrap();
    assert_eq!(h1_measured_stability(&m, &suite), 0.0);
}

#[test]
fn aligned_perturbation_attains_the_cap() {
    let (m, suite) = scaled_identity_witness(3, 2.0, 0.5, 1.0).unwrap();
    assert!(close(m.l_h, 2.0, 1e-12));
    let r = h1_bound_check(&m, &suite).unwrap();
    assert!(close(r.bound, 1.0, 1e-12));
    assert!(r.holds);
    assert!(r.slack.abs() <= 1e-6, "slack {}", r.slack);
}

#[test]
fn stability_scales_linearly_in_eta() {
    for seed in 0..20 {
        let (m, suite) = random_witness(seed).unwrap();
        let a = h1_measured_stability(&m.with_eta(0.7), &suite);
        let b = h1_measured_stability(&m.with_eta(1.4), &suite);
        assert!(close(b, 2.0 * a, 1e-12 * (1.0 + b)), "seed {seed}: {a} vs {b}");
    }
}

#[test]
fn zero_head_has_zero_bound_and_zero_stability() {
    let (m, suite) = scaled_identity_witness(3, 0.0, 1.3, 1.0).unwrap();
    let r = h1_bound_check(&m, &suite).unwrap();
    assert_eq!((r.measured, r.bound), (0.0, 0.0));
    assert!(r.holds);
}

#[test]
fn random_witnesses_respect_the_cap_and_aligned_ones_are_tight() {
    for i in 0..100 {
        let (m, suite) = random_witness(instance_seed(11, 1, i)).unwrap();
        let r = h1_bound_check(&m, &suite).unwrap();
        assert!(r.holds, "instance {i}: {r:?}");
        let (m, suite) = aligned_witness(instance_seed(11, 3, i)).unwrap();
        let r = h1_bound_check(&m, &suite).unwrap();
        assert!(r.holds && r.slack <= 1e-6, "aligned instance {i}: {r:?}");
    }
}

#[test]
fn grid_touching_the_low_component_is_rejected() {
    let (m, mut suite) = scaled_identity_witness(3, 1.0, 0.5, 1.0).unwrap();
    suite.grid.push(vec![0.5, 0.0, 0.0]);
    assert!(m.check_suite(&suite).is_err());
    let (_, mut suite) = scaled_identity_witness(3, 1.0, 0.5, 1.0).unwrap();
    suite.grid.push(vec![0.0, 0.0, 1.5]);
    assert!(suite.validate(3, 3).is_err(), "grid point beyond ρ");
}

#[test]
fn general_perturbations_obey_the_two_component_bound() {
    let (m, suite) = scaled_identity_witness(3, 2.0, 0.5, 1.0).unwrap();
    let grid = vec![vec![0.3, 0.0, 0.4], vec![0.0, -1.0, 0.0]];
    let r = h1_general_bound_check(&m, &suite.d0, &grid).unwrap();
    // ρ_L = 0.3, ρ_H = 1: bound 2·(0.3 + 0.5).
    assert!(close(r.bound, 1.6, 1e-12));
    assert!(r.holds);
}

#[test]
fn constructed_slice_has_the_expected_floor() {
    let f = linear_psi_slice(0.4).unwrap();
    assert!(close(f.eta_min, 0.3, 1e-12));
    assert!(close(f.eta_max, 0.4, 1e-12));
    assert!(f.feasible && f.sweep_feasible && f.agrees);
    assert!(close(f.floor.unwrap(), 0.2, 1e-12));
    assert!(f.sweep_min_e1.unwrap() >= 0.2 - 1e-9);
    assert!(f.sweep_points >= SWEEP_POINTS);
}

#[test]
fn slice_floor_saturates_and_detects_infeasibility() {
    let f = linear_psi_slice(10.0).unwrap();
    assert_eq!(f.floor, Some(0.0));
    assert!(f.agrees);

    let f = linear_psi_slice(0.0).unwrap();
    assert!(!f.feasible && !f.sweep_feasible && f.agrees);
    assert_eq!(f.floor, None);
}

#[test]
fn random_slices_match_the_sweep() {
    let (mut feasible, mut infeasible) = (0, 0);
    for i in 0..200 {
        let (b, l_h, rho) = random_slice(instance_seed(5, 4, i)).unwrap();
        let f = slice_floor(&b, l_h, rho).unwrap();
        assert!(f.agrees, "instance {i}: {f:?}");
        if f.feasible {
            feasible += 1;
        } else {
            infeasible += 1;
        }
    }
    assert!(feasible > 10 && infeasible > 10, "{feasible} feasible, {infeasible} infeasible");
}

#[test]
fn tabulated_functions_must_be_non_increasing() {
    assert!(Tabulated::new(vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
    assert!(Tabulated::new(vec![0.1, 1.0], vec![0.5, 0.4]).is_err());
    let t = Tabulated::new(vec![0.0, 1.0, 2.0], vec![1.0, 0.5, 0.5]).unwrap();
    assert_eq!(t.eval(0.5), 0.75);
    assert_eq!(t.eval(7.0), 0.5);
    assert_eq!(t.first_at_most(0.5), 1.0);
    assert_eq!(t.first_at_most(0.4), f64::INFINITY);
}

#[test]
fn realized_bounds_give_a_floor_the_measured_sweep_respects() {
    // Head 2I with an aligned grid point, so measured stability equals L_h η ρ.
    let (m, suite) = scaled_identity_witness(3, 2.0, 0.0, 0.5).unwrap();
    let etas: Vec<f64> = (0..=200).map(|j| 0.01 * j as f64).collect();
    let psi_fit = realized_psi(&m, &suite, None, &etas).unwrap();
    let psi_e1 = realized_psi(&m, &suite, Some(0), &etas).unwrap();
    let alpha = 0.5 * (psi_fit.values[0] + psi_fit.tail());
    let bounds = BoundFunctions { psi_fit, psi_e1, alpha, epsilon: 0.6 };
    let f = h1_slice_floor(&bounds, &m, &suite).unwrap();
    assert!(f.agrees);
    let floor = f.floor.expect("feasible slice");
    for &eta in &etas {
        let me = m.with_eta(eta);
        let stab = h1_measured_stability(&me, &suite);
        assert!(close(stab, m.l_h * eta * suite.rho, 1e-12));
        if me.risk(&suite.d0, &suite) <= alpha && stab <= bounds.epsilon {
            assert!(me.risk(&suite.test[0], &suite) >= floor - 1e-9, "η = {eta}");
        }
    }
}

#[test]
fn three_expert_instance_meets_its_coverage_bound() {
    let (rf, suite) = three_expert_instance().unwrap();
    let r = h2_coverage_selection(&rf, &suite).unwrap();
    assert_eq!(r.k_star, vec![0, 1, 2]);
    assert_eq!(r.beta_cov, 0.0);
    for d in &r.delta_sel {
        assert!(close(*d, 0.2, 1e-15));
    }
    assert!(close(r.bound, 0.2, 1e-15));
    assert!(close(r.ood_risk, 0.2, 1e-15));
    assert!(r.holds);
}

#[test]
fn oracle_router_has_no_selection_error() {
    let (mut rf, suite) = three_expert_instance().unwrap();
    let mut gate = Tensor::zeros(&[3, 6]);
    for j in 0..6 {
        gate.set(j % 3, j, 2.0);
    }
    rf.router.gate_w = gate;
    let r = h2_coverage_selection(&rf, &suite).unwrap();
    assert!(r.delta_sel.iter().all(|&d| d == 0.0));
    assert!(r.ood_risk <= r.beta_cov);
}

#[test]
fn single_mechanism_bound_is_tight() {
    for seed in 0..50 {
        let (mut rf, suite) = random_routed(seed).unwrap();
        rf.mechanisms.truncate(1);
        rf.router.gate_w = Tensor::zeros(&[1, rf.in_dim()]);
        rf.router.gate_b = vec![0.0];
        let r = h2_coverage_selection(&rf, &suite).unwrap();
        assert!(r.delta_sel.iter().all(|&d| d == 0.0));
        assert_eq!(r.ood_risk, r.bound);
        assert_eq!(r.beta_cov, r.env_risk.iter().copied().fold(f64::MIN, f64::max));
    }
}

fn two_mechanism_flip() -> (RoutedFamily, EnvironmentSuite) {
    let mechs = vec![
        Mechanism { w: Tensor::identity(2), b: vec![0.0; 2] },
        Mechanism { w: Tensor::identity(2).map(|x| 2.0 * x), b: vec![0.0; 2] },
    ];
    let gate = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let router = Router { gate_w: gate, gate_b: vec![0.0, 0.5], kind: RouterKind::Hard };
    let rf = RoutedFamily::new(mechs, router).unwrap();
    let d0 = Environment::new("d0", vec![Sample { x: vec![0.6, 0.0], y: 0, weight: 1.0 }]);
    let suite = EnvironmentSuite {
        d0: d0.clone(),
        test: vec![d0],
        l_max: 1.0,
        rho: 0.2,
        grid: vec![vec![0.0, 0.0], vec![-0.2, 0.0]],
    };
    (rf, suite)
}

#[test]
fn single_flip_decomposition_matches_hand_values() {
    let (rf, suite) = two_mechanism_flip();
    let r = h2_stability_decomposition(&rf, &suite).unwrap();
    assert!(close(r.r_stab, 0.2, 1e-12));
    assert!(close(r.r_base, 0.2, 1e-12));
    assert_eq!(r.r_route, 1.0);
    assert!(close(r.l_f_b, 0.6, 1e-12));
    assert!(close(r.bound, 0.8, 1e-12));
    assert!(r.holds);
}

#[test]
fn constant_router_and_identical_mechanisms_reduce_to_the_base_term() {
    for seed in 0..50 {
        let (mut rf, suite) = random_routed(seed).unwrap();
        let k = rf.k();
        rf.router.gate_w = Tensor::zeros(&[k, rf.in_dim()]);
        let r = h2_stability_decomposition(&rf, &suite).unwrap();
        assert_eq!(r.r_route, 0.0);
        assert!(r.r_stab <= r.r_base + 1e-12);

        let (mut rf, suite) = random_routed(seed).unwrap();
        let first = rf.mechanisms[0].clone();
        rf.mechanisms.iter_mut().for_each(|m| *m = first.clone());
        let r = h2_stability_decomposition(&rf, &suite).unwrap();
        assert_eq!(r.l_f_b, 0.0);
        assert!(r.r_stab <= r.r_base + 1e-12);
    }
}

#[test]
fn random_routed_families_satisfy_both_bounds() {
    for i in 0..100 {
        let (rf, suite) = random_routed(instance_seed(3, 5, i)).unwrap();
        let c = h2_coverage_selection(&rf, &suite).unwrap();
        let s = h2_stability_decomposition(&rf, &suite).unwrap();
        assert!(c.holds, "instance {i}: {c:?}");
        assert!(s.holds, "instance {i}: {s:?}");
    }
}

#[test]
fn constructed_instance_separates_from_the_static_floor() {
    let (rf, suite, slice) = separation_instance().unwrap();
    assert!(close(slice.floor.unwrap(), 0.4, 1e-12));
    let cov = h2_coverage_selection(&rf, &suite).unwrap();
    let st = h2_stability_decomposition(&rf, &suite).unwrap();
    let caps = JointCaps::measured(&cov, &st);
    let r = h2_joint_and_separation(&rf, &suite, &caps, &slice).unwrap();
    assert!(r.caps_hold && r.slice_feasible && r.separation_condition);
    assert_eq!(r.separated, Some(true));
    assert!(r.ood_risk < slice.floor.unwrap());
    assert!(r.holds());
    // Measured caps reproduce the coverage and decomposition bounds exactly.
    assert_eq!(r.ood_bound, cov.bound);
    assert_eq!(r.stab_bound, st.bound);
}

#[test]
fn vacuous_selection_cap_reports_no_separation() {
    let (rf, suite, slice) = separation_instance().unwrap();
    let cov = h2_coverage_selection(&rf, &suite).unwrap();
    let st = h2_stability_decomposition(&rf, &suite).unwrap();
    let caps = JointCaps { delta_sel: 1.0, ..JointCaps::measured(&cov, &st) };
    let r = h2_joint_and_separation(&rf, &suite, &caps, &slice).unwrap();
    assert!(!r.separation_condition);
    assert_eq!(r.separated, None);
    assert!(r.holds());
}

#[test]
fn default_verification_passes_and_is_reproducible() {
    let report = run_verification(&VerifyConfig::default()).unwrap();
    assert!(report.passed(), "{}", report.to_text());
    assert!(report.tables.iter().filter(|t| t.name != "h2-separation").all(|t| t.rows.len() == 100));

    let one = VerifyConfig { instances: 1, seed: 7, rhs_scale: 1.0 };
    let a = run_verification(&one).unwrap().to_text();
    assert_eq!(a, run_verification(&one).unwrap().to_text());
}

#[test]
fn halved_right_hand_sides_are_caught() {
    let cfg = VerifyConfig { rhs_scale: 0.5, ..VerifyConfig::default() };
    let report = run_verification(&cfg).unwrap();
    assert!(!report.passed());
    assert!(report.to_text().contains("FAIL"));
}

proptest! {
    #[test]
    fn eta_max_grows_with_epsilon_and_eta_min_shrinks_with_alpha(seed in 0u64..10_000, bump in 0.0f64..1.0) {
        let (b, l_h, rho) = random_slice(seed).unwrap();
        let wider = BoundFunctions { epsilon: b.epsilon + bump, alpha: b.alpha + bump, ..b.clone() };
        prop_assert!(wider.eta_max(l_h, rho) >= b.eta_max(l_h, rho));
        prop_assert!(wider.eta_min() <= b.eta_min());
    }

    #[test]
    fn mixture_output_change_is_bounded_by_the_envelope(seed in 0u64..10_000) {
        let (rf, suite) = random_routed(seed).unwrap();
        let mut rng = TrainRng::new(seed);
        let mut mix = || {
            let v: Vec<f64> = (0..rf.k()).map(|_| rng.uniform() + 1e-3).collect();
            let z: f64 = v.iter().sum();
            RoutingState::Mixture(v.into_iter().map(|x| x / z).collect())
        };
        let (p, q) = (mix(), mix());
        let x = &suite.d0.samples[0].x;
        let a = rf.execute(&p, x);
        let b = rf.execute(&q, x);
        let change = a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        prop_assert!(change <= rf.envelope(x) * p.distance(&q) + 1e-12);
    }
}

#[test]
fn averaged_envelope_can_undercut_the_output_change() {
    // Drift only where the mechanisms are far apart, on a low-weight input.
    let mechs = vec![
        Mechanism { w: Tensor::identity(2), b: vec![0.0; 2] },
        Mechanism { w: Tensor::identity(2).map(|x| 3.0 * x), b: vec![0.0; 2] },
    ];
    let gate = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let router = Router { gate_w: gate, gate_b: vec![0.0, 0.5], kind: RouterKind::Hard };
    let rf = RoutedFamily::new(mechs, router).unwrap();
    let d0 = Environment::new(
        "d0",
        vec![Sample { x: vec![-1.0, 0.0], y: 0, weight: 0.9 }, Sample { x: vec![0.6, 10.0], y: 0, weight: 0.1 }],
    );
    let suite = EnvironmentSuite {
        d0: d0.clone(),
        test: vec![d0],
        l_max: 1.0,
        rho: 0.2,
        grid: vec![vec![0.0, 0.0], vec![-0.2, 0.0]],
    };
    let r = h2_stability_decomposition(&rf, &suite).unwrap();
    assert!(r.r_stab > r.r_base + r.l_f_b_mean * r.r_route + 1.0, "{r:?}");
    assert!(r.holds, "{r:?}");
}
