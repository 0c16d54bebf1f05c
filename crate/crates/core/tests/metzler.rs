mod common;

use common::*;
use nalgebra::DMatrix;
use rcnet_core::graph::graph_from_s;
use rcnet_core::linalg::{random_orthogonal, spd_sqrt, Component};
use rcnet_core::metzler::{
    l1_descent, minimize_l1, search, solve_exhaustive_small_k, solve_metzler, SearchConfig,
};
use rcnet_core::netgen::{random_rc_instance, GenerateOptions};
use rcnet_core::pipeline::{reconstruct, PipelineConfig};
use rcnet_core::rotation::{
    build_zw, default_rank_tol, rotation_family, RotationFamily, DEFAULT_GRAM_TOL,
};
use rcnet_core::StateSpaceModel;

struct Setup {
    family: RotationFamily,
    p: DMatrix<f64>,
    g: Vec<f64>,
    model: StateSpaceModel,
    q_true: DMatrix<f64>,
}

/// Family built from the exact scaling `P = sqrt(T G^-1 T^T)`.
fn exact_setup(s: &DMatrix<f64>, g: &[f64], t: &DMatrix<f64>, c: &DMatrix<f64>) -> Setup {
    let model = scrambled_model(s, g, t, Some(c), None);
    let n = s.nrows();
    let g_inv = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / g[i] } else { 0.0 });
    let p = spd_sqrt(&(t * &g_inv * t.transpose())).unwrap();
    let sqrt_g_inv = g_inv.map(f64::sqrt);
    let q_true = p.clone().try_inverse().unwrap() * t * sqrt_g_inv;
    let (z, w) = build_zw(&p, g, &model, DEFAULT_GRAM_TOL).unwrap();
    let family = rotation_family(&z, &w, default_rank_tol(&z)).unwrap();
    Setup {
        family,
        p,
        g: g.to_vec(),
        model,
        q_true,
    }
}

fn unique_metzler_setup() -> (Setup, DMatrix<f64>) {
    let s = laplacian(4, &[(0, 2, 1.0), (1, 3, 2.0), (2, 3, 1.5)])
        - DMatrix::from_diagonal_element(4, 4, 0.3);
    let c = projection(2, 4) + test_matrix(2, 4, 502) * 0.5;
    (exact_setup(&s, &[1.0; 4], &test_transform(4, 1), &c), s)
}

#[test]
fn singleton_family_reports_violation() {
    let s = m(3, 3, &[-3.0, -1.0, 0.5, -1.0, -2.0, 0.0, 0.5, 0.0, -1.0]);
    let su = exact_setup(
        &s,
        &[1.0; 3],
        &test_transform(3, 4),
        &DMatrix::identity(3, 3),
    );
    assert_eq!(su.family.k, 0);
    let res = solve_exhaustive_small_k(
        &su.family,
        &su.p,
        &su.g,
        &su.model,
        &SearchConfig::default(),
    )
    .unwrap();
    assert!(!res.feasible);
    assert!((res.best.metzler_violation - 1.0).abs() < 1e-9);
    assert_eq!(res.per_restart_log.len(), 1);
}

#[test]
fn tie_between_signs_prefers_plus() {
    // node 3 is unmeasured and decoupled, so both signs give the same S
    let s = m(3, 3, &[-2.0, 1.0, 0.0, 1.0, -3.0, 0.0, 0.0, 0.0, -5.0]);
    let su = exact_setup(&s, &[1.0; 3], &test_transform(3, 6), &projection(2, 3));
    assert_eq!(su.family.k, 1);
    let res = solve_exhaustive_small_k(
        &su.family,
        &su.p,
        &su.g,
        &su.model,
        &SearchConfig::default(),
    )
    .unwrap();
    assert!(res.feasible);
    assert_eq!(res.ubar[(0, 0)], 1.0);
    assert_eq!(res.per_restart_log.len(), 2);
    assert!(res.per_restart_log.iter().all(|r| r.violation <= 1e-12));
    assert!((&res.best.s - &s).amax() < 1e-9);
}

#[test]
fn exhaustive_search_rejects_large_k() {
    let (su, _) = unique_metzler_setup();
    assert!(solve_exhaustive_small_k(
        &su.family,
        &su.p,
        &su.g,
        &su.model,
        &SearchConfig::default()
    )
    .is_err());
}

#[test]
fn unique_metzler_point_is_recovered() {
    let (su, s_true) = unique_metzler_setup();
    assert_eq!(su.family.k, 2);
    // grid check: every near-Metzler member sits next to the true rotation
    let u_true = su.family.wbar.transpose() * &su.q_true * &su.family.zbar;
    for reflect in [false, true] {
        for i in 0..629 {
            let u = o_element(2, &[i as f64 * 0.01], reflect);
            let real = rcnet_core::rotation::assemble_realization(
                &su.p,
                &su.g,
                &su.family.q(&u),
                &su.model,
                None,
            )
            .unwrap();
            if real.metzler_violation <= 0.05 {
                assert!((&u - &u_true).amax() < 0.1);
            }
        }
    }
    let cfg = SearchConfig::default();
    for res in [
        minimize_l1(&su.family, &su.p, &su.g, &su.model, &cfg).unwrap(),
        solve_metzler(&su.family, &su.p, &su.g, &su.model, &cfg).unwrap(),
    ] {
        assert!(res.feasible);
        assert!((&res.best.s - &s_true).amax() <= 1e-6);
        assert!((res.objective - res.best.s.iter().map(|v| v.abs()).sum::<f64>()).abs() < 1e-12);
    }
}

#[test]
fn infeasible_family_is_reported_deterministically() {
    // the measured pair has a negative coupling no rotation can touch
    let s = m(
        4,
        4,
        &[
            -3.0, -1.0, 1.0, 0.0, -1.0, -3.0, 0.0, 1.0, 1.0, 0.0, -2.0, 1.0, 0.0, 1.0, 1.0, -2.0,
        ],
    );
    let su = exact_setup(&s, &[1.0; 4], &test_transform(4, 8), &projection(2, 4));
    assert_eq!(su.family.k, 2);
    let cfg = SearchConfig {
        seed: 3,
        ..Default::default()
    };
    let a = solve_metzler(&su.family, &su.p, &su.g, &su.model, &cfg).unwrap();
    let b = solve_metzler(&su.family, &su.p, &su.g, &su.model, &cfg).unwrap();
    assert!(!a.feasible);
    assert!(a.best.metzler_violation >= 1.0 - 1e-9);
    assert_eq!(a.per_restart_log.len(), 20);
    assert_eq!(
        serde_json::to_string(&a.per_restart_log).unwrap(),
        serde_json::to_string(&b.per_restart_log).unwrap()
    );
}

#[test]
fn restarts_split_between_components() {
    let (su, _) = unique_metzler_setup();
    let res = solve_metzler(
        &su.family,
        &su.p,
        &su.g,
        &su.model,
        &SearchConfig::default(),
    )
    .unwrap();
    let minus = res
        .per_restart_log
        .iter()
        .filter(|r| r.component == Component::Minus)
        .count();
    assert_eq!(minus, 10);
    let indices: Vec<usize> = res.per_restart_log.iter().map(|r| r.index).collect();
    assert_eq!(indices, (0..20).collect::<Vec<_>>());
}

#[test]
fn descent_is_monotone_and_stays_on_chart() {
    let (su, _) = unique_metzler_setup();
    for (seed, component) in [
        (1, Component::Plus),
        (2, Component::Minus),
        (3, Component::Plus),
    ] {
        let u0 = random_orthogonal(2, seed, component, 1.0).u;
        let tr = l1_descent(&su.family, &su.p, &su.g, &su.model, &u0, 0.05, 0.0, 200).unwrap();
        assert!(tr.objective.windows(2).all(|w| w[1] <= w[0]));
        assert!(is_orthonormal(&tr.u, 1e-10));
        assert_eq!(tr.u.determinant().signum(), component.sign());
    }
}

#[test]
fn generated_case_one_is_feasible() {
    let inst = random_rc_instance(10, 8, &GenerateOptions::default(), 3).unwrap();
    let cfg = PipelineConfig {
        sparsify: false,
        ..Default::default()
    };
    let rec = reconstruct(&inst.model(), &cfg).unwrap();
    assert_eq!(rec.report.rotation.k, 2);
    assert!(rec.feasible());
    let real = rec.realization();
    assert!(real.symmetry_residual <= 1e-7);
    assert!(real.metzler_violation <= 1e-8);
    assert!(real.output_residual.unwrap() <= 1e-8);
}

#[test]
fn zero_norm_is_bounded_and_pruning_idempotent() {
    let inst = random_rc_instance(8, 5, &GenerateOptions::default(), 11).unwrap();
    let rec = reconstruct(&inst.model(), &PipelineConfig::default()).unwrap();
    let real = rec.realization();
    assert!(real.zero_norm <= 64);
    let pruned = real
        .s
        .map(|v| if v.abs() > real.prune_tol { v } else { 0.0 });
    assert_eq!(
        graph_from_s(&pruned, None, real.prune_tol),
        graph_from_s(&real.s, None, real.prune_tol)
    );
    let again = pruned.map(|v| if v.abs() > real.prune_tol { v } else { 0.0 });
    assert_eq!(again, pruned);
    assert_eq!(pruned.iter().filter(|v| **v != 0.0).count(), real.zero_norm);
}

#[test]
fn seeded_search_is_reproducible() {
    let (su, _) = unique_metzler_setup();
    let cfg = SearchConfig {
        seed: 42,
        restarts: 6,
        ..Default::default()
    };
    let a = search(&su.family, &su.p, &su.g, &su.model, &cfg, true).unwrap();
    let b = search(&su.family, &su.p, &su.g, &su.model, &cfg, true).unwrap();
    assert_eq!(
        serde_json::to_string(&a.per_restart_log).unwrap(),
        serde_json::to_string(&b.per_restart_log).unwrap()
    );
    assert_eq!(a.best.s, b.best.s);
}
