use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::geometry::BallConfig;
use crate::linalg;
use crate::tensor_calc::{l2_distance_sq, GridSpec, MetricField};

fn grid(nodes: usize, h: f64, r: f64) -> Arc<GridSpec> {
    let b = BallConfig::new(2, r).unwrap();
    Arc::new(GridSpec::truncated_ball(&b, nodes, h, 0.9).unwrap())
}

fn reference(g: &Arc<GridSpec>, r: f64) -> MetricField {
    hyperbolic_reference(g, &BallConfig::new(2, r).unwrap()).unwrap()
}

fn state_of(metric: MetricField, r: f64, variant: RescaleVariant) -> FlowState {
    FlowState::new(metric, BallConfig::new(2, r).unwrap(), variant).unwrap()
}

#[test]
fn reference_samples_conformal_factor() {
    let g = grid(9, 0.125, 1.0);
    let m = reference(&g, 1.0);
    let origin = 4 * 9 + 4;
    assert_eq!(m.node(origin), &[4.0, 0.0, 0.0, 4.0]);
    let half = 4 * 9 + 8; // x = (0, 0.5)
    assert!((m.node(half)[0] - 64.0 / 9.0).abs() < 1e-12);
    let flat = reference(&g, 0.0);
    for node in 0..g.node_count() {
        assert_eq!(flat.node(node), &[4.0, 0.0, 0.0, 4.0]);
    }
}

#[test]
fn hyperbolic_metric_is_stationary() {
    let g = grid(65, 1.0 / 64.0, 1.0);
    let gh = reference(&g, 1.0);
    let sup_g = gh.field().sup_abs(false);
    for variant in [RescaleVariant::PaperExact, RescaleVariant::RScaled] {
        let s = state_of(gh.clone(), 1.0, variant);
        let rhs = flow_rhs(&s, variant).unwrap();
        assert!(rhs.sup_abs(true) < 5e-3 * sup_g, "{variant:?}: {}", rhs.sup_abs(true));
    }
}

#[test]
fn r_scaled_variant_is_stationary_for_other_curvatures() {
    let g = grid(129, 1.0 / 256.0, 4.0);
    let gh = reference(&g, 4.0);
    let s = state_of(gh.clone(), 4.0, RescaleVariant::RScaled);
    let rhs = flow_rhs(&s, RescaleVariant::RScaled).unwrap();
    assert!(rhs.sup_abs(true) < 5e-3 * gh.field().sup_abs(false));
    let exact = flow_rhs(&s, RescaleVariant::PaperExact).unwrap();
    assert!(exact.sup_abs(true) > 0.1 * gh.field().sup_abs(true));
}

#[test]
fn flat_metric_with_flat_reference() {
    let g = grid(9, 0.125, 1.0);
    let id = MetricField::identity(g.clone());
    let s = FlowState::with_reference(
        id.clone(),
        id,
        BallConfig::new(2, 1.0).unwrap(),
        RescaleVariant::PaperExact,
    )
    .unwrap();
    let rhs = flow_rhs(&s, RescaleVariant::PaperExact).unwrap();
    for node in 0..g.node_count() {
        assert_eq!(rhs.node(node), &[-2.0, 0.0, 0.0, -2.0]);
    }
}

fn restoring_product(c: f64) -> f64 {
    let g = grid(33, 1.0 / 32.0, 1.0);
    let gh = reference(&g, 1.0);
    let s = state_of(gh.scaled(1.0 + c).unwrap(), 1.0, RescaleVariant::PaperExact);
    let rhs = flow_rhs(&s, RescaleVariant::PaperExact).unwrap();
    let mut total = 0.0;
    for node in g.interior_nodes() {
        let (a, b) = (s.metric().node(node), gh.node(node));
        let l4 = b[0] * b[0];
        let dot: f64 = (0..4).map(|k| (a[k] - b[k]) * rhs.node(node)[k]).sum();
        total += dot / l4 * b[0];
    }
    total
}

#[test]
fn scaled_reference_flows_back() {
    assert!(restoring_product(0.02) < 0.0);
    assert!(restoring_product(-0.02) < 0.0);
}

#[test]
fn zero_step_is_identity_and_boundary_is_pinned() {
    let g = grid(33, 1.0 / 32.0, 1.0);
    let gh = reference(&g, 1.0);
    let s = state_of(gh.scaled(1.05).unwrap(), 1.0, RescaleVariant::PaperExact);
    let same = step(&s, 0.0).unwrap();
    assert_eq!(same.metric(), s.metric());
    assert_eq!(same.time(), 0.0);
    let dt = auto_dt(s.metric()).unwrap();
    let next = step(&s, dt).unwrap();
    for node in g.boundary_nodes() {
        assert_eq!(next.metric().node(node), gh.node(node));
    }
    let before = l2_distance_sq(s.metric(), &gh).unwrap();
    let after = l2_distance_sq(next.metric(), &gh).unwrap();
    assert!(after < before);
    assert_eq!(next.time(), dt);
}

#[test]
fn stationary_step_barely_moves() {
    let g = grid(65, 1.0 / 64.0, 1.0);
    let gh = reference(&g, 1.0);
    let s = state_of(gh.clone(), 1.0, RescaleVariant::PaperExact);
    let dt = auto_dt(&gh).unwrap();
    let next = step(&s, dt).unwrap();
    let d = next.metric().field().axpby(1.0, gh.field(), -1.0).unwrap();
    assert!(d.sup_abs(false) < 5e-3 * dt * gh.field().sup_abs(false));
}

#[test]
fn epsilon_examples() {
    let g = grid(9, 0.125, 1.0);
    let gh = reference(&g, 1.0);
    assert_eq!(epsilon_closeness(&gh, &gh).unwrap(), 0.0);
    assert!((epsilon_closeness(&gh.scaled(1.1).unwrap(), &gh).unwrap() - 0.1).abs() < 1e-12);
    assert!((epsilon_closeness(&gh.scaled(0.8).unwrap(), &gh).unwrap() - 0.25).abs() < 1e-12);
}

fn diag_from(points: &[(f64, f64)]) -> FlowDiagnostics {
    FlowDiagnostics {
        samples: points
            .iter()
            .map(|&(t, d)| FlowSample {
                t,
                l2_dist_sq: d,
                sup_dist: 0.0,
                epsilon: 0.0,
                c: 0.0,
            })
            .collect(),
        fitted_rate: None,
        fit_r2: None,
        steps: points.len(),
        converged: false,
        dt: 0.0,
        retries: 0,
        sup_growth: 0.0,
    }
}

#[test]
fn fit_recovers_exact_exponential() {
    let pts: Vec<(f64, f64)> = (0..50).map(|k| (k as f64 * 0.1, 2.0 * (-3.0 * k as f64 * 0.1).exp())).collect();
    let (rate, r2) = fit_decay_rate(&diag_from(&pts)).unwrap();
    assert!((rate - 3.0).abs() < 1e-6);
    assert!(r2 > 0.999999);
    let flat: Vec<(f64, f64)> = (0..20).map(|k| (k as f64, 0.7)).collect();
    let (rate, r2) = fit_decay_rate(&diag_from(&flat)).unwrap();
    assert_eq!(rate, 0.0);
    assert_eq!(r2, 1.0);
}

#[test]
fn fit_needs_enough_samples() {
    let pts: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, 1.0)).collect();
    assert!(matches!(fit_decay_rate(&diag_from(&pts)), Err(Error::Fit(_))));
}

#[test]
fn linearized_flow_examples() {
    assert_eq!(linearized_flow(0.3, 0.0, 2.0), 0.3);
    assert!((linearized_flow(1.0, 2f64.ln(), 2.0) - 0.25).abs() < 1e-15);
}

proptest! {
    #[test]
    fn linearized_series_fit_round_trip(kappa in 0.1f64..10.0, h0 in 0.01f64..5.0) {
        let pts: Vec<(f64, f64)> = (0..40).map(|k| {
            let t = k as f64 * 0.05;
            (t, linearized_flow(h0, t, kappa))
        }).collect();
        let (rate, _) = fit_decay_rate(&diag_from(&pts)).unwrap();
        prop_assert!((rate - kappa).abs() < 1e-8 * kappa.max(1.0));
    }
}

#[test]
fn evolve_from_reference_stops_immediately() {
    let g = grid(17, 1.0 / 16.0, 1.0);
    let gh = reference(&g, 1.0);
    let (out, diag) = evolve(&gh, &FlowConfig::default()).unwrap();
    assert!(diag.converged);
    assert_eq!(diag.steps, 0);
    assert_eq!(diag.samples.len(), 1);
    assert_eq!(diag.samples[0].l2_dist_sq, 0.0);
    assert_eq!(out, gh);
    let eq = uniform_equivalence_monitor(&diag, &gh, &out).unwrap();
    assert_eq!(eq.c, 0.0);
    assert!(eq.holds);
}

#[test]
fn epsilon_gate_rejects_large_perturbations() {
    let g = grid(17, 1.0 / 16.0, 1.0);
    let gh = reference(&g, 1.0);
    let big = bump_perturbation(&gh, 0.5, 0.4).unwrap();
    assert!(matches!(evolve(&big, &FlowConfig::default()), Err(Error::EpsilonGate { .. })));
}

#[test]
fn oversized_dt_is_rejected() {
    let g = grid(17, 1.0 / 16.0, 1.0);
    let gh = reference(&g, 1.0);
    let init = bump_perturbation(&gh, 0.05, 0.4).unwrap();
    let cfg = FlowConfig {
        dt: Some(1.0),
        ..FlowConfig::default()
    };
    assert!(matches!(evolve(&init, &cfg), Err(Error::InvalidConfig(_))));
}

fn short_run() -> (MetricField, MetricField, FlowDiagnostics, Vec<FlowState>) {
    let g = grid(33, 1.0 / 32.0, 1.0);
    let gh = reference(&g, 1.0);
    let init = bump_perturbation(&gh, 0.05, 0.4).unwrap();
    let cfg = FlowConfig {
        t_max: 0.3,
        sample_every: 20,
        ..FlowConfig::default()
    };
    let mut seen = Vec::new();
    let (out, diag) = evolve_observed(&init, &cfg, |s| seen.push(s.clone())).unwrap();
    (init, out, diag, seen)
}

#[test]
fn bump_decays_monotonically_and_deterministically() {
    let (init, out, diag, seen) = short_run();
    assert_eq!(seen.len(), diag.samples.len());
    let skip = diag.samples.len() / 10;
    for w in diag.samples[skip..].windows(2) {
        assert!(w[1].t > w[0].t);
        assert!(w[1].l2_dist_sq <= w[0].l2_dist_sq);
    }
    let last = diag.final_sample().unwrap();
    assert!(last.l2_dist_sq < 0.1 * diag.samples[0].l2_dist_sq);
    assert!(diag.fitted_rate.unwrap() > 0.0);
    let eq = uniform_equivalence_monitor(&diag, &init, &out).unwrap();
    assert!(eq.holds, "{eq:?}");
    let (_, out2, diag2, _) = short_run();
    assert_eq!(diag, diag2);
    assert_eq!(out, out2);
}

#[test]
fn evolution_inequality_on_bump() {
    let g = grid(33, 1.0 / 32.0, 1.0);
    let gh = reference(&g, 1.0);
    let s = state_of(gh.clone(), 1.0, RescaleVariant::PaperExact);
    let zero = check_evolution_inequality(&s, RescaleVariant::PaperExact).unwrap();
    assert_eq!(zero.max_violation, 0.0);
    assert_eq!(zero.scale, 0.0);
    let init = bump_perturbation(&gh, 0.05, 0.4).unwrap();
    let s = state_of(init, 1.0, RescaleVariant::PaperExact);
    let a = check_evolution_inequality(&s, RescaleVariant::PaperExact).unwrap();
    let b = check_evolution_inequality(&s, RescaleVariant::PaperExact).unwrap();
    assert_eq!(a, b);
    assert!(a.within(1e-2), "{a:?}");
}

#[test]
fn stability_bound_exceeds_default_step() {
    let g = grid(33, 1.0 / 32.0, 1.0);
    let gh = reference(&g, 1.0);
    assert!(auto_dt(&gh).unwrap() < stability_bound(&gh).unwrap());
    let mut inv = [0.0; 4];
    assert!(linalg::spd_inverse(2, gh.node(16 * 33 + 16), &mut inv));
    assert_eq!(max_inverse_eigenvalue(&gh).unwrap(), inv[0]);
}
