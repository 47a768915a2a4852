//! Simulate-and-recover: fits on generated panels land on the generating
//! values within their reported uncertainty.

use cemee::estimate::{fit, fit_indirect, Estimator, EstimatorOptions};
use cemee::harness::default_control;
use cemee::panel::{FeatureSpec, Term};
use cemee::simulate::{generate_scenario, true_direct_effect, Scenario, ScenarioConfig, EFFECT_COEFS};
use cemee::variance::{covariance, infer, moderation_curve, SmallSample};

fn z_moderator() -> FeatureSpec {
    FeatureSpec::new(vec![Term::Intercept, Term::Column("Z".into())])
}

#[test]
fn moderation_curve_intervals_cover_the_generating_curve() {
    // Scenario I's random effect is additive, so the conditional log
    // relative risk given Z is exactly 0.1 + 0.3 Z. The intervals are
    // pointwise: each grid point holds its level, the whole curve at once
    // does not (roughly 86% over this grid).
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 * 0.2).collect();
    let (b0, b1) = EFFECT_COEFS;
    let mut per_point = vec![0; grid.len()];
    let mut near_one = 0;
    for seed in 0..100 {
        let panel = generate_scenario(&ScenarioConfig::new(Scenario::I, 30, 5).with_seed(seed)).unwrap();
        let result = fit(&panel, &z_moderator(), &default_control(), &EstimatorOptions::new(Estimator::CemeeDirect)).unwrap();
        let cov = covariance(&result, SmallSample::Auto).unwrap();
        let curve = moderation_curve(&result, &cov, &grid, 0.05).unwrap();
        for (hits, p) in per_point.iter_mut().zip(&curve) {
            *hits += usize::from((p.lo..=p.hi).contains(&(b0 + b1 * p.s)));
        }
        let at_one = &curve[5];
        near_one += usize::from((at_one.effect - 0.4).abs() < 3.0 * at_one.se);
    }
    // Binomial noise at 100 panels is about ±2 around 95.
    assert!(per_point.iter().all(|&h| h >= 90), "pointwise coverage {per_point:?}");
    assert!(near_one >= 97, "curve at s = 1 within 3 SE of 0.4 in {near_one}/100 panels");
}

#[test]
fn planted_indirect_effect_is_recovered() {
    for (beta20, seed) in [(-0.1, 17), (0.0, 18)] {
        let mut config = ScenarioConfig::new(Scenario::IV, 100, 25).with_seed(seed);
        config.beta20 = beta20;
        let panel = generate_scenario(&config).unwrap();
        let result = fit_indirect(&panel, &FeatureSpec::intercept(), &default_control(), &EstimatorOptions::new(Estimator::CemeeIndirect)).unwrap();
        let cov = covariance(&result, SmallSample::Auto).unwrap();
        let se = cov.beta_se()[0];
        assert!((result.beta[0] - beta20).abs() < 3.0 * se, "beta20 {beta20}: {} ± {se}", result.beta[0]);
    }
}

#[test]
fn case_study_shaped_model_recovers_the_marginal_effect() {
    // Controls shaped like a field analysis: intercept, day in study and a
    // running adherence-type covariate.
    let config = ScenarioConfig::new(Scenario::II, 50, 20).with_seed(64);
    let panel = generate_scenario(&config).unwrap();
    let control = FeatureSpec::new(vec![Term::Intercept, Term::TimeIndex, Term::Column("Zbar".into())]);
    let result = fit(&panel, &FeatureSpec::intercept(), &control, &EstimatorOptions::new(Estimator::CemeeDirect)).unwrap();
    let cov = covariance(&result, SmallSample::Auto).unwrap();
    let summary = infer(&result, &cov, &[], 0.05).unwrap();
    let truth = true_direct_effect(&config).unwrap();
    let b = &summary.coefficients[0];
    assert!((b.estimate - truth).abs() < 3.0 * b.se, "{} ± {} vs {truth}", b.estimate, b.se);
}
