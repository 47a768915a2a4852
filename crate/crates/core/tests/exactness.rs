//! Exact and near-exact properties of the fitted estimators: analytic
//! Jacobians, the equal-cluster-size equivalence with EMEE, singleton
//! clusters, and invariance to row order and labels.

mod common;

use cemee::estimate::{fit, EstimatingSystem, Estimator, EstimatorOptions, FitResult};
use cemee::harness::default_control;
use cemee::panel::{build_design, ClusterPanel, FeatureSpec};
use cemee::simulate::{generate_scenario, Scenario, ScenarioConfig};
use cemee::variance::{covariance, sandwich, SmallSample};
use cemee::weights::{Numerator, ReferencePolicy};
use common::{close, random_panel, rng, Shape};
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;

fn small_shape(equal: bool) -> Shape {
    Shape {
        clusters: 6,
        max_size: 4,
        equal,
        horizon: 8,
        unavailable: 0.1,
    }
}

#[test]
fn analytic_jacobian_matches_central_differences() {
    let h = 1e-6;
    let cases = [
        (Estimator::CemeeDirect, 1, ReferencePolicy::ObservedDistribution),
        (Estimator::Emee, 1, ReferencePolicy::ObservedDistribution),
        (Estimator::CemeeDirect, 2, ReferencePolicy::AlwaysTreat),
        (Estimator::CemeeIndirect, 1, ReferencePolicy::ObservedDistribution),
        (Estimator::CemeeIndirect, 2, ReferencePolicy::FixedProbability(0.4)),
    ];
    for seed in 0..10u64 {
        let panel = random_panel(seed, small_shape(false));
        let mut r = rng(seed);
        let theta = DVector::from_fn(5, |_, _| r.random_range(-0.4..0.4));
        for &(estimator, delta, policy) in &cases {
            let design = build_design(&panel, &common::moderator(), &common::control(), delta).unwrap();
            let options = EstimatorOptions::new(estimator).with_delta(delta).with_policy(policy);
            let system = match EstimatingSystem::new(&design, &options) {
                Ok(s) => s,
                Err(cemee::Error::NoEligiblePairs) => continue,
                Err(e) => panic!("{e}"),
            };
            let jac = system.jacobian(&theta).unwrap();
            for c in 0..5 {
                let mut up = theta.clone();
                let mut down = theta.clone();
                up[c] += h;
                down[c] -= h;
                let fd = (system.value(&up).unwrap() - system.value(&down).unwrap()) / (2.0 * h);
                for r in 0..5 {
                    let (a, n) = (jac[(r, c)], fd[r]);
                    assert!(
                        (a - n).abs() <= 1e-5 * a.abs().max(1e-3),
                        "{estimator} seed {seed} entry ({r},{c}): analytic {a:e} vs numeric {n:e}"
                    );
                }
            }
        }
    }
}

fn fit_both(panel: &ClusterPanel) -> (FitResult, FitResult) {
    let options = EstimatorOptions::new(Estimator::CemeeDirect);
    let c = fit(panel, &common::moderator(), &common::control(), &options).unwrap();
    let e = fit(panel, &common::moderator(), &common::control(), &EstimatorOptions { estimator: Estimator::Emee, ..options }).unwrap();
    (c, e)
}

#[test]
fn equal_cluster_sizes_give_emee_point_estimates() {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let panel = random_panel(1000 + seed, small_shape(true));
        let (c, e) = fit_both(&panel);
        worst = worst.max((&c.beta - &e.beta).amax());
    }
    assert!(worst < 1e-8, "max |beta_cemee - beta_emee| = {worst:e}");
}

#[test]
fn unequal_cluster_sizes_generally_differ() {
    let panel = random_panel(77, Shape { clusters: 8, max_size: 5, equal: false, horizon: 10, unavailable: 0.0 });
    let (c, e) = fit_both(&panel);
    assert!((&c.beta - &e.beta).amax() > 1e-6);
}

#[test]
fn singleton_clusters_reproduce_emee_exactly() {
    for seed in 0..20u64 {
        let mut shape = small_shape(true);
        shape.max_size = 1;
        shape.clusters = 12;
        let panel = random_panel(500 + seed, shape);
        let (c, e) = fit_both(&panel);
        let pairs = [
            (c.alpha.as_slice(), e.alpha.as_slice()),
            (c.beta.as_slice(), e.beta.as_slice()),
            (c.bread.as_slice(), e.bread.as_slice()),
        ];
        for (a, b) in pairs {
            for (x, y) in a.iter().zip(b) {
                assert!(close(*x, *y, 1e-12), "seed {seed}: {x:e} vs {y:e}");
            }
        }
        assert_eq!(c.iterations, e.iterations);
        for (u, v) in c.contributions.iter().zip(&e.contributions) {
            assert_eq!(u.scale, v.scale);
            for (x, y) in u.score.iter().zip(v.score.iter()) {
                assert!(close(*x, *y, 1e-12));
            }
        }
        for mode in [SmallSample::Never, SmallSample::Always] {
            let (sc, se) = (covariance(&c, mode).unwrap(), covariance(&e, mode).unwrap());
            assert_eq!(sc.df, se.df);
            for (x, y) in sc.covariance.iter().zip(se.covariance.iter()) {
                assert!(close(*x, *y, 1e-12), "seed {seed} {mode:?}: {x:e} vs {y:e}");
            }
        }
    }
}

#[test]
fn solution_ignores_row_order_and_cluster_labels() {
    let panel = random_panel(4242, small_shape(false));
    let base = fit(&panel, &common::moderator(), &common::control(), &EstimatorOptions::new(Estimator::CemeeDirect)).unwrap();
    let base_cov = sandwich(&base).unwrap();

    // Shuffle clusters and members and rename the clusters so that their
    // sorted order changes; the panel constructor restores a canonical order.
    let mut r = rng(9);
    let mut clusters = panel.clusters.clone();
    clusters.shuffle(&mut r);
    for c in &mut clusters {
        c.members.shuffle(&mut r);
    }
    let relabeled = ClusterPanel::new(clusters, panel.columns.clone()).unwrap();
    let again = fit(&relabeled, &common::moderator(), &common::control(), &EstimatorOptions::new(Estimator::CemeeDirect)).unwrap();
    assert_eq!(base.beta, again.beta);
    assert_eq!(base.alpha, again.alpha);
    assert_eq!(base_cov.covariance, sandwich(&again).unwrap().covariance);

    let mut renamed = panel.clone();
    for (i, c) in renamed.clusters.iter_mut().enumerate() {
        c.id = format!("site-{}", 100 - i);
    }
    let renamed = ClusterPanel::new(renamed.clusters, panel.columns.clone()).unwrap();
    let third = fit(&renamed, &common::moderator(), &common::control(), &EstimatorOptions::new(Estimator::CemeeDirect)).unwrap();
    for (x, y) in base.beta.iter().zip(third.beta.iter()) {
        assert!(close(*x, *y, 1e-10));
    }
}

#[test]
fn numerator_choice_does_not_move_the_estimand() {
    let panel = generate_scenario(&ScenarioConfig::new(Scenario::I, 500, 5).with_seed(31)).unwrap();
    let moderator = FeatureSpec::intercept();
    let fits: Vec<_> = [Numerator::Empirical, Numerator::Constant(0.3), Numerator::Constant(0.5)]
        .into_iter()
        .map(|n| {
            let options = EstimatorOptions::new(Estimator::CemeeDirect).with_numerator(n);
            let f = fit(&panel, &moderator, &default_control(), &options).unwrap();
            let se = covariance(&f, SmallSample::Auto).unwrap().beta_se()[0];
            (f.beta[0], se)
        })
        .collect();
    for &(b, se) in &fits[1..] {
        assert!((b - fits[0].0).abs() < 3.0 * se.max(fits[0].1), "{b} vs {}", fits[0].0);
    }
}
