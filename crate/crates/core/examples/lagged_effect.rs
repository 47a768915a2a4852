//! Lag-2 effects under two reference policies for the intervening
//! decision: the observed randomization (OTD) and always-treat (ST).
//! ST reweights to a rarer treatment path, so its SE is larger.

use cemee::estimate::{fit, Estimator, EstimatorOptions};
use cemee::harness::default_control;
use cemee::panel::FeatureSpec;
use cemee::simulate::{generate_scenario, true_direct_effect, Scenario, ScenarioConfig};
use cemee::variance::{covariance, infer, SmallSample};
use cemee::weights::ReferencePolicy;

fn main() -> cemee::Result<()> {
    for policy in [ReferencePolicy::ObservedDistribution, ReferencePolicy::AlwaysTreat] {
        let mut config = ScenarioConfig::new(Scenario::LagII, 50, 20).with_seed(3);
        config.reference_policy = policy;
        let panel = generate_scenario(&config)?;
        let options = EstimatorOptions::new(Estimator::CemeeDirect)
            .with_delta(2)
            .with_policy(policy);
        let result = fit(&panel, &FeatureSpec::intercept(), &default_control(), &options)?;
        let cov = covariance(&result, SmallSample::Auto)?;
        let b = &infer(&result, &cov, &[], 0.05)?.coefficients[0];
        println!(
            "{policy:>4}: truth {:.4}  estimate {:.4}  se {:.4}",
            true_direct_effect(&config)?,
            b.estimate,
            b.se
        );
    }
    Ok(())
}
