//! Pairwise indirect effect: how a peer's treatment changes an untreated
//! individual's outcome. Scenario IV plants a per-treated-peer effect β20.

use cemee::estimate::{fit_indirect, EstimatorOptions, Estimator};
use cemee::harness::default_control;
use cemee::panel::FeatureSpec;
use cemee::simulate::{generate_scenario, true_indirect_effect, Scenario, ScenarioConfig};
use cemee::variance::{covariance, infer, SmallSample};

fn main() -> cemee::Result<()> {
    let config = ScenarioConfig::new(Scenario::IV, 50, 20).with_seed(5);
    let panel = generate_scenario(&config)?;
    let options = EstimatorOptions::new(Estimator::CemeeIndirect);
    let result = fit_indirect(&panel, &FeatureSpec::intercept(), &default_control(), &options)?;
    let cov = covariance(&result, SmallSample::Auto)?;
    let b = &infer(&result, &cov, &[], 0.05)?.coefficients[0];
    println!("truth (beta20)   {:.4}", true_indirect_effect(&config));
    println!("indirect effect  {:.4}  se {:.4}  [{:.4}, {:.4}]", b.estimate, b.se, b.lo, b.hi);
    println!("pair numerator p*: {:.4}", result.numerator);
    Ok(())
}
