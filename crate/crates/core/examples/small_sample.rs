//! With few clusters the plain sandwich understates uncertainty; the
//! leverage-corrected version inflates it. Compare both on 12 clusters.

use cemee::estimate::{fit, Estimator, EstimatorOptions};
use cemee::harness::default_control;
use cemee::panel::FeatureSpec;
use cemee::simulate::{generate_scenario, Scenario, ScenarioConfig};
use cemee::variance::{covariance, SmallSample};

fn main() -> cemee::Result<()> {
    let panel = generate_scenario(&ScenarioConfig::new(Scenario::II, 12, 8).with_seed(4))?;
    let result = fit(&panel, &FeatureSpec::intercept(), &default_control(), &EstimatorOptions::new(Estimator::CemeeDirect))?;
    for mode in [SmallSample::Never, SmallSample::Always] {
        let cov = covariance(&result, mode)?;
        println!("{mode:?}: se(beta) = {:.4}, df = {}", cov.beta_se()[0], cov.df);
    }
    Ok(())
}
