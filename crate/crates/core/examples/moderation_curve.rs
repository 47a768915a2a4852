//! Effect moderation by a state variable: fit f = (1, Z) and tabulate the
//! log relative risk over Z with pointwise 95% intervals.

use cemee::estimate::{fit, Estimator, EstimatorOptions};
use cemee::harness::default_control;
use cemee::panel::{FeatureSpec, Term};
use cemee::simulate::{generate_scenario, Scenario, ScenarioConfig, EFFECT_COEFS};
use cemee::variance::{covariance, moderation_curve, write_curve_csv, SmallSample};

fn main() -> cemee::Result<()> {
    let config = ScenarioConfig::new(Scenario::II, 50, 20).with_seed(21);
    let panel = generate_scenario(&config)?;
    let moderator = FeatureSpec::new(vec![Term::Intercept, Term::Column("Z".into())]);
    let result = fit(&panel, &moderator, &default_control(), &EstimatorOptions::new(Estimator::CemeeDirect))?;
    let cov = covariance(&result, SmallSample::Auto)?;
    let grid = [0.0, 0.5, 1.0, 1.5, 2.0];
    println!("generating model: beta = ({}, {})", EFFECT_COEFS.0, EFFECT_COEFS.1);
    write_curve_csv(&moderation_curve(&result, &cov, &grid, 0.05)?, std::io::stdout())?;
    Ok(())
}
