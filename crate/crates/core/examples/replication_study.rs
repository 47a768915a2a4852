//! A small simulation study in the layout of a coverage table: bias, mean
//! reported SE, empirical SD, RMSE and CI coverage per estimator.
//!
//!     cargo run --release --example replication_study -- 200

use cemee::harness::{run_experiment, CellSpec, ExperimentPlan};
use cemee::simulate::{Scenario, ScenarioConfig};

fn main() -> cemee::Result<()> {
    let replicates = std::env::args().nth(1).and_then(|r| r.parse().ok()).unwrap_or(50);
    let cells = [Scenario::I, Scenario::II]
        .into_iter()
        .map(|s| CellSpec::new(ScenarioConfig::new(s, 30, 10)))
        .collect();
    let plan = ExperimentPlan::new(cells, replicates, 2024);
    let report = run_experiment(&plan)?;
    report.write_csv(std::io::stdout())?;
    Ok(())
}
