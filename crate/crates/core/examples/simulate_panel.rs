//! Generate a Scenario I panel, write it as CSV and print the true effect.
//!
//!     cargo run --release --example simulate_panel -- /tmp/panel.csv

use cemee::panel::save_panel;
use cemee::simulate::{generate_scenario, true_marginal_effect, Scenario, ScenarioConfig};

fn main() -> cemee::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "panel.csv".into());
    let config = ScenarioConfig::new(Scenario::I, 25, 5).with_seed(7);
    let panel = generate_scenario(&config)?;
    save_panel(&panel, &path)?;
    println!(
        "wrote {} clusters / {} individuals to {path}",
        panel.n_clusters(),
        panel.n_individuals()
    );
    println!("true marginal log relative risk: {:.5}", true_marginal_effect(&config)?);
    println!("treated fraction: {:.3}", panel.treated_fraction());
    Ok(())
}
