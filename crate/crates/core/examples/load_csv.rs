//! Read a trial export whose columns use other names, check it, and fit a
//! case-study-shaped model (controls: intercept, day, R).

use cemee::estimate::{fit, Estimator, EstimatorOptions};
use cemee::panel::{read_panel, validate_panel, FeatureSpec, Schema, Term};

const EXPORT: &str = "\
team,participant,day,sent,p_send,active,R
a,1,1,1,0.5,1,1
a,1,2,0,0.5,0,0
a,1,3,1,0.5,1,1
a,2,1,0,0.5,0,0
a,2,2,1,0.5,1,1
a,2,3,0,0.5,1,1
b,3,1,1,0.5,1,0
b,3,2,0,0.5,1,1
b,3,3,1,0.5,0,0
b,4,1,0,0.5,0,1
b,4,2,1,0.5,1,0
b,4,3,0,0.5,0,1
";

fn main() -> cemee::Result<()> {
    let schema = Schema {
        cluster: "team".into(),
        id: "participant".into(),
        t: "day".into(),
        treatment: "sent".into(),
        prob: "p_send".into(),
        outcome: "active".into(),
        ..Schema::default()
    };
    let panel = read_panel(EXPORT.as_bytes(), &schema)?;
    let report = validate_panel(&panel);
    println!("{} clusters, {} individuals, valid: {}", panel.n_clusters(), panel.n_individuals(), report.is_valid());
    let control = FeatureSpec::new(vec![Term::Intercept, Term::TimeIndex, Term::Column("R".into())]);
    match fit(&panel, &FeatureSpec::intercept(), &control, &EstimatorOptions::new(Estimator::CemeeDirect)) {
        Ok(r) => println!("beta = {:.4}", r.beta[0]),
        // Toy data this small can easily be degenerate.
        Err(e) => println!("fit failed: {e}"),
    }
    Ok(())
}
