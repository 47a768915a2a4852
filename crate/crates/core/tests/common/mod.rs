#![allow(dead_code)]

pub mod brute;

use cemee::panel::{Cluster, ClusterPanel, DecisionPoint, FeatureSpec, IndividualSeries, Term};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shape of a random test panel.
#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub clusters: usize,
    /// Sizes are drawn from `1..=max_size` unless `equal` is set.
    pub max_size: usize,
    pub equal: bool,
    pub horizon: usize,
    /// Probability that a decision point is unavailable.
    pub unavailable: f64,
}

/// Random panel with state columns `Z` (0/1/2) and `X` (continuous).
/// Each individual has its own treatment probability, so probabilities and
/// moderators are individual-level.
pub fn random_panel(seed: u64, shape: Shape) -> ClusterPanel {
    let mut r = rng(seed);
    let fixed = r.random_range(1..=shape.max_size);
    let clusters = (0..shape.clusters)
        .map(|c| {
            let g = if shape.equal { fixed } else { r.random_range(1..=shape.max_size) };
            let members = (0..g)
                .map(|j| {
                    let p0: f64 = r.random_range(0.15..0.85);
                    let rows = (1..=shape.horizon)
                        .map(|t| {
                            let available = u8::from(!r.random_bool(shape.unavailable));
                            let prob = (p0 + r.random_range(-0.1..0.1)).clamp(0.05, 0.95);
                            let treatment = u8::from(available == 1 && r.random_bool(prob));
                            DecisionPoint {
                                t,
                                treatment,
                                prob,
                                available,
                                outcome: u8::from(r.random_bool(0.45)),
                                state: vec![f64::from(r.random_range(0..3u8)), r.random_range(-1.0..1.0)],
                            }
                        })
                        .collect();
                    IndividualSeries {
                        id: (j + 1).to_string(),
                        rows,
                    }
                })
                .collect();
            Cluster {
                id: (c + 1).to_string(),
                members,
            }
        })
        .collect();
    ClusterPanel::new(clusters, vec!["Z".into(), "X".into()]).unwrap()
}

pub fn moderator() -> FeatureSpec {
    FeatureSpec::new(vec![Term::Intercept, Term::Column("X".into())])
}

pub fn control() -> FeatureSpec {
    FeatureSpec::new(vec![Term::Intercept, Term::Column("Z".into()), Term::TimeIndex])
}

/// Relative-or-absolute closeness used throughout the exactness tests.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
