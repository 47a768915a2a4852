//! Literal, loop-by-loop transcriptions of the direct and pairwise-indirect
//! estimating functions, written without the library's design rows or
//! weight helpers. Features are f = (1, X) and g = (1, Z, t).

use cemee::panel::{ClusterPanel, DecisionPoint};
use cemee::weights::ReferencePolicy;
use rand::Rng;

use super::{random_panel, rng, Shape};

fn f_of(r: &DecisionPoint) -> [f64; 2] {
    [1.0, r.state[1]]
}

pub fn g_of(r: &DecisionPoint) -> [f64; 3] {
    [1.0, r.state[0], r.t as f64]
}

pub fn p_of(a: u8, p: f64) -> f64 {
    if a == 1 {
        p
    } else {
        1.0 - p
    }
}

/// Lag weight over rows `t+1 .. t+Δ−1` (0-based index `i` is row `t`).
pub fn lag(rows: &[DecisionPoint], i: usize, delta: usize, policy: ReferencePolicy) -> f64 {
    let mut w = 1.0;
    for r in &rows[i + 1..i + delta] {
        let reference = match policy {
            ReferencePolicy::ObservedDistribution => p_of(r.treatment, r.prob),
            ReferencePolicy::AlwaysTreat => f64::from(r.treatment),
            ReferencePolicy::AlwaysControl => f64::from(1 - r.treatment),
            ReferencePolicy::FixedProbability(q) => p_of(r.treatment, q),
        };
        w *= reference / p_of(r.treatment, r.prob);
    }
    w
}

/// Treated share of available rows that enter the sums.
pub fn empirical(panel: &ClusterPanel, delta: usize) -> f64 {
    let (mut n, mut k) = (0.0, 0.0);
    for c in &panel.clusters {
        for m in &c.members {
            for r in &m.rows[..m.rows.len() + 1 - delta] {
                if r.available == 1 {
                    n += 1.0;
                    k += f64::from(r.treatment);
                }
            }
        }
    }
    k / n
}

pub fn brute_direct(panel: &ClusterPanel, theta: &[f64], delta: usize, policy: ReferencePolicy, pt: f64, clustered: bool) -> Vec<f64> {
    let (alpha, beta) = theta.split_at(3);
    let mut total = vec![0.0; 5];
    let mut units = 0.0;
    for c in &panel.clusters {
        let mut cluster_sum = vec![0.0; 5];
        for m in &c.members {
            let mut own = vec![0.0; 5];
            let horizon = m.rows.len();
            for i in 0..horizon + 1 - delta {
                let r = &m.rows[i];
                if r.available == 0 {
                    continue;
                }
                let y = f64::from(m.rows[i + delta - 1].outcome);
                let a = f64::from(r.treatment);
                let (f, g) = (f_of(r), g_of(r));
                let fb: f64 = f.iter().zip(beta).map(|(x, b)| x * b).sum();
                let ga: f64 = g.iter().zip(alpha).map(|(x, b)| x * b).sum();
                let w = p_of(r.treatment, pt) / p_of(r.treatment, r.prob) * lag(&m.rows, i, delta, policy);
                let resid = (-a * fb).exp() * y - ga.exp();
                for k in 0..3 {
                    own[k] += w * resid * g[k];
                }
                for k in 0..2 {
                    own[3 + k] += w * resid * (a - pt) * f[k];
                }
            }
            if clustered {
                for k in 0..5 {
                    cluster_sum[k] += own[k] / c.members.len() as f64;
                }
            } else {
                for k in 0..5 {
                    total[k] += own[k];
                }
                units += 1.0;
            }
        }
        if clustered {
            for k in 0..5 {
                total[k] += cluster_sum[k];
            }
            units += 1.0;
        }
    }
    total.iter().map(|v| v / units).collect()
}

pub fn brute_indirect(panel: &ClusterPanel, theta: &[f64], delta: usize, policy: ReferencePolicy, joint: [[f64; 2]; 2]) -> Vec<f64> {
    let (alpha, beta) = theta.split_at(3);
    let p_star = joint[0][1] / (joint[0][0] + joint[0][1]);
    let mut total = vec![0.0; 5];
    let mut units = 0.0;
    for c in &panel.clusters {
        let g_m = c.members.len();
        if g_m < 2 {
            continue;
        }
        units += 1.0;
        let scale = 1.0 / (g_m * (g_m - 1)) as f64;
        for (j, mj) in c.members.iter().enumerate() {
            for (k, mk) in c.members.iter().enumerate() {
                if j == k {
                    continue;
                }
                let horizon = mj.rows.len();
                for i in 0..horizon + 1 - delta {
                    let (rj, rk) = (&mj.rows[i], &mk.rows[i]);
                    if rj.available == 0 || rk.available == 0 {
                        continue;
                    }
                    let y = f64::from(mj.rows[i + delta - 1].outcome);
                    let (aj, ak) = (f64::from(rj.treatment), f64::from(rk.treatment));
                    let (f, g) = (f_of(rj), g_of(rj));
                    let fb: f64 = f.iter().zip(beta).map(|(x, b)| x * b).sum();
                    let ga: f64 = g.iter().zip(alpha).map(|(x, b)| x * b).sum();
                    let w = joint[rj.treatment as usize][rk.treatment as usize]
                        / (p_of(rj.treatment, rj.prob) * p_of(rk.treatment, rk.prob))
                        * lag(&mj.rows, i, delta, policy)
                        * lag(&mk.rows, i, delta, policy);
                    let resid = (-(1.0 - aj) * ak * fb).exp() * y - ga.exp();
                    for q in 0..3 {
                        total[q] += scale * w * resid * g[q];
                    }
                    for q in 0..2 {
                        total[3 + q] += scale * w * resid * (1.0 - aj) * (ak - p_star) * f[q];
                    }
                }
            }
        }
    }
    total.iter().map(|v| v / units).collect()
}

pub fn tiny_panel(seed: u64) -> ClusterPanel {
    let mut r = rng(seed ^ 0xabc);
    random_panel(
        seed,
        Shape {
            clusters: r.random_range(1..=3),
            max_size: 3,
            equal: false,
            horizon: r.random_range(2..=5),
            unavailable: 0.2,
        },
    )
}

pub fn random_theta(seed: u64) -> Vec<f64> {
    let mut r = rng(seed ^ 0x7e7a);
    (0..5).map(|_| r.random_range(-0.5..0.5)).collect()
}

