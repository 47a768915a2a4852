//! Inverse-probability weights: the per-decision weight `W_t`, the lag-window
//! weight `W_{t,Δ}` under a reference policy, and the pairwise weights used by
//! the indirect estimator.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_open(p: f64) -> Result<f64> {
    if p > 0.0 && p < 1.0 {
        Ok(p)
    } else {
        Err(Error::Probability(p))
    }
}

/// `P(A = a)` for a Bernoulli with success probability `p1`.
#[inline]
pub fn prob_of(a: u8, p1: f64) -> f64 {
    if a == 1 {
        p1
    } else {
        1.0 - p1
    }
}

/// Distribution assigned to treatments in the lag window `t+1 .. t+Δ−1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferencePolicy {
    /// The trial's own randomization (OTD); the window weight is 1.
    ObservedDistribution,
    /// Treat at every window decision (ST).
    AlwaysTreat,
    /// Never treat in the window.
    AlwaysControl,
    FixedProbability(f64),
}

impl ReferencePolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ReferencePolicy::FixedProbability(pi) if !(0.0..=1.0).contains(&pi) => Err(
                Error::InvalidArgument(format!("reference probability {pi} outside [0,1]")),
            ),
            _ => Ok(()),
        }
    }

    /// `π_u(a)` for one window decision.
    fn reference_prob(&self, a: u8, observed: f64) -> f64 {
        match *self {
            ReferencePolicy::ObservedDistribution => prob_of(a, observed),
            ReferencePolicy::AlwaysTreat => f64::from(a),
            ReferencePolicy::AlwaysControl => f64::from(1 - a),
            ReferencePolicy::FixedProbability(pi) => prob_of(a, pi),
        }
    }
}

impl Default for ReferencePolicy {
    fn default() -> Self {
        ReferencePolicy::ObservedDistribution
    }
}

impl fmt::Display for ReferencePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReferencePolicy::ObservedDistribution => write!(f, "otd"),
            ReferencePolicy::AlwaysTreat => write!(f, "st"),
            ReferencePolicy::AlwaysControl => write!(f, "sc"),
            ReferencePolicy::FixedProbability(pi) => write!(f, "fixed:{pi}"),
        }
    }
}

impl FromStr for ReferencePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let policy = match s {
            "otd" => ReferencePolicy::ObservedDistribution,
            "st" => ReferencePolicy::AlwaysTreat,
            "sc" => ReferencePolicy::AlwaysControl,
            _ => match s.strip_prefix("fixed:").map(str::parse::<f64>) {
                Some(Ok(pi)) => ReferencePolicy::FixedProbability(pi),
                _ => {
                    return Err(Error::Config(format!(
                        "unknown reference_policy `{s}` (expected otd, st, sc or fixed:<p>)"
                    )))
                }
            },
        };
        policy.validate()?;
        Ok(policy)
    }
}

impl Serialize for ReferencePolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ReferencePolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Numerator probability `p̃_t(1 | S_t)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Numerator {
    /// Study-wide fraction of treated available decision points.
    #[default]
    Empirical,
    Constant(f64),
}

impl Numerator {
    /// Resolve to a constant given the observed treated fraction.
    pub fn resolve(&self, treated_fraction: f64) -> Result<f64> {
        match *self {
            Numerator::Empirical => check_open(treated_fraction),
            Numerator::Constant(p) => check_open(p),
        }
    }
}

impl Serialize for Numerator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Numerator::Empirical => s.serialize_str("empirical"),
            Numerator::Constant(p) => s.serialize_f64(*p),
        }
    }
}

impl<'de> Deserialize<'de> for Numerator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(p) if p > 0.0 && p < 1.0 => Ok(Numerator::Constant(p)),
            Raw::Number(p) => Err(serde::de::Error::custom(format!(
                "numerator {p} outside (0,1)"
            ))),
            Raw::Text(s) if s == "empirical" => Ok(Numerator::Empirical),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "unknown numerator `{s}` (expected \"empirical\" or a number)"
            ))),
        }
    }
}

/// Joint numerator `p̃(a_j, a_j′)` over `{0,1}²`, indexed `[a_j][a_j′]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointNumerator {
    pub table: [[f64; 2]; 2],
}

impl JointNumerator {
    pub fn new(table: [[f64; 2]; 2]) -> Result<Self> {
        let sum: f64 = table.iter().flatten().sum();
        if table.iter().flatten().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "joint numerator table {table:?} is not a distribution"
            )));
        }
        Ok(JointNumerator { table })
    }

    /// Independent individuals, each treated with probability `p1`.
    pub fn product(p1: f64) -> Self {
        let mut table = [[0.0; 2]; 2];
        for a in 0..2u8 {
            for b in 0..2u8 {
                table[a as usize][b as usize] = prob_of(a, p1) * prob_of(b, p1);
            }
        }
        JointNumerator { table }
    }

    pub fn get(&self, a: u8, b: u8) -> f64 {
        self.table[a as usize][b as usize]
    }
}

/// `W_t = p̃(a) / p(a)`.
pub fn marginal_weight(a: u8, p1: f64, numerator1: f64) -> Result<f64> {
    check_open(p1)?;
    check_open(numerator1)?;
    Ok(prob_of(a, numerator1) / prob_of(a, p1))
}

/// `W_{t,Δ} = Π_u π_u(A_u) / p_u(A_u)` over the window `u = t+1..t+Δ−1`,
/// given as `(A_u, P(A_u = 1 | H_u))`.
pub fn lag_weight(window: &[(u8, f64)], delta: usize, policy: &ReferencePolicy) -> Result<f64> {
    if delta == 0 {
        return Err(Error::InvalidArgument("lag must be at least 1".into()));
    }
    if window.len() != delta - 1 {
        return Err(Error::InvalidArgument(format!(
            "lag window has {} decisions, expected {}",
            window.len(),
            delta - 1
        )));
    }
    let mut w = 1.0;
    for &(a, p1) in window {
        check_open(p1)?;
        if let ReferencePolicy::ObservedDistribution = policy {
            continue;
        }
        w *= policy.reference_prob(a, p1) / prob_of(a, p1);
    }
    Ok(w)
}

/// `p̃*(1) = p̃(0,1) / (p̃(0,0) + p̃(0,1))`.
pub fn pair_numerator_prob(joint: &JointNumerator) -> Result<f64> {
    let denom = joint.get(0, 0) + joint.get(0, 1);
    if denom <= 0.0 {
        return Err(Error::InvalidArgument(
            "p̃(0,0) + p̃(0,1) must be positive".into(),
        ));
    }
    Ok(joint.get(0, 1) / denom)
}

/// `W_{t,j,j′} = p̃(a_j, a_j′) / p(a_j, a_j′)`.
pub fn pair_weight(a_j: u8, a_k: u8, denominator: f64, joint: &JointNumerator) -> Result<f64> {
    check_open(denominator)?;
    let num = check_open(joint.get(a_j, a_k))?;
    Ok(num / denominator)
}
