//! Seeded generation of clustered micro-randomized trial panels and the true
//! effect values each generative scenario implies.
//!
//! Every scenario shares the same skeleton: individual states follow a
//! three-state Markov chain, treatments are i.i.d. Bernoulli(`p_rand`), and
//! the binary outcome has mean
//!
//! ```text
//! c(Z) * exp(treatment terms + cluster random effect)
//! ```
//!
//! with base rates `c = (0.1, 0.25, 0.2)`. The scenarios differ in which
//! random effect enters, what moderates the effect, whether other cluster
//! members' treatments matter (IV), and whether the previous decision's
//! treatment carries over (LAG-*).

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Cluster, ClusterPanel, DecisionPoint, IndividualSeries};
use crate::rng::{substream, StreamRng};
use crate::special::{normal_cdf, normal_quantile};
use crate::weights::ReferencePolicy;

/// Untreated outcome rate for each Markov state.
pub const BASE_RATES: [f64; 3] = [0.1, 0.25, 0.2];
/// Immediate effect `0.1 + 0.3 * moderator`.
pub const EFFECT_COEFS: (f64, f64) = (0.1, 0.3);
/// Carry-over effect of the previous treatment in the lag scenarios.
pub const LAG_EFFECT_COEFS: (f64, f64) = (0.05, 0.065);

/// State columns written by [`generate_scenario`].
pub const STATE_COLUMNS: [&str; 3] = ["Z", "Zbar", "n_treated_others"];

const ORACLE_SEED: u64 = 0x0C1A_55E5_u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    I,
    II,
    III,
    IV,
    #[serde(rename = "LAG-I")]
    LagI,
    #[serde(rename = "LAG-II")]
    LagII,
    #[serde(rename = "LAG-III")]
    LagIII,
}

impl Scenario {
    pub fn is_lag(self) -> bool {
        matches!(self, Scenario::LagI | Scenario::LagII | Scenario::LagIII)
    }

    /// The effect is moderated by the cluster mean state.
    fn cluster_moderated(self) -> bool {
        matches!(self, Scenario::III | Scenario::IV | Scenario::LagIII)
    }

    /// Default truncated-normal parameters for the cluster random effect.
    pub fn default_random_effect(self) -> TruncatedNormalParams {
        if self.is_lag() {
            TruncatedNormalParams::new(0.0, 0.5, -0.8, 0.8)
        } else {
            TruncatedNormalParams::new(0.0, 0.5, -1.0, 1.0)
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scenario::I => "I",
            Scenario::II => "II",
            Scenario::III => "III",
            Scenario::IV => "IV",
            Scenario::LagI => "LAG-I",
            Scenario::LagII => "LAG-II",
            Scenario::LagIII => "LAG-III",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncatedNormalParams {
    pub mu: f64,
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedNormalParams {
    pub const fn new(mu: f64, sigma: f64, lower: f64, upper: f64) -> Self {
        TruncatedNormalParams {
            mu,
            sigma,
            lower,
            upper,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !(self.lower < self.upper) {
            return Err(Error::Config(format!(
                "truncated normal needs sigma > 0 and lower < upper, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Generative model selection and sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub scenario: Scenario,
    /// Number of clusters `M`.
    pub clusters: usize,
    /// Common cluster size `G`.
    pub cluster_size: usize,
    /// Per-cluster sizes; overrides `cluster_size` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_sizes: Option<Vec<usize>>,
    /// Decision points per individual `T`.
    #[serde(default = "default_decision_points")]
    pub decision_points: usize,
    #[serde(default = "default_p_rand")]
    pub p_rand: f64,
    /// Cluster random effect; scenario default when absent. `sigma = 0`
    /// switches the random effect off.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_effect: Option<TruncatedNormalParams>,
    /// Per-treated-peer effect in Scenario IV.
    #[serde(default = "default_beta20")]
    pub beta20: f64,
    #[serde(default)]
    pub seed: u64,
    /// Reference policy the lag-scenario truth refers to.
    #[serde(default)]
    pub reference_policy: ReferencePolicy,
    /// Monte Carlo draws for oracle truths.
    #[serde(default = "default_oracle_draws")]
    pub oracle_draws: usize,
    /// What to do with a Bernoulli mean ≥ 1; scenario default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_overflow: Option<MeanOverflow>,
}

/// Handling of outcome means that leave `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanOverflow {
    /// Fail with [`Error::MeanOutOfRange`].
    Error,
    /// Cap the mean at 1. Only reachable under treatment (Scenarios III and
    /// IV), so untreated means and the IV indirect effect are unaffected;
    /// the direct-effect oracle applies the same cap.
    Clip,
}

fn default_version() -> u32 {
    1
}
fn default_decision_points() -> usize {
    30
}
fn default_p_rand() -> f64 {
    0.2
}
fn default_beta20() -> f64 {
    -0.1
}
fn default_oracle_draws() -> usize {
    1_000_000
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, clusters: usize, cluster_size: usize) -> Self {
        ScenarioConfig {
            version: 1,
            scenario,
            clusters,
            cluster_size,
            cluster_sizes: None,
            decision_points: default_decision_points(),
            p_rand: default_p_rand(),
            random_effect: None,
            beta20: default_beta20(),
            seed: 0,
            reference_policy: ReferencePolicy::default(),
            oracle_draws: default_oracle_draws(),
            mean_overflow: None,
        }
    }

    pub fn mean_overflow(&self) -> MeanOverflow {
        self.mean_overflow.unwrap_or(match self.scenario {
            Scenario::III | Scenario::IV => MeanOverflow::Clip,
            _ => MeanOverflow::Error,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn random_effect_params(&self) -> TruncatedNormalParams {
        self.random_effect
            .unwrap_or_else(|| self.scenario.default_random_effect())
    }

    pub fn sizes(&self) -> Vec<usize> {
        match &self.cluster_sizes {
            Some(s) => s.clone(),
            None => vec![self.cluster_size; self.clusters],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(Error::Config(format!("unsupported config version {}", self.version)));
        }
        let sizes = self.sizes();
        if self.clusters == 0 || self.decision_points == 0 || sizes.len() != self.clusters {
            return Err(Error::Config(
                "clusters and decision_points must be ≥ 1 and cluster_sizes must have one entry per cluster".into(),
            ));
        }
        if sizes.iter().any(|&g| g == 0) {
            return Err(Error::Config("cluster sizes must be ≥ 1".into()));
        }
        if self.scenario == Scenario::IV && sizes.iter().any(|&g| g < 2) {
            return Err(Error::Config("scenario IV needs clusters of size ≥ 2".into()));
        }
        if !(self.p_rand > 0.0 && self.p_rand < 1.0) {
            return Err(Error::Config(format!("p_rand {} outside (0,1)", self.p_rand)));
        }
        let re = self.random_effect_params();
        if re.sigma != 0.0 {
            re.validate()?;
            if re.mu != 0.0 {
                return Err(Error::Config("random effect mean must be 0".into()));
            }
        }
        self.reference_policy.validate()?;
        if self.oracle_draws == 0 {
            return Err(Error::Config("oracle_draws must be ≥ 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Primitive samplers

const TRANSITION: [[f64; 3]; 3] = [[0.5, 0.25, 0.25], [0.25, 0.5, 0.25], [0.25, 0.25, 0.5]];

fn markov_step<R: Rng + ?Sized>(from: u8, rng: &mut R) -> u8 {
    let u: f64 = rng.random();
    let row = &TRANSITION[from as usize];
    if u < row[0] {
        0
    } else if u < row[0] + row[1] {
        1
    } else {
        2
    }
}

/// Three-state chain with a uniform initial state and 0.5 self-transition.
pub fn sample_markov_states<R: Rng + ?Sized>(horizon: usize, rng: &mut R) -> Vec<u8> {
    let mut states = Vec::with_capacity(horizon);
    if horizon == 0 {
        return states;
    }
    let mut z = rng.random_range(0..3u8);
    states.push(z);
    for _ in 1..horizon {
        z = markov_step(z, rng);
        states.push(z);
    }
    states
}

/// Inverse-CDF draw from a normal truncated to `[lower, upper]`.
pub fn sample_truncated_normal<R: Rng + ?Sized>(params: &TruncatedNormalParams, rng: &mut R) -> f64 {
    let alpha = (params.lower - params.mu) / params.sigma;
    let beta = (params.upper - params.mu) / params.sigma;
    let (fa, fb) = (normal_cdf(alpha), normal_cdf(beta));
    let u: f64 = rng.random();
    let x = normal_quantile(fa + u * (fb - fa)) * params.sigma + params.mu;
    x.clamp(params.lower, params.upper)
}

/// Additive constant `c` with `E[exp(e + c)] = 1` for `e` drawn from `params`
/// (which must be centred at 0).
pub fn shift_constant(params: &TruncatedNormalParams) -> Result<f64> {
    if params.mu != 0.0 {
        return Err(Error::InvalidArgument(
            "shift constant is defined for mu = 0 only".into(),
        ));
    }
    params.validate()?;
    let s = params.sigma;
    let (a, b) = (params.lower, params.upper);
    let num = normal_cdf(b / s - s) - normal_cdf(a / s - s);
    let den = normal_cdf(b / s) - normal_cdf(a / s);
    if den <= 0.0 || num <= 0.0 {
        // Both masses underflow only when sigma is negligible against the
        // support; the random effect is then a point mass at 0.
        return Ok(0.0);
    }
    Ok(-s * s / 2.0 - (num / den).ln())
}

/// Draw a mean-one-on-the-exponential-scale cluster random effect.
fn sample_random_effect<R: Rng + ?Sized>(params: &TruncatedNormalParams, shift: f64, rng: &mut R) -> f64 {
    if params.sigma == 0.0 {
        0.0
    } else {
        sample_truncated_normal(params, rng) + shift
    }
}

/// `γ = [p e^{β20} + (1 − p)]^{m−2}`.
pub fn indirect_normalizer(p: f64, beta20: f64, cluster_size: usize) -> Result<f64> {
    if cluster_size < 2 {
        return Err(Error::InvalidArgument(
            "indirect normalizer needs cluster size ≥ 2".into(),
        ));
    }
    Ok((p * beta20.exp() + (1.0 - p)).powi(cluster_size as i32 - 2))
}

// ---------------------------------------------------------------------------
// Generation

struct MemberDraw {
    states: Vec<u8>,
    treatments: Vec<u8>,
    rng: StreamRng,
}

/// Inputs to one outcome mean.
struct MeanInputs {
    z: u8,
    zbar: f64,
    a: u8,
    treated_others: usize,
    prev_a: u8,
    prev_moderator: f64,
    random_effect: f64,
    gamma: f64,
}

fn outcome_mean(scenario: Scenario, beta20: f64, x: &MeanInputs) -> f64 {
    let base = BASE_RATES[x.z as usize];
    let a = f64::from(x.a);
    let (b0, b1) = EFFECT_COEFS;
    let exponent = match scenario {
        Scenario::I => a * (b0 + b1 * f64::from(x.z)) + x.random_effect,
        Scenario::II => a * (b0 + b1 * f64::from(x.z) + x.random_effect),
        Scenario::III => a * (b0 + b1 * x.zbar + x.random_effect),
        Scenario::IV => {
            a * (b0 + b1 * x.zbar + x.random_effect) + beta20 * x.treated_others as f64
        }
        Scenario::LagI | Scenario::LagII | Scenario::LagIII => {
            let (l0, l1) = LAG_EFFECT_COEFS;
            let carry = f64::from(x.prev_a);
            let now = a * (b0 + b1 * f64::from(x.z));
            if scenario == Scenario::LagI {
                carry * (l0 + l1 * x.prev_moderator) + now + x.random_effect
            } else {
                carry * (l0 + l1 * x.prev_moderator + x.random_effect) + now
            }
        }
    };
    base * exponent.exp() / x.gamma
}

/// Generate one panel. The cluster random effect, every individual's states,
/// treatments and outcomes come from substreams keyed on
/// `(seed, cluster, individual)`, so the result does not depend on how
/// clusters are scheduled across threads.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<ClusterPanel> {
    config.validate()?;
    let re = config.random_effect_params();
    let shift = if re.sigma == 0.0 { 0.0 } else { shift_constant(&re)? };
    let sizes = config.sizes();
    let clusters = sizes
        .par_iter()
        .enumerate()
        .map(|(m, &g)| generate_cluster(config, &re, shift, m, g))
        .collect::<Result<Vec<_>>>()?;
    ClusterPanel::new(clusters, STATE_COLUMNS.iter().map(|s| s.to_string()).collect())
}

fn generate_cluster(
    config: &ScenarioConfig,
    re: &TruncatedNormalParams,
    shift: f64,
    m: usize,
    size: usize,
) -> Result<Cluster> {
    let scenario = config.scenario;
    let horizon = config.decision_points;
    let overflow = config.mean_overflow();
    let mut cluster_rng = substream(config.seed, &[m as u64, u64::MAX]);
    let random_effect = sample_random_effect(re, shift, &mut cluster_rng);
    let gamma = if scenario == Scenario::IV {
        indirect_normalizer(config.p_rand, config.beta20, size)?
    } else {
        1.0
    };

    let mut draws: Vec<MemberDraw> = (0..size)
        .map(|j| {
            let mut rng = substream(config.seed, &[m as u64, j as u64]);
            let states = sample_markov_states(horizon, &mut rng);
            let treatments = (0..horizon)
                .map(|_| u8::from(rng.random::<f64>() < config.p_rand))
                .collect();
            MemberDraw {
                states,
                treatments,
                rng,
            }
        })
        .collect();

    let zbar: Vec<f64> = (0..horizon)
        .map(|t| draws.iter().map(|d| f64::from(d.states[t])).sum::<f64>() / size as f64)
        .collect();
    let treated: Vec<usize> = (0..horizon)
        .map(|t| draws.iter().map(|d| d.treatments[t] as usize).sum())
        .collect();

    let mut members = Vec::with_capacity(size);
    for (j, draw) in draws.iter_mut().enumerate() {
        let mut rows = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let a = draw.treatments[t];
            let z = draw.states[t];
            let (prev_a, prev_moderator) = if t == 0 {
                (0, 0.0)
            } else if scenario.cluster_moderated() {
                (draw.treatments[t - 1], zbar[t - 1])
            } else {
                (draw.treatments[t - 1], f64::from(draw.states[t - 1]))
            };
            let inputs = MeanInputs {
                z,
                zbar: zbar[t],
                a,
                treated_others: treated[t] - a as usize,
                prev_a,
                prev_moderator,
                random_effect,
                gamma,
            };
            let mut mean = outcome_mean(scenario, config.beta20, &inputs);
            if mean >= 1.0 && overflow == MeanOverflow::Clip {
                mean = 1.0;
            } else if !(mean > 0.0 && mean < 1.0) {
                return Err(Error::MeanOutOfRange {
                    scenario: scenario.to_string(),
                    cluster: m + 1,
                    individual: j + 1,
                    t: t + 1,
                    mean,
                });
            }
            let y = u8::from(draw.rng.random::<f64>() < mean);
            rows.push(DecisionPoint {
                t: t + 1,
                treatment: a,
                prob: config.p_rand,
                available: 1,
                outcome: y,
                state: vec![f64::from(z), zbar[t], inputs.treated_others as f64],
            });
        }
        members.push(IndividualSeries {
            id: (j + 1).to_string(),
            rows,
        });
    }
    Ok(Cluster {
        id: (m + 1).to_string(),
        members,
    })
}

// ---------------------------------------------------------------------------
// True effects

/// Closed-form marginal effect of Scenarios I and II: the stationary-uniform
/// average of `c(z) e^{0.1 + 0.3 z}` over that of `c(z)`.
pub fn closed_form_marginal_effect() -> f64 {
    let (b0, b1) = EFFECT_COEFS;
    let num: f64 = (0..3)
        .map(|z| BASE_RATES[z] * (b0 + b1 * z as f64).exp())
        .sum();
    let den: f64 = BASE_RATES.iter().sum();
    (num / den).ln()
}

/// Marginal direct effect (log relative risk) implied by `config`. For the
/// lag scenarios it is the Δ = 2 effect under `config.reference_policy`.
pub fn true_direct_effect(config: &ScenarioConfig) -> Result<f64> {
    config.validate()?;
    Ok(match config.scenario {
        Scenario::I | Scenario::II => closed_form_marginal_effect(),
        Scenario::III | Scenario::IV => cluster_moderated_oracle(config),
        _ => lag_oracle(config),
    })
}

/// Marginal pairwise indirect effect: `β20` in Scenario IV, zero elsewhere
/// since no other scenario lets peers' treatments reach the outcome.
pub fn true_indirect_effect(config: &ScenarioConfig) -> f64 {
    if config.scenario == Scenario::IV {
        config.beta20
    } else {
        0.0
    }
}

/// The headline estimand of each scenario: the indirect effect for IV and
/// the direct (lag-2 for LAG-*) effect otherwise.
pub fn true_marginal_effect(config: &ScenarioConfig) -> Result<f64> {
    if config.scenario == Scenario::IV {
        config.validate()?;
        Ok(true_indirect_effect(config))
    } else {
        true_direct_effect(config)
    }
}

fn oracle_cluster_size<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> usize {
    if sizes.iter().all(|&g| g == sizes[0]) {
        sizes[0]
    } else {
        sizes[rng.random_range(0..sizes.len())]
    }
}

/// Monte Carlo of the conditional means under `a = 1` and `a = 0` at
/// stationarity, with common random numbers for both arms. In Scenario IV
/// the peer term is drawn too, because clipping keeps it from cancelling.
fn cluster_moderated_oracle(config: &ScenarioConfig) -> f64 {
    let iv = config.scenario == Scenario::IV;
    let clip = config.mean_overflow() == MeanOverflow::Clip;
    let cap = |mu: f64| if clip { mu.min(1.0) } else { mu };
    let re = config.random_effect_params();
    let shift = if re.sigma == 0.0 { 0.0 } else { shift_constant(&re).unwrap_or(0.0) };
    let sizes = config.sizes();
    let mut rng = substream(ORACLE_SEED, &[3]);
    let (b0, b1) = EFFECT_COEFS;
    let (mut treated, mut control) = (0.0, 0.0);
    for _ in 0..config.oracle_draws {
        let g = oracle_cluster_size(&sizes, &mut rng);
        let z = rng.random_range(0..3u8);
        let others: u32 = (1..g).map(|_| u32::from(rng.random_range(0..3u8))).sum();
        let zbar = (f64::from(z) + f64::from(others)) / g as f64;
        let b = sample_random_effect(&re, shift, &mut rng);
        let base = BASE_RATES[z as usize];
        if iv {
            let gamma = indirect_normalizer(config.p_rand, config.beta20, g).unwrap_or(1.0);
            let peers = (1..g).filter(|_| rng.random::<f64>() < config.p_rand).count();
            let peer = (config.beta20 * peers as f64).exp() / gamma;
            treated += cap(base * (b0 + b1 * zbar + b).exp() * peer);
            control += base * peer;
        } else {
            treated += cap(base * (b0 + b1 * zbar + b).exp());
            control += base;
        }
    }
    (treated / control).ln()
}

fn lag_oracle(config: &ScenarioConfig) -> f64 {
    let scenario = config.scenario;
    let re = config.random_effect_params();
    let shift = if re.sigma == 0.0 { 0.0 } else { shift_constant(&re).unwrap_or(0.0) };
    let sizes = config.sizes();
    let p = config.p_rand;
    let mut rng = substream(ORACLE_SEED, &[7]);
    let (b0, b1) = EFFECT_COEFS;
    let (l0, l1) = LAG_EFFECT_COEFS;
    let (mut treated, mut control) = (0.0, 0.0);
    for _ in 0..config.oracle_draws {
        let z = rng.random_range(0..3u8);
        let moderator = if scenario == Scenario::LagIII {
            let g = oracle_cluster_size(&sizes, &mut rng);
            let others: u32 = (1..g).map(|_| u32::from(rng.random_range(0..3u8))).sum();
            (f64::from(z) + f64::from(others)) / g as f64
        } else {
            f64::from(z)
        };
        let next = markov_step(z, &mut rng);
        let effect_next = (b0 + b1 * f64::from(next)).exp();
        // Mean of exp(A_{t+1} * effect) with A_{t+1} drawn from the policy.
        let window = match config.reference_policy {
            ReferencePolicy::ObservedDistribution => (1.0 - p) + p * effect_next,
            ReferencePolicy::AlwaysTreat => effect_next,
            ReferencePolicy::AlwaysControl => 1.0,
            ReferencePolicy::FixedProbability(pi) => (1.0 - pi) + pi * effect_next,
        };
        let r = sample_random_effect(&re, shift, &mut rng);
        let common = BASE_RATES[next as usize] * window;
        let (carry, baseline) = if scenario == Scenario::LagI {
            (l0 + l1 * moderator, r.exp())
        } else {
            (l0 + l1 * moderator + r, 1.0)
        };
        treated += common * baseline * carry.exp();
        control += common * baseline;
    }
    (treated / control).ln()
}
