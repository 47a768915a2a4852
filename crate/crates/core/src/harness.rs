//! Monte Carlo replication: generate → fit → infer, many times, and compare
//! against the generator's true effect.

use std::io::Write;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{fit, Estimator, EstimatorOptions};
use crate::panel::{FeatureSpec, Term};
use crate::rng::derive_seed;
use crate::simulate::{generate_scenario, true_direct_effect, true_indirect_effect, ScenarioConfig};
use crate::variance::{covariance, infer, SmallSample};
use crate::weights::Numerator;

/// One grid cell: a generator configuration plus the outcome lag to fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    /// Seeds inside are ignored; replicate seeds come from the plan.
    pub generator: ScenarioConfig,
    /// Outcome lag; 2 for lag scenarios and 1 otherwise when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<usize>,
}

impl CellSpec {
    pub fn new(generator: ScenarioConfig) -> Self {
        CellSpec { generator, delta: None }
    }

    pub fn delta(&self) -> usize {
        self.delta
            .unwrap_or(if self.generator.scenario.is_lag() { 2 } else { 1 })
    }

    pub fn label(&self) -> String {
        let g = &self.generator;
        format!(
            "{} M={} G={} delta={} policy={}",
            g.scenario,
            g.clusters,
            g.cluster_size,
            self.delta(),
            g.reference_policy
        )
    }
}

fn default_version() -> u32 {
    1
}
fn default_xi() -> f64 {
    0.05
}
fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::CemeeDirect, Estimator::Emee]
}

/// The moderator-free control model used unless a plan overrides it.
pub fn default_control() -> FeatureSpec {
    FeatureSpec::new(vec![Term::Intercept, Term::Column("Z".into())])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default = "default_version")]
    pub version: u32,
    pub cells: Vec<CellSpec>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    /// Replicates per cell, R ≥ 2.
    pub replicates: usize,
    /// Significance level ξ.
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub small_sample: SmallSample,
    #[serde(default)]
    pub numerator: Numerator,
    /// Moderator features; intercept only (the marginal effect) by default.
    #[serde(default = "FeatureSpec::intercept")]
    pub moderator: FeatureSpec,
    /// Control features; `[intercept, Z]` by default.
    #[serde(default = "default_control")]
    pub control: FeatureSpec,
}

impl ExperimentPlan {
    pub fn new(cells: Vec<CellSpec>, replicates: usize, seed: u64) -> Self {
        ExperimentPlan {
            version: 1,
            cells,
            estimators: default_estimators(),
            replicates,
            xi: default_xi(),
            seed,
            small_sample: SmallSample::Auto,
            numerator: Numerator::Empirical,
            moderator: FeatureSpec::intercept(),
            control: default_control(),
        }
    }

    pub fn with_estimators(mut self, estimators: Vec<Estimator>) -> Self {
        self.estimators = estimators;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(Error::Config(format!("unsupported plan version {}", self.version)));
        }
        if self.replicates < 2 {
            return Err(Error::Config(format!("replicates must be ≥ 2, got {}", self.replicates)));
        }
        if self.cells.is_empty() || self.estimators.is_empty() {
            return Err(Error::Config("plan needs at least one cell and one estimator".into()));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::Config(format!("xi {} outside (0,1)", self.xi)));
        }
        for cell in &self.cells {
            cell.generator.validate()?;
            if cell.delta() == 0 || cell.delta() > cell.generator.decision_points {
                return Err(Error::Config(format!("invalid lag for cell {}", cell.label())));
            }
        }
        Ok(())
    }
}

/// One replicate's outcome for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ReplicateRecord {
    fn failed(replicate: usize, seed: u64, error: &Error) -> Self {
        ReplicateRecord {
            replicate,
            seed,
            estimate: None,
            se: None,
            lo: None,
            hi: None,
            error: Some(error.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub bias: f64,
    /// Mean reported standard error.
    pub se: f64,
    /// Empirical standard deviation of the estimates.
    pub emp_sd: f64,
    pub rmse: f64,
    /// Coverage probability of the intervals.
    pub cp: f64,
    /// Monte Carlo standard error of `cp`.
    pub cp_mcse: f64,
    pub n: usize,
}

/// Bias, mean SE, empirical SD, RMSE and coverage of replicate results.
pub fn summarize(estimates: &[f64], ses: &[f64], hits: &[bool], truth: f64) -> Result<Summary> {
    let n = estimates.len();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot summarize zero replicates".into()));
    }
    if ses.len() != n || hits.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: if ses.len() != n { ses.len() } else { hits.len() },
        });
    }
    let nf = n as f64;
    let mean = estimates.iter().sum::<f64>() / nf;
    let bias = estimates.iter().map(|e| e - truth).sum::<f64>() / nf;
    let emp_sd = if n > 1 {
        (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt()
    } else {
        0.0
    };
    let rmse = (estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / nf).sqrt();
    let cp = hits.iter().filter(|&&h| h).count() as f64 / nf;
    Ok(Summary {
        bias,
        se: ses.iter().sum::<f64>() / nf,
        emp_sd,
        // Guard the identity RMSE ≥ |bias| against the last ulp.
        rmse: rmse.max(bias.abs()),
        cp,
        cp_mcse: (cp * (1.0 - cp) / nf).sqrt(),
        n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: usize,
    pub spec: CellSpec,
    pub estimator: Estimator,
    pub truth: f64,
    pub failures: usize,
    pub summary: Summary,
    pub replicates: Vec<ReplicateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub plan: ExperimentPlan,
    pub cells: Vec<CellReport>,
}

impl ReplicationReport {
    /// Table-style CSV, one row per (cell, estimator).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "scenario", "estimator", "M", "G", "delta", "policy", "truth", "bias", "se", "emp_sd", "rmse", "cp",
            "cp_mcse", "n", "failures",
        ])?;
        for c in &self.cells {
            let g = &c.spec.generator;
            let s = &c.summary;
            w.write_record([
                g.scenario.to_string(),
                c.estimator.to_string(),
                g.clusters.to_string(),
                g.cluster_sizes
                    .as_ref()
                    .map_or(g.cluster_size.to_string(), |_| "varied".into()),
                c.spec.delta().to_string(),
                g.reference_policy.to_string(),
                c.truth.to_string(),
                s.bias.to_string(),
                s.se.to_string(),
                s.emp_sd.to_string(),
                s.rmse.to_string(),
                s.cp.to_string(),
                s.cp_mcse.to_string(),
                s.n.to_string(),
                c.failures.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save(&self, json: impl AsRef<Path>, csv: impl AsRef<Path>) -> Result<()> {
        let (json, csv) = (json.as_ref(), csv.as_ref());
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(json, text + "\n").map_err(|e| Error::io(json, e))?;
        let file = std::fs::File::create(csv).map_err(|e| Error::io(csv, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn find(&self, cell: usize, estimator: Estimator) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.cell == cell && c.estimator == estimator)
    }
}

fn truth_for(spec: &CellSpec, estimator: Estimator) -> Result<f64> {
    match estimator {
        Estimator::CemeeIndirect => Ok(true_indirect_effect(&spec.generator)),
        _ => true_direct_effect(&spec.generator),
    }
}

fn run_replicate(plan: &ExperimentPlan, cell: usize, spec: &CellSpec, r: usize) -> Vec<ReplicateRecord> {
    let seed = derive_seed(plan.seed, &[cell as u64, r as u64]);
    let config = spec.generator.clone().with_seed(seed);
    let panel = match generate_scenario(&config) {
        Ok(p) => p,
        Err(e) => return plan.estimators.iter().map(|_| ReplicateRecord::failed(r, seed, &e)).collect(),
    };
    plan.estimators
        .iter()
        .map(|&est| {
            let options = EstimatorOptions::new(est)
                .with_delta(spec.delta())
                .with_policy(spec.generator.reference_policy)
                .with_numerator(plan.numerator.clone());
            let outcome = fit(&panel, &plan.moderator, &plan.control, &options)
                .and_then(|f| {
                    let cov = covariance(&f, plan.small_sample)?;
                    infer(&f, &cov, &[], plan.xi)
                });
            match outcome {
                Ok(s) => {
                    let c = &s.coefficients[0];
                    ReplicateRecord {
                        replicate: r,
                        seed,
                        estimate: Some(c.estimate),
                        se: Some(c.se),
                        lo: Some(c.lo),
                        hi: Some(c.hi),
                        error: None,
                    }
                }
                Err(e) => ReplicateRecord::failed(r, seed, &e),
            }
        })
        .collect()
}

/// Run every (cell, replicate) and summarize per (cell, estimator). The
/// report depends only on the plan, not on the number of worker threads.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ReplicationReport> {
    plan.validate()?;
    let truths = plan
        .cells
        .iter()
        .map(|cell| {
            plan.estimators
                .iter()
                .map(|&e| truth_for(cell, e))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..plan.cells.len())
        .flat_map(|c| (0..plan.replicates).map(move |r| (c, r)))
        .collect();
    let results: Vec<Vec<ReplicateRecord>> = jobs
        .par_iter()
        .map(|&(c, r)| run_replicate(plan, c, &plan.cells[c], r))
        .collect();

    let mut cells = Vec::new();
    for (c, spec) in plan.cells.iter().enumerate() {
        let block = &results[c * plan.replicates..(c + 1) * plan.replicates];
        for (k, &estimator) in plan.estimators.iter().enumerate() {
            let truth = truths[c][k];
            let records: Vec<ReplicateRecord> = block.iter().map(|rs| rs[k].clone()).collect();
            let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| r.error.is_none()).collect();
            let failures = records.len() - ok.len();
            if ok.is_empty() {
                return Err(Error::AllReplicatesFailed(format!(
                    "{} / {estimator}: {}",
                    spec.label(),
                    records[0].error.clone().unwrap_or_default()
                )));
            }
            if failures > 0 {
                warn!("{} / {estimator}: {failures} replicate(s) failed and were excluded", spec.label());
            }
            let estimates: Vec<f64> = ok.iter().map(|r| r.estimate.unwrap()).collect();
            let ses: Vec<f64> = ok.iter().map(|r| r.se.unwrap()).collect();
            let hits: Vec<bool> = ok
                .iter()
                .map(|r| r.lo.unwrap() <= truth && truth <= r.hi.unwrap())
                .collect();
            let summary = summarize(&estimates, &ses, &hits, truth)?;
            info!(
                "{} / {estimator}: bias {:.2e}, se {:.4}, rmse {:.4}, cp {:.3}",
                spec.label(),
                summary.bias,
                summary.se,
                summary.rmse,
                summary.cp
            );
            cells.push(CellReport {
                cell: c,
                spec: spec.clone(),
                estimator,
                truth,
                failures,
                summary,
                replicates: records,
            });
        }
    }
    Ok(ReplicationReport {
        plan: plan.clone(),
        cells,
    })
}

/// Which generator parameter a coverage sweep varies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepAxis {
    /// Cluster sizes; with `total` set, the cluster count becomes
    /// `total / G` so the number of individuals stays fixed.
    ClusterSize { values: Vec<usize>, total: Option<usize> },
    /// Standard deviation of the cluster random effect.
    RandomEffectSd { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub estimator: Estimator,
    pub cp: f64,
    pub cp_mcse: f64,
    pub bias: f64,
    pub se: f64,
}

/// Coverage of every plan estimator along one generator axis. The plan's
/// first cell is the template; its other cells are ignored.
pub fn coverage_sweep(plan: &ExperimentPlan, axis: &SweepAxis) -> Result<Vec<SweepPoint>> {
    let template = plan
        .cells
        .first()
        .ok_or_else(|| Error::Config("sweep needs a template cell".into()))?;
    let (values, cells): (Vec<f64>, Vec<CellSpec>) = match axis {
        SweepAxis::ClusterSize { values, total } => values
            .iter()
            .map(|&g| {
                let mut cell = template.clone();
                cell.generator.cluster_size = g;
                cell.generator.cluster_sizes = None;
                if let Some(total) = total {
                    cell.generator.clusters = (total / g.max(1)).max(1);
                }
                (g as f64, cell)
            })
            .unzip(),
        SweepAxis::RandomEffectSd { values } => values
            .iter()
            .map(|&sd| {
                let mut cell = template.clone();
                let mut re = cell.generator.random_effect_params();
                re.sigma = sd;
                cell.generator.random_effect = Some(re);
                (sd, cell)
            })
            .unzip(),
    };
    if values.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let sweep_plan = ExperimentPlan {
        cells,
        ..plan.clone()
    };
    let report = run_experiment(&sweep_plan)?;
    Ok(report
        .cells
        .iter()
        .map(|c| SweepPoint {
            value: values[c.cell],
            estimator: c.estimator,
            cp: c.summary.cp,
            cp_mcse: c.summary.cp_mcse,
            bias: c.summary.bias,
            se: c.summary.se,
        })
        .collect())
}
