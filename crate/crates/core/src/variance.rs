//! Sandwich covariance, the Mancl–DeRouen small-sample correction and
//! t-based inference for fitted excursion effects.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{Estimator, FitResult, MemberBlock};
use crate::linalg::{self, KahanSum};
use crate::special::{t_quantile, t_two_sided_p};

/// Below this many units the correction is applied under [`SmallSample::Auto`].
pub const SMALL_SAMPLE_THRESHOLD: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmallSample {
    /// Correct when there are fewer than 50 units.
    #[default]
    Auto,
    Always,
    Never,
}

impl SmallSample {
    pub fn applies(self, n_units: usize) -> bool {
        match self {
            SmallSample::Auto => n_units < SMALL_SAMPLE_THRESHOLD,
            SmallSample::Always => true,
            SmallSample::Never => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceResult {
    /// Covariance of `(α̂, β̂)`, already divided by the unit count.
    pub covariance: DMatrix<f64>,
    /// The `β̂` block.
    pub beta: DMatrix<f64>,
    pub corrected: bool,
    /// Units minus `p + q`; zero when there are too few units for inference.
    pub df: usize,
    pub n_units: usize,
    pub p: usize,
    pub q: usize,
}

impl CovarianceResult {
    pub fn beta_se(&self) -> Vec<f64> {
        (0..self.q).map(|i| self.beta[(i, i)].max(0.0).sqrt()).collect()
    }

    pub fn alpha_se(&self) -> Vec<f64> {
        (0..self.p).map(|i| self.covariance[(i, i)].max(0.0).sqrt()).collect()
    }
}

/// `Ŵ = (1/U) Σ_u U_u U_u'` from explicit unit scores.
fn meat_of(scores: &[DVector<f64>]) -> DMatrix<f64> {
    let dim = scores.first().map_or(0, |s| s.len());
    let mut acc = KahanSum::new(dim * dim);
    for s in scores {
        acc.add((s * s.transpose()).as_slice());
    }
    DMatrix::from_vec(dim, dim, acc.into_inner()) / scores.len() as f64
}

/// Uncorrected meat matrix of a fit.
pub fn meat(fit: &FitResult) -> DMatrix<f64> {
    let scores: Vec<DVector<f64>> = fit.contributions.iter().map(|c| c.score.clone()).collect();
    meat_of(&scores)
}

fn assemble(fit: &FitResult, meat: &DMatrix<f64>, corrected: bool) -> Result<CovarianceResult> {
    let q_inv = linalg::inverse(&fit.bread, "bread matrix")?;
    let n = fit.n_units();
    let raw = &q_inv * meat * q_inv.transpose() / n as f64;
    let covariance = (&raw + raw.transpose()) * 0.5;
    let (p, q) = (fit.p(), fit.q());
    Ok(CovarianceResult {
        beta: covariance.view((p, p), (q, q)).into_owned(),
        covariance,
        corrected,
        df: n.saturating_sub(p + q),
        n_units: n,
        p,
        q,
    })
}

/// Robust sandwich `Q̂⁻¹ Ŵ Q̂⁻ᵀ / U`.
pub fn sandwich(fit: &FitResult) -> Result<CovarianceResult> {
    assemble(fit, &meat(fit), false)
}

/// Leverage `H = s V B⁻¹ D'` of one member block, where `s` is the unit's
/// scale and `B = Σ_u s_u Σ_j D_j' V_j`.
pub fn leverage(block: &MemberBlock, scale: f64, b_inv: &DMatrix<f64>) -> DMatrix<f64> {
    &block.v * b_inv * block.d.transpose() * scale
}

/// Solve `(B/s - D'V) z = D'e`. `I - H` has rank-`(p+q)` structure, so this
/// small system stands in for the member-sized one (Woodbury); it is
/// singular exactly when `I - H` is.
fn woodbury_core(block: &MemberBlock, scale: f64, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    let dtv = block.d.transpose() * &block.v;
    let dte = block.d.transpose() * &block.e;
    let core = b / scale - &dtv;
    let z = linalg::solve(&core, &dte, &format!("I - H for member {}", block.id))?;
    Ok((dtv, dte, z))
}

/// `(I - H)⁻¹ e` for one member block; `b` is the unaveraged Jacobian sum
/// `B` (not its inverse).
pub fn corrected_residuals(block: &MemberBlock, scale: f64, b: &DMatrix<f64>) -> Result<DVector<f64>> {
    if block.e.is_empty() {
        return Ok(DVector::zeros(0));
    }
    let (_, _, z) = woodbury_core(block, scale, b)?;
    Ok(&block.e + &block.v * z)
}

/// `D'(I - H)⁻¹ e` without forming anything member-sized.
fn corrected_score(block: &MemberBlock, scale: f64, b: &DMatrix<f64>) -> Result<DVector<f64>> {
    if block.e.is_empty() {
        return Ok(DVector::zeros(block.d.ncols()));
    }
    let (dtv, dte, z) = woodbury_core(block, scale, b)?;
    Ok(dte + dtv * z)
}

/// Sandwich with every member's residuals premultiplied by `(I - H)⁻¹`.
pub fn small_sample_correct(fit: &FitResult) -> Result<CovarianceResult> {
    // B is the unaveraged Jacobian sum: U · Q̂.
    let b = &fit.bread * fit.n_units() as f64;
    let dim = fit.p() + fit.q();
    let scores = fit
        .contributions
        .par_iter()
        .map(|c| {
            let mut score = DVector::zeros(dim);
            for block in &c.members {
                score += corrected_score(block, c.scale, &b).map_err(|err| match err {
                    Error::Singular { context, condition } => Error::Singular {
                        context: format!("{context} of unit {}", c.unit),
                        condition,
                    },
                    other => other,
                })?;
            }
            Ok(score * c.scale)
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(fit, &meat_of(&scores), true)
}

/// Sandwich covariance, corrected according to `mode`.
pub fn covariance(fit: &FitResult, mode: SmallSample) -> Result<CovarianceResult> {
    if mode.applies(fit.n_units()) {
        small_sample_correct(fit)
    } else {
        sandwich(fit)
    }
}

// ---------------------------------------------------------------------------
// Inference

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub coefficient: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastRow {
    pub contrast: Vec<f64>,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceSummary {
    pub estimator: Estimator,
    /// Significance level ξ; intervals have coverage 1 − ξ.
    pub xi: f64,
    pub df: usize,
    pub critical_value: f64,
    pub corrected: bool,
    pub n_units: usize,
    /// Effect (moderator) coefficients `β̂`.
    pub coefficients: Vec<CoefficientRow>,
    /// Working-model coefficients `α̂`.
    pub controls: Vec<CoefficientRow>,
    pub contrasts: Vec<ContrastRow>,
}

impl InferenceSummary {
    /// Effect coefficients as CSV: `coefficient,estimate,se,t,p,lo,hi`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.coefficients {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn check_level(xi: f64) -> Result<()> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::InvalidArgument(format!("significance level {xi} outside (0,1)")));
    }
    Ok(())
}

fn check_df(cov: &CovarianceResult) -> Result<()> {
    if cov.df < 1 {
        return Err(Error::InsufficientDf {
            units: cov.n_units,
            params: cov.p + cov.q,
        });
    }
    Ok(())
}

struct Interval {
    t: f64,
    p: f64,
    lo: f64,
    hi: f64,
}

fn interval(estimate: f64, se: f64, df: usize, critical: f64) -> Interval {
    let t = estimate / se;
    Interval {
        t,
        p: if se > 0.0 { t_two_sided_p(t, df as f64) } else { f64::NAN },
        lo: estimate - critical * se,
        hi: estimate + critical * se,
    }
}

/// `(c'β̂, SE(c'β̂))` with `SE² = c' Σ̂_β c`.
pub fn contrast(fit: &FitResult, cov: &CovarianceResult, c: &[f64]) -> Result<(f64, f64)> {
    if c.len() != fit.q() {
        return Err(Error::Dimension {
            expected: fit.q(),
            got: c.len(),
        });
    }
    let c = DVector::from_column_slice(c);
    let estimate = c.dot(&fit.beta);
    let var = (c.transpose() * &cov.beta * &c)[(0, 0)];
    Ok((estimate, var.max(0.0).sqrt()))
}

/// Per-coefficient and per-contrast estimates, SEs, t statistics, p-values
/// and `1 − ξ` intervals with `t_{ν}` critical values.
pub fn infer(fit: &FitResult, cov: &CovarianceResult, contrasts: &[Vec<f64>], xi: f64) -> Result<InferenceSummary> {
    check_level(xi)?;
    check_df(cov)?;
    let df = cov.df;
    let critical = t_quantile(1.0 - xi / 2.0, df as f64);
    let row = |name: &str, est: f64, se: f64| {
        let iv = interval(est, se, df, critical);
        CoefficientRow {
            coefficient: name.to_string(),
            estimate: est,
            se,
            t: iv.t,
            p: iv.p,
            lo: iv.lo,
            hi: iv.hi,
        }
    };
    let coefficients = fit
        .moderator_labels
        .iter()
        .zip(fit.beta.iter().zip(cov.beta_se()))
        .map(|(name, (&est, se))| row(name, est, se))
        .collect();
    let controls = fit
        .control_labels
        .iter()
        .zip(fit.alpha.iter().zip(cov.alpha_se()))
        .map(|(name, (&est, se))| row(name, est, se))
        .collect();
    let contrasts = contrasts
        .iter()
        .map(|c| {
            let (est, se) = contrast(fit, cov, c)?;
            let iv = interval(est, se, df, critical);
            Ok(ContrastRow {
                contrast: c.clone(),
                estimate: est,
                se,
                t: iv.t,
                p: iv.p,
                lo: iv.lo,
                hi: iv.hi,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InferenceSummary {
        estimator: fit.estimator,
        xi,
        df,
        critical_value: critical,
        corrected: cov.corrected,
        n_units: cov.n_units,
        coefficients,
        controls,
        contrasts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub s: f64,
    pub effect: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Pointwise effect `β̂₀ + s β̂₁` with `1 − ξ` intervals for a model with
/// moderator features `(1, s)`.
pub fn moderation_curve(fit: &FitResult, cov: &CovarianceResult, grid: &[f64], xi: f64) -> Result<Vec<CurvePoint>> {
    if fit.q() != 2 {
        return Err(Error::InvalidArgument(format!(
            "moderation curves need exactly two moderator features (1, s), found {}",
            fit.q()
        )));
    }
    check_level(xi)?;
    check_df(cov)?;
    let critical = t_quantile(1.0 - xi / 2.0, cov.df as f64);
    grid.iter()
        .map(|&s| {
            let (effect, se) = contrast(fit, cov, &[1.0, s])?;
            Ok(CurvePoint {
                s,
                effect,
                se,
                lo: effect - critical * se,
                hi: effect + critical * se,
            })
        })
        .collect()
}

/// Curve as CSV: `s,effect,se,lo,hi`.
pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for point in curve {
        w.serialize(point)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
