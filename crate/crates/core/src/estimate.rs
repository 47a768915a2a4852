//! Weighted, centered estimating equations for log relative risk excursion
//! effects and their Newton solver.
//!
//! All three estimators share one row form. A row carries a weight `w`, an
//! exponent indicator `k`, a centering term `h`, the outcome `y` and the
//! features `f` (moderators, length q) and `g` (controls, length p):
//!
//! ```text
//! ε̃ = exp(-k f'β) y - exp(g'α)
//! x = (g, h f)
//! score = Σ w ε̃ x
//! ```
//!
//! * EMEE: `k = A`, `h = A - p̃`, one unit per individual.
//! * C-EMEE direct: the same rows, one unit per cluster scaled by `1/G_m`.
//! * C-EMEE indirect: ordered pairs `(j, j′)` with `k = (1 - A_j) A_j′` and
//!   `h = (1 - A_j)(A_j′ - p̃*)`, scaled by `1/(G_m (G_m - 1))`.
//!
//! The estimating function is the average of unit scores over units.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, KahanSum};
use crate::panel::{build_design_with, ClusterPanel, DesignRows, FeatureSpec, OutcomeDefinition};
use crate::weights::{
    lag_weight, marginal_weight, pair_numerator_prob, pair_weight, prob_of, JointNumerator, Numerator,
    ReferencePolicy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "emee")]
    Emee,
    #[serde(rename = "cemee-direct")]
    CemeeDirect,
    #[serde(rename = "cemee-indirect")]
    CemeeIndirect,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Emee => "emee",
            Estimator::CemeeDirect => "cemee-direct",
            Estimator::CemeeIndirect => "cemee-indirect",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "emee" => Ok(Estimator::Emee),
            "cemee-direct" => Ok(Estimator::CemeeDirect),
            "cemee-indirect" => Ok(Estimator::CemeeIndirect),
            _ => Err(Error::InvalidArgument(format!(
                "unknown estimator `{s}` (expected emee, cemee-direct or cemee-indirect)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Convergence threshold on the max-norm of the estimating function.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Step multiplier applied when a Newton step increases the residual.
    pub damping: f64,
    pub max_halvings: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-10,
            max_iterations: 100,
            damping: 0.5,
            max_halvings: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorOptions {
    pub estimator: Estimator,
    /// Outcome lag Δ.
    #[serde(default = "one")]
    pub delta: usize,
    #[serde(default)]
    pub reference_policy: ReferencePolicy,
    /// `p̃(1 | S)`; only constants are supported.
    #[serde(default)]
    pub numerator: Numerator,
    /// `p̃(a_j, a_j′)` for the indirect estimator, indexed `[a_j][a_j′]`.
    /// Defaults to the product of the marginal numerators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_numerator: Option<[[f64; 2]; 2]>,
    #[serde(default)]
    pub solver: SolverOptions,
}

fn one() -> usize {
    1
}

impl EstimatorOptions {
    pub fn new(estimator: Estimator) -> Self {
        EstimatorOptions {
            estimator,
            delta: 1,
            reference_policy: ReferencePolicy::default(),
            numerator: Numerator::default(),
            joint_numerator: None,
            solver: SolverOptions::default(),
        }
    }

    pub fn with_delta(mut self, delta: usize) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_policy(mut self, policy: ReferencePolicy) -> Self {
        self.reference_policy = policy;
        self
    }

    pub fn with_numerator(mut self, numerator: Numerator) -> Self {
        self.numerator = numerator;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta == 0 {
            return Err(Error::InvalidArgument("lag must be at least 1".into()));
        }
        let s = &self.solver;
        if !(s.tolerance > 0.0) || s.max_iterations == 0 || !(s.damping > 0.0 && s.damping < 1.0) {
            return Err(Error::InvalidArgument(
                "solver needs tolerance > 0, max_iterations ≥ 1 and damping in (0,1)".into(),
            ));
        }
        self.reference_policy.validate()?;
        if let Some(table) = self.joint_numerator {
            JointNumerator::new(table)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Row form

/// One summand. The features live in the system's shared table at
/// `at..at + p + q`, controls first.
#[derive(Debug, Clone, Copy)]
struct EeRow {
    t: usize,
    w: f64,
    k: f64,
    h: f64,
    y: f64,
    at: usize,
}

#[derive(Debug, Clone)]
struct EeMember {
    id: String,
    rows: Vec<EeRow>,
}

#[derive(Debug, Clone)]
struct EeUnit {
    id: String,
    scale: f64,
    members: Vec<EeMember>,
    /// The unit's rows with identical summands merged (weights added); used
    /// wherever only the unit total matters.
    compact: Vec<EeRow>,
}

impl EeUnit {
    fn new(id: String, scale: f64, members: Vec<EeMember>) -> Self {
        let mut rows: Vec<EeRow> = members.iter().flat_map(|m| m.rows.iter().copied()).collect();
        // Stable: ties keep construction order, so merged sums are reproducible.
        rows.sort_by(|a, b| {
            (a.at, a.k.to_bits(), a.h.to_bits()).cmp(&(b.at, b.k.to_bits(), b.h.to_bits()))
        });
        let mut compact: Vec<EeRow> = Vec::with_capacity(rows.len());
        for r in rows {
            match compact.last_mut() {
                Some(last) if last.at == r.at && last.k == r.k && last.h == r.h && last.y == r.y => last.w += r.w,
                _ => compact.push(r),
            }
        }
        EeUnit {
            id,
            scale,
            members,
            compact,
        }
    }
}

/// An assembled estimating equation: every unit's weighted rows, ready to be
/// evaluated at any `θ = (α, β)`.
#[derive(Debug, Clone)]
pub struct EstimatingSystem {
    estimator: Estimator,
    p: usize,
    q: usize,
    features: Vec<f64>,
    units: Vec<EeUnit>,
    numerator: f64,
    skipped_singletons: usize,
    moderator_labels: Vec<String>,
    control_labels: Vec<String>,
}

/// Per-member design blocks retained for the small-sample correction. Row
/// `i` of `d` is `w_i x_i'`, row `i` of `v` is `-∂ε̃_i/∂θ'`, and `e` holds
/// the residuals `ε̃_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberBlock {
    pub id: String,
    pub d: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub e: DVector<f64>,
}

/// One unit's contribution `U_u` to the estimating function.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreContribution {
    pub unit: String,
    pub scale: f64,
    pub score: DVector<f64>,
    pub members: Vec<MemberBlock>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Average of the unit scores.
    pub value: DVector<f64>,
    pub contributions: Vec<ScoreContribution>,
}

impl EstimatingSystem {
    /// Assemble the system for `options.estimator` from design rows.
    pub fn new(design: &DesignRows, options: &EstimatorOptions) -> Result<Self> {
        options.validate()?;
        if design.delta != options.delta {
            return Err(Error::InvalidArgument(format!(
                "design built with lag {} but options ask for {}",
                design.delta, options.delta
            )));
        }
        let p_tilde = options.numerator.resolve(design.treated_fraction())?;
        let features = feature_table(design)?;
        let (units, numerator, skipped) = match options.estimator {
            Estimator::Emee => (direct_units(design, options, p_tilde, false)?, p_tilde, 0),
            Estimator::CemeeDirect => (direct_units(design, options, p_tilde, true)?, p_tilde, 0),
            Estimator::CemeeIndirect => {
                let joint = match options.joint_numerator {
                    Some(t) => JointNumerator::new(t)?,
                    None => JointNumerator::product(p_tilde),
                };
                let (units, skipped) = pair_units(design, options, &joint)?;
                (units, pair_numerator_prob(&joint)?, skipped)
            }
        };
        if units.is_empty() {
            return Err(match options.estimator {
                Estimator::CemeeIndirect => Error::NoEligiblePairs,
                _ => Error::InvalidArgument("design has no individuals".into()),
            });
        }
        Ok(EstimatingSystem {
            estimator: options.estimator,
            p: design.p(),
            q: design.q(),
            features,
            units,
            numerator,
            skipped_singletons: skipped,
            moderator_labels: design.moderator_labels.clone(),
            control_labels: design.control_labels.clone(),
        })
    }

    pub fn estimator(&self) -> Estimator {
        self.estimator
    }

    /// Control dimension p.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Moderator dimension q.
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.p + self.q
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    /// The constant centering probability (`p̃`, or `p̃*` for pairs).
    pub fn numerator(&self) -> f64 {
        self.numerator
    }

    /// Clusters dropped from an indirect fit for having a single member.
    pub fn skipped_singletons(&self) -> usize {
        self.skipped_singletons
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    /// `(g, f)` of a row.
    fn gf(&self, row: &EeRow) -> (&[f64], &[f64]) {
        self.features[row.at..row.at + self.p + self.q].split_at(self.p)
    }

    /// Estimating-function value and per-unit contributions at `θ`.
    pub fn evaluate(&self, theta: &DVector<f64>) -> Result<Evaluation> {
        self.check_theta(theta)?;
        let contributions = self
            .units
            .par_iter()
            .map(|u| self.unit_contribution(u, theta))
            .collect::<Result<Vec<_>>>()?;
        let mut acc = KahanSum::new(self.dim());
        for c in &contributions {
            acc.add(c.score.as_slice());
        }
        let n = self.units.len() as f64;
        let value = DVector::from_vec(acc.into_inner()) / n;
        Ok(Evaluation { value, contributions })
    }

    /// Estimating-function value only.
    pub fn value(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        let scores = self
            .units
            .par_iter()
            .map(|u| self.unit_score(u, theta))
            .collect::<Result<Vec<_>>>()?;
        let mut acc = KahanSum::new(self.dim());
        for s in &scores {
            acc.add(s);
        }
        Ok(DVector::from_vec(acc.into_inner()) / self.units.len() as f64)
    }

    /// Analytic Jacobian of the estimating function at `θ`.
    pub fn jacobian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        let dim = self.dim();
        let parts = self
            .units
            .par_iter()
            .map(|u| self.unit_jacobian(u, theta))
            .collect::<Result<Vec<_>>>()?;
        let mut acc = KahanSum::new(dim * dim);
        for part in &parts {
            acc.add(part.as_slice());
        }
        Ok(DMatrix::from_vec(dim, dim, acc.into_inner()) / self.units.len() as f64)
    }

    /// `(exp(g'α), exp(-k f'β) y)` for one row, checked for finiteness.
    fn row_terms(&self, unit: &EeUnit, row: &EeRow, theta: &DVector<f64>) -> Result<(f64, f64)> {
        let (alpha, beta) = theta.as_slice().split_at(self.p);
        let (g, f) = self.gf(row);
        let base = dot(g, alpha).exp();
        let tilted = if row.k != 0.0 && row.y != 0.0 {
            (-row.k * dot(f, beta)).exp() * row.y
        } else {
            row.y
        };
        if !base.is_finite() || !tilted.is_finite() {
            let member = unit
                .members
                .iter()
                .find(|m| m.rows.iter().any(|r| r.at == row.at))
                .map_or_else(String::new, |m| m.id.clone());
            return Err(Error::NonFinite {
                cluster: unit.id.clone(),
                individual: member,
                t: row.t,
            });
        }
        Ok((base, tilted))
    }

    fn unit_score(&self, unit: &EeUnit, theta: &DVector<f64>) -> Result<Vec<f64>> {
        let mut score = vec![0.0; self.dim()];
        for row in &unit.compact {
            let (base, tilted) = self.row_terms(unit, row, theta)?;
            self.accumulate_x(&mut score, row.w * (tilted - base), row);
        }
        score.iter_mut().for_each(|s| *s *= unit.scale);
        Ok(score)
    }

    fn accumulate_x(&self, score: &mut [f64], r: f64, row: &EeRow) {
        let (g, f) = self.gf(row);
        let (sg, sf) = score.split_at_mut(self.p);
        for (s, gc) in sg.iter_mut().zip(g) {
            *s += r * gc;
        }
        let rh = r * row.h;
        for (s, fc) in sf.iter_mut().zip(f) {
            *s += rh * fc;
        }
    }

    fn unit_contribution(&self, unit: &EeUnit, theta: &DVector<f64>) -> Result<ScoreContribution> {
        let dim = self.dim();
        let mut score = vec![0.0; dim];
        let mut members = Vec::with_capacity(unit.members.len());
        for member in &unit.members {
            let n = member.rows.len();
            let mut d = DMatrix::zeros(n, dim);
            let mut v = DMatrix::zeros(n, dim);
            let mut e = DVector::zeros(n);
            for (i, row) in member.rows.iter().enumerate() {
                let (base, tilted) = self.row_terms(unit, row, theta)?;
                let resid = tilted - base;
                e[i] = resid;
                self.accumulate_x(&mut score, row.w * resid, row);
                let (g, f) = self.gf(row);
                for (c, gc) in g.iter().enumerate() {
                    d[(i, c)] = row.w * gc;
                    v[(i, c)] = base * gc;
                }
                for (c, fc) in f.iter().enumerate() {
                    d[(i, self.p + c)] = row.w * row.h * fc;
                    v[(i, self.p + c)] = row.k * tilted * fc;
                }
            }
            members.push(MemberBlock {
                id: member.id.clone(),
                d,
                v,
                e,
            });
        }
        score.iter_mut().for_each(|s| *s *= unit.scale);
        Ok(ScoreContribution {
            unit: unit.id.clone(),
            scale: unit.scale,
            score: DVector::from_vec(score),
            members,
        })
    }

    /// `-scale Σ w x v'` for one unit.
    fn unit_jacobian(&self, unit: &EeUnit, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let dim = self.dim();
        let mut jac = DMatrix::zeros(dim, dim);
        let mut x = vec![0.0; dim];
        let mut v = vec![0.0; dim];
        for row in &unit.compact {
            let (base, tilted) = self.row_terms(unit, row, theta)?;
            let (g, f) = self.gf(row);
            for (c, gc) in g.iter().enumerate() {
                x[c] = row.w * gc;
                v[c] = base * gc;
            }
            for (c, fc) in f.iter().enumerate() {
                x[self.p + c] = row.w * row.h * fc;
                v[self.p + c] = row.k * tilted * fc;
            }
            for b in 0..dim {
                if v[b] == 0.0 {
                    continue;
                }
                for a in 0..dim {
                    jac[(a, b)] -= x[a] * v[b];
                }
            }
        }
        Ok(jac * unit.scale)
    }

    /// Reject designs where one arm carries no weighted outcome mass: the
    /// log relative risk has no finite solution there.
    fn check_outcome_mass(&self) -> Result<()> {
        let (mut rows1, mut rows0, mut mass1, mut mass0) = (0usize, 0usize, 0.0, 0.0);
        for row in self.units.iter().flat_map(|u| &u.compact) {
            if row.w == 0.0 || row.h == 0.0 {
                continue;
            }
            if row.k != 0.0 {
                rows1 += 1;
                mass1 += row.w * row.y;
            } else {
                rows0 += 1;
                mass0 += row.w * row.y;
            }
        }
        let (treated, control) = match self.estimator {
            Estimator::CemeeIndirect => ("(0,1) pair", "(0,0) pair"),
            _ => ("treated", "untreated"),
        };
        if rows1 > 0 && mass1 == 0.0 {
            return Err(Error::ZeroOutcomeMass { arm: treated });
        }
        if rows0 > 0 && mass0 == 0.0 {
            return Err(Error::ZeroOutcomeMass { arm: control });
        }
        Ok(())
    }

    /// Damped Newton solve from `θ = 0`.
    pub fn solve(&self, solver: &SolverOptions) -> Result<FitResult> {
        self.check_outcome_mass()?;
        let dim = self.dim();
        let mut theta = DVector::zeros(dim);
        let mut value = self.value(&theta)?;
        let mut norm = linalg::max_abs(&value);
        let mut iterations = 0;
        while norm > solver.tolerance {
            if iterations == solver.max_iterations {
                return Err(Error::NonConvergence {
                    iterations,
                    residual: norm,
                });
            }
            iterations += 1;
            let jac = self.jacobian(&theta)?;
            let step = linalg::solve(&jac, &value, "estimating-equation Jacobian")?;
            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..=solver.max_halvings {
                let candidate = &theta - &step * scale;
                if let Ok(v) = self.value(&candidate) {
                    let n = linalg::max_abs(&v);
                    if n.is_finite() && n < norm {
                        accepted = Some((candidate, v, n));
                        break;
                    }
                }
                scale *= solver.damping;
            }
            match accepted {
                Some((t, v, n)) => {
                    theta = t;
                    value = v;
                    norm = n;
                }
                // No damped step helps: round-off floor near the root, or a
                // genuinely stuck iteration.
                None => {
                    return Err(Error::NonConvergence {
                        iterations,
                        residual: norm,
                    })
                }
            }
        }
        self.finish(theta, iterations, norm)
    }

    fn finish(&self, theta: DVector<f64>, iterations: usize, norm: f64) -> Result<FitResult> {
        let evaluation = self.evaluate(&theta)?;
        let bread = -self.jacobian(&theta)?;
        let bread_condition = linalg::condition_number(&bread);
        Ok(FitResult {
            estimator: self.estimator,
            alpha: theta.rows(0, self.p).into_owned(),
            beta: theta.rows(self.p, self.q).into_owned(),
            control_labels: self.control_labels.clone(),
            moderator_labels: self.moderator_labels.clone(),
            contributions: evaluation.contributions,
            bread,
            bread_condition,
            converged: true,
            iterations,
            residual_norm: norm,
            numerator: self.numerator,
            skipped_singletons: self.skipped_singletons,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(g, f)` of every design row, flattened in design order; row `n` starts
/// at `n * (p + q)`.
fn feature_table(design: &DesignRows) -> Result<Vec<f64>> {
    let (p, q) = (design.p(), design.q());
    let mut table = Vec::new();
    for r in design.clusters.iter().flat_map(|c| &c.members).flat_map(|m| &m.rows) {
        if r.g.len() != p || r.f.len() != q {
            return Err(Error::Dimension {
                expected: p + q,
                got: r.g.len() + r.f.len(),
            });
        }
        table.extend_from_slice(&r.g);
        table.extend_from_slice(&r.f);
    }
    Ok(table)
}

fn direct_units(design: &DesignRows, options: &EstimatorOptions, p_tilde: f64, clustered: bool) -> Result<Vec<EeUnit>> {
    let width = design.p() + design.q();
    let mut next = 0;
    let mut units = Vec::new();
    for c in &design.clusters {
        let mut members = Vec::with_capacity(c.members.len());
        for m in &c.members {
            let mut rows = Vec::with_capacity(m.rows.len());
            for r in &m.rows {
                let at = next * width;
                next += 1;
                if r.available == 0 {
                    continue;
                }
                let w = marginal_weight(r.treatment, r.prob, p_tilde)?
                    * lag_weight(&r.window, options.delta, &options.reference_policy)?;
                if w == 0.0 {
                    continue;
                }
                let a = f64::from(r.treatment);
                rows.push(EeRow {
                    t: r.t,
                    w,
                    k: a,
                    h: a - p_tilde,
                    y: f64::from(r.outcome),
                    at,
                });
            }
            members.push(EeMember { id: m.id.clone(), rows });
        }
        if clustered {
            let scale = 1.0 / members.len() as f64;
            units.push(EeUnit::new(c.id.clone(), scale, members));
        } else {
            for member in members {
                units.push(EeUnit::new(format!("{}/{}", c.id, member.id), 1.0, vec![member]));
            }
        }
    }
    Ok(units)
}

fn pair_units(design: &DesignRows, options: &EstimatorOptions, joint: &JointNumerator) -> Result<(Vec<EeUnit>, usize)> {
    let width = design.p() + design.q();
    let p_star = pair_numerator_prob(joint)?;
    let mut units = Vec::new();
    let mut skipped = 0;
    let mut offset = 0;
    for c in &design.clusters {
        let g = c.members.len();
        let starts: Vec<usize> = c
            .members
            .iter()
            .scan(offset, |acc, m| {
                let s = *acc;
                *acc += m.rows.len();
                Some(s)
            })
            .collect();
        offset += c.members.iter().map(|m| m.rows.len()).sum::<usize>();
        if g < 2 {
            skipped += 1;
            continue;
        }
        let lags = c
            .members
            .iter()
            .map(|m| {
                m.rows
                    .iter()
                    .map(|r| lag_weight(&r.window, options.delta, &options.reference_policy))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut members = Vec::with_capacity(g * (g - 1));
        for (j, mj) in c.members.iter().enumerate() {
            for (k, mk) in c.members.iter().enumerate() {
                if j == k {
                    continue;
                }
                let mut rows = Vec::with_capacity(mj.rows.len());
                let mut other = mk.rows.iter().enumerate().peekable();
                for (ij, rj) in mj.rows.iter().enumerate() {
                    while other.peek().is_some_and(|(_, r)| r.t < rj.t) {
                        other.next();
                    }
                    let Some(&(ik, rk)) = other.peek().filter(|(_, r)| r.t == rj.t) else {
                        continue;
                    };
                    if rj.available == 0 || rk.available == 0 {
                        continue;
                    }
                    let denom = prob_of(rj.treatment, rj.prob) * prob_of(rk.treatment, rk.prob);
                    let w = pair_weight(rj.treatment, rk.treatment, denom, joint)? * lags[j][ij] * lags[k][ik];
                    if w == 0.0 {
                        continue;
                    }
                    let untreated = 1.0 - f64::from(rj.treatment);
                    let ak = f64::from(rk.treatment);
                    rows.push(EeRow {
                        t: rj.t,
                        w,
                        k: untreated * ak,
                        h: untreated * (ak - p_star),
                        y: f64::from(rj.outcome),
                        at: (starts[j] + ij) * width,
                    });
                }
                members.push(EeMember {
                    id: format!("{}>{}", mj.id, mk.id),
                    rows,
                });
            }
        }
        units.push(EeUnit::new(c.id.clone(), 1.0 / (g * (g - 1)) as f64, members));
    }
    if skipped > 0 {
        warn!("indirect fit skipped {skipped} single-member cluster(s)");
    }
    Ok((units, skipped))
}

// ---------------------------------------------------------------------------
// Fits

/// A solved estimating equation and everything inference needs.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub estimator: Estimator,
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    pub control_labels: Vec<String>,
    pub moderator_labels: Vec<String>,
    /// Per-unit scores at the solution: clusters for C-EMEE, individuals for
    /// EMEE.
    pub contributions: Vec<ScoreContribution>,
    /// `Q̂ = -∂m/∂θ` at the solution.
    pub bread: DMatrix<f64>,
    pub bread_condition: f64,
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
    /// Centering probability used (`p̃` or `p̃*`).
    pub numerator: f64,
    pub skipped_singletons: usize,
}

impl FitResult {
    pub fn p(&self) -> usize {
        self.alpha.len()
    }

    pub fn q(&self) -> usize {
        self.beta.len()
    }

    pub fn n_units(&self) -> usize {
        self.contributions.len()
    }

    /// `(α̂, β̂)` stacked.
    pub fn theta(&self) -> DVector<f64> {
        let mut t = DVector::zeros(self.p() + self.q());
        t.rows_mut(0, self.p()).copy_from(&self.alpha);
        t.rows_mut(self.p(), self.q()).copy_from(&self.beta);
        t
    }
}

/// Solve an already-built design.
pub fn fit_design(design: &DesignRows, options: &EstimatorOptions) -> Result<FitResult> {
    EstimatingSystem::new(design, options)?.solve(&options.solver)
}

/// Build the design (lag `options.delta`, shifted proximal outcome) and fit.
pub fn fit(
    panel: &ClusterPanel,
    moderator: &FeatureSpec,
    control: &FeatureSpec,
    options: &EstimatorOptions,
) -> Result<FitResult> {
    fit_with_outcome(panel, moderator, control, options, &OutcomeDefinition::ShiftedProximal)
}

pub fn fit_with_outcome(
    panel: &ClusterPanel,
    moderator: &FeatureSpec,
    control: &FeatureSpec,
    options: &EstimatorOptions,
    outcome: &OutcomeDefinition,
) -> Result<FitResult> {
    options.validate()?;
    if options.estimator != Estimator::Emee && panel.n_clusters() < 2 {
        return Err(Error::InvalidArgument("cluster-based fits need at least 2 clusters".into()));
    }
    let design = build_design_with(panel, moderator, control, options.delta, outcome)?;
    fit_design(&design, options)
}

fn with_estimator(options: &EstimatorOptions, estimator: Estimator) -> EstimatorOptions {
    EstimatorOptions {
        estimator,
        ..options.clone()
    }
}

/// C-EMEE direct effect: each cluster weighted equally.
pub fn fit_direct(
    panel: &ClusterPanel,
    moderator: &FeatureSpec,
    control: &FeatureSpec,
    options: &EstimatorOptions,
) -> Result<FitResult> {
    fit(panel, moderator, control, &with_estimator(options, Estimator::CemeeDirect))
}

/// EMEE: each individual is its own unit.
pub fn fit_emee(
    panel: &ClusterPanel,
    moderator: &FeatureSpec,
    control: &FeatureSpec,
    options: &EstimatorOptions,
) -> Result<FitResult> {
    fit(panel, moderator, control, &with_estimator(options, Estimator::Emee))
}

/// C-EMEE pairwise indirect effect.
pub fn fit_indirect(
    panel: &ClusterPanel,
    moderator: &FeatureSpec,
    control: &FeatureSpec,
    options: &EstimatorOptions,
) -> Result<FitResult> {
    fit(panel, moderator, control, &with_estimator(options, Estimator::CemeeIndirect))
}

/// Direct C-EMEE estimating function at `θ`.
pub fn estimating_function_direct(
    design: &DesignRows,
    theta: &DVector<f64>,
    options: &EstimatorOptions,
) -> Result<Evaluation> {
    EstimatingSystem::new(design, &with_estimator(options, Estimator::CemeeDirect))?.evaluate(theta)
}

/// EMEE estimating function at `θ`.
pub fn estimating_function_emee(
    design: &DesignRows,
    theta: &DVector<f64>,
    options: &EstimatorOptions,
) -> Result<Evaluation> {
    EstimatingSystem::new(design, &with_estimator(options, Estimator::Emee))?.evaluate(theta)
}

/// Pairwise indirect C-EMEE estimating function at `θ`.
pub fn estimating_function_indirect(
    design: &DesignRows,
    theta: &DVector<f64>,
    options: &EstimatorOptions,
) -> Result<Evaluation> {
    EstimatingSystem::new(design, &with_estimator(options, Estimator::CemeeIndirect))?.evaluate(theta)
}
