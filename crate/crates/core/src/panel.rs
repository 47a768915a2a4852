//! Clustered longitudinal trial data: the in-memory panel, CSV ingestion and
//! export, validation, lagged outcomes and design-row construction.
//!
//! A panel is a list of clusters; each cluster holds individuals; each
//! individual holds decision points `t = 1..T` carrying the treatment, its
//! randomization probability, availability, the binary proximal outcome, and
//! any number of real-valued state columns.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One decision point of one individual.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionPoint {
    /// 1-based decision index.
    pub t: usize,
    pub treatment: u8,
    /// Randomization probability `P(A_t = 1 | H_t)`.
    pub prob: f64,
    pub available: u8,
    /// Proximal outcome `Y_{t,1}`.
    pub outcome: u8,
    /// State values, aligned with [`ClusterPanel::columns`].
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndividualSeries {
    pub id: String,
    pub rows: Vec<DecisionPoint>,
}

impl IndividualSeries {
    pub fn horizon(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: String,
    pub members: Vec<IndividualSeries>,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Clustered micro-randomized trial data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPanel {
    pub clusters: Vec<Cluster>,
    /// Names of the state columns available as features.
    pub columns: Vec<String>,
}

impl ClusterPanel {
    /// Build a panel, normalizing order and rejecting invariant violations.
    pub fn new(mut clusters: Vec<Cluster>, columns: Vec<String>) -> Result<Self> {
        clusters.sort_by(|a, b| natural_cmp(&a.id, &b.id));
        for c in &mut clusters {
            c.members.sort_by(|a, b| natural_cmp(&a.id, &b.id));
            for m in &mut c.members {
                m.rows.sort_by_key(|r| r.t);
            }
        }
        let panel = ClusterPanel { clusters, columns };
        let report = validate_panel(&panel);
        if report.is_valid() {
            Ok(panel)
        } else {
            Err(Error::InvalidPanel(
                report.violations.iter().map(|v| v.to_string()).collect(),
            ))
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_individuals(&self) -> usize {
        self.clusters.iter().map(Cluster::size).sum()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn individuals(&self) -> impl Iterator<Item = (&Cluster, &IndividualSeries)> {
        self.clusters
            .iter()
            .flat_map(|c| c.members.iter().map(move |m| (c, m)))
    }

    /// Fraction of available decision points that were treated.
    pub fn treated_fraction(&self) -> f64 {
        let (mut n, mut treated) = (0usize, 0usize);
        for (_, m) in self.individuals() {
            for r in &m.rows {
                if r.available == 1 {
                    n += 1;
                    treated += r.treatment as usize;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            treated as f64 / n as f64
        }
    }
}

/// Orders ids numerically when both parse as integers, lexically otherwise.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NonBinaryOutcome,
    NonBinaryTreatment,
    NonBinaryAvailability,
    ProbabilityOutOfRange,
    TreatedWhileUnavailable,
    GapInDecisionIndex,
    DuplicateCluster,
    DuplicateIndividual,
    StateWidth,
    NonFiniteState,
    EmptyCluster,
    EmptyIndividual,
}

impl ViolationKind {
    pub fn message(self) -> &'static str {
        match self {
            ViolationKind::NonBinaryOutcome => "non-binary outcome",
            ViolationKind::NonBinaryTreatment => "non-binary treatment",
            ViolationKind::NonBinaryAvailability => "non-binary availability",
            ViolationKind::ProbabilityOutOfRange => "probability out of open interval",
            ViolationKind::TreatedWhileUnavailable => "treated while unavailable",
            ViolationKind::GapInDecisionIndex => "gap in decision index",
            ViolationKind::DuplicateCluster => "duplicate cluster id",
            ViolationKind::DuplicateIndividual => "duplicate individual id",
            ViolationKind::StateWidth => "state width does not match column registry",
            ViolationKind::NonFiniteState => "non-finite state value",
            ViolationKind::EmptyCluster => "cluster has no members",
            ViolationKind::EmptyIndividual => "individual has no decision points",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub cluster: String,
    pub individual: Option<String>,
    pub t: Option<usize>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (cluster {}", self.kind.message(), self.cluster)?;
        if let Some(ind) = &self.individual {
            write!(f, ", individual {ind}")?;
        }
        if let Some(t) = self.t {
            write!(f, ", t={t}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// List every invariant violation in `panel`. Never fails.
pub fn validate_panel(panel: &ClusterPanel) -> ValidationReport {
    let mut out = Vec::new();
    let mut push = |kind, cluster: &str, individual: Option<&str>, t: Option<usize>| {
        out.push(Violation {
            kind,
            cluster: cluster.to_string(),
            individual: individual.map(str::to_string),
            t,
        })
    };
    let width = panel.columns.len();
    let mut seen_clusters = HashSet::new();
    for c in &panel.clusters {
        if !seen_clusters.insert(c.id.as_str()) {
            push(ViolationKind::DuplicateCluster, &c.id, None, None);
        }
        if c.members.is_empty() {
            push(ViolationKind::EmptyCluster, &c.id, None, None);
        }
        let mut seen_members = HashSet::new();
        for m in &c.members {
            let ind = Some(m.id.as_str());
            if !seen_members.insert(m.id.as_str()) {
                push(ViolationKind::DuplicateIndividual, &c.id, ind, None);
            }
            if m.rows.is_empty() {
                push(ViolationKind::EmptyIndividual, &c.id, ind, None);
            }
            for (k, r) in m.rows.iter().enumerate() {
                let t = Some(r.t);
                if r.t != k + 1 {
                    push(ViolationKind::GapInDecisionIndex, &c.id, ind, t);
                }
                if r.outcome > 1 {
                    push(ViolationKind::NonBinaryOutcome, &c.id, ind, t);
                }
                if r.treatment > 1 {
                    push(ViolationKind::NonBinaryTreatment, &c.id, ind, t);
                }
                if r.available > 1 {
                    push(ViolationKind::NonBinaryAvailability, &c.id, ind, t);
                }
                if !(r.prob > 0.0 && r.prob < 1.0) {
                    push(ViolationKind::ProbabilityOutOfRange, &c.id, ind, t);
                }
                if r.treatment == 1 && r.available == 0 {
                    push(ViolationKind::TreatedWhileUnavailable, &c.id, ind, t);
                }
                if r.state.len() != width {
                    push(ViolationKind::StateWidth, &c.id, ind, t);
                } else if r.state.iter().any(|v| !v.is_finite()) {
                    push(ViolationKind::NonFiniteState, &c.id, ind, t);
                }
            }
        }
    }
    ValidationReport { violations: out }
}

// ---------------------------------------------------------------------------
// CSV ingestion and export

/// Mapping from panel roles to CSV header names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub cluster: String,
    pub id: String,
    pub t: String,
    pub treatment: String,
    pub prob: String,
    /// Availability column; when absent from the file every row is available.
    pub avail: String,
    pub outcome: String,
    /// Explicit state columns. `None` takes every unmapped column.
    pub state: Option<Vec<String>>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            cluster: "cluster_id".into(),
            id: "user_id".into(),
            t: "t".into(),
            treatment: "A".into(),
            prob: "prob_A".into(),
            avail: "avail".into(),
            outcome: "Y".into(),
            state: None,
        }
    }
}

fn parse_field<T: std::str::FromStr>(value: &str, column: &str, line: usize) -> Result<T> {
    value.trim().parse::<T>().map_err(|_| Error::Parse {
        column: column.to_string(),
        value: value.to_string(),
        line,
    })
}

fn parse_binary(value: &str, column: &str, line: usize) -> Result<i64> {
    // Accept "1" and "1.0" alike.
    let v: f64 = parse_field(value, column, line)?;
    if v.fract() != 0.0 {
        return Err(Error::Parse {
            column: column.to_string(),
            value: value.to_string(),
            line,
        });
    }
    Ok(v as i64)
}

/// Read a long-format CSV into a validated, order-normalized panel.
pub fn load_panel(path: impl AsRef<Path>, schema: &Schema) -> Result<ClusterPanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_panel(file, schema)
}

/// Same as [`load_panel`] over any reader.
pub fn read_panel<R: std::io::Read>(reader: R, schema: &Schema) -> Result<ClusterPanel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let col = |name: &str| find(name).ok_or_else(|| Error::MissingColumn(name.to_string()));

    let i_cluster = col(&schema.cluster)?;
    let i_id = col(&schema.id)?;
    let i_t = col(&schema.t)?;
    let i_a = col(&schema.treatment)?;
    let i_p = col(&schema.prob)?;
    let i_y = col(&schema.outcome)?;
    let i_avail = find(&schema.avail);

    let mapped: Vec<usize> = [Some(i_cluster), Some(i_id), Some(i_t), Some(i_a), Some(i_p), Some(i_y), i_avail]
        .into_iter()
        .flatten()
        .collect();
    let state_cols: Vec<(String, usize)> = match &schema.state {
        Some(names) => names
            .iter()
            .map(|n| col(n).map(|i| (n.clone(), i)))
            .collect::<Result<_>>()?,
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !mapped.contains(i))
            .map(|(i, h)| (h.to_string(), i))
            .collect(),
    };

    type Key = (String, String);
    let mut grouped: BTreeMap<Key, Vec<(i64, DecisionPoint, usize)>> = BTreeMap::new();
    for (k, record) in rdr.records().enumerate() {
        let record = record?;
        let line = k + 2;
        let get = |i: usize| record.get(i).unwrap_or("");
        let cluster = get(i_cluster).to_string();
        let id = get(i_id).to_string();
        let t: i64 = parse_field(get(i_t), &schema.t, line)?;
        let a = parse_binary(get(i_a), &schema.treatment, line)?;
        let y = parse_binary(get(i_y), &schema.outcome, line)?;
        let avail = match i_avail {
            Some(i) => parse_binary(get(i), &schema.avail, line)?,
            None => 1,
        };
        let prob: f64 = parse_field(get(i_p), &schema.prob, line)?;
        let row_err = |message: &str| Error::Row {
            message: message.to_string(),
            cluster: cluster.clone(),
            individual: id.clone(),
            t,
        };
        if !(0..=1).contains(&y) {
            return Err(row_err("non-binary outcome"));
        }
        if !(0..=1).contains(&a) {
            return Err(row_err("non-binary treatment"));
        }
        if !(0..=1).contains(&avail) {
            return Err(row_err("non-binary availability"));
        }
        if !(prob > 0.0 && prob < 1.0) {
            return Err(row_err("probability out of open interval"));
        }
        if a == 1 && avail == 0 {
            return Err(row_err("treated while unavailable"));
        }
        if t < 1 {
            return Err(row_err("gap in decision index"));
        }
        let state = state_cols
            .iter()
            .map(|(name, i)| parse_field::<f64>(get(*i), name, line))
            .collect::<Result<Vec<_>>>()?;
        let point = DecisionPoint {
            t: t as usize,
            treatment: a as u8,
            prob,
            available: avail as u8,
            outcome: y as u8,
            state,
        };
        grouped.entry((cluster, id)).or_default().push((t, point, line));
    }

    let mut clusters: BTreeMap<String, Vec<IndividualSeries>> = BTreeMap::new();
    for ((cluster, id), mut rows) in grouped {
        rows.sort_by_key(|(t, _, _)| *t);
        for (k, (t, _, _)) in rows.iter().enumerate() {
            let expected = k as i64 + 1;
            if *t != expected {
                let message = if k > 0 && rows[k - 1].0 == *t {
                    "duplicate decision index"
                } else {
                    "gap in decision index"
                };
                return Err(Error::Row {
                    message: message.to_string(),
                    cluster,
                    individual: id,
                    t: *t,
                });
            }
        }
        clusters.entry(cluster).or_default().push(IndividualSeries {
            id,
            rows: rows.into_iter().map(|(_, p, _)| p).collect(),
        });
    }
    let clusters = clusters
        .into_iter()
        .map(|(id, members)| Cluster { id, members })
        .collect();
    ClusterPanel::new(clusters, state_cols.into_iter().map(|(n, _)| n).collect())
}

/// Write a panel in the default long-format CSV layout.
pub fn write_panel<W: std::io::Write>(panel: &ClusterPanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["cluster_id", "user_id", "t", "A", "prob_A", "avail", "Y"];
    header.extend(panel.columns.iter().map(String::as_str));
    w.write_record(&header)?;
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for (c, m) in panel.individuals() {
        for r in &m.rows {
            record.clear();
            record.push(c.id.clone());
            record.push(m.id.clone());
            record.push(r.t.to_string());
            record.push(r.treatment.to_string());
            record.push(format!("{}", r.prob));
            record.push(r.available.to_string());
            record.push(r.outcome.to_string());
            record.extend(r.state.iter().map(|v| format!("{v}")));
            w.write_record(&record)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_panel(panel: &ClusterPanel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_panel(panel, std::io::BufWriter::new(file))
}

// ---------------------------------------------------------------------------
// Features

/// One feature of a moderator (`f_t`) or control (`g_t`) vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Term {
    Intercept,
    TimeIndex,
    Column(String),
    ScaledColumn { column: String, factor: f64 },
}

impl Term {
    pub fn label(&self) -> String {
        match self {
            Term::Intercept => "intercept".into(),
            Term::TimeIndex => "t".into(),
            Term::Column(c) => c.clone(),
            Term::ScaledColumn { column, factor } => format!("{factor}*{column}"),
        }
    }
}

/// Declarative feature map over a panel row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureSpec {
    pub terms: Vec<Term>,
}

impl FeatureSpec {
    pub fn new(terms: Vec<Term>) -> Self {
        FeatureSpec { terms }
    }

    pub fn intercept() -> Self {
        FeatureSpec::new(vec![Term::Intercept])
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    pub fn labels(&self) -> Vec<String> {
        self.terms.iter().map(Term::label).collect()
    }

    fn resolve(&self, panel: &ClusterPanel) -> Result<Vec<ResolvedTerm>> {
        if self.terms.is_empty() {
            return Err(Error::InvalidArgument("feature spec must have at least one term".into()));
        }
        let lookup = |name: &str| {
            panel
                .column_index(name)
                .ok_or_else(|| Error::UnknownColumn(name.to_string()))
        };
        self.terms
            .iter()
            .map(|term| {
                Ok(match term {
                    Term::Intercept => ResolvedTerm::Intercept,
                    Term::TimeIndex => ResolvedTerm::Time,
                    Term::Column(c) => ResolvedTerm::Column(lookup(c)?, 1.0),
                    Term::ScaledColumn { column, factor } => ResolvedTerm::Column(lookup(column)?, *factor),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum ResolvedTerm {
    Intercept,
    Time,
    Column(usize, f64),
}

fn eval_terms(terms: &[ResolvedTerm], row: &DecisionPoint) -> Vec<f64> {
    terms
        .iter()
        .map(|t| match *t {
            ResolvedTerm::Intercept => 1.0,
            ResolvedTerm::Time => row.t as f64,
            ResolvedTerm::Column(i, factor) => factor * row.state[i],
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Lagged outcomes

/// How `Y_{t,Δ}` is obtained from the panel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OutcomeDefinition {
    /// `Y_{t,Δ}` is the proximal outcome recorded at decision `t + Δ − 1`.
    #[default]
    ShiftedProximal,
    /// `Y_{t,Δ}` is stored in a binary state column at row `t`.
    Column(String),
}

/// `Y_{t,Δ}` for `t = 1..=T−Δ+1`, per cluster and individual in panel order.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedOutcome {
    pub delta: usize,
    pub values: Vec<Vec<Vec<u8>>>,
}

pub fn lagged_outcome(
    panel: &ClusterPanel,
    delta: usize,
    definition: &OutcomeDefinition,
) -> Result<LaggedOutcome> {
    if delta == 0 {
        return Err(Error::InvalidArgument("lag must be at least 1".into()));
    }
    let column = match definition {
        OutcomeDefinition::ShiftedProximal => None,
        OutcomeDefinition::Column(name) => Some(
            panel
                .column_index(name)
                .ok_or_else(|| Error::UnknownColumn(name.clone()))?,
        ),
    };
    let mut values = Vec::with_capacity(panel.clusters.len());
    for c in &panel.clusters {
        let mut per_cluster = Vec::with_capacity(c.members.len());
        for m in &c.members {
            let horizon = m.horizon();
            if delta > horizon {
                return Err(Error::InvalidArgument(format!(
                    "lag {delta} exceeds the {horizon} decision points of individual {} in cluster {}",
                    m.id, c.id
                )));
            }
            let n = horizon - delta + 1;
            let series = (0..n)
                .map(|k| match column {
                    None => Ok(m.rows[k + delta - 1].outcome),
                    Some(i) => {
                        let v = m.rows[k].state[i];
                        if v == 0.0 || v == 1.0 {
                            Ok(v as u8)
                        } else {
                            Err(Error::Row {
                                message: "non-binary lagged outcome column".into(),
                                cluster: c.id.clone(),
                                individual: m.id.clone(),
                                t: m.rows[k].t as i64,
                            })
                        }
                    }
                })
                .collect::<Result<Vec<u8>>>()?;
            per_cluster.push(series);
        }
        values.push(per_cluster);
    }
    Ok(LaggedOutcome { delta, values })
}

// ---------------------------------------------------------------------------
// Design rows

/// Everything the estimators need about one `(cluster, individual, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub t: usize,
    /// Moderator features `f_t(S_t)`, length q.
    pub f: Vec<f64>,
    /// Control features `g_t(H_t)`, length p.
    pub g: Vec<f64>,
    pub treatment: u8,
    pub prob: f64,
    pub available: u8,
    /// `Y_{t,Δ}`.
    pub outcome: u8,
    /// `(A_u, P(A_u = 1 | H_u))` for `u = t+1 .. t+Δ−1`.
    pub window: Vec<(u8, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignIndividual {
    pub id: String,
    pub rows: Vec<DesignRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignCluster {
    pub id: String,
    pub members: Vec<DesignIndividual>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignRows {
    pub delta: usize,
    pub moderator_labels: Vec<String>,
    pub control_labels: Vec<String>,
    pub clusters: Vec<DesignCluster>,
}

impl DesignRows {
    /// Moderator dimension.
    pub fn q(&self) -> usize {
        self.moderator_labels.len()
    }

    /// Control dimension.
    pub fn p(&self) -> usize {
        self.control_labels.len()
    }

    pub fn n_rows(&self) -> usize {
        self.clusters
            .iter()
            .flat_map(|c| &c.members)
            .map(|m| m.rows.len())
            .sum()
    }

    pub fn rows(&self) -> impl Iterator<Item = &DesignRow> {
        self.clusters
            .iter()
            .flat_map(|c| &c.members)
            .flat_map(|m| &m.rows)
    }

    /// Fraction of available design rows that were treated.
    pub fn treated_fraction(&self) -> f64 {
        let (mut n, mut k) = (0usize, 0usize);
        for r in self.rows().filter(|r| r.available == 1) {
            n += 1;
            k += r.treatment as usize;
        }
        if n == 0 {
            0.0
        } else {
            k as f64 / n as f64
        }
    }
}

/// Design rows with `Y_{t,Δ}` taken as the shifted proximal outcome.
pub fn build_design(
    panel: &ClusterPanel,
    moderator: &FeatureSpec,
    control: &FeatureSpec,
    delta: usize,
) -> Result<DesignRows> {
    build_design_with(panel, moderator, control, delta, &OutcomeDefinition::ShiftedProximal)
}

pub fn build_design_with(
    panel: &ClusterPanel,
    moderator: &FeatureSpec,
    control: &FeatureSpec,
    delta: usize,
    outcome: &OutcomeDefinition,
) -> Result<DesignRows> {
    let f_terms = moderator.resolve(panel)?;
    let g_terms = control.resolve(panel)?;
    let lagged = lagged_outcome(panel, delta, outcome)?;
    let clusters = panel
        .clusters
        .iter()
        .zip(&lagged.values)
        .map(|(c, ys)| DesignCluster {
            id: c.id.clone(),
            members: c
                .members
                .iter()
                .zip(ys)
                .map(|(m, y)| DesignIndividual {
                    id: m.id.clone(),
                    rows: y
                        .iter()
                        .enumerate()
                        .map(|(k, &outcome)| {
                            let row = &m.rows[k];
                            DesignRow {
                                t: row.t,
                                f: eval_terms(&f_terms, row),
                                g: eval_terms(&g_terms, row),
                                treatment: row.treatment,
                                prob: row.prob,
                                available: row.available,
                                outcome,
                                window: m.rows[k + 1..k + delta]
                                    .iter()
                                    .map(|u| (u.treatment, u.prob))
                                    .collect(),
                            }
                        })
                        .collect(),
                })
                .collect(),
        })
        .collect();
    Ok(DesignRows {
        delta,
        moderator_labels: moderator.labels(),
        control_labels: control.labels(),
        clusters,
    })
}
