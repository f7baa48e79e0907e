//! Design-based analysis of mixed unit/cluster experiments.
//!
//! Units are aggregated into cluster observations under a trigger policy,
//! condition cells hold sample moments, and every estimator is a smooth
//! function of cell means whose variance comes from the first-order delta
//! method.

mod analyze;
mod cell;
mod estimator;
pub mod io;
mod sutva;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterId, Clustering};
use crate::error::{Error, Result};
use crate::graph::UnitId;

pub use analyze::{analyze, AnalysisConfig, AnalysisReport, ContrastReport, ContrastSpec, OmittedContrast, PolicyChoice};
pub use cell::{build_cell, build_cells, CellAccumulator, CellKey, ConditionCell};
pub use estimator::{
    compute_gamma, compute_phi, delta_bias, estimate_diff, estimate_mean, estimate_mu, estimate_ratio, normal_quantile,
    AdjustmentSpec, CellCount, Estimand, EstimateResult, Gamma, GammaHat, Phi, Z95,
};
pub use sutva::{conditional_sutva_test, sutva_trigger_test, SutvaTest, SutvaTestResult, TestStatus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TriggerPolicy {
    /// Every unit in the experiment.
    All,
    /// Only triggered units, on both the unit- and cluster-randomized sides.
    TriggeredUnits,
    /// Every unit of a cluster-randomized cluster with at least one
    /// triggered unit; unit-randomized rows are dropped.
    TriggeredClusters,
}

/// Metric and pre-period feature names, shared by every row and cell of one
/// analysis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    pub metrics: Vec<String>,
    pub features: Vec<String>,
}

impl Schema {
    pub fn new(metrics: Vec<String>, features: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for m in &metrics {
            if m.is_empty() || !seen.insert(m.as_str()) {
                return Err(Error::Validation(format!("metric names must be unique and non-empty (`{m}`)")));
            }
        }
        seen.clear();
        for f in &features {
            if f.is_empty() || !seen.insert(f.as_str()) {
                return Err(Error::Validation(format!("feature names must be unique and non-empty (`{f}`)")));
            }
        }
        Ok(Self { metrics, features })
    }

    pub fn metric_index(&self, name: &str) -> Result<usize> {
        self.metrics.iter().position(|m| m == name).ok_or_else(|| Error::Unknown {
            kind: "metric",
            name: name.into(),
        })
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.features.iter().position(|f| f == name).ok_or_else(|| Error::Unknown {
            kind: "feature",
            name: name.into(),
        })
    }

    /// Length of `[Y.., X..]`.
    pub(crate) fn values(&self) -> usize {
        self.metrics.len() + self.features.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitOutcomeRow {
    pub unit: UnitId,
    /// One value per schema metric.
    pub y: Vec<f64>,
    /// One value per schema feature.
    pub x: Vec<f64>,
    pub triggered: bool,
    pub w: String,
    pub r: bool,
}

#[derive(Clone, Debug)]
pub struct OutcomeTable {
    schema: Arc<Schema>,
    rows: Vec<UnitOutcomeRow>,
}

impl OutcomeTable {
    pub fn new(schema: Arc<Schema>, rows: Vec<UnitOutcomeRow>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for row in &rows {
            if row.y.len() != schema.metrics.len() || row.x.len() != schema.features.len() {
                return Err(Error::Validation(format!("row for `{}` does not match the schema", row.unit)));
            }
            if let Some(bad) = row.y.iter().chain(&row.x).find(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("non-finite value {bad} for unit `{}`", row.unit)));
            }
            if !seen.insert(&row.unit) {
                return Err(Error::Validation(format!("duplicate row for unit `{}`", row.unit)));
            }
        }
        Ok(Self { schema, rows })
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn rows(&self) -> &[UnitOutcomeRow] {
        &self.rows
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterObservation {
    /// The cluster, or the unit's own id for unit-randomized rows.
    pub cluster: ClusterId,
    pub w: String,
    pub r: bool,
    /// Included-unit count `S`.
    pub s: usize,
    /// Metric sums over included units.
    pub y: Vec<f64>,
    /// Pre-period sums over included units.
    pub x: Vec<f64>,
    /// Triggered units in the whole cluster.
    pub triggered_count: usize,
}

impl ClusterObservation {
    pub(crate) fn write_vector(&self, schema: &Schema, out: &mut Vec<f64>) -> Result<()> {
        if self.y.len() != schema.metrics.len() || self.x.len() != schema.features.len() {
            return Err(Error::Validation(format!(
                "observation for `{}` does not match the schema",
                self.cluster
            )));
        }
        out.clear();
        out.extend_from_slice(&self.y);
        out.extend_from_slice(&self.x);
        out.push(self.s as f64);
        out.push(self.triggered_count as f64);
        Ok(())
    }
}

/// Which units of each cluster enter an observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Selection {
    Policy(TriggerPolicy),
    /// Non-triggered units of cluster-randomized clusters that contain a
    /// triggered unit (the conditional SUTVA population).
    UntriggeredInTriggered,
}

/// Column-oriented unit data with dense cluster and condition indices.
pub(crate) struct UnitView<'a> {
    pub cluster: &'a [u32],
    pub condition: &'a [u32],
    pub r: &'a [bool],
    pub triggered: &'a [bool],
    /// `n × values` row-major `[Y.., X..]`.
    pub values: &'a [f64],
    pub width: usize,
    pub clusters: usize,
}

/// Observations in flat numeric form.
pub(crate) struct Observations {
    pub width: usize,
    pub condition: Vec<u32>,
    pub r: Vec<bool>,
    /// Cluster index for `r = 1`, unit index for `r = 0`.
    pub key: Vec<usize>,
    pub s: Vec<usize>,
    pub triggered: Vec<usize>,
    pub sums: Vec<f64>,
}

impl Observations {
    pub fn len(&self) -> usize {
        self.condition.len()
    }

    pub fn vector(&self, i: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.sums[i * self.width..(i + 1) * self.width]);
        out.push(self.s[i] as f64);
        out.push(self.triggered[i] as f64);
    }
}

const UNSET: u32 = u32::MAX;

pub(crate) fn aggregate_view(view: &UnitView<'_>, selection: Selection) -> Result<Observations> {
    let n = view.cluster.len();
    let width = view.width;
    let mut cond_of = vec![UNSET; view.clusters];
    let mut triggered_in = vec![0usize; view.clusters];
    for i in 0..n {
        if !view.r[i] {
            continue;
        }
        let c = view.cluster[i] as usize;
        if cond_of[c] == UNSET {
            cond_of[c] = view.condition[i];
        } else if cond_of[c] != view.condition[i] {
            return Err(Error::Integrity(format!(
                "cluster-randomized cluster #{c} has units in different conditions"
            )));
        }
        triggered_in[c] += usize::from(view.triggered[i]);
    }
    let include = |i: usize| -> bool {
        let clustered_hit = view.r[i] && triggered_in[view.cluster[i] as usize] > 0;
        match selection {
            Selection::Policy(TriggerPolicy::All) => true,
            Selection::Policy(TriggerPolicy::TriggeredUnits) => view.triggered[i],
            Selection::Policy(TriggerPolicy::TriggeredClusters) => clustered_hit,
            Selection::UntriggeredInTriggered => clustered_hit && !view.triggered[i],
        }
    };
    let mut out = Observations {
        width,
        condition: Vec::new(),
        r: Vec::new(),
        key: Vec::new(),
        s: Vec::new(),
        triggered: Vec::new(),
        sums: Vec::new(),
    };
    let mut slot = vec![usize::MAX; view.clusters];
    for i in 0..n {
        if !include(i) {
            continue;
        }
        let row = &view.values[i * width..(i + 1) * width];
        let at = if view.r[i] {
            let c = view.cluster[i] as usize;
            if slot[c] == usize::MAX {
                slot[c] = out.len();
                push_obs(&mut out, view.condition[i], true, c, triggered_in[c]);
            }
            slot[c]
        } else {
            push_obs(&mut out, view.condition[i], false, i, usize::from(view.triggered[i]));
            out.len() - 1
        };
        out.s[at] += 1;
        for (acc, v) in out.sums[at * width..(at + 1) * width].iter_mut().zip(row) {
            *acc += v;
        }
    }
    Ok(out)
}

fn push_obs(out: &mut Observations, condition: u32, r: bool, key: usize, triggered: usize) {
    out.condition.push(condition);
    out.r.push(r);
    out.key.push(key);
    out.s.push(0);
    out.triggered.push(triggered);
    out.sums.extend(std::iter::repeat_n(0.0, out.width));
}

/// Cells for every `(condition, r)` present, sorted by key.
pub(crate) fn cells_from_observations(
    obs: &Observations,
    labels: &[String],
    schema: &Arc<Schema>,
) -> Vec<ConditionCell> {
    let mut accs: std::collections::BTreeMap<(String, bool), CellAccumulator> = Default::default();
    let mut v = Vec::with_capacity(obs.width + 2);
    for i in 0..obs.len() {
        let w = &labels[obs.condition[i] as usize];
        obs.vector(i, &mut v);
        accs.entry((w.clone(), obs.r[i]))
            .or_insert_with(|| CellAccumulator::new(CellKey::new(w.clone(), obs.r[i]), schema.clone()))
            .push(&v);
    }
    accs.into_values().map(CellAccumulator::finish).collect()
}

/// Dense columns for an outcome table.
pub(crate) struct TableColumns {
    pub cluster: Vec<u32>,
    pub cluster_ids: Vec<ClusterId>,
    pub condition: Vec<u32>,
    pub labels: Vec<String>,
    pub r: Vec<bool>,
    pub triggered: Vec<bool>,
    pub values: Vec<f64>,
}

impl TableColumns {
    pub fn new(table: &OutcomeTable, clustering: &Clustering) -> Result<Self> {
        let mut cluster_index: HashMap<&ClusterId, u32> = HashMap::new();
        let mut cluster_ids = Vec::new();
        let mut label_index: HashMap<&str, u32> = HashMap::new();
        let mut labels: Vec<String> = Vec::new();
        let mut cols = Self {
            cluster: Vec::with_capacity(table.rows.len()),
            cluster_ids: Vec::new(),
            condition: Vec::with_capacity(table.rows.len()),
            labels: Vec::new(),
            r: Vec::with_capacity(table.rows.len()),
            triggered: Vec::with_capacity(table.rows.len()),
            values: Vec::with_capacity(table.rows.len() * table.schema.values()),
        };
        let mut missing = Vec::new();
        for row in &table.rows {
            let Some(c) = clustering.cluster_of(&row.unit) else {
                missing.push(row.unit.to_string());
                continue;
            };
            let next = cluster_index.len() as u32;
            let ci = *cluster_index.entry(c).or_insert_with(|| {
                cluster_ids.push(c.clone());
                next
            });
            let next = label_index.len() as u32;
            let wi = *label_index.entry(row.w.as_str()).or_insert_with(|| {
                labels.push(row.w.clone());
                next
            });
            cols.cluster.push(ci);
            cols.condition.push(wi);
            cols.r.push(row.r);
            cols.triggered.push(row.triggered);
            cols.values.extend_from_slice(&row.y);
            cols.values.extend_from_slice(&row.x);
        }
        if !missing.is_empty() {
            return Err(Error::Integrity(format!(
                "{} units have no cluster (first: {})",
                missing.len(),
                missing.iter().take(10).cloned().collect::<Vec<_>>().join(", ")
            )));
        }
        cols.cluster_ids = cluster_ids;
        cols.labels = labels;
        Ok(cols)
    }

    pub fn view(&self, width: usize) -> UnitView<'_> {
        UnitView {
            cluster: &self.cluster,
            condition: &self.condition,
            r: &self.r,
            triggered: &self.triggered,
            values: &self.values,
            width,
            clusters: self.cluster_ids.len(),
        }
    }
}

pub(crate) fn aggregate_table(
    table: &OutcomeTable,
    clustering: &Clustering,
    selection: Selection,
) -> Result<(Observations, TableColumns)> {
    let cols = TableColumns::new(table, clustering)?;
    let obs = aggregate_view(&cols.view(table.schema.values()), selection)?;
    Ok((obs, cols))
}

/// Aggregates unit rows into cluster observations under `policy`.
/// Unit-randomized rows become size-1 observations keyed by the unit id.
pub fn aggregate(table: &OutcomeTable, clustering: &Clustering, policy: TriggerPolicy) -> Result<Vec<ClusterObservation>> {
    let (obs, cols) = aggregate_table(table, clustering, Selection::Policy(policy))?;
    let m = table.schema.metrics.len();
    let width = obs.width;
    Ok((0..obs.len())
        .map(|i| {
            let sums = &obs.sums[i * width..(i + 1) * width];
            let cluster = if obs.r[i] {
                cols.cluster_ids[obs.key[i]].clone()
            } else {
                ClusterId::new(table.rows[obs.key[i]].unit.as_str()).expect("unit ids are non-empty")
            };
            ClusterObservation {
                cluster,
                w: cols.labels[obs.condition[i] as usize].clone(),
                r: obs.r[i],
                s: obs.s[i],
                y: sums[..m].to_vec(),
                x: sums[m..].to_vec(),
                triggered_count: obs.triggered[i],
            }
        })
        .collect())
}

/// All condition cells for `policy`, sorted by `(w, r)`.
pub fn cells_for_policy(table: &OutcomeTable, clustering: &Clustering, policy: TriggerPolicy) -> Result<Vec<ConditionCell>> {
    let (obs, cols) = aggregate_table(table, clustering, Selection::Policy(policy))?;
    Ok(cells_from_observations(&obs, &cols.labels, &table.schema))
}

pub(crate) fn find_cell<'c>(cells: &'c [ConditionCell], key: &CellKey) -> Result<&'c ConditionCell> {
    cells.iter().find(|c| c.key() == key).ok_or_else(|| {
        Error::InsufficientData(format!("no observations in cell {key}"))
    })
}
