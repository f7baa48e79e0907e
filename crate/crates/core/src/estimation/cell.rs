//! Per-condition sample moments.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ClusterObservation, Schema};
use crate::error::{Error, Result};

/// A `(w, r)` condition cell.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub w: String,
    #[serde(with = "crate::serde_bit")]
    pub r: bool,
}

impl CellKey {
    pub fn new(w: impl Into<String>, r: bool) -> Self {
        Self { w: w.into(), r }
    }
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/r={}", self.w, u8::from(self.r))
    }
}

/// Moments of the per-observation vector `[Y.., X.., S, triggered_count]`.
///
/// `cov` is the sample covariance (denominator `k − 1`) divided by `k`, i.e.
/// the estimated covariance of the sample means. Covariances between
/// different cells are zero.
#[derive(Clone, Debug)]
pub struct ConditionCell {
    key: CellKey,
    schema: Arc<Schema>,
    k: usize,
    means: DVector<f64>,
    cov: DMatrix<f64>,
}

impl ConditionCell {
    pub fn key(&self) -> &CellKey {
        &self.key
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn means(&self) -> &DVector<f64> {
        &self.means
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn y_index(&self, metric: usize) -> usize {
        metric
    }

    pub fn x_index(&self, feature: usize) -> usize {
        self.schema.metrics.len() + feature
    }

    pub fn s_index(&self) -> usize {
        self.schema.metrics.len() + self.schema.features.len()
    }

    pub fn trigger_index(&self) -> usize {
        self.s_index() + 1
    }

    pub fn mean_s(&self) -> f64 {
        self.means[self.s_index()]
    }

    /// Covariance of this cell's sample means with another cell's.
    pub fn cross_cov(&self, other: &ConditionCell) -> DMatrix<f64> {
        DMatrix::zeros(self.dim(), other.dim())
    }

    pub(crate) fn require_variance(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InsufficientData(format!(
                "cell {} has k = {}; at least 2 observations are needed",
                self.key, self.k
            )));
        }
        Ok(())
    }
}

/// Streaming (Welford) accumulator for one cell.
#[derive(Clone, Debug)]
pub struct CellAccumulator {
    key: CellKey,
    schema: Arc<Schema>,
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
    delta: Vec<f64>,
}

impl CellAccumulator {
    pub fn new(key: CellKey, schema: Arc<Schema>) -> Self {
        let d = schema.metrics.len() + schema.features.len() + 2;
        Self {
            key,
            schema,
            n: 0,
            mean: vec![0.0; d],
            m2: vec![0.0; d * d],
            delta: vec![0.0; d],
        }
    }

    pub fn key(&self) -> &CellKey {
        &self.key
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Adds one observation vector `[Y.., X.., S, triggered_count]`.
    pub fn push(&mut self, v: &[f64]) {
        let d = self.mean.len();
        debug_assert_eq!(v.len(), d);
        self.n += 1;
        let n = self.n as f64;
        for i in 0..d {
            self.delta[i] = v[i] - self.mean[i];
            self.mean[i] += self.delta[i] / n;
        }
        for i in 0..d {
            let after = v[i] - self.mean[i];
            let row = &mut self.m2[i * d..(i + 1) * d];
            for j in 0..d {
                row[j] += self.delta[j] * after;
            }
        }
    }

    /// Finishes the cell. Cells with fewer than two observations are kept
    /// (with zero covariance) but refuse variance-bearing inference.
    pub fn finish(self) -> ConditionCell {
        let d = self.mean.len();
        let k = self.n;
        let scale = if k >= 2 { 1.0 / ((k - 1) as f64 * k as f64) } else { 0.0 };
        let mut cov = DMatrix::from_row_slice(d, d, &self.m2) * scale;
        cov = (&cov + cov.transpose()) * 0.5;
        ConditionCell {
            key: self.key,
            schema: self.schema,
            k,
            means: DVector::from_vec(self.mean),
            cov,
        }
    }
}

/// Moments of one cell's observations, which must all share `(w, r)`.
pub fn build_cell(schema: &Arc<Schema>, observations: &[ClusterObservation]) -> Result<ConditionCell> {
    let first = observations
        .first()
        .ok_or_else(|| Error::InsufficientData("no observations for cell".into()))?;
    let key = CellKey::new(first.w.clone(), first.r);
    let mut acc = CellAccumulator::new(key.clone(), schema.clone());
    let mut v = Vec::new();
    for obs in observations {
        if obs.w != key.w || obs.r != key.r {
            return Err(Error::InvalidParameter(format!(
                "observation for {}/r={} passed to cell {key}",
                obs.w,
                u8::from(obs.r)
            )));
        }
        obs.write_vector(schema, &mut v)?;
        acc.push(&v);
    }
    let cell = acc.finish();
    cell.require_variance()?;
    Ok(cell)
}

/// Groups observations by `(w, r)` and builds every cell, sorted by key.
/// Cells with fewer than two observations are included but will refuse
/// variance-bearing estimates.
pub fn build_cells(schema: &Arc<Schema>, observations: &[ClusterObservation]) -> Result<Vec<ConditionCell>> {
    let mut accs: std::collections::BTreeMap<CellKey, CellAccumulator> = Default::default();
    let mut v = Vec::new();
    for obs in observations {
        let key = CellKey::new(obs.w.clone(), obs.r);
        obs.write_vector(schema, &mut v)?;
        accs.entry(key.clone())
            .or_insert_with(|| CellAccumulator::new(key, schema.clone()))
            .push(&v);
    }
    Ok(accs.into_values().map(CellAccumulator::finish).collect())
}
