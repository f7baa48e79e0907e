//! Clusterings of the unit population: Louvain (imbalanced) and recursive
//! bisection (balanced), plus the modularity objective and size summaries.

mod bisection;
pub mod io;
mod louvain;

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{vertex_clusters, Graph, UnitId};

pub use bisection::{balanced_partition, BALANCE_TOLERANCE};
pub use louvain::{louvain, louvain_rounds, LouvainParams};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ClusterId(String);

impl ClusterId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Validation("cluster id must be non-empty".into()));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }
}

impl TryFrom<String> for ClusterId {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ClusterId> for String {
    fn from(value: ClusterId) -> Self {
        value.0
    }
}

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Validates an ISO-8601 calendar date (`YYYY-MM-DD`).
pub fn validate_date(date: &str) -> Result<()> {
    chrono::NaiveDate::parse_from_str(date, "%Y-%m-%d")
        .map(|_| ())
        .map_err(|_| Error::Validation(format!("`{date}` is not an ISO-8601 date (YYYY-MM-DD)")))
}

/// A partition of units into clusters, identified by name and creation date.
#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    name: String,
    date: String,
    assignment: IndexMap<UnitId, ClusterId>,
    sizes: IndexMap<ClusterId, usize>,
}

impl Clustering {
    pub fn from_pairs(
        name: impl Into<String>,
        date: impl Into<String>,
        pairs: impl IntoIterator<Item = (UnitId, ClusterId)>,
    ) -> Result<Self> {
        let name = name.into();
        let date = date.into();
        if name.is_empty() {
            return Err(Error::Validation("clustering name must be non-empty".into()));
        }
        validate_date(&date)?;
        let mut assignment = IndexMap::new();
        let mut sizes: IndexMap<ClusterId, usize> = IndexMap::new();
        for (unit, cluster) in pairs {
            *sizes.entry(cluster.clone()).or_insert(0) += 1;
            if let Some(prev) = assignment.insert(unit.clone(), cluster) {
                return Err(Error::Validation(format!(
                    "unit `{unit}` assigned twice (first to cluster `{prev}`)"
                )));
            }
        }
        Ok(Self {
            name,
            date,
            assignment,
            sizes,
        })
    }

    /// Builds a clustering of the graph's vertices from dense per-vertex labels.
    pub(crate) fn from_labels(graph: &Graph, labels: &[usize], name: String) -> Self {
        let pairs = graph
            .ids()
            .iter()
            .zip(labels)
            .map(|(u, &l)| (u.clone(), ClusterId(l.to_string())));
        Self::from_pairs(name, "1970-01-01", pairs).expect("labels form a valid partition")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn date(&self) -> &str {
        &self.date
    }

    /// Same partition under a different name and date.
    pub fn with_label(mut self, name: impl Into<String>, date: impl Into<String>) -> Result<Self> {
        let name = name.into();
        let date = date.into();
        if name.is_empty() {
            return Err(Error::Validation("clustering name must be non-empty".into()));
        }
        validate_date(&date)?;
        self.name = name;
        self.date = date;
        Ok(self)
    }

    pub fn unit_count(&self) -> usize {
        self.assignment.len()
    }

    pub fn cluster_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn cluster_of(&self, unit: &UnitId) -> Option<&ClusterId> {
        self.assignment.get(unit)
    }

    pub fn size_of(&self, cluster: &ClusterId) -> Option<usize> {
        self.sizes.get(cluster).copied()
    }

    /// Units with their cluster, in insertion order.
    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&UnitId, &ClusterId)> {
        self.assignment.iter()
    }

    /// `S_c` for every cluster, in order of first appearance.
    pub fn sizes(&self) -> &IndexMap<ClusterId, usize> {
        &self.sizes
    }

    pub fn max_cluster_size(&self) -> usize {
        self.sizes.values().copied().max().unwrap_or(0)
    }

    pub fn min_cluster_size(&self) -> usize {
        self.sizes.values().copied().min().unwrap_or(0)
    }

    /// Dense cluster index for each unit in iteration order, and the cluster
    /// id for each dense index.
    pub fn dense_labels(&self) -> (Vec<usize>, Vec<ClusterId>) {
        let labels = self
            .assignment
            .values()
            .map(|c| self.sizes.get_index_of(c).expect("size entry exists"))
            .collect();
        (labels, self.sizes.keys().cloned().collect())
    }
}

/// Generalized modularity
/// `Q = (1/2m) Σ_ij [A_ij − k_i k_j / (resolution · 2m)] · 1(c_i = c_j)`.
///
/// The null-model term is divided by `resolution`, so smaller resolutions
/// penalise large clusters harder and yield smaller clusters. At
/// `resolution = 1` this is Newman–Girvan modularity.
pub fn modularity(graph: &Graph, clustering: &Clustering, resolution: f64) -> Result<f64> {
    if !(resolution.is_finite() && resolution > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "resolution must be positive, got {resolution}"
        )));
    }
    let labels = vertex_clusters(graph, clustering)?;
    Ok(modularity_of_labels(graph, &labels, resolution))
}

pub(crate) fn modularity_of_labels(graph: &Graph, labels: &[usize], resolution: f64) -> f64 {
    let two_m = 2.0 * graph.total_weight();
    if two_m <= 0.0 {
        return 0.0;
    }
    let clusters = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut internal = vec![0.0; clusters];
    let mut total = vec![0.0; clusters];
    for v in 0..graph.vertex_count() {
        total[labels[v]] += graph.degree(v);
    }
    for (a, b, w) in graph.edges() {
        if labels[a] == labels[b] {
            internal[labels[a]] += w;
        }
    }
    internal
        .iter()
        .zip(&total)
        .map(|(&inside, &tot)| 2.0 * inside / two_m - (tot / two_m).powi(2) / resolution)
        .sum()
}

/// Fraction of clusters at each exact size.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SizeHistogram {
    /// `(size, normalized_count)` sorted by size.
    pub buckets: Vec<(usize, f64)>,
}

impl SizeHistogram {
    pub fn min_size(&self) -> Option<usize> {
        self.buckets.first().map(|b| b.0)
    }

    pub fn max_size(&self) -> Option<usize> {
        self.buckets.last().map(|b| b.0)
    }

    /// `log10(max / min)`, the number of decades the sizes span.
    pub fn decades_spanned(&self) -> f64 {
        match (self.min_size(), self.max_size()) {
            (Some(lo), Some(hi)) => (hi as f64 / lo as f64).log10(),
            _ => 0.0,
        }
    }
}

pub fn size_distribution(clustering: &Clustering) -> Result<SizeHistogram> {
    if clustering.cluster_count() == 0 {
        return Err(Error::InsufficientData("empty clustering".into()));
    }
    let mut counts = std::collections::BTreeMap::new();
    for &s in clustering.sizes().values() {
        *counts.entry(s).or_insert(0usize) += 1;
    }
    let total = clustering.cluster_count() as f64;
    Ok(SizeHistogram {
        buckets: counts
            .into_iter()
            .map(|(s, c)| (s, c as f64 / total))
            .collect(),
    })
}
