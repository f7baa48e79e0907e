//! Deterministic assignment: clusters hash into universe segments, segments
//! are allocated to experiments and split into unit- and cluster-randomized
//! halves, and units or clusters hash into conditions.
//!
//! Every stage is a pure function of names and ids, so replays are
//! byte-identical. Draws use FNV-1a followed by a 64-bit finalizer; FNV-1a
//! alone leaves keys that differ only in their last byte with nearly equal
//! high bits, which would badly skew `u < fraction` comparisons.

pub mod io;
mod service;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::clustering::{validate_date, ClusterId, Clustering};
use crate::error::{Error, Result};
use crate::graph::UnitId;

pub use service::{AssignmentService, TriggerEvent, TriggerLog};

pub const DEFAULT_NUM_SEGMENTS: u32 = 10_000;

const FNV_OFFSET: u64 = 14_695_981_039_346_656_037;
const FNV_PRIME: u64 = 1_099_511_628_211;

const SEGMENT_SALT: &[u8] = b"|seg|";
const MIX_SALT: &[u8] = b"|mix|";
const CONDITION_SALT: &[u8] = b"|cond|";

/// 64-bit FNV-1a.
pub fn hash64(key: &[u8]) -> u64 {
    fnv_extend(FNV_OFFSET, key)
}

fn fnv_extend(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h = (h ^ u64::from(b)).wrapping_mul(FNV_PRIME);
    }
    h
}

/// MurmurHash3 `fmix64` finalizer: a bijection with full avalanche.
pub fn mix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

/// Incremental FNV-1a over `prefix ++ salt`, so per-key hashing only touches
/// the key bytes.
#[derive(Clone, Copy, Debug)]
pub struct SaltedHasher(u64);

impl SaltedHasher {
    pub fn new(prefix: &str, salt: &[u8]) -> Self {
        Self(fnv_extend(hash64(prefix.as_bytes()), salt))
    }

    /// `mix64(hash64(prefix ++ salt ++ key))`.
    pub fn draw(&self, key: &[u8]) -> u64 {
        mix64(fnv_extend(self.0, key))
    }

    /// The draw mapped to `[0, 1)` using its top 53 bits.
    pub fn unit_interval(&self, key: &[u8]) -> f64 {
        (self.draw(key) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// The `(name, date)` pair identifying one version of a clustering.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClusteringRef {
    pub name: String,
    pub date: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Universe {
    pub name: String,
    pub clustering_ref: ClusteringRef,
    #[serde(default = "default_segments")]
    pub num_segments: u32,
}

fn default_segments() -> u32 {
    DEFAULT_NUM_SEGMENTS
}

impl Universe {
    pub fn new(name: impl Into<String>, clustering_ref: ClusteringRef) -> Result<Self> {
        let u = Self {
            name: name.into(),
            clustering_ref,
            num_segments: DEFAULT_NUM_SEGMENTS,
        };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Validation("universe name must be non-empty".into()));
        }
        if self.num_segments == 0 {
            return Err(Error::Validation("num_segments must be positive".into()));
        }
        if self.clustering_ref.name.is_empty() {
            return Err(Error::Validation("clustering name must be non-empty".into()));
        }
        validate_date(&self.clustering_ref.date)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub label: String,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentStatus {
    #[default]
    Running,
    Stopped,
}

/// Allocated segments. In JSON either single indices or half-open
/// `[start, end)` ranges may be listed.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<SegmentItem>", into = "Vec<SegmentItem>")]
pub struct SegmentSet(BTreeSet<u32>);

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum SegmentItem {
    One(u32),
    Range([u32; 2]),
}

impl From<Vec<SegmentItem>> for SegmentSet {
    fn from(items: Vec<SegmentItem>) -> Self {
        let mut set = BTreeSet::new();
        for item in items {
            match item {
                SegmentItem::One(s) => {
                    set.insert(s);
                }
                SegmentItem::Range([lo, hi]) => set.extend(lo..hi),
            }
        }
        Self(set)
    }
}

impl From<SegmentSet> for Vec<SegmentItem> {
    fn from(set: SegmentSet) -> Self {
        let mut out = Vec::new();
        let mut iter = set.0.into_iter().peekable();
        while let Some(lo) = iter.next() {
            let mut hi = lo + 1;
            while iter.peek() == Some(&hi) {
                iter.next();
                hi += 1;
            }
            out.push(if hi == lo + 1 {
                SegmentItem::One(lo)
            } else {
                SegmentItem::Range([lo, hi])
            });
        }
        out
    }
}

impl FromIterator<u32> for SegmentSet {
    fn from_iter<I: IntoIterator<Item = u32>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl SegmentSet {
    pub fn contains(&self, segment: u32) -> bool {
        self.0.contains(&segment)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub universe: String,
    pub segments: SegmentSet,
    /// Share of the experiment's segments whose clusters are randomized as
    /// whole clusters.
    pub cluster_fraction: f64,
    pub conditions: Vec<Condition>,
    #[serde(default)]
    pub status: ExperimentStatus,
}

impl ExperimentConfig {
    pub fn validate(&self, universe: &Universe) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Validation("experiment name must be non-empty".into()));
        }
        if self.universe != universe.name {
            return Err(Error::Validation(format!(
                "experiment `{}` belongs to universe `{}`, not `{}`",
                self.name, self.universe, universe.name
            )));
        }
        if self.segments.is_empty() {
            return Err(Error::Validation(format!("experiment `{}` has no segments", self.name)));
        }
        if let Some(bad) = self.segments.iter().find(|&s| s >= universe.num_segments) {
            return Err(Error::Validation(format!(
                "segment {bad} is outside universe `{}` ({} segments)",
                universe.name, universe.num_segments
            )));
        }
        if !(0.0..=1.0).contains(&self.cluster_fraction) {
            return Err(Error::Validation(format!(
                "cluster_fraction must lie in [0, 1], got {}",
                self.cluster_fraction
            )));
        }
        if self.conditions.is_empty() {
            return Err(Error::Validation("at least one condition is required".into()));
        }
        let mut labels = BTreeSet::new();
        for c in &self.conditions {
            if c.label.is_empty() || !labels.insert(c.label.as_str()) {
                return Err(Error::Validation(format!(
                    "condition labels must be non-empty and unique (`{}`)",
                    c.label
                )));
            }
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(Error::Validation(format!(
                    "condition `{}` has non-positive weight {}",
                    c.label, c.weight
                )));
            }
        }
        let total: f64 = self.conditions.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!("condition weights sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn is_running(&self) -> bool {
        self.status == ExperimentStatus::Running
    }
}

/// The hash key for the condition stage: clusters when cluster-randomized,
/// units otherwise.
#[derive(Clone, Copy, Debug)]
pub enum RandomizationKey<'a> {
    Unit(&'a UnitId),
    Cluster(&'a ClusterId),
}

impl RandomizationKey<'_> {
    fn bytes(&self) -> &[u8] {
        match self {
            Self::Unit(u) => u.as_bytes(),
            Self::Cluster(c) => c.as_bytes(),
        }
    }

    /// `R` implied by the key kind.
    pub fn cluster_randomized(&self) -> bool {
        matches!(self, Self::Cluster(_))
    }
}

pub fn assign_segment(universe: &Universe, cluster: &ClusterId) -> u32 {
    let h = SaltedHasher::new(&universe.name, SEGMENT_SALT).draw(cluster.as_bytes());
    (h % u64::from(universe.num_segments)) as u32
}

/// `R = 1` (cluster-randomized) for the segment.
pub fn split_randomization(experiment: &ExperimentConfig, segment: u32) -> Result<bool> {
    if !experiment.segments.contains(segment) {
        return Err(Error::InvalidParameter(format!(
            "segment {segment} is not allocated to experiment `{}`",
            experiment.name
        )));
    }
    let u = SaltedHasher::new(&experiment.name, MIX_SALT).unit_interval(segment.to_string().as_bytes());
    Ok(u < experiment.cluster_fraction)
}

pub fn assign_condition<'e>(experiment: &'e ExperimentConfig, key: RandomizationKey<'_>) -> &'e str {
    let u = SaltedHasher::new(&experiment.name, CONDITION_SALT).unit_interval(key.bytes());
    pick_condition(&experiment.conditions, u)
}

/// First condition whose cumulative weight exceeds `u`.
pub(crate) fn pick_condition(conditions: &[Condition], u: f64) -> &str {
    &conditions[pick_condition_index(conditions, u)].label
}

pub(crate) fn pick_condition_index(conditions: &[Condition], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, c) in conditions.iter().enumerate() {
        acc += c.weight;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave the cumulative total a hair under 1.
    conditions.len() - 1
}

/// Hashers for one experiment, so bulk assignment skips re-hashing names.
#[derive(Clone, Debug)]
pub struct ExperimentHashers {
    pub(crate) segment: SaltedHasher,
    pub(crate) mix: SaltedHasher,
    pub(crate) condition: SaltedHasher,
}

impl ExperimentHashers {
    pub fn new(universe: &Universe, experiment: &ExperimentConfig) -> Self {
        Self {
            segment: SaltedHasher::new(&universe.name, SEGMENT_SALT),
            mix: SaltedHasher::new(&experiment.name, MIX_SALT),
            condition: SaltedHasher::new(&experiment.name, CONDITION_SALT),
        }
    }

    pub fn condition(&self) -> &SaltedHasher {
        &self.condition
    }

    pub fn segment_of(&self, universe: &Universe, cluster: &ClusterId) -> u32 {
        (self.segment.draw(cluster.as_bytes()) % u64::from(universe.num_segments)) as u32
    }

    pub fn cluster_randomized(&self, experiment: &ExperimentConfig, segment: u32) -> bool {
        self.mix.unit_interval(segment.to_string().as_bytes()) < experiment.cluster_fraction
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub unit: UnitId,
    pub experiment: String,
    pub cluster: ClusterId,
    pub segment: u32,
    /// `R`: whether the unit's cluster was randomized as a whole.
    pub cluster_randomized: bool,
    /// `W`: the condition label.
    pub condition: String,
}

/// The full pipeline for one unit. `None` when the unit has no cluster or
/// its segment is not allocated to the experiment.
pub fn assign(
    universe: &Universe,
    experiment: &ExperimentConfig,
    clustering: &Clustering,
    unit: &UnitId,
) -> Option<AssignmentRecord> {
    assign_with(&ExperimentHashers::new(universe, experiment), universe, experiment, clustering, unit)
}

pub fn assign_with(
    hashers: &ExperimentHashers,
    universe: &Universe,
    experiment: &ExperimentConfig,
    clustering: &Clustering,
    unit: &UnitId,
) -> Option<AssignmentRecord> {
    let cluster = clustering.cluster_of(unit)?;
    let segment = hashers.segment_of(universe, cluster);
    if !experiment.segments.contains(segment) {
        return None;
    }
    let r = hashers.cluster_randomized(experiment, segment);
    let key = if r { cluster.as_bytes() } else { unit.as_bytes() };
    let condition = pick_condition(&experiment.conditions, hashers.condition.unit_interval(key));
    Some(AssignmentRecord {
        unit: unit.clone(),
        experiment: experiment.name.clone(),
        cluster: cluster.clone(),
        segment,
        cluster_randomized: r,
        condition: condition.to_string(),
    })
}

/// Running experiments of the same universe must not share segments.
pub fn check_disjoint<'a>(experiments: impl IntoIterator<Item = &'a ExperimentConfig>) -> Result<()> {
    let mut owner: std::collections::HashMap<(&str, u32), &str> = std::collections::HashMap::new();
    for e in experiments.into_iter().filter(|e| e.is_running()) {
        for s in e.segments.iter() {
            if let Some(prev) = owner.insert((e.universe.as_str(), s), e.name.as_str()) {
                if prev != e.name {
                    return Err(Error::Conflict(format!(
                        "experiments `{prev}` and `{}` both hold segment {s} of universe `{}`",
                        e.name, e.universe
                    )));
                }
            }
        }
    }
    Ok(())
}
