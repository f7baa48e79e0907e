//! A deterministic potential-outcome simulator with linear spillovers, used
//! for ground truth, AA tests, power (MDE) and bias studies.
//!
//! Outcomes follow
//! `Y_i = b_i + δ·W_i·T_i + σ_sp · (weighted share of peers that are treated and triggered)`,
//! with peers being graph neighbours or clustermates. Triggering is
//! `T_i = 1(U_i < trigger_prob + trigger_spillover · treated-peer share)`
//! and the pre-period value `X_i` is correlated `ρ` with `b_i`. All unit
//! draws come from the seed, so outcomes are a pure function of
//! `(seed, W)`.

mod bias;
mod design;
mod power;
pub mod synthetic;
mod truth;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clustering::Clustering;
use crate::error::{Error, Result};
use crate::estimation::io::OutcomeValues;
use crate::estimation::{OutcomeTable, Schema, UnitOutcomeRow};
use crate::graph::{Graph, UnitId};
use crate::randomization::mix64;

pub use bias::{bias_study, mixed_contrast, policy_selection_study, BiasConfig, BiasReport, PolicySelection};
pub use design::{DesignDraw, RandomizedDesign, CONTROL, TREATMENT};
pub use power::{
    aa_test, mde, read_evaluation_csv, tradeoff_curve, write_evaluation_csv, AaOutcome, EvaluationResult, PowerConfig,
};
pub use synthetic::{planted_partition, power_law_sizes, PlantedGraph};
pub use truth::{ground_truth, SimulationTruth, TruthConfig, EXACT_LIMIT};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SpilloverMode {
    /// Peers are weighted graph neighbours.
    #[default]
    Graph,
    /// Peers are the other members of the unit's interference cluster.
    Cluster,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PotentialOutcomeModel {
    pub baseline_mean: f64,
    pub baseline_sd: f64,
    /// SD of a per-group baseline shift (groups come from the population).
    pub group_sd: f64,
    pub direct_effect: f64,
    pub spillover_effect: f64,
    pub mode: SpilloverMode,
    pub trigger_prob: f64,
    /// Added to `trigger_prob` per unit share of treated peers.
    pub trigger_spillover: f64,
    pub pre_period_corr: f64,
}

impl Default for PotentialOutcomeModel {
    fn default() -> Self {
        Self {
            baseline_mean: 10.0,
            baseline_sd: 1.0,
            group_sd: 0.0,
            direct_effect: 0.0,
            spillover_effect: 0.0,
            mode: SpilloverMode::Graph,
            trigger_prob: 1.0,
            trigger_spillover: 0.0,
            pre_period_corr: 0.0,
        }
    }
}

impl PotentialOutcomeModel {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.baseline_mean,
            self.baseline_sd,
            self.group_sd,
            self.direct_effect,
            self.spillover_effect,
            self.trigger_spillover,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("model parameters must be finite".into()));
        }
        if self.baseline_sd < 0.0 || self.group_sd < 0.0 {
            return Err(Error::InvalidParameter("standard deviations must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.trigger_prob) {
            return Err(Error::InvalidParameter("trigger_prob must lie in [0, 1]".into()));
        }
        if !(-1.0..=1.0).contains(&self.pre_period_corr) {
            return Err(Error::InvalidParameter("pre_period_corr must lie in [-1, 1]".into()));
        }
        Ok(())
    }
}

/// Compressed adjacency of weighted peers.
#[derive(Clone, Debug)]
struct Peers {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
    totals: Vec<f64>,
}

/// The simulated units with their interference structure.
#[derive(Clone, Debug)]
pub struct Population {
    ids: Vec<UnitId>,
    index: HashMap<UnitId, usize>,
    graph_peers: Option<Peers>,
    /// Interference cluster of each unit, dense.
    clusters: Option<(Vec<u32>, Vec<usize>)>,
    groups: Option<(Vec<u32>, usize)>,
}

impl Population {
    pub fn new(ids: Vec<UnitId>) -> Result<Self> {
        let index: HashMap<UnitId, usize> = ids.iter().cloned().enumerate().map(|(i, u)| (u, i)).collect();
        if index.len() != ids.len() {
            return Err(Error::Validation("population lists a unit twice".into()));
        }
        Ok(Self {
            ids,
            index,
            graph_peers: None,
            clusters: None,
            groups: None,
        })
    }

    /// The graph's vertices, with the graph as the peer structure.
    pub fn from_graph(graph: &Graph) -> Self {
        Self::new(graph.ids().to_vec())
            .expect("graph ids are unique")
            .with_graph(graph)
            .expect("same ids")
    }

    /// The clustering's units, with clustermates as the peer structure.
    pub fn from_clustering(clustering: &Clustering) -> Self {
        let ids = clustering.iter().map(|(u, _)| u.clone()).collect();
        Self::new(ids)
            .expect("clustering units are unique")
            .with_clusters(clustering)
            .expect("same ids")
    }

    pub fn with_graph(mut self, graph: &Graph) -> Result<Self> {
        let mut offsets = vec![0];
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        let mut totals = Vec::with_capacity(self.ids.len());
        for id in &self.ids {
            let mut total = 0.0;
            if let Some(v) = graph.index_of(id) {
                for (u, w) in graph.neighbors(v) {
                    let Some(&t) = self.index.get(graph.id(u)) else { continue };
                    targets.push(t as u32);
                    weights.push(w);
                    total += w;
                }
            }
            totals.push(total);
            offsets.push(targets.len());
        }
        self.graph_peers = Some(Peers {
            offsets,
            targets,
            weights,
            totals,
        });
        Ok(self)
    }

    pub fn with_clusters(mut self, clustering: &Clustering) -> Result<Self> {
        self.clusters = Some(self.dense_labels(clustering)?);
        Ok(self)
    }

    /// Groups sharing a baseline shift of SD `group_sd`.
    pub fn with_groups(mut self, groups: &[usize]) -> Result<Self> {
        if groups.len() != self.ids.len() {
            return Err(Error::InvalidParameter("one group per unit is required".into()));
        }
        let count = groups.iter().copied().max().map_or(0, |m| m + 1);
        self.groups = Some((groups.iter().map(|&g| g as u32).collect(), count));
        Ok(self)
    }

    /// Dense cluster label per unit, plus cluster sizes.
    pub(crate) fn dense_labels(&self, clustering: &Clustering) -> Result<(Vec<u32>, Vec<usize>)> {
        let mut index = HashMap::new();
        let mut labels = Vec::with_capacity(self.ids.len());
        let mut sizes = Vec::new();
        let mut missing = Vec::new();
        for id in &self.ids {
            match clustering.cluster_of(id) {
                None => missing.push(id.to_string()),
                Some(c) => {
                    let next = index.len() as u32;
                    let l = *index.entry(c).or_insert(next);
                    if l as usize == sizes.len() {
                        sizes.push(0);
                    }
                    sizes[l as usize] += 1;
                    labels.push(l);
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::Unassigned {
                count: missing.len(),
                sample: missing.into_iter().take(10).collect(),
            });
        }
        Ok((labels, sizes))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[UnitId] {
        &self.ids
    }

    pub fn index_of(&self, id: &UnitId) -> Option<usize> {
        self.index.get(id).copied()
    }

    fn check_mode(&self, mode: SpilloverMode) -> Result<()> {
        match mode {
            SpilloverMode::Graph if self.graph_peers.is_none() => Err(Error::InvalidParameter(
                "GRAPH spillovers need a population built with a graph".into(),
            )),
            SpilloverMode::Cluster if self.clusters.is_none() => Err(Error::InvalidParameter(
                "CLUSTER spillovers need a population built with a clustering".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Weighted share of each unit's peers with `flag` set.
    fn peer_share(&self, mode: SpilloverMode, flag: &[bool], out: &mut Vec<f64>) {
        out.clear();
        match mode {
            SpilloverMode::Graph => {
                let p = self.graph_peers.as_ref().expect("mode checked");
                out.extend((0..self.ids.len()).map(|i| {
                    if p.totals[i] <= 0.0 {
                        return 0.0;
                    }
                    let (lo, hi) = (p.offsets[i], p.offsets[i + 1]);
                    let hit: f64 = (lo..hi)
                        .filter(|&e| flag[p.targets[e] as usize])
                        .map(|e| p.weights[e])
                        .sum();
                    hit / p.totals[i]
                }));
            }
            SpilloverMode::Cluster => {
                let (labels, sizes) = self.clusters.as_ref().expect("mode checked");
                let mut hits = vec![0usize; sizes.len()];
                for (i, &l) in labels.iter().enumerate() {
                    hits[l as usize] += usize::from(flag[i]);
                }
                out.extend(labels.iter().enumerate().map(|(i, &l)| {
                    let l = l as usize;
                    if sizes[l] <= 1 {
                        0.0
                    } else {
                        (hits[l] - usize::from(flag[i])) as f64 / (sizes[l] - 1) as f64
                    }
                }));
            }
        }
    }
}

/// Per-unit random draws fixed by the seed: baseline, pre-period value and
/// the trigger uniform.
#[derive(Clone, Debug)]
pub struct UnitDraws {
    pub baseline: Vec<f64>,
    pub pre: Vec<f64>,
    pub uniform: Vec<f64>,
}

impl UnitDraws {
    pub fn generate(model: &PotentialOutcomeModel, population: &Population, seed: u64) -> Self {
        let n = population.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let group_shift: Vec<f64> = match &population.groups {
            Some((_, count)) => (0..*count)
                .map(|_| model.group_sd * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            None => Vec::new(),
        };
        let total_sd = if population.groups.is_some() {
            model.group_sd.hypot(model.baseline_sd)
        } else {
            model.baseline_sd
        };
        let rho = model.pre_period_corr;
        let resid = (1.0 - rho * rho).max(0.0).sqrt();
        let mut draws = Self {
            baseline: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            uniform: Vec::with_capacity(n),
        };
        for i in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            let u: f64 = rng.random();
            let shift = population.groups.as_ref().map_or(0.0, |(g, _)| group_shift[g[i] as usize]);
            let dev = shift + model.baseline_sd * z;
            draws.baseline.push(model.baseline_mean + dev);
            draws.pre.push(model.baseline_mean + rho * dev + resid * total_sd * e);
            draws.uniform.push(u);
        }
        draws
    }
}

/// Simulated outcomes for one treatment vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SimValues {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub triggered: Vec<bool>,
}

pub(crate) fn simulate_with(
    model: &PotentialOutcomeModel,
    population: &Population,
    draws: &UnitDraws,
    treated: &[bool],
    scratch: &mut Vec<f64>,
) -> SimValues {
    let n = population.len();
    let triggered: Vec<bool> = if model.trigger_spillover != 0.0 {
        population.peer_share(model.mode, treated, scratch);
        (0..n)
            .map(|i| draws.uniform[i] < (model.trigger_prob + model.trigger_spillover * scratch[i]).clamp(0.0, 1.0))
            .collect()
    } else {
        (0..n).map(|i| draws.uniform[i] < model.trigger_prob).collect()
    };
    let active: Vec<bool> = (0..n).map(|i| treated[i] && triggered[i]).collect();
    let y = if model.spillover_effect != 0.0 {
        population.peer_share(model.mode, &active, scratch);
        (0..n)
            .map(|i| {
                draws.baseline[i]
                    + model.direct_effect * f64::from(u8::from(active[i]))
                    + model.spillover_effect * scratch[i]
            })
            .collect()
    } else {
        (0..n)
            .map(|i| draws.baseline[i] + model.direct_effect * f64::from(u8::from(active[i])))
            .collect()
    };
    SimValues {
        y,
        x: draws.pre.clone(),
        triggered,
    }
}

/// Outcomes for every unit under treatment vector `treated`.
pub fn simulate(
    model: &PotentialOutcomeModel,
    population: &Population,
    treated: &[bool],
    seed: u64,
) -> Result<SimValues> {
    model.validate()?;
    population.check_mode(model.mode)?;
    if treated.len() != population.len() {
        return Err(Error::InvalidParameter(format!(
            "treatment vector has {} entries for {} units",
            treated.len(),
            population.len()
        )));
    }
    let draws = UnitDraws::generate(model, population, seed);
    Ok(simulate_with(model, population, &draws, treated, &mut Vec::new()))
}

impl SimValues {
    /// Outcome rows with metric `y` and pre-period feature `y`, labelled
    /// `treatment`/`control`.
    pub fn to_table(&self, population: &Population, treated: &[bool], cluster_randomized: &[bool]) -> Result<OutcomeTable> {
        let schema = std::sync::Arc::new(Schema::new(vec!["y".into()], vec!["y".into()])?);
        let rows = (0..population.len())
            .map(|i| UnitOutcomeRow {
                unit: population.ids[i].clone(),
                y: vec![self.y[i]],
                x: vec![self.x[i]],
                triggered: self.triggered[i],
                w: if treated[i] { TREATMENT } else { CONTROL }.to_string(),
                r: cluster_randomized[i],
            })
            .collect();
        OutcomeTable::new(schema, rows)
    }
}

/// The model's no-treatment outcomes as baseline rows: metric `y` is the
/// baseline and pre-period feature `y` its correlated pre-period value.
pub fn baseline_values(model: &PotentialOutcomeModel, population: &Population, seed: u64) -> Result<OutcomeValues> {
    model.validate()?;
    let draws = UnitDraws::generate(model, population, seed);
    let schema = std::sync::Arc::new(Schema::new(vec!["y".into()], vec!["y".into()])?);
    let rows = population
        .ids
        .iter()
        .zip(draws.baseline.iter().zip(&draws.pre))
        .map(|(u, (&b, &x))| (u.clone(), vec![b], vec![x]))
        .collect();
    Ok(OutcomeValues { schema, rows })
}

/// Independent seed for replicate `index` of a run seeded with `master`.
pub fn replicate_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master) ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Median of a non-empty slice (NaN-free).
pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
