//! Ground truth `τ`, `τ_unit(p)` and `τ_cluster(p)` for a simulated model.
//!
//! `τ_unit(p)` averages `E[Y_u | W_u = 1] − E[Y_u | W_u = 0]` over units
//! under independent Bernoulli(`p`) unit assignment; `τ_cluster(p)` does the
//! same with whole clusters assigned Bernoulli(`p`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{simulate_with, PotentialOutcomeModel, Population, UnitDraws};
use crate::clustering::Clustering;
use crate::error::{Error, Result};

/// Populations (or cluster counts) up to this size are enumerated exactly.
pub const EXACT_LIMIT: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruthConfig {
    pub p: f64,
    /// Unit draws of the model.
    pub seed: u64,
    /// Assignment draws used when enumeration is out of reach.
    pub mc_draws: usize,
    pub mc_seed: u64,
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self {
            p: 0.5,
            seed: 0,
            mc_draws: 100_000,
            mc_seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationTruth {
    pub tau: f64,
    pub tau_unit_p: f64,
    pub tau_cluster_p: f64,
    /// Whether both `p`-dependent quantities were enumerated exactly.
    pub exact: bool,
}

/// Conditional means accumulated per unit.
struct Conditional {
    sum: [Vec<f64>; 2],
    mass: [Vec<f64>; 2],
}

impl Conditional {
    fn new(n: usize) -> Self {
        Self {
            sum: [vec![0.0; n], vec![0.0; n]],
            mass: [vec![0.0; n], vec![0.0; n]],
        }
    }

    fn add(&mut self, treated: &[bool], y: &[f64], weight: f64) {
        for (i, (&t, &v)) in treated.iter().zip(y).enumerate() {
            let k = usize::from(t);
            self.sum[k][i] += weight * v;
            self.mass[k][i] += weight;
        }
    }

    fn contrast(&self) -> Result<f64> {
        let n = self.sum[0].len();
        let mut total = 0.0;
        for i in 0..n {
            if self.mass[0][i] <= 0.0 || self.mass[1][i] <= 0.0 {
                return Err(Error::InsufficientData(
                    "some unit was never observed in both arms; raise mc_draws".into(),
                ));
            }
            total += self.sum[1][i] / self.mass[1][i] - self.sum[0][i] / self.mass[0][i];
        }
        Ok(total / n as f64)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `τ_design(p)` where `groups[i]` is the randomization group of unit `i`.
fn design_contrast(
    model: &PotentialOutcomeModel,
    population: &Population,
    draws: &UnitDraws,
    groups: &[u32],
    config: &TruthConfig,
) -> Result<(f64, bool)> {
    let n = population.len();
    let g = groups.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut acc = Conditional::new(n);
    let mut scratch = Vec::new();
    let mut treated = vec![false; n];
    let exact = g <= EXACT_LIMIT;
    if exact {
        for mask in 0u64..1 << g {
            let ones = mask.count_ones() as i32;
            let weight = config.p.powi(ones) * (1.0 - config.p).powi(g as i32 - ones);
            for (t, &l) in treated.iter_mut().zip(groups) {
                *t = mask >> l & 1 == 1;
            }
            let v = simulate_with(model, population, draws, &treated, &mut scratch);
            acc.add(&treated, &v.y, weight);
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.mc_seed);
        let mut arm = vec![false; g];
        for _ in 0..config.mc_draws {
            for a in arm.iter_mut() {
                *a = rng.random::<f64>() < config.p;
            }
            for (t, &l) in treated.iter_mut().zip(groups) {
                *t = arm[l as usize];
            }
            let v = simulate_with(model, population, draws, &treated, &mut scratch);
            acc.add(&treated, &v.y, 1.0);
        }
    }
    Ok((acc.contrast()?, exact))
}

/// `tau` from the model at `W = 1` and `W = 0`; the `p`-dependent values by
/// enumeration when at most [`EXACT_LIMIT`] groups are randomized, Monte
/// Carlo otherwise.
pub fn ground_truth(
    model: &PotentialOutcomeModel,
    population: &Population,
    clustering: &Clustering,
    config: &TruthConfig,
) -> Result<SimulationTruth> {
    model.validate()?;
    population.check_mode(model.mode)?;
    if !(config.p > 0.0 && config.p < 1.0) {
        return Err(Error::InvalidParameter(format!("p must lie in (0, 1), got {}", config.p)));
    }
    if population.is_empty() {
        return Err(Error::InsufficientData("empty population".into()));
    }
    if config.mc_draws == 0 {
        return Err(Error::InvalidParameter("mc_draws must be positive".into()));
    }
    let n = population.len();
    let draws = UnitDraws::generate(model, population, config.seed);
    let mut scratch = Vec::new();
    let all = simulate_with(model, population, &draws, &vec![true; n], &mut scratch);
    let none = simulate_with(model, population, &draws, &vec![false; n], &mut scratch);
    let tau = mean(&all.y) - mean(&none.y);
    let units: Vec<u32> = (0..n as u32).collect();
    let (tau_unit_p, unit_exact) = design_contrast(model, population, &draws, &units, config)?;
    let (labels, _) = population.dense_labels(clustering)?;
    let (tau_cluster_p, cluster_exact) = design_contrast(model, population, &draws, &labels, config)?;
    Ok(SimulationTruth {
        tau,
        tau_unit_p,
        tau_cluster_p,
        exact: unit_exact && cluster_exact,
    })
}
