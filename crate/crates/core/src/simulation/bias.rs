//! Unit-, cluster- and mixed-design estimates against the model's truth.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::cells_from_columns;
use super::{simulate_with, PotentialOutcomeModel, Population, RandomizedDesign, UnitDraws, CONTROL, TREATMENT};
use crate::clustering::Clustering;
use crate::error::Result;
use crate::estimation::{
    estimate_diff, find_cell, AdjustmentSpec, AnalysisConfig, CellKey, ContrastSpec, Estimand, Schema,
    TriggerPolicy,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasConfig {
    pub replicates: usize,
    pub p: f64,
    /// Share of segments randomized by cluster in the mixed design.
    pub mixed_cluster_fraction: f64,
    pub alpha: f64,
    pub policy: TriggerPolicy,
    /// Seeds both the unit draws and the design names.
    pub seed: u64,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self {
            replicates: 2000,
            p: 0.5,
            mixed_cluster_fraction: 0.5,
            alpha: 0.05,
            policy: TriggerPolicy::All,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasReport {
    /// `μ(1) − μ(0)` of the simulated population.
    pub tau: f64,
    /// Difference-in-means under unit randomization, one per replicate.
    pub unit_estimates: Vec<f64>,
    /// Difference-in-means under cluster randomization.
    pub cluster_estimates: Vec<f64>,
    /// `μ(treatment, R=1) − μ(treatment, R=0)` under the mixed design.
    pub mixed_estimates: Vec<f64>,
    pub mean_unit: f64,
    pub mean_cluster: f64,
    pub bias_unit: f64,
    pub bias_cluster: f64,
    /// Share of replicates where the mixed contrast rejects at `alpha`.
    pub mixed_rejection_rate: f64,
}

impl BiasReport {
    pub fn abs_bias_unit(&self) -> f64 {
        self.bias_unit.abs()
    }

    pub fn abs_bias_cluster(&self) -> f64 {
        self.bias_cluster.abs()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// The mixed-design contrast `μ(w, R=1) − μ(w, R=0)`.
pub fn mixed_contrast(metric: &str, w: &str) -> ContrastSpec {
    ContrastSpec {
        estimand: Estimand::MixedDiff,
        metric: metric.into(),
        a: CellKey::new(w, true),
        b: Some(CellKey::new(w, false)),
    }
}

/// Runs `replicates` draws of three designs over one simulated population:
/// all-unit, all-cluster and mixed.
pub fn bias_study(
    model: &PotentialOutcomeModel,
    population: &Population,
    clustering: &Clustering,
    config: &BiasConfig,
) -> Result<BiasReport> {
    model.validate()?;
    population.check_mode(model.mode)?;
    let draws = UnitDraws::generate(model, population, config.seed);
    let n = population.len();
    let mut scratch = Vec::new();
    let tau = mean(&simulate_with(model, population, &draws, &vec![true; n], &mut scratch).y)
        - mean(&simulate_with(model, population, &draws, &vec![false; n], &mut scratch).y);
    let tag = format!("{:016x}", config.seed);
    let designs = [
        RandomizedDesign::new(population, clustering, config.p, 0.0, format!("bias-unit-{tag}"))?,
        RandomizedDesign::new(population, clustering, config.p, 1.0, format!("bias-cluster-{tag}"))?,
        RandomizedDesign::new(
            population,
            clustering,
            config.p,
            config.mixed_cluster_fraction,
            format!("bias-mixed-{tag}"),
        )?,
    ];
    let schema = Arc::new(Schema::new(vec!["y".into()], vec![])?);
    let off = AdjustmentSpec::off();
    let estimate = |design: &RandomizedDesign, rep: u64, a: CellKey, b: CellKey| -> Result<(f64, f64)> {
        let draw = design.draw(rep);
        let v = simulate_with(model, population, &draws, &draw.treated, &mut Vec::new());
        let cc = cells_from_columns(
            design.labels(),
            design.cluster_count(),
            &draw,
            &v.triggered,
            &v.y,
            &schema,
            config.policy,
        )?;
        let e = estimate_diff(find_cell(&cc.cells, &a)?, find_cell(&cc.cells, &b)?, &off, "y")?;
        Ok((e.point, e.p_value()))
    };
    let rows: Vec<[(f64, f64); 3]> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|rep| {
            Ok([
                estimate(&designs[0], rep, CellKey::new(TREATMENT, false), CellKey::new(CONTROL, false))?,
                estimate(&designs[1], rep, CellKey::new(TREATMENT, true), CellKey::new(CONTROL, true))?,
                estimate(&designs[2], rep, CellKey::new(TREATMENT, true), CellKey::new(TREATMENT, false))?,
            ])
        })
        .collect::<Result<_>>()?;
    let unit_estimates: Vec<f64> = rows.iter().map(|r| r[0].0).collect();
    let cluster_estimates: Vec<f64> = rows.iter().map(|r| r[1].0).collect();
    let mixed_estimates: Vec<f64> = rows.iter().map(|r| r[2].0).collect();
    let rejections = rows.iter().filter(|r| r[2].1 < config.alpha).count();
    let (mean_unit, mean_cluster) = (mean(&unit_estimates), mean(&cluster_estimates));
    Ok(BiasReport {
        tau,
        mean_unit,
        mean_cluster,
        bias_unit: mean_unit - tau,
        bias_cluster: mean_cluster - tau,
        mixed_rejection_rate: rejections as f64 / rows.len().max(1) as f64,
        unit_estimates,
        cluster_estimates,
        mixed_estimates,
    })
}

/// How often the auto policy picked each trigger policy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicySelection {
    pub replicates: usize,
    pub triggered_units: usize,
    pub triggered_clusters: usize,
}

impl PolicySelection {
    pub fn triggered_clusters_rate(&self) -> f64 {
        self.triggered_clusters as f64 / self.replicates as f64
    }

    pub fn triggered_units_rate(&self) -> f64 {
        self.triggered_units as f64 / self.replicates as f64
    }
}

/// Runs the full analysis with the SUTVA gate on `replicates` draws of a
/// mixed design and counts the selected policies.
pub fn policy_selection_study(
    model: &PotentialOutcomeModel,
    population: &Population,
    clustering: &Clustering,
    config: &BiasConfig,
) -> Result<PolicySelection> {
    model.validate()?;
    population.check_mode(model.mode)?;
    let draws = UnitDraws::generate(model, population, config.seed);
    let design = RandomizedDesign::new(
        population,
        clustering,
        config.p,
        config.mixed_cluster_fraction,
        format!("gate-{:016x}", config.seed),
    )?;
    let mut analysis = AnalysisConfig::new(vec![ContrastSpec {
        estimand: Estimand::Ratio,
        metric: "y".into(),
        a: CellKey::new(TREATMENT, true),
        b: Some(CellKey::new(CONTROL, true)),
    }]);
    analysis.reference = Some(CONTROL.into());
    analysis.alpha = config.alpha;
    let picks: Vec<TriggerPolicy> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|rep| {
            let draw = design.draw(rep);
            let v = simulate_with(model, population, &draws, &draw.treated, &mut Vec::new());
            let table = v.to_table(population, &draw.treated, &draw.cluster_randomized)?;
            Ok(crate::estimation::analyze(&table, clustering, &analysis)?.policy)
        })
        .collect::<Result<_>>()?;
    Ok(PolicySelection {
        replicates: picks.len(),
        triggered_units: picks.iter().filter(|&&p| p == TriggerPolicy::TriggeredUnits).count(),
        triggered_clusters: picks.iter().filter(|&&p| p == TriggerPolicy::TriggeredClusters).count(),
    })
}
