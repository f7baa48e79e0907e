//! Monte-Carlo AA tests, minimal detectable effects and MDE–purity curves.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::cells_from_columns;
use super::{median, replicate_seed, Population, RandomizedDesign, CONTROL, TREATMENT};
use crate::clustering::Clustering;
use crate::error::{AbortDiagnostics, Error, Result};
use crate::estimation::io::OutcomeValues;
use crate::estimation::{
    estimate_diff, estimate_ratio, find_cell, normal_quantile, AdjustmentSpec, CellKey, Estimand, Schema,
    TriggerPolicy,
};
use crate::graph::{purity, Graph};

const MAX_REASONS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerConfig {
    pub replicates: usize,
    /// Treatment share.
    pub p: f64,
    pub alpha: f64,
    pub power_target: f64,
    pub metric: String,
    /// Share of units triggered on each replicate.
    pub trigger_rate: f64,
    /// `RATIO` (relative MDE) or `DIFF` (absolute).
    pub estimand: Estimand,
    pub policy: TriggerPolicy,
    pub adjustment: AdjustmentSpec,
    /// Share of segments randomized by cluster; 0 compares unit-randomized
    /// cells instead.
    pub cluster_fraction: f64,
    pub seed: u64,
    pub max_failure_fraction: f64,
    /// A replicate fails when one cluster holds more than this share of a
    /// compared cell's units.
    pub max_cluster_share: f64,
    pub z_alpha: Option<f64>,
    pub z_power: Option<f64>,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            replicates: 1000,
            p: 0.5,
            alpha: 0.05,
            power_target: 0.95,
            metric: "y".into(),
            trigger_rate: 1.0,
            estimand: Estimand::Ratio,
            policy: TriggerPolicy::TriggeredUnits,
            adjustment: AdjustmentSpec::off(),
            cluster_fraction: 1.0,
            seed: 0,
            max_failure_fraction: 0.01,
            max_cluster_share: 0.25,
            z_alpha: None,
            z_power: None,
        }
    }
}

impl PowerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidParameter("replicates must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.power_target > 0.0 && self.power_target < 1.0) {
            return Err(Error::InvalidParameter("alpha and power_target must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.trigger_rate) {
            return Err(Error::InvalidParameter("trigger_rate must lie in [0, 1]".into()));
        }
        if !matches!(self.estimand, Estimand::Ratio | Estimand::Diff) {
            return Err(Error::InvalidParameter("power analysis supports RATIO and DIFF only".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) || !(0.0..=1.0).contains(&self.max_cluster_share) {
            return Err(Error::InvalidParameter(
                "max_failure_fraction and max_cluster_share must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// `z_{1−α/2}`, unless overridden.
    pub fn z_alpha(&self) -> f64 {
        self.z_alpha.unwrap_or_else(|| normal_quantile(1.0 - self.alpha / 2.0))
    }

    /// `z_{power_target}`, unless overridden.
    pub fn z_power(&self) -> f64 {
        self.z_power.unwrap_or_else(|| normal_quantile(self.power_target))
    }

    /// Two-sided normal power transformation of a standard error.
    pub fn mde_from_se(&self, se: f64) -> f64 {
        (self.z_alpha() + self.z_power()) * se
    }
}

/// AA replicate results over the successful replicates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AaOutcome {
    pub replicates: usize,
    pub points: Vec<f64>,
    pub ses: Vec<f64>,
    /// Share of 95% intervals containing 0.
    pub coverage: f64,
    pub median_se: f64,
    pub mean_ci_width: f64,
    pub failures: usize,
    pub failure_reasons: Vec<String>,
}

/// Baseline rows with dense clusters, ready for replicated analysis.
struct Prepared {
    design: RandomizedDesign,
    schema: Arc<Schema>,
    values: Vec<f64>,
    n: usize,
}

fn prepare(clustering: &Clustering, baseline: &OutcomeValues, config: &PowerConfig) -> Result<Prepared> {
    config.validate()?;
    let m = baseline.schema.metric_index(&config.metric)?;
    let features: Vec<usize> = if config.adjustment.is_active() {
        config
            .adjustment
            .features
            .iter()
            .map(|f| baseline.schema.feature_index(f))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    if baseline.rows.is_empty() {
        return Err(Error::InsufficientData("baseline has no rows".into()));
    }
    let schema = Arc::new(Schema::new(
        vec![config.metric.clone()],
        features.iter().map(|&f| baseline.schema.features[f].clone()).collect(),
    )?);
    let population = Population::new(baseline.rows.iter().map(|(u, _, _)| u.clone()).collect())?;
    let design = RandomizedDesign::new(
        &population,
        clustering,
        config.p,
        config.cluster_fraction,
        format!("aa-{:016x}", config.seed),
    )?;
    let mut values = Vec::with_capacity(baseline.rows.len() * (1 + features.len()));
    for (_, y, x) in &baseline.rows {
        values.push(y[m]);
        values.extend(features.iter().map(|&f| x[f]));
    }
    Ok(Prepared {
        design,
        schema,
        values,
        n: baseline.rows.len(),
    })
}

enum Replicate {
    Ok { point: f64, se: f64, covers: bool, width: f64 },
    Failed(String),
}

impl Prepared {
    fn replicate(&self, config: &PowerConfig, rep: u64) -> Result<Replicate> {
        let draw = self.design.draw(rep);
        let triggered: Vec<bool> = if config.trigger_rate >= 1.0 {
            vec![true; self.n]
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(config.seed, rep));
            (0..self.n).map(|_| rng.random::<f64>() < config.trigger_rate).collect()
        };
        let cc = cells_from_columns(
            self.design.labels(),
            self.design.cluster_count(),
            &draw,
            &triggered,
            &self.values,
            &self.schema,
            config.policy,
        )?;
        let r = config.cluster_fraction > 0.0;
        let (ka, kb) = (CellKey::new(TREATMENT, r), CellKey::new(CONTROL, r));
        for key in [&ka, &kb] {
            let share = cc.max_share(key);
            if share > config.max_cluster_share {
                return Ok(Replicate::Failed(format!(
                    "one cluster holds {:.1}% of cell {key}",
                    100.0 * share
                )));
            }
        }
        let estimate = find_cell(&cc.cells, &ka).and_then(|a| {
            let b = find_cell(&cc.cells, &kb)?;
            match config.estimand {
                Estimand::Ratio => estimate_ratio(a, b, &config.adjustment, &config.metric),
                _ => estimate_diff(a, b, &config.adjustment, &config.metric),
            }
        });
        match estimate {
            Ok(e) => Ok(Replicate::Ok {
                point: e.point,
                se: e.se,
                covers: e.covers(0.0),
                width: e.ci_width(),
            }),
            Err(e @ (Error::InsufficientData(_) | Error::UndefinedRatio(_))) => Ok(Replicate::Failed(e.to_string())),
            Err(e) => Err(e),
        }
    }
}

/// Re-randomizes the baseline population `replicates` times and records the
/// estimator's point, se and interval on each; outcomes carry no effect, so
/// every interval should cover 0 at the nominal rate.
pub fn aa_test(clustering: &Clustering, baseline: &OutcomeValues, config: &PowerConfig) -> Result<AaOutcome> {
    let prepared = prepare(clustering, baseline, config)?;
    let results: Vec<Replicate> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|rep| prepared.replicate(config, rep))
        .collect::<Result<_>>()?;
    let mut out = AaOutcome {
        replicates: config.replicates,
        points: Vec::new(),
        ses: Vec::new(),
        coverage: 0.0,
        median_se: f64::NAN,
        mean_ci_width: f64::NAN,
        failures: 0,
        failure_reasons: Vec::new(),
    };
    let (mut covered, mut width) = (0usize, 0.0);
    for r in results {
        match r {
            Replicate::Ok { point, se, covers, width: w } => {
                out.points.push(point);
                out.ses.push(se);
                covered += usize::from(covers);
                width += w;
            }
            Replicate::Failed(reason) => {
                out.failures += 1;
                if out.failure_reasons.len() < MAX_REASONS && !out.failure_reasons.contains(&reason) {
                    out.failure_reasons.push(reason);
                }
            }
        }
    }
    if out.failures as f64 > config.max_failure_fraction * config.replicates as f64 || out.points.is_empty() {
        return Err(Error::Aborted(AbortDiagnostics {
            replicates: config.replicates,
            failures: out.failures,
            max_failure_fraction: config.max_failure_fraction,
            reasons: out.failure_reasons,
        }));
    }
    let ok = out.points.len() as f64;
    out.coverage = covered as f64 / ok;
    out.median_se = median(&out.ses);
    out.mean_ci_width = width / ok;
    Ok(out)
}

/// `(z_{1−α/2} + z_{power}) · median se` of an AA run.
pub fn mde(clustering: &Clustering, baseline: &OutcomeValues, config: &PowerConfig) -> Result<f64> {
    let aa = aa_test(clustering, baseline, config)?;
    Ok(config.mde_from_se(aa.median_se))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub label: String,
    pub purity: f64,
    pub mde: f64,
    /// `None` when the clustering cannot be analysed at all.
    pub coverage: Option<f64>,
    pub mean_ci_width: f64,
}

/// Purity and MDE of each clustering, sorted by purity then label.
/// A single all-encompassing cluster has no power: its MDE is infinite.
pub fn tradeoff_curve(
    graph: &Graph,
    clusterings: &[Clustering],
    baseline: &OutcomeValues,
    config: &PowerConfig,
) -> Result<Vec<EvaluationResult>> {
    let mut out = Vec::with_capacity(clusterings.len());
    for clustering in clusterings {
        let purity = purity(graph, clustering)?;
        let result = if clustering.cluster_count() < 2 {
            EvaluationResult {
                label: clustering.name().to_string(),
                purity,
                mde: f64::INFINITY,
                coverage: None,
                mean_ci_width: f64::INFINITY,
            }
        } else {
            let aa = aa_test(clustering, baseline, config)?;
            EvaluationResult {
                label: clustering.name().to_string(),
                purity,
                mde: config.mde_from_se(aa.median_se),
                coverage: Some(aa.coverage),
                mean_ci_width: aa.mean_ci_width,
            }
        };
        out.push(result);
    }
    out.sort_by(|a, b| a.purity.total_cmp(&b.purity).then_with(|| a.label.cmp(&b.label)));
    Ok(out)
}

pub fn write_evaluation_csv<W: Write>(results: &[EvaluationResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["label", "purity", "mde", "coverage", "mean_ci_width"])?;
    for r in results {
        w.write_record([
            r.label.clone(),
            r.purity.to_string(),
            r.mde.to_string(),
            r.coverage.map(|c| c.to_string()).unwrap_or_default(),
            r.mean_ci_width.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_evaluation_csv<R: Read>(reader: R) -> Result<Vec<EvaluationResult>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let num = |k: usize| -> Result<f64> {
            let field = record.get(k).unwrap_or("");
            field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("`{field}` is not a number"),
            })
        };
        out.push(EvaluationResult {
            label: record.get(0).unwrap_or("").to_string(),
            purity: num(1)?,
            mde: num(2)?,
            coverage: match record.get(3) {
                Some("") | None => None,
                Some(_) => Some(num(3)?),
            },
            mean_ci_width: num(4)?,
        });
    }
    Ok(out)
}
