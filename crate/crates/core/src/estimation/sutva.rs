//! The two SUTVA checks that decide whether analysis may condition on
//! triggered units.

use serde::{Deserialize, Serialize};

use super::estimator::two_sided_p;
use super::{
    aggregate_table, cells_from_observations, estimate_ratio, AdjustmentSpec, ConditionCell, OutcomeTable, Selection,
    Z95,
};
use crate::clustering::Clustering;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SutvaTest {
    /// Triggered units per triggered cluster, compared across
    /// cluster-randomized conditions.
    Triggering,
    /// Outcomes of non-triggered units inside triggered clusters, compared
    /// across cluster-randomized conditions.
    Conditional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TestStatus {
    Pass,
    Fail,
    /// The restricted population is empty or too small to test.
    Inconclusive,
}

/// Result of the most significant pairwise comparison against the reference
/// condition. `statistic` is on the ratio scale minus one, so the test passes
/// when `0 ∈ ci95`. Numeric fields are NaN when inconclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SutvaTestResult {
    pub test: SutvaTest,
    pub metric: Option<String>,
    pub reference: Option<String>,
    pub condition: Option<String>,
    pub statistic: f64,
    pub se: f64,
    pub ci95: [f64; 2],
    pub p_value: f64,
    pub status: TestStatus,
    /// `status != Fail`: inconclusive counts as passing.
    pub pass: bool,
}

impl SutvaTestResult {
    fn inconclusive(test: SutvaTest, metric: Option<String>) -> Self {
        Self {
            test,
            metric,
            reference: None,
            condition: None,
            statistic: f64::NAN,
            se: f64::NAN,
            ci95: [f64::NAN; 2],
            p_value: f64::NAN,
            status: TestStatus::Inconclusive,
            pass: true,
        }
    }

    fn from_pairs(test: SutvaTest, metric: Option<String>, pairs: Vec<(String, String, f64, f64)>) -> Self {
        let all_pass = pairs.iter().all(|&(_, _, stat, se)| (stat).abs() <= Z95 * se);
        let (reference, condition, statistic, se) = pairs
            .into_iter()
            .min_by(|x, y| two_sided_p(x.2, x.3).total_cmp(&two_sided_p(y.2, y.3)))
            .expect("at least one pair");
        let status = if all_pass { TestStatus::Pass } else { TestStatus::Fail };
        Self {
            test,
            metric,
            reference: Some(reference),
            condition: Some(condition),
            statistic,
            se,
            ci95: [statistic - Z95 * se, statistic + Z95 * se],
            p_value: two_sided_p(statistic, se),
            status,
            pass: all_pass,
        }
    }

    /// Whether the result clears a stricter level, for multi-test gates.
    pub fn passes_at(&self, alpha: f64) -> bool {
        self.status == TestStatus::Inconclusive || self.p_value >= alpha
    }
}

fn split_reference<'c>(
    cells: &[&'c ConditionCell],
    reference: Option<&str>,
) -> Result<(&'c ConditionCell, Vec<&'c ConditionCell>)> {
    let idx = match reference {
        Some(label) => cells.iter().position(|c| c.key().w == label).ok_or_else(|| {
            Error::InvalidParameter(format!("reference condition `{label}` has no cluster-randomized data"))
        })?,
        None => 0,
    };
    let others = cells
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != idx)
        .map(|(_, c)| *c)
        .collect();
    Ok((cells[idx], others))
}

/// Compares the mean triggered count per triggered cluster of every
/// cluster-randomized condition with the reference (default: first cell).
/// Expects cells built under `TRIGGERED_CLUSTERS`.
pub fn sutva_trigger_test(cells: &[ConditionCell], reference: Option<&str>) -> Result<SutvaTestResult> {
    let clustered: Vec<&ConditionCell> = cells.iter().filter(|c| c.key().r && c.k() > 0).collect();
    if clustered.is_empty() {
        return Err(Error::InsufficientData("no triggered cluster-randomized clusters".into()));
    }
    if clustered.len() < 2 {
        return Err(Error::InsufficientData(
            "the triggering test needs at least two cluster-randomized conditions".into(),
        ));
    }
    let (base, others) = split_reference(&clustered, reference)?;
    base.require_variance()?;
    let t = base.trigger_index();
    let (mb, vb) = (base.means()[t], base.cov()[(t, t)]);
    if mb <= 0.0 {
        return Err(Error::InsufficientData("reference cell has no triggered units".into()));
    }
    let mut pairs = Vec::new();
    for cell in others {
        cell.require_variance()?;
        let t = cell.trigger_index();
        let (ma, va) = (cell.means()[t], cell.cov()[(t, t)]);
        let stat = ma / mb - 1.0;
        let var = va / (mb * mb) + ma * ma * vb / mb.powi(4);
        pairs.push((base.key().w.clone(), cell.key().w.clone(), stat, var.max(0.0).sqrt()));
    }
    Ok(SutvaTestResult::from_pairs(SutvaTest::Triggering, None, pairs))
}

/// One result per metric, restricted to non-triggered units of triggered
/// cluster-randomized clusters.
pub fn conditional_sutva_test(
    table: &OutcomeTable,
    clustering: &Clustering,
    reference: Option<&str>,
) -> Result<Vec<SutvaTestResult>> {
    let (obs, cols) = aggregate_table(table, clustering, Selection::UntriggeredInTriggered)?;
    let cells = cells_from_observations(&obs, &cols.labels, table.schema());
    let usable: Vec<&ConditionCell> = cells.iter().filter(|c| c.key().r && c.k() >= 2).collect();
    let mut out = Vec::new();
    for metric in &table.schema().metrics {
        let result = if usable.len() < 2 || reference.is_some_and(|r| !usable.iter().any(|c| c.key().w == r)) {
            SutvaTestResult::inconclusive(SutvaTest::Conditional, Some(metric.clone()))
        } else {
            let (base, others) = split_reference(&usable, reference)?;
            let mut pairs = Vec::new();
            let mut undefined = false;
            for cell in others {
                match estimate_ratio(cell, base, &AdjustmentSpec::off(), metric) {
                    Ok(e) => pairs.push((base.key().w.clone(), cell.key().w.clone(), e.point, e.se)),
                    Err(Error::UndefinedRatio(_) | Error::InsufficientData(_)) => undefined = true,
                    Err(e) => return Err(e),
                }
            }
            if undefined || pairs.is_empty() {
                SutvaTestResult::inconclusive(SutvaTest::Conditional, Some(metric.clone()))
            } else {
                SutvaTestResult::from_pairs(SutvaTest::Conditional, Some(metric.clone()), pairs)
            }
        };
        out.push(result);
    }
    Ok(out)
}
