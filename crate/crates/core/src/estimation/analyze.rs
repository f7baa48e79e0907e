//! The full analysis: the SUTVA gate chooses a trigger policy, then every
//! requested contrast is estimated with and without adjustment.

use serde::{Deserialize, Serialize};

use super::{
    cells_for_policy, conditional_sutva_test, estimate_diff, estimate_mean, estimate_ratio, find_cell,
    sutva_trigger_test, AdjustmentSpec, CellCount, CellKey, Estimand, EstimateResult, GammaHat, OutcomeTable,
    SutvaTest, SutvaTestResult, TriggerPolicy,
};
use crate::clustering::Clustering;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyChoice {
    /// Run the SUTVA gate.
    #[default]
    Auto,
    All,
    TriggeredUnits,
    TriggeredClusters,
}

impl std::str::FromStr for PolicyChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "all" => Ok(Self::All),
            "triggered-units" => Ok(Self::TriggeredUnits),
            "triggered-clusters" => Ok(Self::TriggeredClusters),
            other => Err(Error::InvalidParameter(format!("unknown policy `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastSpec {
    pub estimand: Estimand,
    pub metric: String,
    pub a: CellKey,
    /// Absent for `MEAN`.
    #[serde(default)]
    pub b: Option<CellKey>,
}

impl ContrastSpec {
    pub fn validate(&self) -> Result<()> {
        match (self.estimand, &self.b) {
            (Estimand::Mean, None) => Ok(()),
            (Estimand::Mean, Some(_)) => Err(Error::InvalidParameter("a MEAN contrast takes one cell".into())),
            (_, None) => Err(Error::InvalidParameter(format!("{:?} needs two cells", self.estimand))),
            (Estimand::MixedDiff, Some(b)) if b.w != self.a.w || b.r == self.a.r => Err(Error::InvalidParameter(
                "MIXED_DIFF compares one condition across r = 1 and r = 0".into(),
            )),
            _ => Ok(()),
        }
    }

    fn touches_unit_randomized(&self) -> bool {
        !self.a.r || self.b.as_ref().is_some_and(|b| !b.r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub contrasts: Vec<ContrastSpec>,
    #[serde(default)]
    pub adjustment: AdjustmentSpec,
    #[serde(default)]
    pub policy: PolicyChoice,
    /// Reference condition for the SUTVA tests. Defaults to the second cell
    /// of the first two-cell contrast.
    #[serde(default)]
    pub reference: Option<String>,
    /// Family-wise level of the gate, split evenly across its two tests.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    0.05
}

impl AnalysisConfig {
    pub fn new(contrasts: Vec<ContrastSpec>) -> Self {
        Self {
            contrasts,
            adjustment: AdjustmentSpec::off(),
            policy: PolicyChoice::Auto,
            reference: None,
            alpha: default_alpha(),
        }
    }

    fn reference(&self) -> Option<&str> {
        self.reference
            .as_deref()
            .or_else(|| self.contrasts.iter().find_map(|c| c.b.as_ref()).map(|b| b.w.as_str()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContrastReport {
    pub estimand: Estimand,
    pub metric: String,
    pub a: CellKey,
    pub b: Option<CellKey>,
    pub policy: TriggerPolicy,
    pub point: f64,
    pub se: f64,
    pub ci95: [f64; 2],
    pub gamma_hat: Option<GammaHat>,
    pub bias_diag: f64,
    pub k_cells: Vec<CellCount>,
    pub sutva_tests: Vec<SutvaTestResult>,
    pub adjusted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OmittedContrast {
    pub contrast: ContrastSpec,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub policy: TriggerPolicy,
    /// Whether the policy came from the gate.
    pub gated: bool,
    pub sutva_tests: Vec<SutvaTestResult>,
    pub contrasts: Vec<ContrastReport>,
    pub omitted: Vec<OmittedContrast>,
}

impl AnalysisReport {
    pub fn find(&self, estimand: Estimand, adjusted: bool) -> Option<&ContrastReport> {
        self.contrasts.iter().find(|c| c.estimand == estimand && c.adjusted == adjusted)
    }
}

/// Runs both SUTVA tests and returns whether every test clears `alpha / 2`.
pub(crate) fn sutva_gate(
    table: &OutcomeTable,
    clustering: &Clustering,
    metrics: &[&str],
    reference: Option<&str>,
    alpha: f64,
) -> Result<(bool, Vec<SutvaTestResult>)> {
    let cells = cells_for_policy(table, clustering, TriggerPolicy::TriggeredClusters)?;
    let mut tests = vec![match sutva_trigger_test(&cells, reference) {
        Ok(r) => r,
        Err(Error::InsufficientData(_)) => SutvaTestResult {
            test: SutvaTest::Triggering,
            metric: None,
            reference: None,
            condition: None,
            statistic: f64::NAN,
            se: f64::NAN,
            ci95: [f64::NAN; 2],
            p_value: f64::NAN,
            status: super::TestStatus::Inconclusive,
            pass: true,
        },
        Err(e) => return Err(e),
    }];
    tests.extend(
        conditional_sutva_test(table, clustering, reference)?
            .into_iter()
            .filter(|t| t.metric.as_deref().is_some_and(|m| metrics.contains(&m))),
    );
    let per_test = alpha / 2.0;
    Ok((tests.iter().all(|t| t.passes_at(per_test)), tests))
}

fn estimate(
    contrast: &ContrastSpec,
    cells: &[super::ConditionCell],
    spec: &AdjustmentSpec,
) -> Result<EstimateResult> {
    let a = find_cell(cells, &contrast.a)?;
    match (&contrast.b, contrast.estimand) {
        (None, _) => estimate_mean(a, &contrast.metric),
        (Some(b), Estimand::Ratio) => estimate_ratio(a, find_cell(cells, b)?, spec, &contrast.metric),
        (Some(b), _) => estimate_diff(a, find_cell(cells, b)?, spec, &contrast.metric),
    }
}

pub fn analyze(table: &OutcomeTable, clustering: &Clustering, config: &AnalysisConfig) -> Result<AnalysisReport> {
    if table.rows().is_empty() {
        return Err(Error::InsufficientData("outcome table is empty".into()));
    }
    for c in &config.contrasts {
        c.validate()?;
        table.schema().metric_index(&c.metric)?;
    }
    let (policy, sutva_tests) = match config.policy {
        PolicyChoice::Auto => {
            let mut metrics: Vec<&str> = config.contrasts.iter().map(|c| c.metric.as_str()).collect();
            metrics.dedup();
            let (pass, tests) = sutva_gate(table, clustering, &metrics, config.reference(), config.alpha)?;
            let policy = if pass {
                TriggerPolicy::TriggeredUnits
            } else {
                TriggerPolicy::TriggeredClusters
            };
            (policy, tests)
        }
        PolicyChoice::All => (TriggerPolicy::All, Vec::new()),
        PolicyChoice::TriggeredUnits => (TriggerPolicy::TriggeredUnits, Vec::new()),
        PolicyChoice::TriggeredClusters => (TriggerPolicy::TriggeredClusters, Vec::new()),
    };
    let cells = cells_for_policy(table, clustering, policy)?;
    let mut contrasts = Vec::new();
    let mut omitted = Vec::new();
    let variants: Vec<AdjustmentSpec> = if config.adjustment.is_active() {
        vec![config.adjustment.disabled(), config.adjustment.clone()]
    } else {
        vec![AdjustmentSpec::off()]
    };
    for contrast in &config.contrasts {
        if policy == TriggerPolicy::TriggeredClusters && contrast.touches_unit_randomized() {
            omitted.push(OmittedContrast {
                contrast: contrast.clone(),
                reason: "TRIGGERED_CLUSTERS restricts analysis to cluster-randomized cells".into(),
            });
            continue;
        }
        for spec in &variants {
            let e = estimate(contrast, &cells, spec)?;
            contrasts.push(ContrastReport {
                estimand: if contrast.estimand == Estimand::MixedDiff {
                    Estimand::MixedDiff
                } else {
                    e.estimand
                },
                metric: contrast.metric.clone(),
                a: contrast.a.clone(),
                b: contrast.b.clone(),
                policy,
                point: e.point,
                se: e.se,
                ci95: e.ci95,
                gamma_hat: e.gamma_hat,
                bias_diag: e.bias_diag,
                k_cells: e.k_per_cell,
                sutva_tests: sutva_tests.clone(),
                adjusted: e.adjusted,
            });
        }
    }
    Ok(AnalysisReport {
        policy,
        gated: config.policy == PolicyChoice::Auto,
        sutva_tests,
        contrasts,
        omitted,
    })
}
