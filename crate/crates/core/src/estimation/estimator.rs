//! Ratio-of-means estimators, their delta-method variances and the
//! agnostic regression adjustment.
//!
//! Each estimator is linearised as a gradient with respect to the sample
//! means of the cells it touches; its variance is `Σ_cells gᵀ Σ g` with the
//! cell covariance of the means.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::ConditionCell;
use crate::error::{Error, Result};

/// `z_{0.975}`.
pub const Z95: f64 = 1.959_963_984_540_054;

/// `Var(φ)` counts as singular at or beyond this condition number.
const MAX_CONDITION: f64 = 1e8;

const RATIO_FLOOR: f64 = 1e-12;

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Two-sided normal p-value for `point / se`.
pub(crate) fn two_sided_p(point: f64, se: f64) -> f64 {
    if se > 0.0 {
        2.0 * Normal::standard().cdf(-(point / se).abs())
    } else if point == 0.0 {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentSpec {
    /// Pre-period features whose cross-condition contrast forms `φ`.
    pub features: Vec<String>,
    pub enabled: bool,
}

impl AdjustmentSpec {
    pub fn on(features: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            features: features.into_iter().map(Into::into).collect(),
            enabled: true,
        }
    }

    pub fn off() -> Self {
        Self::default()
    }

    pub fn is_active(&self) -> bool {
        self.enabled && !self.features.is_empty()
    }

    pub fn disabled(&self) -> Self {
        Self {
            features: self.features.clone(),
            enabled: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Estimand {
    Mean,
    Diff,
    Ratio,
    /// Same condition, cluster- versus unit-randomized.
    MixedDiff,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCount {
    pub w: String,
    #[serde(with = "crate::serde_bit")]
    pub r: bool,
    pub k: usize,
}

impl CellCount {
    fn of(cell: &ConditionCell) -> Self {
        Self {
            w: cell.key().w.clone(),
            r: cell.key().r,
            k: cell.k(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaHat {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// `Var(φ)` was singular and no adjustment was applied.
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub estimand: Estimand,
    pub point: f64,
    pub se: f64,
    pub ci95: [f64; 2],
    pub gamma_hat: Option<GammaHat>,
    pub k_per_cell: Vec<CellCount>,
    pub adjusted: bool,
    /// Second-order delta-method bias estimate; reported, not subtracted.
    pub bias_diag: f64,
}

impl EstimateResult {
    fn new(estimand: Estimand, point: f64, var: f64, bias_diag: f64, cells: &[&ConditionCell]) -> Self {
        let se = var.max(0.0).sqrt();
        Self {
            estimand,
            point,
            se,
            ci95: [point - Z95 * se, point + Z95 * se],
            gamma_hat: None,
            k_per_cell: cells.iter().map(|c| CellCount::of(c)).collect(),
            adjusted: false,
            bias_diag,
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci95[0] <= value && value <= self.ci95[1]
    }

    pub fn ci_width(&self) -> f64 {
        self.ci95[1] - self.ci95[0]
    }

    pub fn p_value(&self) -> f64 {
        two_sided_p(self.point, self.se)
    }
}

/// `gᵀ Σ g`, with results inside the rounding noise of the summed terms
/// snapped to zero (exactly collinear moments would otherwise leave a
/// spurious `se ≈ 1e-8`).
fn quad(g: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let mut total = 0.0;
    let mut magnitude = 0.0;
    for i in 0..g.len() {
        if g[i] == 0.0 {
            continue;
        }
        for j in 0..g.len() {
            let term = g[i] * cov[(i, j)] * g[j];
            total += term;
            magnitude += term.abs();
        }
    }
    if total.abs() <= 64.0 * f64::EPSILON * magnitude {
        0.0
    } else {
        total
    }
}

/// `μ̂ = Ȳ/S̄` and its gradient in the cell's means.
fn mu_linear(cell: &ConditionCell, metric: usize) -> Result<(f64, DVector<f64>)> {
    let s = cell.mean_s();
    if s <= 0.0 {
        return Err(Error::InsufficientData(format!("cell {} has mean size 0", cell.key())));
    }
    let mu = cell.means()[cell.y_index(metric)] / s;
    let mut g = DVector::zeros(cell.dim());
    g[cell.y_index(metric)] = 1.0 / s;
    g[cell.s_index()] = -mu / s;
    Ok((mu, g))
}

fn bias_of(cell: &ConditionCell, metric: usize, mu: f64) -> f64 {
    let (y, s) = (cell.y_index(metric), cell.s_index());
    let sbar = cell.mean_s();
    (mu * cell.cov()[(s, s)] - cell.cov()[(y, s)]) / (sbar * sbar)
}

/// `(μ̂, se)` for one metric of one cell.
pub fn estimate_mu(cell: &ConditionCell, metric: &str) -> Result<(f64, f64)> {
    cell.require_variance()?;
    let (mu, g) = mu_linear(cell, cell.schema().metric_index(metric)?)?;
    Ok((mu, quad(&g, cell.cov()).max(0.0).sqrt()))
}

/// Plug-in `(1/S̄²)(μ̂ Var(S̄) − Cov(Ȳ, S̄))`.
pub fn delta_bias(cell: &ConditionCell, metric: &str) -> Result<f64> {
    cell.require_variance()?;
    let j = cell.schema().metric_index(metric)?;
    let (mu, _) = mu_linear(cell, j)?;
    Ok(bias_of(cell, j, mu))
}

pub fn estimate_mean(cell: &ConditionCell, metric: &str) -> Result<EstimateResult> {
    cell.require_variance()?;
    let j = cell.schema().metric_index(metric)?;
    let (mu, g) = mu_linear(cell, j)?;
    Ok(EstimateResult::new(Estimand::Mean, mu, quad(&g, cell.cov()), bias_of(cell, j, mu), &[cell]))
}

/// `φ = X̄_A/S̄_A − X̄_B/S̄_B` per feature, with its gradients in each cell's
/// means (columns are features).
#[derive(Clone, Debug)]
pub struct Phi {
    pub value: DVector<f64>,
    pub grad_a: DMatrix<f64>,
    pub grad_b: DMatrix<f64>,
}

impl Phi {
    pub fn variance(&self, a: &ConditionCell, b: &ConditionCell) -> DMatrix<f64> {
        self.grad_a.transpose() * a.cov() * &self.grad_a + self.grad_b.transpose() * b.cov() * &self.grad_b
    }

    /// `Cov(φ, m̄_A)`: one row per feature, one column per mean of cell A.
    pub fn cov_with_means_a(&self, a: &ConditionCell) -> DMatrix<f64> {
        self.grad_a.transpose() * a.cov()
    }

    pub fn cov_with_means_b(&self, b: &ConditionCell) -> DMatrix<f64> {
        self.grad_b.transpose() * b.cov()
    }
}

pub fn compute_phi(a: &ConditionCell, b: &ConditionCell, spec: &AdjustmentSpec) -> Result<Phi> {
    let f = spec.features.len();
    let mut value = DVector::zeros(f);
    let mut grad_a = DMatrix::zeros(a.dim(), f);
    let mut grad_b = DMatrix::zeros(b.dim(), f);
    for (sign, cell, grad) in [(1.0, a, &mut grad_a), (-1.0, b, &mut grad_b)] {
        let s = cell.mean_s();
        if s <= 0.0 {
            return Err(Error::InsufficientData(format!("cell {} has mean size 0", cell.key())));
        }
        for (col, name) in spec.features.iter().enumerate() {
            let xi = cell.x_index(cell.schema().feature_index(name)?);
            let ratio = cell.means()[xi] / s;
            value[col] += sign * ratio;
            grad[(xi, col)] = sign / s;
            grad[(cell.s_index(), col)] = -sign * ratio / s;
        }
    }
    Ok(Phi { value, grad_a, grad_b })
}

/// Per-side adjustment coefficients: the adjusted means are
/// `μ̂_A − γ_A·φ` and `μ̂_B + γ_B·φ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gamma {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub fallback: bool,
}

fn gamma_from(phi: &Phi, a: &ConditionCell, b: &ConditionCell, ga: &DVector<f64>, gb: &DVector<f64>) -> Gamma {
    let f = phi.value.len();
    let zero = || Gamma {
        a: DVector::zeros(f),
        b: DVector::zeros(f),
        fallback: true,
    };
    let var = phi.variance(a, b);
    let eig = SymmetricEigen::new(var);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= max / MAX_CONDITION {
        return zero();
    }
    let inv = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l))
        * eig.eigenvectors.transpose();
    let cov_a = phi.cov_with_means_a(a) * ga;
    let cov_b = phi.cov_with_means_b(b) * gb;
    Gamma {
        a: &inv * cov_a,
        b: -(&inv * cov_b),
        fallback: false,
    }
}

/// Delta-method plug-in of `γ* = Var(φ)⁻¹ Cov(φ, μ̂)` for each side.
pub fn compute_gamma(a: &ConditionCell, b: &ConditionCell, spec: &AdjustmentSpec, metric: &str) -> Result<Gamma> {
    a.require_variance()?;
    b.require_variance()?;
    let (_, ga) = mu_linear(a, a.schema().metric_index(metric)?)?;
    let (_, gb) = mu_linear(b, b.schema().metric_index(metric)?)?;
    let phi = compute_phi(a, b, spec)?;
    Ok(gamma_from(&phi, a, b, &ga, &gb))
}

struct Sides {
    mu_a: f64,
    mu_b: f64,
    ga: DVector<f64>,
    gb: DVector<f64>,
    bias_a: f64,
    bias_b: f64,
    /// `(φ, γ)` when adjusting.
    adjustment: Option<(Phi, Gamma)>,
}

fn sides(a: &ConditionCell, b: &ConditionCell, spec: &AdjustmentSpec, metric: &str) -> Result<Sides> {
    a.require_variance()?;
    b.require_variance()?;
    let ja = a.schema().metric_index(metric)?;
    let jb = b.schema().metric_index(metric)?;
    let (mu_a, ga) = mu_linear(a, ja)?;
    let (mu_b, gb) = mu_linear(b, jb)?;
    let adjustment = if spec.is_active() {
        let phi = compute_phi(a, b, spec)?;
        let gamma = gamma_from(&phi, a, b, &ga, &gb);
        Some((phi, gamma))
    } else {
        None
    };
    Ok(Sides {
        bias_a: bias_of(a, ja, mu_a),
        bias_b: bias_of(b, jb, mu_b),
        mu_a,
        mu_b,
        ga,
        gb,
        adjustment,
    })
}

fn contrast_kind(a: &ConditionCell, b: &ConditionCell) -> Estimand {
    if a.key().w == b.key().w && a.key().r != b.key().r {
        Estimand::MixedDiff
    } else {
        Estimand::Diff
    }
}

fn attach_gamma(mut result: EstimateResult, adjustment: &Option<(Phi, Gamma)>) -> EstimateResult {
    if let Some((_, gamma)) = adjustment {
        result.adjusted = true;
        result.gamma_hat = Some(GammaHat {
            a: gamma.a.iter().copied().collect(),
            b: gamma.b.iter().copied().collect(),
            fallback: gamma.fallback,
        });
    }
    result
}

/// `μ̂_A − μ̂_B − (γ̂_A + γ̂_B)·φ` (φ oriented `A − B`), with `γ̂` held fixed
/// in the variance.
pub fn estimate_diff(a: &ConditionCell, b: &ConditionCell, spec: &AdjustmentSpec, metric: &str) -> Result<EstimateResult> {
    let s = sides(a, b, spec, metric)?;
    let (mut point, mut lin_a, mut lin_b) = (s.mu_a - s.mu_b, s.ga.clone(), -&s.gb);
    if let Some((phi, gamma)) = &s.adjustment {
        let g = &gamma.a + &gamma.b;
        point -= g.dot(&phi.value);
        lin_a -= &phi.grad_a * &g;
        lin_b -= &phi.grad_b * &g;
    }
    let var = quad(&lin_a, a.cov()) + quad(&lin_b, b.cov());
    let result = EstimateResult::new(contrast_kind(a, b), point, var, s.bias_a - s.bias_b, &[a, b]);
    Ok(attach_gamma(result, &s.adjustment))
}

/// `(μ̂_A − γ̂_A·φ) / (μ̂_B + γ̂_B·φ) − 1`.
pub fn estimate_ratio(a: &ConditionCell, b: &ConditionCell, spec: &AdjustmentSpec, metric: &str) -> Result<EstimateResult> {
    let s = sides(a, b, spec, metric)?;
    if s.mu_b.abs() < RATIO_FLOOR {
        return Err(Error::UndefinedRatio(s.mu_b));
    }
    let (mut num, mut den) = (s.mu_a, s.mu_b);
    let (mut num_a, mut num_b) = (s.ga.clone(), DVector::zeros(b.dim()));
    let (mut den_a, mut den_b) = (DVector::zeros(a.dim()), s.gb.clone());
    if let Some((phi, gamma)) = &s.adjustment {
        num -= gamma.a.dot(&phi.value);
        den += gamma.b.dot(&phi.value);
        num_a -= &phi.grad_a * &gamma.a;
        num_b -= &phi.grad_b * &gamma.a;
        den_a += &phi.grad_a * &gamma.b;
        den_b += &phi.grad_b * &gamma.b;
    }
    if den.abs() < RATIO_FLOOR {
        return Err(Error::UndefinedRatio(den));
    }
    let q = num / den;
    let lin_a = (num_a - den_a * q) / den;
    let lin_b = (num_b - den_b * q) / den;
    let var = quad(&lin_a, a.cov()) + quad(&lin_b, b.cov());
    // Second order: each side's own bias plus the curvature of 1/μ̂_B.
    let var_mu_b = quad(&s.gb, b.cov());
    let bias = s.bias_a / s.mu_b - s.mu_a * s.bias_b / (s.mu_b * s.mu_b)
        + s.mu_a * var_mu_b / s.mu_b.powi(3);
    let result = EstimateResult::new(Estimand::Ratio, q - 1.0, var, bias, &[a, b]);
    Ok(attach_gamma(result, &s.adjustment))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::estimation::{CellAccumulator, CellKey, Schema};

    fn schema(features: usize) -> Arc<Schema> {
        Arc::new(Schema::new(vec!["m".into()], (0..features).map(|i| format!("x{i}")).collect()).unwrap())
    }

    /// Cell from `(y, x.., s)` tuples.
    fn cell(w: &str, rows: &[(f64, &[f64], f64)]) -> ConditionCell {
        let sch = schema(rows[0].1.len());
        let mut acc = CellAccumulator::new(CellKey::new(w, true), sch);
        for (y, x, s) in rows {
            let mut v = vec![*y];
            v.extend_from_slice(x);
            v.push(*s);
            v.push(*s);
            acc.push(&v);
        }
        acc.finish()
    }

    #[test]
    fn unit_sized_cell_gives_plain_mean() {
        let c = cell("a", &[(1.0, &[], 1.0), (2.0, &[], 1.0), (6.0, &[], 1.0)]);
        let (mu, se) = estimate_mu(&c, "m").unwrap();
        assert!((mu - 3.0).abs() < 1e-15);
        // Sample variance 7 over k = 3.
        assert!((se - (7.0f64 / 3.0).sqrt()).abs() < 1e-14);
        assert_eq!(delta_bias(&c, "m").unwrap(), 0.0);
    }

    #[test]
    fn proportional_outcomes_have_zero_se() {
        let c = cell("a", &[(3.0, &[], 1.0), (12.0, &[], 4.0), (6.0, &[], 2.0)]);
        let (mu, se) = estimate_mu(&c, "m").unwrap();
        assert!((mu - 3.0).abs() < 1e-15);
        assert!(se < 1e-12);
    }

    #[test]
    fn hand_computed_mu_and_se() {
        let c = cell("a", &[(1.0, &[], 1.0), (4.0, &[], 2.0), (9.0, &[], 3.0)]);
        let (mu, se) = estimate_mu(&c, "m").unwrap();
        assert!((mu - 14.0 / 6.0).abs() < 1e-15);
        // Sample moments: Var(Y) = 49/3, Cov(Y,S) = 4, Var(S) = 1; divide by k = 3.
        let (vy, cys, vs) = (49.0 / 9.0, 4.0 / 3.0, 1.0 / 3.0);
        let expected = ((vy - 2.0 * mu * cys + mu * mu * vs) / 4.0f64).sqrt();
        assert!((se - expected).abs() < 1e-14);
    }

    #[test]
    fn equal_sizes_have_zero_bias() {
        let c = cell("a", &[(1.0, &[], 3.0), (5.0, &[], 3.0), (2.0, &[], 3.0)]);
        assert_eq!(delta_bias(&c, "m").unwrap(), 0.0);
    }

    #[test]
    fn phi_by_hand() {
        let a = cell("a", &[(0.0, &[2.0], 1.0), (0.0, &[6.0], 3.0)]);
        let b = cell("b", &[(0.0, &[1.0], 1.0), (0.0, &[3.0], 1.0)]);
        let phi = compute_phi(&a, &b, &AdjustmentSpec::on(["x0"])).unwrap();
        // A: X̄ = 4, S̄ = 2 → 2. B: X̄ = 2, S̄ = 1 → 2.
        assert!(phi.value[0].abs() < 1e-15);
        let b2 = cell("b", &[(0.0, &[1.0], 1.0), (0.0, &[2.0], 1.0)]);
        let phi2 = compute_phi(&a, &b2, &AdjustmentSpec::on(["x0"])).unwrap();
        assert!((phi2.value[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_features_fall_back_to_no_adjustment() {
        let a = cell("a", &[(1.0, &[0.0], 1.0), (3.0, &[0.0], 2.0), (2.0, &[0.0], 1.0)]);
        let b = cell("b", &[(2.0, &[0.0], 1.0), (1.0, &[0.0], 1.0), (4.0, &[0.0], 3.0)]);
        let spec = AdjustmentSpec::on(["x0"]);
        let phi = compute_phi(&a, &b, &spec).unwrap();
        assert_eq!(phi.value[0], 0.0);
        let g = compute_gamma(&a, &b, &spec, "m").unwrap();
        assert!(g.fallback);
        let adj = estimate_diff(&a, &b, &spec, "m").unwrap();
        let raw = estimate_diff(&a, &b, &AdjustmentSpec::off(), "m").unwrap();
        assert_eq!(adj.point, raw.point);
        assert_eq!(adj.se, raw.se);
        assert!(adj.gamma_hat.unwrap().fallback);
    }

    #[test]
    fn missing_feature_is_an_error() {
        let a = cell("a", &[(1.0, &[0.0], 1.0), (3.0, &[1.0], 2.0)]);
        assert!(compute_phi(&a, &a, &AdjustmentSpec::on(["nope"])).is_err());
    }

    #[test]
    fn self_contrast_is_zero() {
        let a = cell("a", &[(1.0, &[2.0], 1.0), (3.0, &[1.0], 2.0), (7.0, &[5.0], 4.0)]);
        for spec in [AdjustmentSpec::off(), AdjustmentSpec::on(["x0"])] {
            assert_eq!(estimate_diff(&a, &a, &spec, "m").unwrap().point, 0.0);
            assert!(estimate_ratio(&a, &a, &spec, "m").unwrap().point.abs() < 1e-15);
        }
    }

    #[test]
    fn ratio_by_hand() {
        let a = cell("a", &[(1.0, &[], 1.0), (2.0, &[], 1.0)]);
        let b = cell("b", &[(0.5, &[], 1.0), (1.5, &[], 1.0)]);
        let r = estimate_ratio(&a, &b, &AdjustmentSpec::off(), "m").unwrap();
        assert!((r.point - 0.5).abs() < 1e-15);
        // Var(Ȳ_A) = Var(Ȳ_B) = 0.25: var = 0.25/1 + 1.5²·0.25/1.
        assert!((r.se - (0.25f64 + 2.25 * 0.25).sqrt()).abs() < 1e-14);
        assert!((r.ci95[1] - r.point - 1.96 * r.se).abs() < 1e-4 * r.se);
    }

    #[test]
    fn zero_denominator_is_undefined() {
        let a = cell("a", &[(1.0, &[], 1.0), (2.0, &[], 1.0)]);
        let b = cell("b", &[(1.0, &[], 1.0), (-1.0, &[], 1.0)]);
        assert!(matches!(
            estimate_ratio(&a, &b, &AdjustmentSpec::off(), "m"),
            Err(Error::UndefinedRatio(_))
        ));
    }

    #[test]
    fn mixed_contrast_is_labelled() {
        let sch = schema(0);
        let mk = |r| {
            let mut acc = CellAccumulator::new(CellKey::new("t", r), sch.clone());
            acc.push(&[1.0, 1.0, 1.0]);
            acc.push(&[2.0, 1.0, 1.0]);
            acc.finish()
        };
        let e = estimate_diff(&mk(true), &mk(false), &AdjustmentSpec::off(), "m").unwrap();
        assert_eq!(e.estimand, Estimand::MixedDiff);
    }

    /// Monte-Carlo oracle for the se of `μ̂`: draw many independent cells
    /// from a fixed cluster population and compare the empirical SD of `μ̂`
    /// with the average delta-method se.
    #[test]
    fn se_matches_resampling_oracle() {
        use rand::{Rng, SeedableRng};
        let population: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let s = 1.0 + (i % 7) as f64;
                (s * 2.0 + ((i * 31) % 13) as f64, s)
            })
            .collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let k = 400;
        let reps = 4000;
        let (mut mus, mut ses) = (Vec::new(), Vec::new());
        for _ in 0..reps {
            let mut acc = CellAccumulator::new(CellKey::new("a", true), schema(0));
            for _ in 0..k {
                let (y, s) = population[rng.random_range(0..population.len())];
                acc.push(&[y, s, s]);
            }
            let (mu, se) = estimate_mu(&acc.finish(), "m").unwrap();
            mus.push(mu);
            ses.push(se);
        }
        let mean = mus.iter().sum::<f64>() / reps as f64;
        let sd = (mus.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        let mean_se = ses.iter().sum::<f64>() / reps as f64;
        assert!((mean_se / sd - 1.0).abs() < 0.05, "se {mean_se} vs sd {sd}");
    }

    #[test]
    fn adjustment_never_increases_diff_variance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for trial in 0..200 {
            let mk = |w: &str, rng: &mut rand_chacha::ChaCha8Rng| {
                let mut acc = CellAccumulator::new(CellKey::new(w, true), schema(2));
                for _ in 0..(5 + trial % 20) {
                    let s = f64::from(rng.random_range(1..5u8));
                    let x0: f64 = rng.random::<f64>() * s;
                    let x1: f64 = rng.random::<f64>() * s;
                    let y = x0 * 2.0 - x1 + rng.random::<f64>() * s;
                    acc.push(&[y, x0, x1, s, s]);
                }
                acc.finish()
            };
            let a = mk("a", &mut rng);
            let b = mk("b", &mut rng);
            let raw = estimate_diff(&a, &b, &AdjustmentSpec::off(), "m").unwrap();
            let adj = estimate_diff(&a, &b, &AdjustmentSpec::on(["x0", "x1"]), "m").unwrap();
            assert!(adj.se * adj.se <= raw.se * raw.se + 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn scale_equivariance() {
        let rows = [(1.0, 2.0, 1.0), (4.0, 1.0, 2.0), (9.0, 5.0, 3.0), (2.0, 2.5, 1.0)];
        let rows_b = [(2.0, 1.0, 1.0), (3.0, 2.0, 2.0), (5.0, 4.0, 2.0)];
        let build = |w: &str, rows: &[(f64, f64, f64)], a: f64| {
            let mut acc = CellAccumulator::new(CellKey::new(w, true), schema(1));
            for &(y, x, s) in rows {
                acc.push(&[a * y, x, s, s]);
            }
            acc.finish()
        };
        let spec = AdjustmentSpec::on(["x0"]);
        let (a1, b1) = (build("a", &rows, 1.0), build("b", &rows_b, 1.0));
        let (a3, b3) = (build("a", &rows, 3.0), build("b", &rows_b, 3.0));
        let d1 = estimate_diff(&a1, &b1, &spec, "m").unwrap();
        let d3 = estimate_diff(&a3, &b3, &spec, "m").unwrap();
        assert!((d3.point - 3.0 * d1.point).abs() < 1e-12);
        assert!((d3.se - 3.0 * d1.se).abs() < 1e-12);
        let m1 = estimate_mean(&a1, "m").unwrap();
        let m3 = estimate_mean(&a3, "m").unwrap();
        assert!((m3.point - 3.0 * m1.point).abs() < 1e-12 && (m3.se - 3.0 * m1.se).abs() < 1e-12);
        let r1 = estimate_ratio(&a1, &b1, &spec, "m").unwrap();
        let r3 = estimate_ratio(&a3, &b3, &spec, "m").unwrap();
        assert!((r3.point - r1.point).abs() < 1e-12);
    }
}
