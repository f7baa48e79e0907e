//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Every threshold below is a pinned constant. The binary exits non-zero when
//! any criterion fails. `ACCEPTANCE_ONLY=3,5` runs a subset.

use std::collections::{BTreeMap, HashMap};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use netexp_core::clustering::{balanced_partition, louvain, size_distribution, ClusterId, Clustering, LouvainParams};
use netexp_core::estimation::{
    cells_for_policy, delta_bias, estimate_diff, estimate_mu, estimate_ratio, AdjustmentSpec, CellAccumulator,
    CellKey, ConditionCell, Schema, TriggerPolicy,
};
use netexp_core::graph::{purity, UnitId};
use netexp_core::randomization::{
    assign_with, hash64, ClusteringRef, Condition, ExperimentConfig, ExperimentHashers, ExperimentStatus,
    SegmentSet, Universe,
};
use netexp_core::simulation::{
    aa_test, baseline_values, bias_study, ground_truth, planted_partition, policy_selection_study, power_law_sizes,
    simulate, tradeoff_curve, BiasConfig, PotentialOutcomeModel, Population, PowerConfig, SpilloverMode,
    TruthConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn uid(s: impl Into<String>) -> UnitId {
    UnitId::new(s).unwrap()
}

fn clustering_of(sizes: &[usize], name: &str) -> Clustering {
    let mut pairs = Vec::new();
    for (c, &s) in sizes.iter().enumerate() {
        for j in 0..s {
            pairs.push((uid(format!("c{c}u{j}")), ClusterId::new(format!("c{c}")).unwrap()));
        }
    }
    Clustering::from_pairs(name, "2024-01-01", pairs).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

// ---------------------------------------------------------------- 1

const C1_TOL: f64 = 1e-12;
const C1_RUNTIME: Duration = Duration::from_secs(1);

/// Every mixed assignment of the clusters with its design multiplicity.
/// A cluster is cluster-randomized with probability 1/2 and then takes one
/// `W`, or is unit-randomized with an arbitrary `W` vector; all `W` draws are
/// fair coins. Relative to one size-`s` unit-randomized vector, each
/// cluster-randomized option is `2^(s−1)` times as likely.
fn mixed_assignments(sizes: &[usize]) -> Vec<(Vec<bool>, Vec<bool>, usize)> {
    let mut out = vec![(Vec::new(), Vec::new(), 1)];
    for &s in sizes {
        let mut next = Vec::new();
        for (w, r, m) in &out {
            for whole in [false, true] {
                let mut w2 = w.clone();
                let mut r2 = r.clone();
                w2.extend(std::iter::repeat_n(whole, s));
                r2.extend(std::iter::repeat_n(true, s));
                next.push((w2, r2, m << (s - 1)));
            }
            for mask in 0u32..1 << s {
                let mut w2 = w.clone();
                let mut r2 = r.clone();
                w2.extend((0..s).map(|j| mask >> j & 1 == 1));
                r2.extend(std::iter::repeat_n(false, s));
                next.push((w2, r2, *m));
            }
        }
        out = next;
    }
    out
}

struct EnumerationResult {
    worst: f64,
    notes: Vec<String>,
}

fn enumeration_case(sizes: &[usize], equal_sizes: bool) -> EnumerationResult {
    let clustering = clustering_of(sizes, "enum");
    let population = Population::from_clustering(&clustering);
    let model = PotentialOutcomeModel {
        mode: SpilloverMode::Cluster,
        baseline_mean: 5.0,
        baseline_sd: 2.0,
        direct_effect: 1.25,
        spillover_effect: 0.75,
        trigger_prob: 1.0,
        ..Default::default()
    };
    let n = population.len();
    let cluster_of: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &s)| std::iter::repeat_n(c, s)).collect();
    let keys = [
        CellKey::new("treatment", true),
        CellKey::new("control", true),
        CellKey::new("treatment", false),
        CellKey::new("control", false),
    ];
    // Oracle sums of Ȳ and S̄ per cell, from raw outcomes.
    let mut oracle: HashMap<CellKey, (f64, f64, usize)> = HashMap::new();
    let mut averaged: HashMap<CellKey, CellAccumulator> = HashMap::new();
    let mut mu_hat_sum: HashMap<CellKey, (f64, usize)> = HashMap::new();
    let schema = Arc::new(Schema::new(vec!["y".into()], vec!["y".into()]).unwrap());
    for (w, r, mult) in mixed_assignments(sizes) {
        let v = simulate(&model, &population, &w, 11).unwrap();
        // Oracle aggregation: clusters for r = 1, units for r = 0.
        let mut obs: BTreeMap<(bool, bool, usize), (f64, f64)> = BTreeMap::new();
        for i in 0..n {
            let key = if r[i] { (w[i], true, cluster_of[i]) } else { (w[i], false, 1000 + i) };
            let e = obs.entry(key).or_insert((0.0, 0.0));
            e.0 += v.y[i];
            e.1 += 1.0;
        }
        let mut per_cell: HashMap<CellKey, (f64, f64, usize)> = HashMap::new();
        for (&(wi, ri, _), &(y, s)) in &obs {
            let k = CellKey::new(if wi { "treatment" } else { "control" }, ri);
            let e = per_cell.entry(k).or_insert((0.0, 0.0, 0));
            e.0 += y;
            e.1 += s;
            e.2 += 1;
        }
        for (k, (y, s, count)) in per_cell {
            let e = oracle.entry(k).or_insert((0.0, 0.0, 0));
            e.0 += mult as f64 * y / count as f64;
            e.1 += mult as f64 * s / count as f64;
            e.2 += mult;
        }
        // Implementation.
        let table = v.to_table(&population, &w, &r).unwrap();
        for cell in cells_for_policy(&table, &clustering, TriggerPolicy::All).unwrap() {
            let acc = averaged
                .entry(cell.key().clone())
                .or_insert_with(|| CellAccumulator::new(cell.key().clone(), schema.clone()));
            for _ in 0..mult {
                acc.push(cell.means().as_slice());
            }
            // The estimator needs k ≥ 2 for its se; its point is Ȳ/S̄ either way.
            let mu = match estimate_mu(&cell, "y") {
                Ok((mu, _)) => mu,
                Err(_) => cell.means()[cell.y_index(0)] / cell.means()[cell.s_index()],
            };
            let e = mu_hat_sum.entry(cell.key().clone()).or_insert((0.0, 0));
            e.0 += mult as f64 * mu;
            e.1 += mult;
        }
    }
    let averaged: HashMap<CellKey, ConditionCell> = averaged.into_iter().map(|(k, a)| (k, a.finish())).collect();
    let mu_oracle = |k: &CellKey| {
        let (y, s, count) = oracle[k];
        (y / count as f64) / (s / count as f64)
    };
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();
    let mut track = |label: &str, got: f64, want: f64| {
        let err = (got - want).abs() / (1.0 + want.abs());
        if err > worst {
            worst = err;
        }
        if err > C1_TOL {
            notes.push(format!("{label}: {got} vs {want}"));
        }
    };
    for k in &keys {
        let cell = &averaged[k];
        let (y, s, count) = oracle[k];
        track(&format!("E[Ybar] {k}"), cell.means()[cell.y_index(0)], y / count as f64);
        track(&format!("E[Sbar] {k}"), cell.means()[cell.s_index()], s / count as f64);
        track(&format!("mu {k}"), estimate_mu(cell, "y").unwrap().0, mu_oracle(k));
        if equal_sizes {
            let (sum, c) = mu_hat_sum[k];
            track(&format!("avg mu_hat {k}"), sum / c as f64, mu_oracle(k));
        }
    }
    let off = AdjustmentSpec::off();
    let (t1, c1, t0) = (&averaged[&keys[0]], &averaged[&keys[1]], &averaged[&keys[2]]);
    track(
        "diff r=1",
        estimate_diff(t1, c1, &off, "y").unwrap().point,
        mu_oracle(&keys[0]) - mu_oracle(&keys[1]),
    );
    track(
        "ratio",
        estimate_ratio(t1, c1, &off, "y").unwrap().point,
        mu_oracle(&keys[0]) / mu_oracle(&keys[1]) - 1.0,
    );
    track(
        "mixed diff",
        estimate_diff(t1, t0, &off, "y").unwrap().point,
        mu_oracle(&keys[0]) - mu_oracle(&keys[2]),
    );
    // Partial interference holds, so μ(w, 1) is the all-w population mean
    // and the cluster contrast is the model's τ_cluster(p) = τ.
    let all = simulate(&model, &population, &vec![true; n], 11).unwrap();
    let none = simulate(&model, &population, &vec![false; n], 11).unwrap();
    track("mu(1,1) vs all-treated mean", mu_oracle(&keys[0]), mean(&all.y));
    track("mu(0,1) vs all-control mean", mu_oracle(&keys[1]), mean(&none.y));
    let truth = ground_truth(
        &model,
        &population,
        &clustering,
        &TruthConfig {
            p: 0.5,
            seed: 11,
            ..Default::default()
        },
    )
    .unwrap();
    track("tau_cluster(p)", truth.tau_cluster_p, mu_oracle(&keys[0]) - mu_oracle(&keys[1]));
    EnumerationResult { worst, notes }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let unequal = enumeration_case(&[1, 2, 3, 4], false);
    let equal = enumeration_case(&[3, 3, 3, 3], true);
    let elapsed = start.elapsed();
    let worst = unequal.worst.max(equal.worst);
    let mut detail = format!(
        "max relative error {worst:.2e} (tol {C1_TOL:e}) over 10 and 12 units, runtime {:.2}s",
        elapsed.as_secs_f64()
    );
    for n in unequal.notes.iter().chain(&equal.notes) {
        detail.push_str(&format!("; {n}"));
    }
    check(worst <= C1_TOL && elapsed < C1_RUNTIME, detail)
}

// ---------------------------------------------------------------- 2

const C2_CLUSTERS: usize = 400;
const C2_SE_REPLICATES: usize = 5000;
const C2_COVERAGE_REPLICATES: usize = 10_000;
const C2_SE_TOL: f64 = 0.05;
const C2_COVERAGE: (f64, f64) = (0.94, 0.96);
const C2_RUNTIME: Duration = Duration::from_secs(120);

/// `(clustering, population)` with a per-cluster baseline shift.
fn grouped_population(sizes: &[usize], name: &str) -> (Clustering, Population) {
    let c = clustering_of(sizes, name);
    let groups: Vec<usize> = sizes.iter().enumerate().flat_map(|(g, &s)| std::iter::repeat_n(g, s)).collect();
    let p = Population::from_clustering(&c).with_groups(&groups).unwrap();
    (c, p)
}

struct Calibration {
    se_ratio: f64,
    coverage: f64,
    failures: usize,
}

fn calibrate(sizes: &[usize], name: &str) -> netexp_core::Result<Calibration> {
    let (clustering, population) = grouped_population(sizes, name);
    let model = PotentialOutcomeModel {
        mode: SpilloverMode::Cluster,
        baseline_mean: 10.0,
        baseline_sd: 3.0,
        group_sd: 2.0,
        ..Default::default()
    };
    let baseline = baseline_values(&model, &population, 21)?;
    let run = |replicates, seed| {
        aa_test(
            &clustering,
            &baseline,
            &PowerConfig {
                replicates,
                seed,
                ..Default::default()
            },
        )
    };
    let a = run(C2_SE_REPLICATES, 1)?;
    let b = run(C2_COVERAGE_REPLICATES, 2)?;
    Ok(Calibration {
        se_ratio: mean(&a.ses) / sd(&a.points),
        coverage: b.coverage,
        failures: a.failures + b.failures,
    })
}

fn size_cv(sizes: &[usize]) -> f64 {
    let s: Vec<f64> = sizes.iter().map(|&x| x as f64).collect();
    sd(&s) / mean(&s)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    // Sizes 1..=20, spread evenly by a fixed hash.
    let sizes: Vec<usize> = (0..C2_CLUSTERS as u64).map(|c| 1 + (hash64(&c.to_le_bytes()) % 20) as usize).collect();
    let result = calibrate(&sizes, "imbalanced");
    let elapsed = start.elapsed();
    // Reported only: heavy-tailed sizes leave the delta method short of its
    // asymptote at 400 clusters.
    let mut heavy = power_law_sizes(C2_CLUSTERS * 200, 2.0, 1, 60, 5).unwrap();
    heavy.truncate(C2_CLUSTERS);
    let heavy_note = match calibrate(&heavy, "heavy") {
        Ok(h) => format!(
            "heavy-tailed sizes 1..{} (cv {:.2}), not gated: se ratio {:.4}, coverage {:.4}",
            heavy.iter().max().unwrap(),
            size_cv(&heavy),
            h.se_ratio,
            h.coverage
        ),
        Err(e) => format!("heavy-tailed run failed: {e}"),
    };
    match result {
        Ok(r) => check(
            (r.se_ratio - 1.0).abs() <= C2_SE_TOL
                && (C2_COVERAGE.0..=C2_COVERAGE.1).contains(&r.coverage)
                && elapsed < C2_RUNTIME,
            format!(
                "{C2_CLUSTERS} clusters sized {}..{} (cv {:.2}): mean se / empirical sd = {:.4} (tol ±{C2_SE_TOL}), \
                 coverage {:.4} over {C2_COVERAGE_REPLICATES} replicates (bounds {C2_COVERAGE:?}), failures {}, \
                 runtime {:.1}s; {heavy_note}",
                sizes.iter().min().unwrap(),
                sizes.iter().max().unwrap(),
                size_cv(&sizes),
                r.se_ratio,
                r.coverage,
                r.failures,
                elapsed.as_secs_f64()
            ),
        ),
        Err(e) => check(false, format!("AA run failed: {e}")),
    }
}

// ---------------------------------------------------------------- 3

const C3_ZERO: f64 = 1e-12;
const C3_SCALING_TOL: f64 = 0.10;
const C3_BASE_CLUSTERS: usize = 30;
const C3_FACTORS: [usize; 4] = [1, 2, 4, 8];

fn single_cell(sizes: &[usize], y: impl Fn(usize, usize) -> f64) -> ConditionCell {
    let clustering = clustering_of(sizes, "bias");
    let schema = Arc::new(Schema::new(vec!["y".into()], vec![]).unwrap());
    let mut rows = Vec::new();
    for (c, &s) in sizes.iter().enumerate() {
        for j in 0..s {
            rows.push(netexp_core::estimation::UnitOutcomeRow {
                unit: uid(format!("c{c}u{j}")),
                y: vec![y(c, j)],
                x: vec![],
                triggered: true,
                w: "treatment".into(),
                r: true,
            });
        }
    }
    let table = netexp_core::estimation::OutcomeTable::new(schema, rows).unwrap();
    cells_for_policy(&table, &clustering, TriggerPolicy::All).unwrap().remove(0)
}

fn criterion_3() -> Outcome {
    let outcome = |c: usize, j: usize| 1.0 + ((c * 7 + j * 13) % 11) as f64 * 0.5 + (c % 3) as f64;
    let equal = single_cell(&[4; 50], outcome);
    let zero = delta_bias(&equal, "y").unwrap();
    // Base population of unequal clusters, replicated m times.
    let base: Vec<usize> = (0..C3_BASE_CLUSTERS).map(|c| 1 + (c * 5) % 9).collect();
    let base_outcome = |c: usize, j: usize| {
        let b = c % C3_BASE_CLUSTERS;
        2.0 + (b % 4) as f64 * 1.5 + ((b * 3 + j) % 5) as f64 * 0.25 + base[b] as f64 * 0.3
    };
    let mut diags = Vec::new();
    for m in C3_FACTORS {
        let sizes: Vec<usize> = (0..m).flat_map(|_| base.iter().copied()).collect();
        diags.push(delta_bias(&single_cell(&sizes, base_outcome), "y").unwrap());
    }
    let scaled: Vec<f64> = C3_FACTORS.iter().zip(&diags).map(|(&m, d)| d * m as f64 / diags[0]).collect();
    let scaling_ok = diags[0] != 0.0 && scaled.iter().all(|s| (s - 1.0).abs() <= C3_SCALING_TOL);
    check(
        zero.abs() < C3_ZERO && scaling_ok,
        format!(
            "equal sizes: bias diag {zero:e} (tol {C3_ZERO:e}); m·diag(m)/diag(1) for m={C3_FACTORS:?}: {} (tol ±{C3_SCALING_TOL})",
            scaled.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 4

const C4_RHO: f64 = 0.9;
const C4_CLUSTERS: usize = 2000;
const C4_MAX_WIDTH_RATIO: f64 = 0.6;
const C4_REPLICATES: usize = 200;
const C4_RUNTIME: Duration = Duration::from_secs(60);

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let clustering = clustering_of(&[2; C4_CLUSTERS], "pairs");
    let population = Population::from_clustering(&clustering);
    let model = PotentialOutcomeModel {
        mode: SpilloverMode::Cluster,
        baseline_sd: 2.0,
        pre_period_corr: C4_RHO,
        ..Default::default()
    };
    let baseline = baseline_values(&model, &population, 4).unwrap();
    let run = |adjustment: AdjustmentSpec| {
        aa_test(
            &clustering,
            &baseline,
            &PowerConfig {
                replicates: C4_REPLICATES,
                seed: 40,
                adjustment,
                ..Default::default()
            },
        )
    };
    let (off, on) = (run(AdjustmentSpec::off()), run(AdjustmentSpec::on(["y"])));
    let elapsed = start.elapsed();
    match (off, on) {
        (Ok(off), Ok(on)) => {
            let ratio = on.mean_ci_width / off.mean_ci_width;
            check(
                ratio <= C4_MAX_WIDTH_RATIO && elapsed < C4_RUNTIME,
                format!(
                    "rho {C4_RHO}, k = {C4_CLUSTERS}: adjusted/unadjusted mean CI width {ratio:.4} \
                     (bound {C4_MAX_WIDTH_RATIO}, theory {:.4}), adjusted coverage {:.3}, runtime {:.1}s",
                    (1.0 - C4_RHO * C4_RHO).sqrt(),
                    on.coverage,
                    elapsed.as_secs_f64()
                ),
            )
        }
        (a, b) => check(false, format!("AA run failed: {:?} / {:?}", a.err(), b.err())),
    }
}

// ---------------------------------------------------------------- 5

const C5_CLUSTERS: usize = 1000;
const C5_REPLICATES: usize = 2000;
const C5_MIN_POWER: f64 = 0.80;
const C5_FPR: (f64, f64) = (0.035, 0.065);
const C5_TAU_RATIO: f64 = 0.6;
const C5_TAU_RATIO_TOL: f64 = 0.05;
const C5_RUNTIME: Duration = Duration::from_secs(120);

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let clustering = clustering_of(&[2; C5_CLUSTERS], "pairs");
    let population = Population::from_clustering(&clustering);
    let delta = 0.9;
    let effect = PotentialOutcomeModel {
        mode: SpilloverMode::Cluster,
        direct_effect: delta,
        spillover_effect: delta * (1.0 - C5_TAU_RATIO) / C5_TAU_RATIO,
        ..Default::default()
    };
    let null = PotentialOutcomeModel {
        mode: SpilloverMode::Cluster,
        ..Default::default()
    };
    let config = BiasConfig {
        replicates: C5_REPLICATES,
        mixed_cluster_fraction: 0.5,
        seed: 55,
        ..Default::default()
    };
    let truth = ground_truth(
        &effect,
        &population,
        &clustering,
        &TruthConfig {
            seed: 55,
            ..Default::default()
        },
    );
    let power = bias_study(&effect, &population, &clustering, &config);
    let fpr = bias_study(&null, &population, &clustering, &config);
    let elapsed = start.elapsed();
    match (truth, power, fpr) {
        (Ok(t), Ok(p), Ok(f)) => {
            let ratio = t.tau_unit_p / t.tau;
            check(
                (ratio - C5_TAU_RATIO).abs() <= C5_TAU_RATIO_TOL
                    && p.mixed_rejection_rate >= C5_MIN_POWER
                    && (C5_FPR.0..=C5_FPR.1).contains(&f.mixed_rejection_rate)
                    && elapsed < C5_RUNTIME,
                format!(
                    "tau_unit/tau = {ratio:.3}; mixed contrast power {:.4} (min {C5_MIN_POWER}), \
                     null rejection {:.4} (bounds {C5_FPR:?}) over {C5_REPLICATES} replicates, runtime {:.1}s",
                    p.mixed_rejection_rate,
                    f.mixed_rejection_rate,
                    elapsed.as_secs_f64()
                ),
            )
        }
        (a, b, c) => check(false, format!("run failed: {:?} {:?} {:?}", a.err(), b.err(), c.err())),
    }
}

// ---------------------------------------------------------------- 6

const C6_MIN_PURITY: f64 = 0.9;
const C6_REPLICATES: usize = 2000;
const C6_BIAS_FACTOR: f64 = 0.5;

fn criterion_6() -> Outcome {
    let planted = planted_partition(&[25; 200], 8.0, 0.05, 6).unwrap();
    let clustering = planted.truth();
    let purity = purity(&planted.graph, &clustering).unwrap();
    let population = Population::from_graph(&planted.graph);
    let model = PotentialOutcomeModel {
        mode: SpilloverMode::Graph,
        direct_effect: 1.0,
        spillover_effect: 1.0,
        ..Default::default()
    };
    let report = bias_study(
        &model,
        &population,
        &clustering,
        &BiasConfig {
            replicates: C6_REPLICATES,
            seed: 66,
            ..Default::default()
        },
    );
    match report {
        Ok(r) => check(
            purity >= C6_MIN_PURITY && r.abs_bias_cluster() < C6_BIAS_FACTOR * r.abs_bias_unit(),
            format!(
                "purity {purity:.4} (min {C6_MIN_PURITY}); tau {:.4}, |bias_cluster| {:.4} vs |bias_unit| {:.4} \
                 (need < {C6_BIAS_FACTOR}×) over {C6_REPLICATES} replicates",
                r.tau,
                r.abs_bias_cluster(),
                r.abs_bias_unit()
            ),
        ),
        Err(e) => check(false, format!("bias study failed: {e}")),
    }
}

// ---------------------------------------------------------------- 7

const C7_CLUSTERS: usize = 1000;
const C7_CLUSTER_SIZE: usize = 4;
const C7_VIOLATION_REPLICATES: usize = 500;
const C7_NULL_REPLICATES: usize = 2000;
const C7_MIN_DETECTION: f64 = 0.95;
const C7_NULL_UNITS: (f64, f64) = (0.93, 0.97);

fn criterion_7() -> Outcome {
    let clustering = clustering_of(&[C7_CLUSTER_SIZE; C7_CLUSTERS], "gate");
    let population = Population::from_clustering(&clustering);
    let base = PotentialOutcomeModel {
        mode: SpilloverMode::Cluster,
        trigger_prob: 0.5,
        ..Default::default()
    };
    let triggering = PotentialOutcomeModel {
        trigger_spillover: 0.3,
        ..base.clone()
    };
    let conditional = PotentialOutcomeModel {
        direct_effect: 0.5,
        spillover_effect: 0.6,
        ..base.clone()
    };
    let cfg = |replicates: usize, seed: u64| BiasConfig {
        replicates,
        mixed_cluster_fraction: 1.0,
        seed,
        ..Default::default()
    };
    let runs = [
        policy_selection_study(&triggering, &population, &clustering, &cfg(C7_VIOLATION_REPLICATES, 71)),
        policy_selection_study(&conditional, &population, &clustering, &cfg(C7_VIOLATION_REPLICATES, 72)),
        policy_selection_study(&base, &population, &clustering, &cfg(C7_NULL_REPLICATES, 73)),
    ];
    match runs {
        [Ok(t), Ok(c), Ok(n)] => check(
            t.triggered_clusters_rate() >= C7_MIN_DETECTION
                && c.triggered_clusters_rate() >= C7_MIN_DETECTION
                && (C7_NULL_UNITS.0..=C7_NULL_UNITS.1).contains(&n.triggered_units_rate()),
            format!(
                "TRIGGERED_CLUSTERS under triggering violation {:.4}, conditional violation {:.4} \
                 (min {C7_MIN_DETECTION}); TRIGGERED_UNITS under null {:.4} (bounds {C7_NULL_UNITS:?})",
                t.triggered_clusters_rate(),
                c.triggered_clusters_rate(),
                n.triggered_units_rate()
            ),
        ),
        [a, b, c] => check(false, format!("run failed: {:?} {:?} {:?}", a.err(), b.err(), c.err())),
    }
}

// ---------------------------------------------------------------- 8

const C8_VERTICES: usize = 50_000;
const C8_MIN_DECADES: f64 = 2.0;
const C8_MAX_BP_RATIO: f64 = 1.25;
const C8_MDE_TOL: f64 = 0.20;
const C8_REPLICATES: usize = 1000;
const C8_RUNTIME: Duration = Duration::from_secs(300);

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let sizes = power_law_sizes(C8_VERTICES, 2.0, 10, 5000, 8).unwrap();
    let planted = planted_partition(&sizes, 10.0, 0.1, 8).unwrap();
    let graph = &planted.graph;
    let lv = louvain(
        graph,
        LouvainParams {
            resolution: 1.0,
            iterations: 3,
            seed: 8,
        },
    )
    .unwrap()
    .with_label("louvain", "2024-01-01")
    .unwrap();
    let decades = size_distribution(&lv).unwrap().decades_spanned();
    let target = (lv.cluster_count() as f64).log2().round().clamp(1.0, 14.0) as u32;
    let bp_levels = balanced_partition(graph, target, 8).unwrap();
    let bp = bp_levels.last().unwrap().clone().with_label("bp", "2024-01-01").unwrap();
    let bp_ratio = bp.max_cluster_size() as f64 / bp.min_cluster_size() as f64;
    let population = Population::from_graph(graph);
    let baseline = baseline_values(&PotentialOutcomeModel::default(), &population, 80).unwrap();
    let curve = tradeoff_curve(
        graph,
        &[lv.clone(), bp.clone()],
        &baseline,
        &PowerConfig {
            replicates: C8_REPLICATES,
            seed: 81,
            ..Default::default()
        },
    );
    let elapsed = start.elapsed();
    match curve {
        Ok(rows) => {
            let find = |l: &str| rows.iter().find(|r| r.label == l).unwrap();
            let (l, b) = (find("louvain"), find("bp"));
            let mde_rel = l.mde / b.mde - 1.0;
            check(
                decades >= C8_MIN_DECADES
                    && bp_ratio <= C8_MAX_BP_RATIO
                    && l.purity > b.purity
                    && mde_rel.abs() <= C8_MDE_TOL
                    && elapsed < C8_RUNTIME,
                format!(
                    "{} vertices, {} edges; Louvain {} clusters spanning {decades:.2} decades (min {C8_MIN_DECADES}), \
                     BP {} clusters max/min {bp_ratio:.3} (max {C8_MAX_BP_RATIO}); purity {:.4} vs {:.4}; \
                     MDE {:.5} vs {:.5} (rel {mde_rel:+.3}, tol ±{C8_MDE_TOL}); runtime {:.1}s",
                    graph.vertex_count(),
                    graph.edge_count(),
                    lv.cluster_count(),
                    bp.cluster_count(),
                    l.purity,
                    b.purity,
                    l.mde,
                    b.mde,
                    elapsed.as_secs_f64()
                ),
            )
        }
        Err(e) => check(false, format!("tradeoff failed: {e}")),
    }
}

// ---------------------------------------------------------------- 9

const C9_UNITS: usize = 1_000_000;
const C9_SIGMAS: f64 = 3.0;
const C9_CHILD_ENV: &str = "NETEXP_ACCEPTANCE_DIGEST";
const C9_SEGMENT_SHARE: f64 = 0.3;
const C9_CLUSTER_FRACTION: f64 = 0.4;
const C9_TREATMENT_WEIGHT: f64 = 0.3;

fn c9_setup() -> (Universe, ExperimentConfig, Clustering) {
    let universe = Universe::new(
        "acceptance-universe",
        ClusteringRef {
            name: "c9".into(),
            date: "2024-01-01".into(),
        },
    )
    .unwrap();
    let held = (universe.num_segments as f64 * C9_SEGMENT_SHARE) as u32;
    let experiment = ExperimentConfig {
        name: "acceptance-experiment".into(),
        universe: universe.name.clone(),
        segments: (0..held).collect::<SegmentSet>(),
        cluster_fraction: C9_CLUSTER_FRACTION,
        conditions: vec![
            Condition {
                label: "treatment".into(),
                weight: C9_TREATMENT_WEIGHT,
            },
            Condition {
                label: "control".into(),
                weight: 1.0 - C9_TREATMENT_WEIGHT,
            },
        ],
        status: ExperimentStatus::Running,
    };
    let mut pairs = Vec::with_capacity(C9_UNITS);
    let mut c = 0usize;
    while pairs.len() < C9_UNITS {
        let s = (1 + (hash64(&c.to_le_bytes()) % 9) as usize).min(C9_UNITS - pairs.len());
        for j in 0..s {
            pairs.push((uid(format!("k{c}-{j}")), ClusterId::new(format!("k{c}")).unwrap()));
        }
        c += 1;
    }
    (universe, experiment, Clustering::from_pairs("c9", "2024-01-01", pairs).unwrap())
}

/// FNV digest of every assignment record in unit order.
fn c9_digest(universe: &Universe, experiment: &ExperimentConfig, clustering: &Clustering) -> u64 {
    let hashers = ExperimentHashers::new(universe, experiment);
    let mut text = Vec::with_capacity(32 * C9_UNITS);
    for (unit, _) in clustering.iter() {
        if let Some(r) = assign_with(&hashers, universe, experiment, clustering, unit) {
            text.extend_from_slice(
                format!("{},{},{},{},{}\n", r.unit, r.cluster, r.segment, u8::from(r.cluster_randomized), r.condition)
                    .as_bytes(),
            );
        }
    }
    hash64(&text)
}

fn within(count: usize, trials: usize, p: f64) -> (bool, f64) {
    let expected = trials as f64 * p;
    let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
    let z = (count as f64 - expected) / sigma;
    (z.abs() <= C9_SIGMAS, z)
}

fn criterion_9() -> Outcome {
    let (universe, experiment, clustering) = c9_setup();
    let hashers = ExperimentHashers::new(&universe, &experiment);
    let mut cluster_w: HashMap<&ClusterId, (bool, &str)> = HashMap::new();
    let mut incoherent = 0usize;
    let (mut unit_r0, mut unit_r0_treated) = (0usize, 0usize);
    let mut clusters_seen: HashMap<&ClusterId, bool> = HashMap::new();
    for (unit, cluster) in clustering.iter() {
        let rec = assign_with(&hashers, &universe, &experiment, &clustering, unit);
        clusters_seen.entry(cluster).or_insert(rec.is_some());
        let Some(rec) = rec else { continue };
        if rec.cluster_randomized {
            let prev = cluster_w.entry(cluster).or_insert((true, ""));
            if prev.1.is_empty() {
                prev.1 = if rec.condition == "treatment" { "treatment" } else { "control" };
            } else if prev.1 != rec.condition {
                incoherent += 1;
            }
        } else {
            unit_r0 += 1;
            unit_r0_treated += usize::from(rec.condition == "treatment");
        }
    }
    let allocated = clusters_seen.values().filter(|&&a| a).count();
    let (seg_ok, seg_z) = within(allocated, clusters_seen.len(), C9_SEGMENT_SHARE);
    let held: Vec<u32> = experiment.segments.iter().collect();
    let mixed = held.iter().filter(|&&s| hashers.cluster_randomized(&experiment, s)).count();
    let (mix_ok, mix_z) = within(mixed, held.len(), C9_CLUSTER_FRACTION);
    let clusters_treated = cluster_w.values().filter(|v| v.1 == "treatment").count();
    let (cw_ok, cw_z) = within(clusters_treated, cluster_w.len(), C9_TREATMENT_WEIGHT);
    let (uw_ok, uw_z) = within(unit_r0_treated, unit_r0, C9_TREATMENT_WEIGHT);
    // Same digest in this process, a repeat, and a fresh process.
    let digest = c9_digest(&universe, &experiment, &clustering);
    let repeat = c9_digest(&universe, &experiment, &clustering);
    let child = Command::new(std::env::current_exe().unwrap())
        .env(C9_CHILD_ENV, "1")
        .output()
        .ok()
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .and_then(|s| s.trim().parse::<u64>().ok());
    let deterministic = digest == repeat && child == Some(digest);
    check(
        incoherent == 0 && seg_ok && mix_ok && cw_ok && uw_ok && deterministic,
        format!(
            "{} units, {} clusters: incoherent R=1 units {incoherent}; z-scores segment {seg_z:+.2}, mix {mix_z:+.2}, \
             cluster W {cw_z:+.2}, unit W {uw_z:+.2} (|z| ≤ {C9_SIGMAS}); digest {digest:016x}, \
             child process {}",
            clustering.unit_count(),
            clusters_seen.len(),
            child.map_or("unavailable".into(), |c| format!("{c:016x}"))
        ),
    )
}

fn main() -> ExitCode {
    if std::env::var_os(C9_CHILD_ENV).is_some() {
        let (u, e, c) = c9_setup();
        println!("{}", c9_digest(&u, &e, &c));
        return ExitCode::SUCCESS;
    }
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "enumeration oracle", criterion_1),
        (2, "delta-method calibration", criterion_2),
        (3, "bias formula", criterion_3),
        (4, "regression-adjustment precision", criterion_4),
        (5, "mixed-design interference detection", criterion_5),
        (6, "bias ordering", criterion_6),
        (7, "SUTVA gate behaviour", criterion_7),
        (8, "clustering findings", criterion_8),
        (9, "randomization correctness", criterion_9),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let outcome = run();
        failed += usize::from(!outcome.pass);
        println!(
            "{} criterion {id} ({name}): {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
