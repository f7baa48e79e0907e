use std::collections::{BTreeSet, HashSet};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use netexp_core::clustering::io::{manifest_path, read_csv, save, ClusteringManifest};
use netexp_core::clustering::{balanced_partition, louvain, validate_date, Clustering, LouvainParams};
use netexp_core::estimation::io::{join, read_outcomes, write_outcomes, OutcomeValues};
use netexp_core::estimation::{analyze as run_analysis, AdjustmentSpec, AnalysisConfig, ContrastSpec, PolicyChoice};
use netexp_core::graph::{load_edge_list, purity, Graph};
use netexp_core::randomization::io::{read_assignments, read_trigger_log, read_unit_list, write_assignments, write_trigger_log};
use netexp_core::randomization::{
    assign_with, AssignmentService, ClusteringRef, ExperimentConfig, ExperimentHashers, SaltedHasher, TriggerEvent,
    TriggerLog, Universe,
};
use netexp_core::simulation::{
    aa_test, baseline_values, simulate as simulate_outcomes, tradeoff_curve, write_evaluation_csv, EvaluationResult,
    Population, PotentialOutcomeModel, PowerConfig,
};
use netexp_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::manifest::Recorder;
use crate::{Algo, AnalyzeArgs, AssignArgs, ClusterArgs, EvaluationArgs, PolicyArg, PowerArgs, SimulateArgs, Switch, TradeoffArgs};

fn create(path: &Path) -> Result<BufWriter<std::fs::File>> {
    let file = std::fs::File::create(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(rec: &mut Recorder, path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&rec.input(path)?)?)
}

fn read_graph(rec: &mut Recorder, path: &Path) -> Result<Graph> {
    let load = load_edge_list(rec.input(path)?.as_slice())?;
    if load.self_loops_dropped > 0 {
        eprintln!("warning: dropped {} self-loops from {}", load.self_loops_dropped, path.display());
    }
    Ok(load.graph)
}

/// Name and date come from the sidecar manifest when present, else the file stem.
fn read_clustering(rec: &mut Recorder, path: &Path) -> Result<Clustering> {
    let sidecar = manifest_path(path);
    let (name, date) = if sidecar.exists() {
        let m: ClusteringManifest = read_json(rec, &sidecar)?;
        (m.name, m.date)
    } else {
        (stem(path), "1970-01-01".to_string())
    };
    read_csv(rec.input(path)?.as_slice(), &name, &date)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "clustering".into())
}

/// `clusters.csv`, level 2 → `clusters.level2.csv`.
fn level_path(out: &Path, level: u32) -> PathBuf {
    let ext = out.extension().map_or("csv".into(), |e| e.to_string_lossy().into_owned());
    out.with_file_name(format!("{}.level{level}.{ext}", stem(out)))
}

pub fn cluster(mut args: ClusterArgs) -> Result<()> {
    let date = args
        .date
        .take()
        .unwrap_or_else(|| chrono::Utc::now().date_naive().to_string());
    validate_date(&date).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let name = args.name.take().unwrap_or_else(|| stem(&args.out));
    args.date = Some(date.clone());
    args.name = Some(name.clone());
    let mut rec = Recorder::new("cluster", &args, Some(args.seed))?;
    let graph = read_graph(&mut rec, &args.graph)?;
    match args.algo {
        Algo::Louvain => {
            let params = LouvainParams {
                resolution: args.resolution,
                iterations: args.iterations,
                seed: args.seed,
            };
            let clustering = louvain(&graph, params)?.with_label(name, date)?;
            save(&clustering, &args.out, "louvain", serde_json::to_value(params)?)?;
            println!("{}: {} clusters", args.out.display(), clustering.cluster_count());
            rec.output(&args.out);
            rec.output(&manifest_path(&args.out));
        }
        Algo::Bp => {
            let levels = args.levels.expect("clap requires --levels with --algo bp");
            for (clustering, level) in balanced_partition(&graph, levels, args.seed)?.into_iter().zip(1..) {
                let path = level_path(&args.out, level);
                let clustering = clustering.with_label(format!("{name}-level{level}"), date.clone())?;
                let params = serde_json::json!({ "levels": levels, "level": level, "seed": args.seed });
                save(&clustering, &path, "balanced-partition", params)?;
                println!("{}: {} clusters", path.display(), clustering.cluster_count());
                rec.output(&path);
                rec.output(&manifest_path(&path));
            }
        }
    }
    rec.finish(&args.out)?;
    Ok(())
}

pub fn assign(args: AssignArgs) -> Result<()> {
    let mut rec = Recorder::new("assign", &args, Some(args.seed))?;
    if let Some(rate) = args.trigger_rate.filter(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::InvalidParameter(format!("trigger rate must lie in [0, 1], got {rate}")));
    }
    let universe: Universe = read_json(&mut rec, &args.universe_config)?;
    let experiments = args
        .experiment_config
        .iter()
        .map(|p| read_json::<ExperimentConfig>(&mut rec, p))
        .collect::<Result<Vec<_>>>()?;
    let clustering = read_clustering(&mut rec, &args.clustering)?;
    let held = ClusteringRef {
        name: clustering.name().to_string(),
        date: clustering.date().to_string(),
    };
    if held != universe.clustering_ref {
        return Err(Error::Validation(format!(
            "universe `{}` uses clustering {}@{}, but {} holds {}@{}",
            universe.name,
            universe.clustering_ref.name,
            universe.clustering_ref.date,
            args.clustering.display(),
            held.name,
            held.date
        )));
    }
    let units = match &args.units {
        Some(path) => read_unit_list(rec.input(path)?.as_slice())?,
        None => clustering.iter().map(|(u, _)| u.clone()).collect(),
    };

    let mut service = AssignmentService::new();
    service.add_universe(universe.clone())?;
    for e in &experiments {
        service.add_experiment(e.clone())?;
    }
    let mut records = Vec::new();
    for e in experiments.iter().filter(|e| e.is_running()) {
        let hashers = ExperimentHashers::new(&universe, e);
        records.extend(units.iter().filter_map(|u| assign_with(&hashers, &universe, e, &clustering, u)));
    }
    service.add_clustering(clustering);

    let mut w = create(&args.out)?;
    write_assignments(&records, &mut w)?;
    w.flush()?;
    rec.output(&args.out);

    if let (Some(rate), Some(path)) = (args.trigger_rate, &args.triggers_out) {
        let exposure = SaltedHasher::new(&args.seed.to_string(), b"|trigger|");
        for r in &records {
            if exposure.unit_interval(format!("{}|{}", r.experiment, r.unit).as_bytes()) < rate {
                service.get_assignment(&universe.name, &r.experiment, &r.unit)?;
            }
        }
        let mut w = create(path)?;
        write_trigger_log(&service.trigger_log().snapshot(), &mut w)?;
        w.flush()?;
        rec.output(path);
    }
    rec.finish(&args.out)?;
    Ok(())
}

/// The contrasts file holds either a bare list of contrasts or a full config.
#[derive(Deserialize)]
#[serde(untagged)]
enum ContrastsFile {
    Config(AnalysisConfig),
    List(Vec<ContrastSpec>),
}

pub fn analyze(args: AnalyzeArgs) -> Result<()> {
    let mut rec = Recorder::new("analyze", &args, None)?;
    let mut config = match read_json::<ContrastsFile>(&mut rec, &args.contrasts)? {
        ContrastsFile::Config(c) => c,
        ContrastsFile::List(list) => AnalysisConfig::new(list),
    };
    let mut assignments = read_assignments(rec.input(&args.assignments)?.as_slice())?;
    let mut outcomes = read_outcomes(rec.input(&args.outcomes)?.as_slice())?;
    if outcomes.rows.is_empty() {
        return Err(Error::InsufficientData(format!("{} has no outcome rows", args.outcomes.display())));
    }
    let mut triggers = match &args.triggers {
        Some(path) => read_trigger_log(rec.input(path)?.as_slice())?,
        None => assignments
            .iter()
            .zip(0..)
            .map(|(a, event_index)| TriggerEvent {
                unit: a.unit.clone(),
                w: a.condition.clone(),
                r: a.cluster_randomized,
                event_index,
            })
            .collect(),
    };

    let names: BTreeSet<&str> = assignments.iter().map(|a| a.experiment.as_str()).collect();
    match &args.experiment {
        Some(name) => {
            if !names.contains(name.as_str()) {
                return Err(Error::Unknown {
                    kind: "experiment",
                    name: name.clone(),
                });
            }
            assignments.retain(|a| &a.experiment == name);
            let units: HashSet<_> = assignments.iter().map(|a| a.unit.clone()).collect();
            outcomes.rows.retain(|row| units.contains(&row.0));
            triggers.retain(|e| units.contains(&e.unit));
        }
        None if names.len() > 1 => {
            return Err(Error::InvalidParameter(format!(
                "{} holds experiments {}; choose one with --experiment",
                args.assignments.display(),
                names.into_iter().collect::<Vec<_>>().join(", ")
            )));
        }
        None => {}
    }

    match args.adjust {
        Some(Switch::On) if outcomes.schema.features.is_empty() => {
            return Err(Error::InvalidParameter(
                "--adjust on needs `pre:` columns in the outcome file".into(),
            ));
        }
        Some(Switch::On) => config.adjustment = AdjustmentSpec::on(outcomes.schema.features.clone()),
        Some(Switch::Off) => config.adjustment = AdjustmentSpec::off(),
        None => {}
    }
    if let Some(policy) = args.policy {
        config.policy = match policy {
            PolicyArg::Auto => PolicyChoice::Auto,
            PolicyArg::All => PolicyChoice::All,
            PolicyArg::TriggeredUnits => PolicyChoice::TriggeredUnits,
            PolicyArg::TriggeredClusters => PolicyChoice::TriggeredClusters,
        };
    }
    if let Some(reference) = &args.reference {
        config.reference = Some(reference.clone());
    }
    rec.resolved(&config)?;

    let (table, clustering) = join(outcomes, &assignments, &triggers)?;
    let report = run_analysis(&table, &clustering, &config)?;
    write_json(&args.out, &report)?;
    rec.output(&args.out);
    rec.finish(&args.out)?;
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let mut rec = Recorder::new("simulate", &args, Some(args.seed))?;
    let model: PotentialOutcomeModel = match &args.model {
        Some(path) => read_json(&mut rec, path)?,
        None => PotentialOutcomeModel::default(),
    };
    let assignments = read_assignments(rec.input(&args.assignments)?.as_slice())?;
    let clustering = Clustering::from_pairs(
        "assignments",
        "1970-01-01",
        assignments.iter().map(|a| (a.unit.clone(), a.cluster.clone())),
    )?;
    let mut population = Population::new(assignments.iter().map(|a| a.unit.clone()).collect())?.with_clusters(&clustering)?;
    if let Some(path) = &args.graph {
        population = population.with_graph(&read_graph(&mut rec, path)?)?;
    }
    let treated: Vec<bool> = assignments.iter().map(|a| a.condition == args.treatment).collect();
    if !treated.iter().any(|&t| t) {
        eprintln!("warning: no unit is assigned to `{}`", args.treatment);
    }
    let r: Vec<bool> = assignments.iter().map(|a| a.cluster_randomized).collect();
    let values = simulate_outcomes(&model, &population, &treated, args.seed)?;

    let mut w = create(&args.out)?;
    write_outcomes(&values.to_table(&population, &treated, &r)?, &mut w)?;
    w.flush()?;
    rec.output(&args.out);

    let log = TriggerLog::new();
    for (a, _) in assignments.iter().zip(&values.triggered).filter(|(_, &t)| t) {
        log.append(a.unit.clone(), a.condition.clone(), a.cluster_randomized);
    }
    let mut w = create(&args.triggers_out)?;
    write_trigger_log(&log.snapshot(), &mut w)?;
    w.flush()?;
    rec.output(&args.triggers_out);
    rec.finish(&args.out)?;
    Ok(())
}

fn power_config(rec: &mut Recorder, args: &EvaluationArgs, baseline: &OutcomeValues) -> Result<PowerConfig> {
    let mut config = match &args.config {
        Some(path) => read_json(rec, path)?,
        None => {
            let mut c = PowerConfig::default();
            if let Some(first) = baseline.schema.metrics.first() {
                c.metric = first.clone();
            }
            c
        }
    };
    if let Some(n) = args.replicates {
        config.replicates = n;
    }
    if let Some(p) = args.p {
        config.p = p;
    }
    if let Some(m) = &args.metric {
        config.metric = m.clone();
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    config.validate()?;
    rec.resolved(&config)?;
    Ok(config)
}

#[derive(Serialize)]
struct AaDiagnostics<'a> {
    label: &'a str,
    metric: &'a str,
    replicates: usize,
    failures: usize,
    failure_reasons: &'a [String],
    coverage: f64,
    median_se: f64,
    mean_ci_width: f64,
    z_alpha: f64,
    z_power: f64,
    mde: f64,
}

fn diagnostics_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".aa.json");
    PathBuf::from(s)
}

fn write_results(out: &Path, results: &[EvaluationResult]) -> Result<()> {
    let mut w = create(out)?;
    write_evaluation_csv(results, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn power(args: PowerArgs) -> Result<()> {
    let mut rec = Recorder::new("power", &args, args.eval.seed)?;
    let clustering = read_clustering(&mut rec, &args.clustering)?;
    let baseline = read_outcomes(rec.input(&args.baseline)?.as_slice())?;
    let purity = match &args.graph {
        Some(path) => purity(&read_graph(&mut rec, path)?, &clustering)?,
        None => f64::NAN,
    };
    let config = power_config(&mut rec, &args.eval, &baseline)?;
    let aa = aa_test(&clustering, &baseline, &config)?;
    let mde = config.mde_from_se(aa.median_se);
    let result = EvaluationResult {
        label: clustering.name().to_string(),
        purity,
        mde,
        coverage: Some(aa.coverage),
        mean_ci_width: aa.mean_ci_width,
    };
    write_results(&args.out, &[result])?;
    rec.output(&args.out);
    let diag_path = diagnostics_path(&args.out);
    write_json(
        &diag_path,
        &AaDiagnostics {
            label: clustering.name(),
            metric: &config.metric,
            replicates: aa.replicates,
            failures: aa.failures,
            failure_reasons: &aa.failure_reasons,
            coverage: aa.coverage,
            median_se: aa.median_se,
            mean_ci_width: aa.mean_ci_width,
            z_alpha: config.z_alpha(),
            z_power: config.z_power(),
            mde,
        },
    )?;
    rec.output(&diag_path);
    println!("{}: mde {mde:.6}, coverage {:.4}", clustering.name(), aa.coverage);
    rec.finish(&args.out)?;
    Ok(())
}

pub fn tradeoff(args: TradeoffArgs) -> Result<()> {
    let mut rec = Recorder::new("tradeoff", &args, args.eval.seed)?;
    let graph = read_graph(&mut rec, &args.graph)?;
    let clusterings = args
        .clusterings
        .iter()
        .map(|p| read_clustering(&mut rec, p))
        .collect::<Result<Vec<_>>>()?;
    let baseline = match &args.baseline {
        Some(path) => read_outcomes(rec.input(path)?.as_slice())?,
        None => baseline_values(
            &PotentialOutcomeModel::default(),
            &Population::from_graph(&graph),
            args.eval.seed.unwrap_or(0),
        )?,
    };
    let config = power_config(&mut rec, &args.eval, &baseline)?;
    let results = tradeoff_curve(&graph, &clusterings, &baseline, &config)?;
    write_results(&args.out, &results)?;
    rec.output(&args.out);
    rec.finish(&args.out)?;
    Ok(())
}
