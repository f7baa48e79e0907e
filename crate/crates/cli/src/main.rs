//! `netexp`: cluster a graph, assign units, analyse experiments and evaluate
//! clusterings by simulation.
//!
//! Exit codes: 0 success, 2 usage or invalid parameter, 3 configuration
//! conflict, 4 data integrity, 5 statistical abort.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use netexp_core::Error;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "netexp", version, about = "Cluster-randomized experiments on networks")]
struct Cli {
    /// Caps the number of worker threads.
    #[arg(long, env = "NETEXP_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Partition a graph into clusters.
    Cluster(ClusterArgs),
    /// Compute assignments for the units of one or more experiments.
    Assign(AssignArgs),
    /// Estimate treatment effects from assignments, outcomes and triggers.
    Analyze(AnalyzeArgs),
    /// Simulate outcomes for an assignment file under a potential-outcome model.
    Simulate(SimulateArgs),
    /// Minimal detectable effect of one clustering from AA replicates.
    Power(PowerArgs),
    /// Purity and MDE for several clusterings of one graph.
    Tradeoff(TradeoffArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Algo {
    Louvain,
    Bp,
}

#[derive(Args, Debug, Serialize)]
struct ClusterArgs {
    /// Edge list: `src<TAB>dst[<TAB>weight]` per line.
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_enum)]
    algo: Algo,
    /// Louvain resolution; smaller values give smaller clusters.
    #[arg(long, default_value_t = 1.0)]
    resolution: f64,
    /// Louvain move-and-aggregate rounds.
    #[arg(long, default_value_t = 3)]
    iterations: usize,
    /// Bisection depth; level k has 2^k clusters.
    #[arg(long, required_if_eq("algo", "bp"))]
    levels: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clustering name recorded in the sidecar manifest [default: output file stem].
    #[arg(long)]
    name: Option<String>,
    /// Clustering date (YYYY-MM-DD) [default: today, UTC].
    #[arg(long)]
    date: Option<String>,
    /// Clustering CSV. For `bp`, level k goes to `<stem>.level<k>.<ext>`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct AssignArgs {
    /// Universe JSON.
    #[arg(long, visible_alias = "universe")]
    universe_config: PathBuf,
    /// Experiment JSON; repeat for several experiments of the universe.
    #[arg(long, visible_alias = "experiment", required = true)]
    experiment_config: Vec<PathBuf>,
    /// Clustering CSV named by the universe.
    #[arg(long)]
    clustering: PathBuf,
    /// Unit ids, one per line [default: every unit of the clustering].
    #[arg(long)]
    units: Option<PathBuf>,
    /// Assignment CSV.
    #[arg(long)]
    out: PathBuf,
    /// Simulate exposure: each assigned unit fetches its assignment with
    /// this probability, producing a trigger log.
    #[arg(long, requires = "triggers_out")]
    trigger_rate: Option<f64>,
    /// Trigger log (JSON lines) written by the exposure simulation.
    #[arg(long, requires = "trigger_rate")]
    triggers_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum PolicyArg {
    Auto,
    All,
    TriggeredUnits,
    TriggeredClusters,
}

#[derive(Args, Debug, Serialize)]
struct AnalyzeArgs {
    #[arg(long)]
    assignments: PathBuf,
    /// Outcome CSV: `unit_id,metric:<m>...,pre:<f>...`.
    #[arg(long)]
    outcomes: PathBuf,
    /// Trigger log [default: every assigned unit counts as triggered].
    #[arg(long)]
    triggers: Option<PathBuf>,
    /// Analysis JSON: a list of contrasts or a full analysis config.
    #[arg(long)]
    contrasts: PathBuf,
    /// Regression adjustment on every pre-period feature [default: as configured].
    #[arg(long, value_enum)]
    adjust: Option<Switch>,
    /// Trigger policy [default: as configured, else auto].
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    /// Reference condition for the SUTVA tests.
    #[arg(long)]
    reference: Option<String>,
    /// Experiment to analyse when the assignment file holds several.
    #[arg(long)]
    experiment: Option<String>,
    /// JSON report.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    assignments: PathBuf,
    /// Potential-outcome model JSON [default: no effects].
    #[arg(long)]
    model: Option<PathBuf>,
    /// Edge list defining peers for GRAPH-mode spillover.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Condition label that receives the treatment.
    #[arg(long, default_value = "treatment")]
    treatment: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Outcome CSV.
    #[arg(long)]
    out: PathBuf,
    /// Trigger log of the units that were triggered.
    #[arg(long)]
    triggers_out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct EvaluationArgs {
    /// Power-analysis JSON; the flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Treatment share.
    #[arg(long)]
    p: Option<f64>,
    /// Metric to evaluate [default: the baseline's first metric].
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
struct PowerArgs {
    #[arg(long)]
    clustering: PathBuf,
    /// Baseline outcome CSV.
    #[arg(long)]
    baseline: PathBuf,
    /// Edge list for the purity column [default: purity left empty].
    #[arg(long)]
    graph: Option<PathBuf>,
    #[command(flatten)]
    eval: EvaluationArgs,
    /// Evaluation CSV; AA diagnostics go to `<out>.aa.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct TradeoffArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    clusterings: Vec<PathBuf>,
    /// Baseline outcome CSV [default: iid draws from the default model].
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[command(flatten)]
    eval: EvaluationArgs,
    /// Evaluation CSV, sorted by purity.
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidParameter(_) => 2,
        Error::Conflict(_) | Error::RunningExperiment { .. } => 3,
        Error::Aborted(_) => 5,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads.filter(|&n| n > 0) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }
    let result = match cli.command {
        Command::Cluster(a) => commands::cluster(a),
        Command::Assign(a) => commands::assign(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Power(a) => commands::power(a),
        Command::Tradeoff(a) => commands::tradeoff(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if let Error::Aborted(diag) = &err {
                if let Ok(json) = serde_json::to_string_pretty(diag) {
                    eprintln!("{json}");
                }
            }
            ExitCode::from(exit_code(&err))
        }
    }
}
