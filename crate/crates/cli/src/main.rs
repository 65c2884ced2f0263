use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use setaudit_core::error::Error;
use setaudit_core::harness::report::REPORT_FILE;
use setaudit_core::harness::{emit_report, load_report, run_experiment, write_simulated_workspace};
use setaudit_core::oracle::{build_simulated_dataset, FileStore, SimulationConfig};
use setaudit_core::{AttackKind, ExperimentConfig, ExperimentReport, SimilarityMetric};

/// Set-level membership inference audits against black-box VLM oracles.
#[derive(Parser)]
#[command(name = "setaudit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one attack and write report.json, roc.csv and scores.csv.
    Attack(AttackArgs),
    /// Build a simulated world on disk.
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Inspect or clear a persistent response cache.
    #[command(subcommand)]
    Cache(CacheCommand),
    /// Work with emitted reports.
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Args)]
struct AttackArgs {
    /// shadow, ref-nonmember, ref-member, target-only or image-only
    kind: AttackKind,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Target set size.
    #[arg(long)]
    g: Option<usize>,
    /// Reference set size for the reference attacks.
    #[arg(long)]
    reference_g: Option<usize>,
    /// Sets per class.
    #[arg(long)]
    n_sets: Option<usize>,
    /// Shadow feature grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    temps: Option<Vec<f64>>,
    /// Query temperature of the reference attacks.
    #[arg(long)]
    temp: Option<f64>,
    #[arg(long)]
    t_low: Option<f64>,
    #[arg(long)]
    t_high: Option<f64>,
    /// Descriptions per image for image-only.
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    tau: Option<f64>,
    /// rouge2, embedding or embedding:<provider>
    #[arg(long)]
    metric: Option<SimilarityMetric>,
    #[arg(long)]
    het_ratio: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Keep all responses in memory instead of the configured cache dir.
    #[arg(long, conflicts_with = "cache_dir")]
    no_cache: bool,
}

#[derive(Subcommand)]
enum SimulateCommand {
    /// Write datasets, oracle registrations and experiment.toml.
    Build {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Attack named in the written config.
        #[arg(long, default_value = "ref-nonmember")]
        attack: AttackKind,
        /// Members and non-members respond alike.
        #[arg(long)]
        zero_margin: bool,
        /// Size of each target pool.
        #[arg(long)]
        target_pool: Option<usize>,
    },
}

#[derive(Subcommand)]
enum CacheCommand {
    Stats { dir: PathBuf },
    Purge { dir: PathBuf },
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Verify a report's aggregates and ROC against its records.
    Check { dir: PathBuf },
    /// Rebuild aggregates, ROC and CSVs from the per-set records.
    Recompute { dir: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Io { .. } | Error::Parse { .. } | Error::InvalidInput(_) => 2,
        Error::Transport { .. } | Error::Refusal { .. } => 3,
        Error::Invariant(_) | Error::TrainingDiverged { .. } => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("setaudit: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Attack(args) => attack(args),
        Command::Simulate(SimulateCommand::Build {
            out,
            seed,
            attack,
            zero_margin,
            target_pool,
        }) => {
            let mut sim = if zero_margin {
                SimulationConfig::zero_margin()
            } else {
                SimulationConfig::default()
            };
            if let Some(n) = target_pool {
                sim.pools.target_members = n;
                sim.pools.target_nonmembers = n;
            }
            let data = build_simulated_dataset(&sim, seed)?;
            let path = write_simulated_workspace(&out, &data, attack)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Cache(CacheCommand::Stats { dir }) => {
            let stats = FileStore::open(&dir)?.stats()?;
            println!("entries {} bytes {}", stats.entries, stats.bytes);
            Ok(())
        }
        Command::Cache(CacheCommand::Purge { dir }) => {
            let removed = FileStore::open(&dir)?.purge()?;
            println!("removed {removed}");
            Ok(())
        }
        Command::Report(ReportCommand::Check { dir }) => {
            summarize(&load_report(&dir)?);
            Ok(())
        }
        Command::Report(ReportCommand::Recompute { dir }) => {
            let report = read_unchecked(&dir)?.recomputed();
            emit_report(&report, &dir)?;
            summarize(&report);
            Ok(())
        }
    }
}

fn read_unchecked(dir: &Path) -> Result<ExperimentReport, Error> {
    let path = dir.join(REPORT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path,
        line: e.line(),
        message: e.to_string(),
    })
}

fn attack(args: AttackArgs) -> Result<(), Error> {
    let mut config = ExperimentConfig::load(&args.config)?;
    config.attack = args.kind;
    macro_rules! set {
        ($($arg:expr => $field:expr),* $(,)?) => {
            $(if let Some(v) = $arg { $field = v; })*
        };
    }
    set! {
        args.seed => config.seed,
        args.g => config.granularity.target,
        args.n_sets => config.n_sets,
        args.temps => config.temperatures.grid,
        args.temp => config.temperatures.single,
        args.t_low => config.temperatures.low,
        args.t_high => config.temperatures.high,
        args.k => config.image_only.k,
        args.metric => config.metric,
        args.het_ratio => config.heterogeneity_ratio,
        args.workers => config.workers,
    }
    if args.g.is_some() && args.kind == AttackKind::Shadow {
        config.granularity.shadow = config.granularity.target;
    }
    if args.reference_g.is_some() {
        config.granularity.reference = args.reference_g;
    }
    if args.tau.is_some() {
        config.tau = args.tau;
    }
    if args.cache_dir.is_some() {
        config.cache_dir = args.cache_dir;
    }
    if args.no_cache {
        config.cache_dir = None;
    }
    let out = args
        .out
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))?;
    config.validate()?;

    let report = run_experiment(&config)?;
    emit_report(&report, &out)?;
    summarize(&report);
    println!("report written to {}", out.display());
    Ok(())
}

fn summarize(report: &ExperimentReport) {
    let a = &report.aggregates;
    let fmt = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "{}: {} member / {} non-member sets ({} failed), AUC {}, accuracy {}, precision {}, recall {}",
        report.attack,
        a.member_sets,
        a.nonmember_sets,
        a.failed_sets,
        fmt(a.auc),
        fmt(a.accuracy),
        fmt(a.precision),
        fmt(a.recall),
    );
    let c = &report.counters;
    println!("queries {} (cache hits {}, misses {})", c.queries, c.hits, c.misses);
    for b in &report.buckets {
        println!("  {}: AUC {}", b.scope(), fmt(b.aggregates.auc));
    }
}
