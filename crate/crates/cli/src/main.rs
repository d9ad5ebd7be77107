use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use qnet_pdes::partition::{energy, worker_memory_loads, coefficient_of_variation, EnergyKind};
use qnet_pdes::runner::{self, load_config, prepare, PartitionMethod, RunConfig};
use qnet_pdes::sync::LookaheadMode;

#[derive(Parser)]
#[command(name = "qnet", version, about = "Parallel discrete-event simulation of quantum networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write its report.
    Run(RunArgs),
    /// Print the partition map a config produces, without simulating.
    Partition {
        config: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        partition: Option<PartitionMethod>,
    },
    /// Add speedup and efficiency against a sequential baseline report.
    Report {
        dir: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum Lookahead {
    Baseline,
    HalfClassical,
}

#[derive(clap::Args)]
struct RunArgs {
    config: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// blocks, caveman, anneal-p1, anneal-p2, anneal-p3 or explicit.
    #[arg(long)]
    partition: Option<PartitionMethod>,
    #[arg(long, value_enum)]
    lookahead: Option<Lookahead>,
    #[arg(long)]
    no_batching: bool,
    #[arg(long)]
    no_offload: bool,
    #[arg(long)]
    dup_factor: Option<u32>,
    /// Report directory.
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

fn apply(cfg: &mut RunConfig, args: &RunArgs) {
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = args.partition {
        cfg.partition.method = m;
    }
    if let Some(l) = args.lookahead {
        cfg.lookahead = match l {
            Lookahead::Baseline => LookaheadMode::MinQuantumChannel,
            Lookahead::HalfClassical => LookaheadMode::HalfClassical,
        };
    }
    if args.no_batching {
        cfg.features.batching = false;
    }
    if args.no_offload {
        cfg.features.offloading = false;
    }
    if let Some(k) = args.dup_factor {
        cfg.features.duplication_factor = k;
    }
}

fn load(path: &PathBuf) -> Result<RunConfig> {
    load_config(path).with_context(|| format!("loading {}", path.display()))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = load(&args.config)?;
    apply(&mut cfg, &args);
    cfg.validate()?;
    let out = runner::run(&cfg)?;
    runner::write_report(&out.report, &args.out)
        .with_context(|| format!("writing report to {}", args.out.display()))?;
    let r = &out.report;
    println!(
        "workers={} events={} windows={} delivered={} wall={:.3}s local_qsm={:.3} report={}",
        r.workers,
        r.executed_events,
        r.windows,
        r.metrics.delivered(),
        r.wall_time,
        r.local_fraction(),
        args.out.display()
    );
    Ok(())
}

fn cmd_partition(config: PathBuf, workers: Option<usize>, method: Option<PartitionMethod>) -> Result<()> {
    let mut cfg = load(&config)?;
    if let Some(w) = workers {
        cfg.workers = w;
    }
    if let Some(m) = method {
        cfg.partition.method = m;
    }
    let prep = prepare(&cfg)?;
    let loads = worker_memory_loads(&prep.spec, &prep.pmap);
    let summary = serde_json::json!({
        "pmap": prep.pmap,
        "energy": {
            "p1": energy(&prep.spec, &prep.pmap, EnergyKind::P1),
            "p2": energy(&prep.spec, &prep.pmap, EnergyKind::P2),
            "p3": energy(&prep.spec, &prep.pmap, EnergyKind::P3),
        },
        "memory_loads": loads,
        "cv": coefficient_of_variation(&loads),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_report(dir: PathBuf, baseline: PathBuf) -> Result<()> {
    let r = runner::report(&dir, &baseline)?;
    println!(
        "workers={} wall={:.3}s speedup={:.3} efficiency={:.3}",
        r.workers,
        r.wall_time,
        r.speedup.unwrap_or(f64::NAN),
        r.efficiency.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Partition {
            config,
            workers,
            partition,
        } => cmd_partition(config, workers, partition),
        Command::Report { dir, baseline } => cmd_report(dir, baseline),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
