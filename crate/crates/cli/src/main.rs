use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use hohtree::{Faults, Key};
use hohtree_harness::workload::{DESK_INSERT_PREFILL, FULL_INSERT_PREFILL};
use hohtree_harness::{
    emit_csv, run_benchmark, stress_replay_check, RootModeArg, Workload, WorkloadConfig,
};

#[derive(Parser)]
#[command(
    name = "hohtree",
    version,
    about = "Benchmark and verify the hohtree concurrent BST"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Timed throughput runs; prints a summary and optionally writes CSV.
    Bench(BenchArgs),
    /// Concurrent run checked against a sequential replay in timestamp order.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct TreeArgs {
    /// Subtree rebuild constant.
    #[arg(long, default_value_t = 1.0)]
    rebuild_k: f64,
    #[arg(long, value_enum, default_value_t = RootModeArg::Lockfree)]
    root_mode: RootModeArg,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    workload: Workload,
    /// Thread counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    threads: Vec<usize>,
    #[arg(long)]
    duration_secs: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    key_min: Option<Key>,
    #[arg(long, allow_hyphen_values = true)]
    key_max: Option<Key>,
    #[arg(long, default_value_t = 0.5)]
    prefill_prob: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    runs: Option<usize>,
    /// Share of range counts in the mixed-count workload.
    #[arg(long, default_value_t = 20)]
    count_percent: u32,
    #[command(flatten)]
    tree: TreeArgs,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Full-size parameters: keys 1..=2e6, 10 s runs, 1e6 prefilled keys
    /// for successful-insert. Explicit flags still win.
    #[arg(long)]
    full_scale: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    TsModGuard,
    PopIf,
    InsertOnce,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = Workload::MixedCount)]
    workload: Workload,
    #[arg(long, default_value_t = 8)]
    threads: usize,
    #[arg(long, default_value_t = 50_000)]
    ops_per_thread: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Check this many consecutive seeds starting at --seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0)]
    key_min: Key,
    #[arg(long, allow_hyphen_values = true, default_value_t = 4095)]
    key_max: Key,
    #[arg(long, default_value_t = 0.5)]
    prefill_prob: f64,
    #[arg(long, default_value_t = 10)]
    count_percent: u32,
    /// Yield with probability 1/N at helping points (0 disables).
    #[arg(long, default_value_t = 64)]
    chaos_one_in: u32,
    #[command(flatten)]
    tree: TreeArgs,
    /// Break one exactly-once mechanism on purpose.
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<Fault>,
}

fn bench(args: BenchArgs) -> anyhow::Result<bool> {
    let mut reports = Vec::new();
    for &threads in &args.threads {
        let (default_max, default_secs, default_runs, insert_prefill) = if args.full_scale {
            (2_000_000, 10.0, 5, FULL_INSERT_PREFILL)
        } else {
            (20_000, 1.0, 5, DESK_INSERT_PREFILL)
        };
        let cfg = WorkloadConfig {
            workload: args.workload,
            threads,
            duration: Duration::from_secs_f64(args.duration_secs.unwrap_or(default_secs)),
            key_min: args.key_min.unwrap_or(1),
            key_max: args.key_max.unwrap_or(default_max),
            prefill_probability: args.prefill_prob,
            seed: args.seed,
            runs: args.runs.unwrap_or(default_runs),
            rebuild_k: args.tree.rebuild_k,
            root_mode: args.tree.root_mode.into(),
            count_percent: args.count_percent,
            insert_prefill,
            ..WorkloadConfig::default()
        };
        cfg.validate()?;
        let report = run_benchmark(&cfg);
        println!(
            "{} threads={} mean={:.2} ops/s over {} runs",
            report.workload,
            report.threads,
            report.mean_throughput(),
            report.runs.len()
        );
        reports.push(report);
    }
    if let Some(path) = &args.csv {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        emit_csv(&reports, BufWriter::new(file))?;
    }
    Ok(true)
}

fn verify(args: VerifyArgs) -> anyhow::Result<bool> {
    let faults = match args.inject_fault {
        None => Faults::default(),
        Some(Fault::TsModGuard) => Faults {
            skip_ts_mod_guard: true,
            ..Faults::default()
        },
        Some(Fault::PopIf) => Faults {
            unchecked_pop: true,
            ..Faults::default()
        },
        Some(Fault::InsertOnce) => Faults {
            overwrite_processed: true,
            ..Faults::default()
        },
    };
    let mut all_passed = true;
    for seed in args.seed..args.seed + args.seeds {
        let cfg = WorkloadConfig {
            workload: args.workload,
            threads: args.threads,
            key_min: args.key_min,
            key_max: args.key_max,
            prefill_probability: args.prefill_prob,
            seed,
            runs: 1,
            rebuild_k: args.tree.rebuild_k,
            root_mode: args.tree.root_mode.into(),
            count_percent: args.count_percent,
            chaos_one_in: args.chaos_one_in,
            instrument: true,
            faults,
            ..WorkloadConfig::default()
        };
        cfg.validate()?;
        let report = stress_replay_check(&cfg, args.ops_per_thread);
        match &report.divergence {
            None => println!(
                "PASS seed={seed} ops={} queue_transitions={}",
                report.operations, report.stats.queue_transitions
            ),
            Some(d) => {
                all_passed = false;
                println!("FAIL seed={seed} ops={}: {d}", report.operations);
            }
        }
    }
    Ok(all_passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Bench(a) => bench(a),
        Command::Verify(a) => verify(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
