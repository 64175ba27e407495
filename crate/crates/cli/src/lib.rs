//! Workload generation, timed benchmarks and the concurrent replay checker
//! behind the `hohtree` command.

pub mod bench;
pub mod csv_report;
pub mod verify;
pub mod workload;

pub use bench::{run_benchmark, run_once, BenchReport, RunDetail, RunResult};
pub use csv_report::{emit_csv, parse_csv, CsvRow};
pub use verify::{stress_replay_check, Divergence, LogEntry, VerifyReport};
pub use workload::{ConfigError, OpGenerator, RootModeArg, Workload, WorkloadConfig};
