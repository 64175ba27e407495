use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Barrier;
use std::thread;
use std::time::Instant;

use hohtree::ConcurrentTree;

use crate::workload::{Workload, WorkloadConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunResult {
    pub run: usize,
    pub ops_total: u64,
    pub throughput: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub workload: Workload,
    pub threads: usize,
    pub runs: Vec<RunResult>,
}

impl BenchReport {
    pub fn mean_throughput(&self) -> f64 {
        if self.runs.is_empty() {
            return 0.0;
        }
        self.runs.iter().map(|r| r.throughput).sum::<f64>() / self.runs.len() as f64
    }
}

/// Outcome of one timed run, with enough detail to cross-check the tree.
#[derive(Clone, Copy, Debug)]
pub struct RunDetail {
    pub ops_total: u64,
    pub successful_inserts: u64,
    pub successful_removes: u64,
    pub prefilled: u64,
    pub final_size: u64,
    pub seconds: f64,
}

/// One timed run on a fresh tree.
pub fn run_once(cfg: &WorkloadConfig, run: usize) -> RunDetail {
    let tree = ConcurrentTree::with_config(cfg.tree_config());
    let prefilled = cfg.prefill(&tree).len() as u64;
    let stop = AtomicBool::new(false);
    let start = Barrier::new(cfg.threads + 1);

    let (counts, seconds) = thread::scope(|s| {
        let workers: Vec<_> = (0..cfg.threads)
            .map(|t| {
                let (tree, stop, start) = (&tree, &stop, &start);
                let mut ops = cfg.generator(run, t);
                s.spawn(move || {
                    let (mut total, mut ins, mut rem) = (0u64, 0u64, 0u64);
                    start.wait();
                    while !stop.load(Ordering::Relaxed) {
                        match ops.next_op() {
                            hohtree::Operation::Insert(k) => ins += u64::from(tree.insert(k)),
                            hohtree::Operation::Remove(k) => rem += u64::from(tree.remove(k)),
                            op => {
                                tree.execute(op).expect("generated ranges are valid");
                            }
                        }
                        total += 1;
                    }
                    (total, ins, rem)
                })
            })
            .collect();
        start.wait();
        let began = Instant::now();
        thread::sleep(cfg.duration);
        stop.store(true, Ordering::Relaxed);
        let counts: Vec<_> = workers.into_iter().map(|w| w.join().unwrap()).collect();
        (counts, began.elapsed().as_secs_f64())
    });

    RunDetail {
        ops_total: counts.iter().map(|c| c.0).sum(),
        successful_inserts: counts.iter().map(|c| c.1).sum(),
        successful_removes: counts.iter().map(|c| c.2).sum(),
        prefilled,
        final_size: tree.len(),
        seconds,
    }
}

/// Runs `cfg.runs` timed runs and reports per-run throughput.
pub fn run_benchmark(cfg: &WorkloadConfig) -> BenchReport {
    let runs = (0..cfg.runs)
        .map(|run| {
            let d = run_once(cfg, run);
            RunResult {
                run,
                ops_total: d.ops_total,
                throughput: d.ops_total as f64 / d.seconds,
            }
        })
        .collect();
    BenchReport {
        workload: cfg.workload,
        threads: cfg.threads,
        runs,
    }
}
