//! Setup shared by the criterion benchmarks.

use std::thread;
use std::time::{Duration, Instant};

use hohtree::{ConcurrentTree, Key, Operation};
use hohtree_harness::{Workload, WorkloadConfig};

/// A tree holding `n` distinct random keys, and those keys in insertion order.
pub fn prefilled(n: u64, seed: u64) -> (ConcurrentTree, Vec<Key>) {
    let tree = ConcurrentTree::new();
    let cfg = WorkloadConfig {
        workload: Workload::SuccessfulInsert,
        insert_prefill: n,
        seed,
        ..WorkloadConfig::default()
    };
    let keys = cfg
        .prefill(&tree)
        .into_iter()
        .map(|op| match op {
            Operation::Insert(k) => k,
            other => unreachable!("prefill only inserts, got {other}"),
        })
        .collect();
    (tree, keys)
}

/// Wall time for `threads` threads to each run `ops_per_thread` operations of
/// `cfg`'s workload against `tree`.
pub fn timed_threads(
    tree: &ConcurrentTree,
    cfg: &WorkloadConfig,
    threads: usize,
    ops_per_thread: usize,
    round: usize,
) -> Duration {
    let started = Instant::now();
    thread::scope(|s| {
        for t in 0..threads {
            let ops = cfg.generator(round, t);
            s.spawn(move || {
                for op in ops.take(ops_per_thread) {
                    tree.execute(op).expect("generated ranges are valid");
                }
            });
        }
    });
    started.elapsed()
}
