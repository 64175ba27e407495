use std::fmt;
use std::thread;

use hohtree::oracle::SeqTree;
use hohtree::{ConcurrentTree, Key, OpResult, Operation, StatsSnapshot, Timestamp};

use crate::workload::WorkloadConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LogEntry {
    pub timestamp: Timestamp,
    pub op: Operation,
    pub result: OpResult,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Divergence {
    DuplicateTimestamp(Timestamp),
    Result {
        index: usize,
        entry: LogEntry,
        expected: OpResult,
    },
    FinalKeys {
        expected: usize,
        walked: usize,
        counted: u64,
        first_difference: Option<Key>,
    },
    Protocol(String),
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Divergence::DuplicateTimestamp(ts) => write!(f, "timestamp {ts} assigned twice"),
            Divergence::Result {
                index,
                entry,
                expected,
            } => write!(
                f,
                "entry {index}: {} at {} returned {} but replay gives {expected}",
                entry.op, entry.timestamp, entry.result
            ),
            Divergence::FinalKeys {
                expected,
                walked,
                counted,
                first_difference,
            } => write!(
                f,
                "final key set differs: replay has {expected}, walk finds {walked}, \
                 full count says {counted}, first difference at {first_difference:?}"
            ),
            Divergence::Protocol(msg) => f.write_str(msg),
        }
    }
}

#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub operations: usize,
    pub stats: StatsSnapshot,
    pub divergence: Option<Divergence>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.divergence.is_none()
    }
}

/// Runs `ops_per_thread` operations from each of `cfg.threads` threads,
/// then replays the timestamp-ordered log through the sequential oracle and
/// compares every result and the final key set.
pub fn stress_replay_check(cfg: &WorkloadConfig, ops_per_thread: usize) -> VerifyReport {
    let tree = ConcurrentTree::with_config(cfg.tree_config());
    // Prefill runs before any worker starts, so it precedes every logged
    // operation and can be replayed first.
    let prefill = cfg.prefill(&tree);

    let logs: Vec<Vec<LogEntry>> = thread::scope(|s| {
        let workers: Vec<_> = (0..cfg.threads)
            .map(|t| {
                let tree = &tree;
                let ops = cfg.generator(0, t);
                s.spawn(move || {
                    ops.take(ops_per_thread)
                        .map(|op| {
                            let out = tree.execute(op).expect("generated ranges are valid");
                            LogEntry {
                                timestamp: out.timestamp,
                                op,
                                result: out.result,
                            }
                        })
                        .collect()
                })
            })
            .collect();
        workers.into_iter().map(|w| w.join().unwrap()).collect()
    });

    let mut log: Vec<LogEntry> = logs.into_iter().flatten().collect();
    let operations = log.len();
    let divergence = check(&tree, &prefill, &mut log);
    VerifyReport {
        operations,
        stats: tree.stats(),
        divergence,
    }
}

fn check(tree: &ConcurrentTree, prefill: &[Operation], log: &mut [LogEntry]) -> Option<Divergence> {
    log.sort_by_key(|e| e.timestamp);
    if let Some(w) = log.windows(2).find(|w| w[0].timestamp == w[1].timestamp) {
        return Some(Divergence::DuplicateTimestamp(w[0].timestamp));
    }

    let mut oracle = SeqTree::new();
    for &op in prefill {
        oracle.apply(op);
    }
    for (index, entry) in log.iter().enumerate() {
        let expected = oracle.apply(entry.op);
        if expected != entry.result {
            return Some(Divergence::Result {
                index,
                entry: *entry,
                expected,
            });
        }
    }

    let expected = oracle.keys();
    let walked = tree.audit().keys;
    let counted = tree.len();
    if walked != expected || counted != expected.len() as u64 {
        let first_difference = walked
            .iter()
            .zip(&expected)
            .find(|(a, b)| a != b)
            .map(|(a, _)| *a)
            .or_else(|| {
                walked
                    .get(expected.len())
                    .or(expected.get(walked.len()))
                    .copied()
            });
        return Some(Divergence::FinalKeys {
            expected: expected.len(),
            walked: walked.len(),
            counted,
            first_difference,
        });
    }

    let stats = tree.stats();
    if stats.queue_order_violations > 0 {
        return Some(Divergence::Protocol(format!(
            "{} queue timestamp order violations",
            stats.queue_order_violations
        )));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::Workload;

    #[test]
    fn single_thread_passes() {
        let cfg = WorkloadConfig {
            workload: Workload::MixedCount,
            key_max: 500,
            ..WorkloadConfig::default()
        };
        let r = stress_replay_check(&cfg, 1000);
        assert_eq!(r.operations, 1000);
        assert!(r.passed(), "{:?}", r.divergence);
    }

    #[test]
    fn detects_a_wrong_result() {
        let tree = ConcurrentTree::new();
        let mut log = vec![
            LogEntry {
                timestamp: Timestamp(1),
                op: Operation::Insert(3),
                result: OpResult::Bool(true),
            },
            LogEntry {
                timestamp: Timestamp(2),
                op: Operation::Contains(3),
                result: OpResult::Bool(false),
            },
        ];
        tree.insert(3);
        match check(&tree, &[], &mut log) {
            Some(Divergence::Result { index: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn detects_duplicate_timestamps() {
        let tree = ConcurrentTree::new();
        let e = LogEntry {
            timestamp: Timestamp(4),
            op: Operation::Contains(1),
            result: OpResult::Bool(false),
        };
        assert_eq!(
            check(&tree, &[], &mut [e, e]),
            Some(Divergence::DuplicateTimestamp(Timestamp(4)))
        );
    }

    #[test]
    fn detects_final_key_mismatch() {
        let tree = ConcurrentTree::new();
        tree.insert(8);
        let mut log = vec![];
        assert!(matches!(
            check(&tree, &[], &mut log),
            Some(Divergence::FinalKeys {
                expected: 0,
                walked: 1,
                ..
            })
        ));
    }
}
