use std::fmt;
use std::time::Duration;

use hohtree::{ConcurrentTree, Faults, Key, Operation, RootMode, TreeConfig};
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

/// Offset between per-thread seeds (the 64-bit golden ratio).
const THREAD_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Keys prefilled by `successful-insert` at desk and full scale.
pub const DESK_INSERT_PREFILL: u64 = 100_000;
pub const FULL_INSERT_PREFILL: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Workload {
    /// Only lookups of uniform keys.
    Contains,
    /// Inserts and removes of uniform keys, half each.
    InsertDelete,
    /// Inserts of uniform 64-bit keys into a large prefilled tree.
    SuccessfulInsert,
    /// Inserts and removes plus a share of range counts.
    MixedCount,
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Workload::Contains => "contains",
            Workload::InsertDelete => "insert-delete",
            Workload::SuccessfulInsert => "successful-insert",
            Workload::MixedCount => "mixed-count",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum RootModeArg {
    #[default]
    Lockfree,
    Announce,
}

impl From<RootModeArg> for RootMode {
    fn from(m: RootModeArg) -> Self {
        match m {
            RootModeArg::Lockfree => RootMode::LockFree,
            RootModeArg::Announce => RootMode::Announce,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("key range is empty: min {0} > max {1}")]
    EmptyKeyRange(Key, Key),
    #[error("prefill probability {0} is outside [0, 1]")]
    Probability(f64),
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("count percentage {0} exceeds 100")]
    CountPercent(u32),
    #[error("rebuild constant {0} must be positive and finite")]
    RebuildK(f64),
}

#[derive(Clone, Debug)]
pub struct WorkloadConfig {
    pub workload: Workload,
    pub threads: usize,
    pub duration: Duration,
    pub key_min: Key,
    pub key_max: Key,
    pub prefill_probability: f64,
    pub seed: u64,
    pub runs: usize,
    pub rebuild_k: f64,
    pub root_mode: RootMode,
    /// Share of range counts in `mixed-count`.
    pub count_percent: u32,
    /// Keys prefilled by `successful-insert`.
    pub insert_prefill: u64,
    pub chaos_one_in: u32,
    pub instrument: bool,
    pub faults: Faults,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            workload: Workload::Contains,
            threads: 1,
            duration: Duration::from_secs(1),
            key_min: 1,
            key_max: 20_000,
            prefill_probability: 0.5,
            seed: 1,
            runs: 5,
            rebuild_k: 1.0,
            root_mode: RootMode::LockFree,
            count_percent: 20,
            insert_prefill: DESK_INSERT_PREFILL,
            chaos_one_in: 0,
            instrument: false,
            faults: Faults::default(),
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.key_min > self.key_max {
            return Err(ConfigError::EmptyKeyRange(self.key_min, self.key_max));
        }
        if !(0.0..=1.0).contains(&self.prefill_probability) {
            return Err(ConfigError::Probability(self.prefill_probability));
        }
        if self.threads == 0 {
            return Err(ConfigError::NotPositive("threads"));
        }
        if self.runs == 0 {
            return Err(ConfigError::NotPositive("runs"));
        }
        if self.count_percent > 100 {
            return Err(ConfigError::CountPercent(self.count_percent));
        }
        if !(self.rebuild_k > 0.0 && self.rebuild_k.is_finite()) {
            return Err(ConfigError::RebuildK(self.rebuild_k));
        }
        Ok(())
    }

    pub fn tree_config(&self) -> TreeConfig {
        TreeConfig {
            rebuild_k: self.rebuild_k,
            root_mode: self.root_mode,
            announce_slots: self.threads.max(1) + 1,
            instrument: self.instrument,
            chaos_one_in: self.chaos_one_in,
            faults: self.faults,
            announce_hook: None,
        }
    }

    /// Fills a fresh tree as the workload prescribes and returns the
    /// operations applied, in order.
    pub fn prefill(&self, tree: &ConcurrentTree) -> Vec<Operation> {
        let mut rng = seeded(self.seed ^ 0x5EED_F111, u64::MAX);
        let mut ops = Vec::new();
        match self.workload {
            Workload::SuccessfulInsert => {
                while (ops.len() as u64) < self.insert_prefill {
                    let k: Key = rng.random();
                    if tree.insert(k) {
                        ops.push(Operation::Insert(k));
                    }
                }
            }
            _ => {
                for k in self.key_min..=self.key_max {
                    if rng.random_bool(self.prefill_probability) {
                        tree.insert(k);
                        ops.push(Operation::Insert(k));
                    }
                }
            }
        }
        ops
    }

    pub fn generator(&self, run: usize, thread: usize) -> OpGenerator {
        OpGenerator {
            rng: seeded(self.seed.wrapping_add(run as u64), thread as u64),
            workload: self.workload,
            key_min: self.key_min,
            key_max: self.key_max,
            count_percent: self.count_percent,
        }
    }
}

/// `SplitMix64` seeded with `seed + thread * 0x9E3779B97F4A7C15`. Each draw
/// advances the state by the same constant and returns
/// `z ^ (z >> 31)` after the two multiply-xorshift rounds
/// `z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9`,
/// `z = (z ^ (z >> 27)) * 0x94D049BB133111EB`.
pub fn seeded(seed: u64, thread: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed.wrapping_add(thread.wrapping_mul(THREAD_SEED_STRIDE)))
}

/// Deterministic per-thread operation stream.
pub struct OpGenerator {
    rng: SplitMix64,
    workload: Workload,
    key_min: Key,
    key_max: Key,
    count_percent: u32,
}

impl OpGenerator {
    fn key(&mut self) -> Key {
        self.rng.random_range(self.key_min..=self.key_max)
    }

    pub fn next_op(&mut self) -> Operation {
        match self.workload {
            Workload::Contains => Operation::Contains(self.key()),
            Workload::InsertDelete => {
                if self.rng.random_bool(0.5) {
                    Operation::Insert(self.key())
                } else {
                    Operation::Remove(self.key())
                }
            }
            Workload::SuccessfulInsert => Operation::Insert(self.rng.random()),
            Workload::MixedCount => {
                let roll = self.rng.random_range(0..100);
                if roll < self.count_percent {
                    let (a, b) = (self.key(), self.key());
                    Operation::Count {
                        min: a.min(b),
                        max: a.max(b),
                    }
                } else if (roll - self.count_percent).is_multiple_of(2) {
                    Operation::Insert(self.key())
                } else {
                    Operation::Remove(self.key())
                }
            }
        }
    }
}

impl Iterator for OpGenerator {
    type Item = Operation;

    fn next(&mut self) -> Option<Operation> {
        Some(self.next_op())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn splitmix_matches_reference_recurrence() {
        fn reference(state: &mut u64) -> u64 {
            *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = *state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        }
        let mut s = 42u64.wrapping_add(3u64.wrapping_mul(THREAD_SEED_STRIDE));
        let mut rng = seeded(42, 3);
        for _ in 0..100 {
            assert_eq!(rng.next_u64(), reference(&mut s));
        }
    }

    #[test]
    fn streams_are_deterministic_per_thread() {
        let cfg = WorkloadConfig {
            workload: Workload::MixedCount,
            ..WorkloadConfig::default()
        };
        let a: Vec<_> = cfg.generator(0, 2).take(500).collect();
        let b: Vec<_> = cfg.generator(0, 2).take(500).collect();
        let c: Vec<_> = cfg.generator(0, 3).take(500).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn mixed_count_shares() {
        let cfg = WorkloadConfig {
            workload: Workload::MixedCount,
            count_percent: 20,
            ..WorkloadConfig::default()
        };
        let n = 100_000;
        let (mut ins, mut rem, mut cnt) = (0, 0, 0);
        for op in cfg.generator(0, 0).take(n) {
            match op {
                Operation::Insert(_) => ins += 1,
                Operation::Remove(_) => rem += 1,
                Operation::Count { min, max } => {
                    assert!(min <= max);
                    cnt += 1
                }
                Operation::Contains(_) => unreachable!(),
            }
        }
        let share = |x: usize| x as f64 / n as f64;
        assert!((share(ins) - 0.4).abs() < 0.01);
        assert!((share(rem) - 0.4).abs() < 0.01);
        assert!((share(cnt) - 0.2).abs() < 0.01);
    }

    #[test]
    fn keys_stay_in_range() {
        let cfg = WorkloadConfig {
            workload: Workload::InsertDelete,
            key_min: -3,
            key_max: 3,
            ..WorkloadConfig::default()
        };
        for op in cfg.generator(1, 1).take(1000) {
            match op {
                Operation::Insert(k) | Operation::Remove(k) => assert!((-3..=3).contains(&k)),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn prefill_follows_probability() {
        let cfg = WorkloadConfig {
            key_min: 1,
            key_max: 20_000,
            prefill_probability: 0.5,
            ..WorkloadConfig::default()
        };
        let tree = ConcurrentTree::new();
        let ops = cfg.prefill(&tree);
        assert_eq!(tree.len(), ops.len() as u64);
        assert!((ops.len() as f64 - 10_000.0).abs() < 500.0);
    }

    #[test]
    fn validation() {
        let ok = WorkloadConfig::default();
        assert!(ok.validate().is_ok());
        let bad = WorkloadConfig {
            key_min: 5,
            key_max: 4,
            ..ok.clone()
        };
        assert_eq!(bad.validate(), Err(ConfigError::EmptyKeyRange(5, 4)));
        let bad = WorkloadConfig {
            prefill_probability: 1.5,
            ..ok.clone()
        };
        assert!(bad.validate().is_err());
        let bad = WorkloadConfig { threads: 0, ..ok };
        assert!(bad.validate().is_err());
    }
}
