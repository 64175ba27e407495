use std::collections::BTreeSet;

use hohtree::oracle::{replay, SeqTree};
use hohtree::{ConcurrentTree, OpResult, Operation, Timestamp, TreeConfig};
use proptest::prelude::*;

fn small_key() -> impl Strategy<Value = i64> {
    -40i64..40
}

fn op() -> impl Strategy<Value = Operation> {
    prop_oneof![
        3 => small_key().prop_map(Operation::Insert),
        2 => small_key().prop_map(Operation::Remove),
        1 => small_key().prop_map(Operation::Contains),
        1 => (small_key(), small_key())
            .prop_map(|(a, b)| Operation::Count { min: a.min(b), max: a.max(b) }),
    ]
}

fn oracle_from(ops: &[Operation]) -> SeqTree {
    let mut t = SeqTree::new();
    for &o in ops {
        t.apply(o);
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100_000))]

    #[test]
    fn oracle_count_matches_brute_force(
        inserts in prop::collection::vec(small_key(), 0..24),
        removes in prop::collection::vec(small_key(), 0..8),
        a in -45i64..45,
        b in -45i64..45,
    ) {
        let mut t = SeqTree::new();
        for &k in &inserts { t.insert(k); }
        for &k in &removes { t.remove(k); }
        let (min, max) = (a.min(b), a.max(b));
        let brute = t.keys().into_iter().filter(|k| min <= *k && *k <= max).count() as u64;
        prop_assert_eq!(t.count(min, max), brute);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn oracle_full_range_is_size_and_shape_holds(ops in prop::collection::vec(op(), 0..120)) {
        let t = oracle_from(&ops);
        prop_assert_eq!(t.count(i64::MIN, i64::MAX), t.len());
        prop_assert_eq!(t.keys().len() as u64, t.len());
        prop_assert!(t.is_well_formed());
    }

    #[test]
    fn oracle_tracks_btreeset(ops in prop::collection::vec(op(), 0..120)) {
        let mut t = SeqTree::new();
        let mut s = BTreeSet::new();
        for o in ops {
            let want = match o {
                Operation::Insert(k) => OpResult::Bool(s.insert(k)),
                Operation::Remove(k) => OpResult::Bool(s.remove(&k)),
                Operation::Contains(k) => OpResult::Bool(s.contains(&k)),
                Operation::Count { min, max } => OpResult::Count(s.range(min..=max).count() as u64),
            };
            prop_assert_eq!(t.apply(o), want);
        }
    }

    #[test]
    fn balanced_oracle_visit_bound(n in 1usize..3000, a in -10i64..3010, b in -10i64..3010) {
        let keys: Vec<i64> = (0..n as i64).collect();
        let t = SeqTree::balanced(&keys);
        let (min, max) = (a.min(b), a.max(b));
        let (c, visits) = t.count_traced(min, max);
        prop_assert_eq!(c, keys.iter().filter(|k| min <= **k && **k <= max).count() as u64);
        prop_assert!(visits <= 2 * t.height() + 2);
    }

    #[test]
    fn tree_replays_like_the_oracle(
        ops in prop::collection::vec(op(), 0..200),
        k in prop::sample::select(vec![0.5f64, 1.0, 2.0, 8.0]),
    ) {
        let tree = ConcurrentTree::with_config(TreeConfig { rebuild_k: k, ..TreeConfig::default() });
        let mut log = Vec::new();
        let mut got = Vec::new();
        for &o in &ops {
            let out = tree.execute(o).unwrap();
            log.push((out.timestamp, o));
            got.push(out.result);
        }
        let (want, keys) = replay(&log);
        prop_assert_eq!(got, want.into_iter().map(|(_, r)| r).collect::<Vec<_>>());
        let audit = tree.audit();
        prop_assert!(audit.is_consistent(), "{:?}", audit);
        prop_assert_eq!(&audit.keys, &keys);
        prop_assert_eq!(tree.len(), keys.len() as u64);
    }

    #[test]
    fn lock_free_timestamps_are_dense(ops in prop::collection::vec(op(), 1..100)) {
        let tree = ConcurrentTree::new();
        for (i, &o) in ops.iter().enumerate() {
            prop_assert_eq!(tree.execute(o).unwrap().timestamp, Timestamp(i as u64 + 1));
        }
    }

    #[test]
    fn scalar_ops_record_once_and_counts_stay_on_the_fork_cone(
        keys in prop::collection::btree_set(-500i64..500, 1..400),
        probe in -520i64..520,
        a in -520i64..520,
        b in -520i64..520,
    ) {
        let tree = ConcurrentTree::new();
        for &k in &keys { tree.insert(k); }
        let h = tree.height();
        for o in [Operation::Contains(probe), Operation::Insert(probe), Operation::Remove(probe)] {
            let (_, processed) = tree.execute_traced(o).unwrap();
            prop_assert_eq!(processed.len(), 1);
        }
        let (min, max) = (a.min(b), a.max(b));
        let (out, processed) = tree.execute_traced(Operation::Count { min, max }).unwrap();
        let sum: u64 = processed.iter().map(|(_, r)| match r {
            OpResult::Count(c) => *c,
            OpResult::Bool(_) => u64::MAX,
        }).sum();
        prop_assert_eq!(out.result, OpResult::Count(sum));
        // Fictive root plus at most two border paths below the fork.
        prop_assert!(processed.len() <= 2 * h + 2, "{} entries, height {}", processed.len(), h);
    }

    #[test]
    fn rebuilds_preserve_keys_and_balance(keys in prop::collection::vec(any::<i64>(), 1..3000)) {
        let tree = ConcurrentTree::new();
        let mut set = BTreeSet::new();
        for &k in &keys {
            prop_assert_eq!(tree.insert(k), set.insert(k));
        }
        let audit = tree.audit();
        prop_assert!(audit.is_consistent());
        prop_assert_eq!(audit.keys, set.iter().copied().collect::<Vec<_>>());
        let n = set.len() as f64;
        prop_assert!(audit.height as f64 <= 2.0 * (n + 1.0).log2() + 4.0);
    }
}
