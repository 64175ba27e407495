//! Subtree rebuilding: once a subtree has absorbed more modifications than
//! a constant times its size at creation, it is replaced by a perfectly
//! balanced copy.

use std::sync::atomic::Ordering;
use std::sync::Arc;

use crossbeam_epoch::{Guard, Owned, Shared};

use crate::descriptor::{Descriptor, Reclaim, SlotKey, SlotKind, SlotValue};
use crate::engine::{ConcurrentTree, Parent};
use crate::model::{IdSource, InnerNode, Key, Node, NodeState, Side, Timestamp};

/// True when applying one more modification would push the node past the
/// rebuild threshold.
pub fn needs_rebuild(state: &NodeState, init_sz: u64, k: f64) -> bool {
    (state.mod_cnt + 1) as f64 > k * init_sz as f64
}

/// Builds a perfectly balanced subtree over sorted `keys` covering
/// `interval`. Inner nodes are stamped `ts`.
pub(crate) fn build_ideal(
    keys: &[Key],
    ts: Timestamp,
    interval: (i128, i128),
    ids: &IdSource,
) -> Owned<Node> {
    match keys.len() {
        0 => Owned::new(Node::Empty),
        1 => Owned::new(Node::Leaf(keys[0])),
        n => {
            let mid = n / 2;
            let split = keys[mid];
            let id = ids.new_node_id();
            let left = build_ideal(&keys[..mid], ts, (interval.0, split as i128), ids);
            let right = build_ideal(&keys[mid..], ts, (split as i128, interval.1), ids);
            Owned::new(Node::Inner(InnerNode::new(
                id, split, interval, left, right, n as u64, ts,
            )))
        }
    }
}

/// Keys under `node`, in order.
pub(crate) fn collect_keys(node: Shared<'_, Node>, guard: &Guard) -> Vec<Key> {
    let mut out = Vec::new();
    let mut stack = vec![node];
    while let Some(n) = stack.pop() {
        // SAFETY: links are never null; nodes are epoch-protected.
        match unsafe { n.deref() } {
            Node::Empty => {}
            Node::Leaf(k) => out.push(*k),
            Node::Inner(inner) => {
                stack.push(inner.right.load(Ordering::Acquire, guard));
                stack.push(inner.left.load(Ordering::Acquire, guard));
            }
        }
    }
    out
}

fn subtree_nodes(root: Shared<'_, Node>, guard: &Guard) -> Vec<*mut Node> {
    let mut out = Vec::new();
    let mut stack = vec![root];
    while let Some(n) = stack.pop() {
        if n.is_null() {
            continue;
        }
        // SAFETY: the caller owns or retires the whole subtree.
        if let Node::Inner(inner) = unsafe { n.deref() } {
            stack.push(inner.left.load(Ordering::Relaxed, guard));
            stack.push(inner.right.load(Ordering::Relaxed, guard));
        }
        out.push(n.as_raw() as *mut Node);
    }
    out
}

/// Frees a subtree nobody else can see.
///
/// # Safety
/// No other thread may hold a reference into the subtree.
pub(crate) unsafe fn free_unpublished(root: Shared<'_, Node>) {
    let guard = crossbeam_epoch::unprotected();
    for p in subtree_nodes(root, guard) {
        drop(Box::from_raw(p));
    }
}

struct Retired(Vec<*mut Node>);

// SAFETY: the nodes are unreachable; only the reclaiming thread touches them.
unsafe impl Send for Retired {}

/// Returns a closure freeing a just-unlinked subtree.
///
/// # Safety
/// The subtree must be unlinked, and the closure run exactly once, after
/// every thread that could still reach the subtree has unpinned.
pub(crate) unsafe fn subtree_reclaimer(root: Shared<'_, Node>, guard: &Guard) -> Reclaim {
    let nodes = Retired(subtree_nodes(root, guard));
    Box::new(move || {
        let nodes = nodes;
        for p in nodes.0 {
            drop(Box::from_raw(p));
        }
    })
}

impl ConcurrentTree {
    /// Replaces `v`'s child on `side` (currently `old`) by a balanced copy.
    pub(crate) fn rebuild_child(
        &self,
        d: &Arc<Descriptor>,
        v: Parent<'_>,
        side: Side,
        old: Shared<'_, Node>,
        guard: &Guard,
    ) {
        let key = SlotKey {
            parent: v.id(),
            side,
            kind: SlotKind::Rebuild,
        };
        let slot = match d.slots.get(key) {
            Some(s) => s,
            None => {
                let bound = d.timestamp().prev();
                self.finish_pending(old, bound, guard);
                let keys = collect_keys(old, guard);
                let fresh =
                    build_ideal(&keys, bound, v.child_interval(side), &self.ids).into_shared(guard);
                let (winner, won) = d.slots.insert_once(
                    key,
                    SlotValue {
                        expected: old.as_raw(),
                        replacement: fresh.as_raw(),
                    },
                );
                if won {
                    self.stats.rebuilds.fetch_add(1, Ordering::Relaxed);
                    self.stats
                        .rebuilt_keys
                        .fetch_add(keys.len() as u64, Ordering::Relaxed);
                } else {
                    // SAFETY: never published.
                    unsafe { free_unpublished(fresh) };
                }
                winner
            }
        };
        self.swap_link(d, v.link(side), slot, guard);
    }

    /// Completes, top-down, every operation with timestamp at most `bound`
    /// still pending anywhere in the subtree.
    pub(crate) fn finish_pending(&self, node: Shared<'_, Node>, bound: Timestamp, guard: &Guard) {
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            // SAFETY: links are never null; nodes are epoch-protected.
            if let Node::Inner(u) = unsafe { n.deref() } {
                self.execute_until_timestamp(Parent::Inner(u), bound, guard);
                stack.push(u.right.load(Ordering::Acquire, guard));
                stack.push(u.left.load(Ordering::Acquire, guard));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{KEY_HI, KEY_LO};

    #[test]
    fn threshold() {
        let s = |m| NodeState {
            size: 4,
            mod_cnt: m,
            ts_mod: Timestamp(1),
        };
        assert!(!needs_rebuild(&s(3), 4, 1.0));
        assert!(needs_rebuild(&s(4), 4, 1.0));
        assert!(!needs_rebuild(&s(7), 4, 2.0));
        assert!(needs_rebuild(&s(8), 4, 2.0));
    }

    fn height(n: &Node, g: &Guard) -> usize {
        match n {
            Node::Inner(i) => {
                let l = unsafe { i.left.load(Ordering::Relaxed, g).deref() };
                let r = unsafe { i.right.load(Ordering::Relaxed, g).deref() };
                1 + height(l, g).max(height(r, g))
            }
            _ => 0,
        }
    }

    #[test]
    fn ideal_build_is_balanced_and_ordered() {
        let ids = IdSource::new();
        let g = crossbeam_epoch::pin();
        for n in [0usize, 1, 2, 3, 7, 8, 100, 1000] {
            let keys: Vec<Key> = (0..n as i64).map(|k| k * 3).collect();
            let t = build_ideal(&keys, Timestamp(9), (KEY_LO, KEY_HI), &ids).into_shared(&g);
            assert_eq!(collect_keys(t, &g), keys);
            let h = height(unsafe { t.deref() }, &g);
            let bound = if n <= 1 {
                0
            } else {
                (n as f64).log2().ceil() as usize
            };
            assert_eq!(h, bound, "n = {n}");
            if let Node::Inner(i) = unsafe { t.deref() } {
                let st = unsafe { i.read_state(&g).deref() };
                assert_eq!(st.size, n as u64);
                assert_eq!(st.mod_cnt, 0);
                assert_eq!(st.ts_mod, Timestamp(9));
                assert_eq!(i.init_sz, n as u64);
            }
            unsafe { free_unpublished(t) };
        }
    }

    #[test]
    fn child_intervals_split_at_routing_keys() {
        let ids = IdSource::new();
        let g = crossbeam_epoch::pin();
        let t =
            build_ideal(&[10, 20, 30, 40], Timestamp(1), (KEY_LO, KEY_HI), &ids).into_shared(&g);
        let root = unsafe { t.deref() }.as_inner().unwrap();
        assert_eq!(root.right_subtree_min, 30);
        assert_eq!(root.child_interval(Side::Left), (KEY_LO, 30));
        let left = unsafe { root.left.load(Ordering::Relaxed, &g).deref() }
            .as_inner()
            .unwrap();
        assert_eq!((left.lo, left.hi), (KEY_LO, 30));
        assert_eq!(left.child_interval(Side::Right), (20, 30));
        unsafe { free_unpublished(t) };
    }
}
