//! Operation descriptors: the shared record every helper works from.

use std::ptr;
use std::sync::atomic::{AtomicBool, AtomicPtr, AtomicU64, AtomicU8, Ordering};
use std::sync::OnceLock;

use crossbeam_queue::SegQueue;

use crate::model::{InnerNode, Node, NodeId, OpResult, Operation, PartialResult, Side, Timestamp};

/// A lock-free map whose keys can be inserted at most once.
///
/// Entries are prepended to a singly linked list and never removed until the
/// map is dropped, so readers need no reclamation protocol. `get` returns the
/// newest entry for a key, which only matters for
/// [`InsertOnceMap::insert_overwrite`].
pub struct InsertOnceMap<K, V> {
    head: AtomicPtr<Entry<K, V>>,
}

struct Entry<K, V> {
    key: K,
    value: V,
    next: *mut Entry<K, V>,
}

impl<K: Copy + Eq, V: Copy> InsertOnceMap<K, V> {
    pub fn new() -> Self {
        InsertOnceMap {
            head: AtomicPtr::new(ptr::null_mut()),
        }
    }

    fn find_between(mut cur: *mut Entry<K, V>, stop: *mut Entry<K, V>, key: K) -> Option<V> {
        while cur != stop {
            // SAFETY: entries live until the map is dropped.
            let e = unsafe { &*cur };
            if e.key == key {
                return Some(e.value);
            }
            cur = e.next;
        }
        None
    }

    pub fn get(&self, key: K) -> Option<V> {
        Self::find_between(self.head.load(Ordering::Acquire), ptr::null_mut(), key)
    }

    /// Inserts `(key, value)` unless `key` is present. Returns the value that
    /// is associated with `key` afterwards and whether this call inserted it.
    pub fn insert_once(&self, key: K, value: V) -> (V, bool) {
        let mut head = self.head.load(Ordering::Acquire);
        if let Some(v) = Self::find_between(head, ptr::null_mut(), key) {
            return (v, false);
        }
        let entry = Box::into_raw(Box::new(Entry {
            key,
            value,
            next: head,
        }));
        loop {
            match self
                .head
                .compare_exchange(head, entry, Ordering::AcqRel, Ordering::Acquire)
            {
                Ok(_) => return (value, true),
                Err(newer) => {
                    // Only the entries prepended since the last scan are new.
                    if let Some(v) = Self::find_between(newer, head, key) {
                        // SAFETY: `entry` was never published.
                        drop(unsafe { Box::from_raw(entry) });
                        return (v, false);
                    }
                    head = newer;
                    // SAFETY: still private to this thread.
                    unsafe { (*entry).next = head };
                }
            }
        }
    }

    /// Unconditionally records `value` as the newest entry for `key`. Exists
    /// only so fault-injection runs can break the insert-once rule.
    pub(crate) fn insert_overwrite(&self, key: K, value: V) {
        let entry = Box::into_raw(Box::new(Entry {
            key,
            value,
            next: ptr::null_mut(),
        }));
        let mut head = self.head.load(Ordering::Acquire);
        loop {
            // SAFETY: private until the exchange succeeds.
            unsafe { (*entry).next = head };
            match self
                .head
                .compare_exchange(head, entry, Ordering::AcqRel, Ordering::Acquire)
            {
                Ok(_) => return,
                Err(newer) => head = newer,
            }
        }
    }

    /// Distinct keys with their newest values.
    pub fn entries(&self) -> Vec<(K, V)> {
        let mut out: Vec<(K, V)> = Vec::new();
        let mut cur = self.head.load(Ordering::Acquire);
        while !cur.is_null() {
            // SAFETY: entries live until the map is dropped.
            let e = unsafe { &*cur };
            if !out.iter().any(|(k, _)| *k == e.key) {
                out.push((e.key, e.value));
            }
            cur = e.next;
        }
        out
    }
}

impl<K: Copy + Eq, V: Copy> Default for InsertOnceMap<K, V> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K, V> Drop for InsertOnceMap<K, V> {
    fn drop(&mut self) {
        let mut cur = *self.head.get_mut();
        while !cur.is_null() {
            // SAFETY: exclusive access during drop.
            let e = unsafe { Box::from_raw(cur) };
            cur = e.next;
        }
    }
}

// SAFETY: the raw pointers are owned by the map; K and V are plain values.
unsafe impl<K: Send, V: Send> Send for InsertOnceMap<K, V> {}
unsafe impl<K: Send + Sync, V: Send + Sync> Sync for InsertOnceMap<K, V> {}

/// A node an operation still has to visit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Site {
    FictiveRoot,
    Inner(InnerRef),
}

/// Raw reference to an inner node held inside a descriptor. Valid for as long
/// as the descriptor's initiator stays pinned.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InnerRef(pub(crate) *const InnerNode);

// SAFETY: the pointee is shared-immutable apart from atomics, and its lifetime
// is guarded by the epoch scheme.
unsafe impl Send for InnerRef {}
unsafe impl Sync for InnerRef {}

/// Which kind of link replacement a slot describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SlotKind {
    /// Leaf-level insert or remove.
    Edit,
    /// Threshold-triggered subtree rebuild.
    Rebuild,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SlotKey {
    pub parent: NodeId,
    pub side: Side,
    pub kind: SlotKind,
}

/// The single compare-and-exchange every helper attempts for one site.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotValue {
    pub expected: *const Node,
    pub replacement: *const Node,
}

// SAFETY: plain addresses compared by value; dereferenced only under a guard.
unsafe impl Send for SlotValue {}
unsafe impl Sync for SlotValue {}

pub(crate) type Reclaim = Box<dyn FnOnce() + Send>;

const DECISION_UNSET: u8 = 0;
const DECISION_NO: u8 = 1;
const DECISION_YES: u8 = 2;

/// One in-flight operation.
pub struct Descriptor {
    op: Operation,
    timestamp: AtomicU64,
    pub(crate) traverse: SegQueue<Site>,
    pub(crate) processed: InsertOnceMap<NodeId, PartialResult>,
    pub(crate) slots: InsertOnceMap<SlotKey, SlotValue>,
    // Whether an insert/remove changes the key set; fixed once at the root.
    decision: AtomicU8,
    enqueued: AtomicBool,
    result: OnceLock<OpResult>,
    // Nodes this operation unlinked. Freed only after the descriptor itself
    // is gone, so no helper can ever see a recycled address in a slot.
    retired: SegQueue<Reclaim>,
}

impl Descriptor {
    pub fn new(op: Operation) -> Self {
        Descriptor {
            op,
            timestamp: AtomicU64::new(0),
            traverse: SegQueue::new(),
            processed: InsertOnceMap::new(),
            slots: InsertOnceMap::new(),
            decision: AtomicU8::new(DECISION_UNSET),
            enqueued: AtomicBool::new(false),
            result: OnceLock::new(),
            retired: SegQueue::new(),
        }
    }

    pub fn op(&self) -> Operation {
        self.op
    }

    pub fn timestamp(&self) -> Timestamp {
        Timestamp(self.timestamp.load(Ordering::SeqCst))
    }

    /// Used while the descriptor is still private to its initiator.
    pub(crate) fn set_timestamp_private(&self, ts: Timestamp) {
        self.timestamp.store(ts.0, Ordering::Relaxed);
    }

    /// Assigns `ts` iff no timestamp has been assigned yet. Returns the
    /// timestamp in effect afterwards.
    pub(crate) fn try_assign_timestamp(&self, ts: Timestamp) -> Timestamp {
        match self
            .timestamp
            .compare_exchange(0, ts.0, Ordering::SeqCst, Ordering::SeqCst)
        {
            Ok(_) => ts,
            Err(cur) => Timestamp(cur),
        }
    }

    /// True once some thread has linked this descriptor into the root queue.
    pub fn is_enqueued(&self) -> bool {
        self.enqueued.load(Ordering::SeqCst)
    }

    pub(crate) fn mark_enqueued(&self) {
        self.enqueued.store(true, Ordering::SeqCst);
    }

    pub fn decision(&self) -> Option<bool> {
        match self.decision.load(Ordering::Acquire) {
            DECISION_UNSET => None,
            v => Some(v == DECISION_YES),
        }
    }

    pub(crate) fn decide(&self, changes: bool) -> bool {
        let v = if changes { DECISION_YES } else { DECISION_NO };
        match self
            .decision
            .compare_exchange(DECISION_UNSET, v, Ordering::AcqRel, Ordering::Acquire)
        {
            Ok(_) => changes,
            Err(cur) => cur == DECISION_YES,
        }
    }

    pub(crate) fn retire_on_drop(&self, reclaim: Reclaim) {
        self.retired.push(reclaim);
    }

    /// Records `value` for node `id` unless a value is already present.
    pub fn try_record_partial(&self, id: NodeId, value: PartialResult) {
        self.processed.insert_once(id, value);
    }

    pub fn processed_entries(&self) -> Vec<(NodeId, PartialResult)> {
        self.processed.entries()
    }

    /// Final answer, available once the initiator has assembled it.
    pub fn result(&self) -> Option<OpResult> {
        self.result.get().copied()
    }

    pub(crate) fn set_result(&self, r: OpResult) {
        let _ = self.result.set(r);
    }

    /// Combines the partial results after the traversal has drained. Returns
    /// `None` when a scalar operation has no decisive entry, which only
    /// happens if the helping protocol was broken.
    pub fn assemble_result(&self) -> Option<OpResult> {
        let entries = self.processed.entries();
        match self.op {
            Operation::Count { .. } => {
                let mut sum = 0u64;
                for (_, v) in &entries {
                    match v {
                        OpResult::Count(c) => sum += c,
                        OpResult::Bool(_) => return None,
                    }
                }
                Some(OpResult::Count(sum))
            }
            _ => match entries.as_slice() {
                [(_, r @ OpResult::Bool(_))] => Some(*r),
                _ => None,
            },
        }
    }
}

impl std::fmt::Debug for Descriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Descriptor")
            .field("op", &self.op)
            .field("timestamp", &self.timestamp())
            .finish_non_exhaustive()
    }
}

impl Drop for Descriptor {
    fn drop(&mut self) {
        if self.retired.is_empty() {
            return;
        }
        let pending: Vec<Reclaim> = std::iter::from_fn(|| self.retired.pop()).collect();
        crossbeam_epoch::pin().defer(move || pending.into_iter().for_each(|f| f()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn insert_once_keeps_first_value() {
        let m = InsertOnceMap::new();
        assert_eq!(m.insert_once(NodeId(1), 5u64), (5, true));
        // a stale helper arriving later with a different value
        assert_eq!(m.insert_once(NodeId(1), 6u64), (5, false));
        assert_eq!(m.get(NodeId(1)), Some(5));
    }

    #[test]
    fn disjoint_keys_both_present() {
        let m = InsertOnceMap::new();
        m.insert_once(NodeId(1), 1u64);
        m.insert_once(NodeId(2), 2u64);
        let mut e = m.entries();
        e.sort();
        assert_eq!(e, vec![(NodeId(1), 1), (NodeId(2), 2)]);
    }

    #[test]
    fn overwrite_replaces_visible_value() {
        let m = InsertOnceMap::new();
        m.insert_once(NodeId(1), 5u64);
        m.insert_overwrite(NodeId(1), 6u64);
        assert_eq!(m.get(NodeId(1)), Some(6));
        assert_eq!(m.entries(), vec![(NodeId(1), 6)]);
    }

    #[test]
    fn racing_inserts_agree_on_one_winner() {
        for _ in 0..200 {
            let m = Arc::new(InsertOnceMap::new());
            let handles: Vec<_> = (0..4u64)
                .map(|t| {
                    let m = Arc::clone(&m);
                    std::thread::spawn(move || {
                        let mut wins = 0;
                        for k in 0..16u64 {
                            let (v, won) = m.insert_once(k, t);
                            if won {
                                wins += 1;
                                assert_eq!(v, t);
                            }
                        }
                        wins
                    })
                })
                .collect();
            let wins: u32 = handles.into_iter().map(|h| h.join().unwrap()).sum();
            assert_eq!(wins, 16);
            assert_eq!(m.entries().len(), 16);
        }
    }

    #[test]
    fn assemble_count_sums_contributions() {
        let d = Descriptor::new(Operation::Count { min: 0, max: 9 });
        d.try_record_partial(NodeId(1), OpResult::Count(3));
        d.try_record_partial(NodeId(2), OpResult::Count(2));
        assert_eq!(d.assemble_result(), Some(OpResult::Count(5)));
    }

    #[test]
    fn assemble_scalar_uses_single_entry() {
        let d = Descriptor::new(Operation::Contains(1));
        assert_eq!(d.assemble_result(), None);
        d.try_record_partial(NodeId(4), OpResult::Bool(true));
        assert_eq!(d.assemble_result(), Some(OpResult::Bool(true)));
    }

    #[test]
    fn decision_is_write_once() {
        let d = Descriptor::new(Operation::Insert(1));
        assert_eq!(d.decision(), None);
        assert!(d.decide(true));
        assert!(d.decide(false));
        assert_eq!(d.decision(), Some(true));
    }

    #[test]
    fn timestamp_assigned_once() {
        let d = Descriptor::new(Operation::Insert(1));
        assert!(!d.timestamp().is_assigned());
        assert_eq!(d.try_assign_timestamp(Timestamp(4)), Timestamp(4));
        assert_eq!(d.try_assign_timestamp(Timestamp(9)), Timestamp(4));
    }
}
