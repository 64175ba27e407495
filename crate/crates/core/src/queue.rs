//! Per-node descriptor queues.
//!
//! Each queue is a Michael-Scott list with a dummy head cell. Cells carry the
//! timestamp of their descriptor, and queues only ever grow in timestamp
//! order, which is what lets `push_if` and `pop_if` be idempotent: a tail
//! stamped at or past a descriptor's timestamp means that descriptor was
//! already linked.

use std::ptr;
use std::sync::atomic::{AtomicPtr, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use crossbeam_epoch::{Atomic, Guard, Owned, Shared};

use crate::descriptor::Descriptor;
use crate::model::Timestamp;

pub(crate) struct Cell {
    ts: Timestamp,
    // One strong count from `Arc::into_raw`. Null for the initial dummy, and
    // cleared once the cell becomes the dummy so that an idle queue does not
    // keep a finished descriptor (and whatever it retired) alive.
    desc: AtomicPtr<Descriptor>,
    next: Atomic<Cell>,
}

impl Cell {
    fn holding(ts: Timestamp, d: &Arc<Descriptor>) -> Self {
        Cell {
            ts,
            desc: AtomicPtr::new(Arc::into_raw(Arc::clone(d)).cast_mut()),
            next: Atomic::null(),
        }
    }
}

impl Drop for Cell {
    fn drop(&mut self) {
        let p = *self.desc.get_mut();
        if !p.is_null() {
            // SAFETY: the pointer came from `Arc::into_raw` and still owns its count.
            drop(unsafe { Arc::from_raw(p) });
        }
    }
}

struct SendPtr(*const Descriptor);
// SAFETY: only used to move a strong count into a deferred drop.
unsafe impl Send for SendPtr {}

/// Counters for the runtime check of queue monotonicity.
#[derive(Debug, Default)]
pub struct QueueAudit {
    transitions: AtomicU64,
    violations: AtomicU64,
}

impl QueueAudit {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of pushes and pops observed.
    pub fn transitions(&self) -> u64 {
        self.transitions.load(Ordering::Relaxed)
    }

    /// Number of times a neighbouring pair of cells was not strictly increasing.
    pub fn violations(&self) -> u64 {
        self.violations.load(Ordering::Relaxed)
    }

    fn observe(&self, earlier: Timestamp, later: Timestamp) {
        self.transitions.fetch_add(1, Ordering::Relaxed);
        if earlier >= later {
            self.violations.fetch_add(1, Ordering::Relaxed);
        }
    }
}

/// FIFO of descriptors with strictly increasing timestamps.
pub struct NodeQueue {
    head: Atomic<Cell>,
    tail: Atomic<Cell>,
}

impl NodeQueue {
    /// An empty queue whose dummy cell is stamped `initial`.
    pub fn new(initial: Timestamp) -> Self {
        let dummy = Owned::new(Cell {
            ts: initial,
            desc: AtomicPtr::new(ptr::null_mut()),
            next: Atomic::null(),
        });
        // SAFETY: nothing else can see the queue yet.
        let dummy = dummy.into_shared(unsafe { crossbeam_epoch::unprotected() });
        NodeQueue {
            head: Atomic::from(dummy),
            tail: Atomic::from(dummy),
        }
    }

    /// First descriptor in FIFO order, if any. Never removes.
    pub fn peek(&self, guard: &Guard) -> Option<Arc<Descriptor>> {
        loop {
            let p = self.first(guard)?;
            if p.is_null() {
                // The first cell was popped under us and is the dummy now.
                continue;
            }
            // SAFETY: a cleared pointer's count is released through an
            // epoch-deferred drop, and we are pinned.
            unsafe {
                Arc::increment_strong_count(p);
                return Some(Arc::from_raw(p));
            }
        }
    }

    fn first(&self, guard: &Guard) -> Option<*const Descriptor> {
        let head = self.head.load(Ordering::Acquire, guard);
        // SAFETY: head is never null and cells are epoch-protected.
        let next = unsafe { head.deref() }.next.load(Ordering::Acquire, guard);
        // SAFETY: as above.
        unsafe { next.as_ref() }.map(|c| c.desc.load(Ordering::Acquire).cast_const())
    }

    /// True iff `d` is currently the first descriptor.
    pub fn head_is(&self, d: &Descriptor, guard: &Guard) -> bool {
        self.first(guard).is_some_and(|p| ptr::eq(p, d))
    }

    /// Timestamp stamped on the last cell (the dummy's when empty).
    pub fn tail_timestamp(&self, guard: &Guard) -> Timestamp {
        let mut tail = self.tail.load(Ordering::Acquire, guard);
        loop {
            // SAFETY: tail is never null and cells are epoch-protected.
            let next = unsafe { tail.deref() }.next.load(Ordering::Acquire, guard);
            if next.is_null() {
                return unsafe { tail.deref() }.ts;
            }
            tail = next;
        }
    }

    fn link_after_tail(
        &self,
        d: &Arc<Descriptor>,
        mut stamp: impl FnMut(Timestamp) -> Option<Timestamp>,
        audit: Option<&QueueAudit>,
        guard: &Guard,
    ) -> Option<Timestamp> {
        let mut cell: Option<Owned<Cell>> = None;
        loop {
            let tail = self.tail.load(Ordering::Acquire, guard);
            // SAFETY: tail is never null and cells are epoch-protected.
            let t = unsafe { tail.deref() };
            let next = t.next.load(Ordering::Acquire, guard);
            if !next.is_null() {
                let _ = self.tail.compare_exchange(
                    tail,
                    next,
                    Ordering::Release,
                    Ordering::Relaxed,
                    guard,
                );
                continue;
            }
            let ts = stamp(t.ts)?;
            let mut new = cell
                .take()
                .unwrap_or_else(|| Owned::new(Cell::holding(ts, d)));
            new.ts = ts;
            match t.next.compare_exchange(
                Shared::null(),
                new,
                Ordering::AcqRel,
                Ordering::Acquire,
                guard,
            ) {
                Ok(linked) => {
                    let _ = self.tail.compare_exchange(
                        tail,
                        linked,
                        Ordering::Release,
                        Ordering::Relaxed,
                        guard,
                    );
                    if let Some(a) = audit {
                        a.observe(t.ts, ts);
                    }
                    return Some(ts);
                }
                Err(e) => cell = Some(e.new),
            }
        }
    }

    /// Root-queue append: stamps `d` with the tail's timestamp plus one at
    /// the moment it is linked. `d` must not be visible to other threads yet.
    pub fn push_acquire_timestamp(
        &self,
        d: &Arc<Descriptor>,
        audit: Option<&QueueAudit>,
        guard: &Guard,
    ) -> Timestamp {
        debug_assert!(!d.timestamp().is_assigned());
        let ts = self
            .link_after_tail(
                d,
                |tail| {
                    let ts = Timestamp(tail.0 + 1);
                    d.set_timestamp_private(ts);
                    Some(ts)
                },
                audit,
                guard,
            )
            .expect("timestamp allocation always links");
        d.mark_enqueued();
        ts
    }

    /// Appends `d` unless it has already been appended. Returns whether this
    /// call linked it.
    pub fn push_if(&self, d: &Arc<Descriptor>, audit: Option<&QueueAudit>, guard: &Guard) -> bool {
        let ts = d.timestamp();
        debug_assert!(ts.is_assigned());
        self.link_after_tail(d, |tail| (tail < ts).then_some(ts), audit, guard)
            .is_some()
    }

    /// Removes `d` if it is still the first descriptor; otherwise another
    /// helper already removed it and the queue is left alone.
    pub fn pop_if(&self, d: &Descriptor, audit: Option<&QueueAudit>, guard: &Guard) -> bool {
        self.pop_head(Some(d), audit, guard)
    }

    /// Removes whatever descriptor is first. Fault injection only.
    pub(crate) fn pop_unchecked(&self, audit: Option<&QueueAudit>, guard: &Guard) -> bool {
        self.pop_head(None, audit, guard)
    }

    fn pop_head(&self, d: Option<&Descriptor>, audit: Option<&QueueAudit>, guard: &Guard) -> bool {
        let head = self.head.load(Ordering::Acquire, guard);
        // SAFETY: head is never null and cells are epoch-protected.
        let h = unsafe { head.deref() };
        let next = h.next.load(Ordering::Acquire, guard);
        // SAFETY: as above.
        let Some(n) = (unsafe { next.as_ref() }) else {
            return false;
        };
        if let Some(d) = d {
            if !ptr::eq(n.desc.load(Ordering::Acquire), d) {
                return false;
            }
        }
        // Keep the tail from lagging behind the head before unlinking.
        let tail = self.tail.load(Ordering::Acquire, guard);
        if tail == head {
            let _ =
                self.tail
                    .compare_exchange(tail, next, Ordering::Release, Ordering::Relaxed, guard);
        }
        match self
            .head
            .compare_exchange(head, next, Ordering::AcqRel, Ordering::Acquire, guard)
        {
            Ok(_) => {
                if let Some(a) = audit {
                    a.observe(h.ts, n.ts);
                }
                let p = n.desc.swap(ptr::null_mut(), Ordering::AcqRel);
                if !p.is_null() {
                    let p = SendPtr(p);
                    // SAFETY: the count moves into the closure, which runs
                    // after every reader that could have loaded `p` unpins.
                    unsafe {
                        guard.defer_unchecked(move || {
                            let p = p;
                            drop(Arc::from_raw(p.0));
                        })
                    };
                }
                // SAFETY: the old dummy is unreachable from the queue now.
                unsafe { guard.defer_destroy(head) };
                true
            }
            Err(_) => false,
        }
    }

    /// Timestamps of the queued descriptors, head to tail.
    pub fn snapshot(&self, guard: &Guard) -> Vec<Timestamp> {
        let mut out = Vec::new();
        let head = self.head.load(Ordering::Acquire, guard);
        // SAFETY: cells are epoch-protected.
        let mut cur = unsafe { head.deref() }.next.load(Ordering::Acquire, guard);
        while let Some(c) = unsafe { cur.as_ref() } {
            out.push(c.ts);
            cur = c.next.load(Ordering::Acquire, guard);
        }
        out
    }

    pub fn is_empty(&self, guard: &Guard) -> bool {
        self.first(guard).is_none()
    }
}

impl Drop for NodeQueue {
    fn drop(&mut self) {
        // SAFETY: exclusive access; every cell from head onward is owned here.
        unsafe {
            let guard = crossbeam_epoch::unprotected();
            let mut cur = self.head.load(Ordering::Relaxed, guard);
            while !cur.is_null() {
                let next = cur.deref().next.load(Ordering::Relaxed, guard);
                drop(cur.into_owned());
                cur = next;
            }
        }
    }
}

impl std::fmt::Debug for NodeQueue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let guard = crossbeam_epoch::pin();
        f.debug_list().entries(self.snapshot(&guard)).finish()
    }
}

/// Wait-free timestamp distribution through an announce array.
///
/// A thread publishes its descriptor in a free slot, fetches a fresh version,
/// and tries to install it as the descriptor's timestamp. It then stamps any
/// still-unstamped peers with further fresh versions and links every
/// announced descriptor whose timestamp does not exceed its own into the root
/// queue in timestamp order. Versions may skip values; they never repeat.
pub struct TimestampAllocator {
    slots: Box<[Atomic<Arc<Descriptor>>]>,
    version: AtomicU64,
    // Round-robin start for slot claims.
    hint: AtomicUsize,
}

impl TimestampAllocator {
    pub fn new(slots: usize) -> Self {
        assert!(slots > 0, "announce array needs at least one slot");
        TimestampAllocator {
            slots: (0..slots).map(|_| Atomic::null()).collect(),
            version: AtomicU64::new(1),
            hint: AtomicUsize::new(0),
        }
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    fn claim(&self, d: &Arc<Descriptor>, guard: &Guard) -> usize {
        let mut boxed = Owned::new(Arc::clone(d));
        let n = self.slots.len();
        loop {
            let start = self.hint.fetch_add(1, Ordering::Relaxed);
            for i in 0..n {
                let idx = (start + i) % n;
                match self.slots[idx].compare_exchange(
                    Shared::null(),
                    boxed,
                    Ordering::SeqCst,
                    Ordering::SeqCst,
                    guard,
                ) {
                    Ok(_) => return idx,
                    Err(e) => boxed = e.new,
                }
            }
            // More concurrent callers than slots.
            std::thread::yield_now();
        }
    }

    fn fresh_version(&self) -> Timestamp {
        Timestamp(self.version.fetch_add(1, Ordering::SeqCst))
    }

    /// Announces `d`, gets it a timestamp and makes sure it is linked into
    /// `root`. `after_publish` runs right after the slot is claimed.
    pub fn announce_enqueue(
        &self,
        root: &NodeQueue,
        d: &Arc<Descriptor>,
        after_publish: impl FnOnce(&Arc<Descriptor>),
        audit: Option<&QueueAudit>,
        guard: &Guard,
    ) -> Timestamp {
        let idx = self.claim(d, guard);
        after_publish(d);
        let mine = d.try_assign_timestamp(self.fresh_version());

        let mut batch: Vec<(Timestamp, Arc<Descriptor>)> = Vec::new();
        for slot in self.slots.iter() {
            let p = slot.load(Ordering::SeqCst, guard);
            // SAFETY: slot boxes are epoch-protected.
            let Some(peer) = (unsafe { p.as_ref() }) else {
                continue;
            };
            let mut ts = peer.timestamp();
            if !ts.is_assigned() {
                ts = peer.try_assign_timestamp(self.fresh_version());
            }
            if ts <= mine {
                batch.push((ts, Arc::clone(peer)));
            }
        }
        batch.sort_by_key(|(ts, _)| *ts);
        for (_, peer) in &batch {
            if root.push_if(peer, audit, guard) {
                peer.mark_enqueued();
            }
        }
        debug_assert!(d.is_enqueued() || root.tail_timestamp(guard) >= mine);

        let old = self.slots[idx].swap(Shared::null(), Ordering::SeqCst, guard);
        // SAFETY: the slot no longer references the box.
        unsafe { guard.defer_destroy(old) };
        mine
    }
}

impl Drop for TimestampAllocator {
    fn drop(&mut self) {
        // SAFETY: exclusive access.
        unsafe {
            let guard = crossbeam_epoch::unprotected();
            for slot in self.slots.iter() {
                let p = slot.load(Ordering::Relaxed, guard);
                if !p.is_null() {
                    drop(p.into_owned());
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Operation;
    use std::sync::atomic::AtomicU32;

    fn desc(ts: u64) -> Arc<Descriptor> {
        let d = Arc::new(Descriptor::new(Operation::Contains(0)));
        if ts > 0 {
            d.try_assign_timestamp(Timestamp(ts));
        }
        d
    }

    fn ts_of(q: &NodeQueue) -> Vec<u64> {
        let g = crossbeam_epoch::pin();
        q.snapshot(&g).into_iter().map(|t| t.0).collect()
    }

    #[test]
    fn sequential_root_pushes_number_from_one() {
        let q = NodeQueue::new(Timestamp(0));
        let g = crossbeam_epoch::pin();
        let got: Vec<u64> = (0..3)
            .map(|_| q.push_acquire_timestamp(&desc(0), None, &g).0)
            .collect();
        assert_eq!(got, vec![1, 2, 3]);
    }

    #[test]
    fn root_push_follows_tail_stamp() {
        let q = NodeQueue::new(Timestamp(0));
        let g = crossbeam_epoch::pin();
        q.push_if(&desc(41), None, &g);
        assert_eq!(q.push_acquire_timestamp(&desc(0), None, &g), Timestamp(42));
    }

    #[test]
    fn concurrent_root_pushes_form_a_permutation() {
        let q = Arc::new(NodeQueue::new(Timestamp(0)));
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let q = Arc::clone(&q);
                std::thread::spawn(move || {
                    let mut mine = Vec::new();
                    for _ in 0..250 {
                        let g = crossbeam_epoch::pin();
                        mine.push(q.push_acquire_timestamp(&desc(0), None, &g).0);
                    }
                    mine
                })
            })
            .collect();
        let mut all = Vec::new();
        for h in handles {
            let mine = h.join().unwrap();
            assert!(mine.windows(2).all(|w| w[0] < w[1]));
            all.extend(mine);
        }
        all.sort_unstable();
        assert_eq!(all, (1..=1000).collect::<Vec<_>>());
        assert_eq!(ts_of(&q), (1..=1000).collect::<Vec<_>>());
    }

    #[test]
    fn push_if_is_idempotent() {
        let q = NodeQueue::new(Timestamp(0));
        let g = crossbeam_epoch::pin();
        let d5 = desc(5);
        assert!(q.push_if(&d5, None, &g));
        assert!(!q.push_if(&d5, None, &g));
        assert_eq!(ts_of(&q), vec![5]);

        let q = NodeQueue::new(Timestamp(0));
        let (d3, d7) = (desc(3), desc(7));
        q.push_if(&d3, None, &g);
        q.push_if(&d7, None, &g);
        q.push_if(&d7, None, &g);
        assert_eq!(ts_of(&q), vec![3, 7]);
    }

    #[test]
    fn push_if_skips_descriptors_older_than_the_dummy() {
        let q = NodeQueue::new(Timestamp(10));
        let g = crossbeam_epoch::pin();
        assert!(!q.push_if(&desc(10), None, &g));
        assert!(!q.push_if(&desc(4), None, &g));
        assert!(q.push_if(&desc(11), None, &g));
    }

    #[test]
    fn pop_if_removes_only_the_named_head() {
        let q = NodeQueue::new(Timestamp(0));
        let g = crossbeam_epoch::pin();
        let (d5, d7) = (desc(5), desc(7));
        q.push_if(&d5, None, &g);
        q.push_if(&d7, None, &g);
        assert!(!q.pop_if(&d7, None, &g));
        assert!(q.pop_if(&d5, None, &g));
        assert_eq!(ts_of(&q), vec![7]);
        assert!(!q.pop_if(&d5, None, &g));
        assert_eq!(ts_of(&q), vec![7]);
        // the popped cell became the dummy, so its stamp still guards pushes
        assert!(!q.push_if(&d5, None, &g));
    }

    #[test]
    fn peek_empty_and_nonempty() {
        let q = NodeQueue::new(Timestamp(0));
        let g = crossbeam_epoch::pin();
        assert!(q.peek(&g).is_none());
        let (d4, d9) = (desc(4), desc(9));
        q.push_if(&d4, None, &g);
        q.push_if(&d9, None, &g);
        assert_eq!(q.peek(&g).unwrap().timestamp(), Timestamp(4));
        assert_eq!(ts_of(&q), vec![4, 9]);
    }

    #[test]
    fn racing_pops_remove_exactly_once() {
        for _ in 0..300 {
            let q = Arc::new(NodeQueue::new(Timestamp(0)));
            let (d5, d7) = (desc(5), desc(7));
            {
                let g = crossbeam_epoch::pin();
                q.push_if(&d5, None, &g);
                q.push_if(&d7, None, &g);
            }
            let removed = Arc::new(AtomicU32::new(0));
            let hs: Vec<_> = (0..3)
                .map(|_| {
                    let (q, d5, removed) = (Arc::clone(&q), Arc::clone(&d5), Arc::clone(&removed));
                    std::thread::spawn(move || {
                        let g = crossbeam_epoch::pin();
                        if q.pop_if(&d5, None, &g) {
                            removed.fetch_add(1, Ordering::Relaxed);
                        }
                    })
                })
                .collect();
            hs.into_iter().for_each(|h| h.join().unwrap());
            assert_eq!(removed.load(Ordering::Relaxed), 1);
            assert_eq!(ts_of(&q), vec![7]);
        }
    }

    #[test]
    fn racing_push_ifs_link_once() {
        for _ in 0..300 {
            let q = Arc::new(NodeQueue::new(Timestamp(0)));
            let d = desc(3);
            let hs: Vec<_> = (0..4)
                .map(|_| {
                    let (q, d) = (Arc::clone(&q), Arc::clone(&d));
                    std::thread::spawn(move || {
                        let g = crossbeam_epoch::pin();
                        q.push_if(&d, None, &g) as u32
                    })
                })
                .collect();
            let linked: u32 = hs.into_iter().map(|h| h.join().unwrap()).sum();
            assert_eq!(linked, 1);
            assert_eq!(ts_of(&q), vec![3]);
        }
    }

    #[test]
    fn peek_during_pops_sees_live_descriptors() {
        let q = Arc::new(NodeQueue::new(Timestamp(0)));
        let descs: Vec<_> = (1..=2000).map(desc).collect();
        {
            let g = crossbeam_epoch::pin();
            for d in &descs {
                q.push_if(d, None, &g);
            }
        }
        let reader = {
            let q = Arc::clone(&q);
            std::thread::spawn(move || {
                let mut last = 0;
                loop {
                    let g = crossbeam_epoch::pin();
                    match q.peek(&g) {
                        Some(d) => {
                            let ts = d.timestamp().0;
                            assert!(ts >= last);
                            last = ts;
                        }
                        None => break,
                    }
                }
            })
        };
        for d in &descs {
            let g = crossbeam_epoch::pin();
            assert!(q.pop_if(d, None, &g));
        }
        reader.join().unwrap();
    }

    #[test]
    fn audit_counts_transitions() {
        let q = NodeQueue::new(Timestamp(0));
        let audit = QueueAudit::new();
        let g = crossbeam_epoch::pin();
        let (d1, d2) = (desc(1), desc(2));
        q.push_if(&d1, Some(&audit), &g);
        q.push_if(&d2, Some(&audit), &g);
        q.pop_if(&d1, Some(&audit), &g);
        assert_eq!(audit.transitions(), 3);
        assert_eq!(audit.violations(), 0);
    }

    #[test]
    fn announce_single_thread_matches_lock_free() {
        let q = NodeQueue::new(Timestamp(0));
        let alloc = TimestampAllocator::new(4);
        let g = crossbeam_epoch::pin();
        let got: Vec<u64> = (0..3)
            .map(|_| alloc.announce_enqueue(&q, &desc(0), |_| {}, None, &g).0)
            .collect();
        assert_eq!(got, vec![1, 2, 3]);
        assert_eq!(ts_of(&q), vec![1, 2, 3]);
    }

    #[test]
    fn announce_helper_enqueues_a_stalled_peer() {
        let q = Arc::new(NodeQueue::new(Timestamp(0)));
        let alloc = Arc::new(TimestampAllocator::new(8));
        let stalled = desc(0);
        let (published_tx, published_rx) = std::sync::mpsc::channel();
        let (resume_tx, resume_rx) = std::sync::mpsc::channel::<()>();
        let a = {
            let (q, alloc, stalled) = (Arc::clone(&q), Arc::clone(&alloc), Arc::clone(&stalled));
            std::thread::spawn(move || {
                let g = crossbeam_epoch::pin();
                alloc.announce_enqueue(
                    &q,
                    &stalled,
                    |_| {
                        published_tx.send(()).unwrap();
                        resume_rx.recv().unwrap();
                    },
                    None,
                    &g,
                )
            })
        };
        published_rx.recv().unwrap();
        // Two peers: the first stamps the stalled descriptor past itself, the
        // second finds it below its own timestamp and links it.
        {
            let g = crossbeam_epoch::pin();
            alloc.announce_enqueue(&q, &desc(0), |_| {}, None, &g);
            alloc.announce_enqueue(&q, &desc(0), |_| {}, None, &g);
        }
        assert!(stalled.timestamp().is_assigned());
        assert!(stalled.is_enqueued());
        let before = ts_of(&q);
        assert!(before.contains(&stalled.timestamp().0));
        resume_tx.send(()).unwrap();
        let ts = a.join().unwrap();
        assert_eq!(ts, stalled.timestamp());
        assert_eq!(ts_of(&q), before, "resumed owner must not enqueue twice");
    }

    #[test]
    fn announce_concurrent_queue_is_strictly_increasing() {
        let q = Arc::new(NodeQueue::new(Timestamp(0)));
        let alloc = Arc::new(TimestampAllocator::new(8));
        let audit = Arc::new(QueueAudit::new());
        let hs: Vec<_> = (0..8)
            .map(|_| {
                let (q, alloc, audit) = (Arc::clone(&q), Arc::clone(&alloc), Arc::clone(&audit));
                std::thread::spawn(move || {
                    let mut mine = Vec::new();
                    for _ in 0..100 {
                        let g = crossbeam_epoch::pin();
                        let d = desc(0);
                        mine.push(alloc.announce_enqueue(&q, &d, |_| {}, Some(&audit), &g));
                        assert!(d.is_enqueued());
                    }
                    mine
                })
            })
            .collect();
        let mut all = Vec::new();
        for h in hs {
            all.extend(h.join().unwrap());
        }
        let drained = ts_of(&q);
        assert_eq!(drained.len(), 800);
        assert!(drained.windows(2).all(|w| w[0] < w[1]));
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 800);
        assert_eq!(audit.violations(), 0);
    }
}
