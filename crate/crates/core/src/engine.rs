//! The public tree and the hand-over-hand helping machinery.
//!
//! Every operation is stamped at the root queue, then walks down the tree.
//! At each node it first helps every earlier descriptor queued there, then
//! executes itself: it updates the state of the children it continues into,
//! appends itself to their queues and leaves the node's queue. Every effect
//! of that step is idempotent, so any number of threads can perform it for
//! the same descriptor.
//!
//! Whether an insert or remove actually changes the key set is decided once,
//! while the descriptor sits at the head of the root queue: the deciding
//! helper finishes every earlier operation along the key's path and reads the
//! leaf. Size and modification counters on the way down are then only touched
//! by operations that change the set.

use std::cell::Cell as StdCell;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam_epoch::{self as epoch, Atomic, Guard, Owned, Shared};

use crate::descriptor::{Descriptor, InnerRef, Site, SlotKey, SlotKind, SlotValue};
use crate::model::{
    subtree_size, IdSource, InnerNode, Key, Node, NodeId, NodeState, OpResult, Operation, Side,
    Timestamp, KEY_HI, KEY_LO,
};
use crate::queue::{NodeQueue, QueueAudit, TimestampAllocator};
use crate::rebuild::needs_rebuild;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("invalid count range: min {min} > max {max}")]
    InvalidRange { min: Key, max: Key },
}

/// How the root queue hands out timestamps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RootMode {
    /// Michael-Scott append stamping each descriptor with tail + 1.
    #[default]
    LockFree,
    /// Announce array with fetch-and-add versions.
    Announce,
}

/// Deliberate protocol breakage, used to show that the replay check notices.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Faults {
    pub skip_ts_mod_guard: bool,
    pub unchecked_pop: bool,
    pub overwrite_processed: bool,
}

impl Faults {
    pub fn any(&self) -> bool {
        self.skip_ts_mod_guard || self.unchecked_pop || self.overwrite_processed
    }
}

type AnnounceHook = Arc<dyn Fn(&Arc<Descriptor>) + Send + Sync>;

#[derive(Clone)]
pub struct TreeConfig {
    /// Rebuild a subtree once its modification count would exceed
    /// `rebuild_k * init_sz`.
    pub rebuild_k: f64,
    pub root_mode: RootMode,
    /// Size of the announce array in [`RootMode::Announce`].
    pub announce_slots: usize,
    /// Count queue transitions and check timestamp order on every one.
    pub instrument: bool,
    /// Yield the thread with probability `1 / n` at helping points, to force
    /// interleavings on machines with few cores. `0` disables.
    pub chaos_one_in: u32,
    #[doc(hidden)]
    pub faults: Faults,
    #[doc(hidden)]
    pub announce_hook: Option<AnnounceHook>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            rebuild_k: 1.0,
            root_mode: RootMode::LockFree,
            announce_slots: 64,
            instrument: false,
            chaos_one_in: 0,
            faults: Faults::default(),
            announce_hook: None,
        }
    }
}

impl fmt::Debug for TreeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TreeConfig")
            .field("rebuild_k", &self.rebuild_k)
            .field("root_mode", &self.root_mode)
            .field("announce_slots", &self.announce_slots)
            .field("instrument", &self.instrument)
            .field("chaos_one_in", &self.chaos_one_in)
            .field("faults", &self.faults)
            .field("announce_hook", &self.announce_hook.is_some())
            .finish()
    }
}

/// Counters kept by a tree over its lifetime.
#[derive(Debug, Default)]
pub struct TreeStats {
    pub(crate) queues: QueueAudit,
    pub(crate) rebuilds: AtomicU64,
    pub(crate) rebuilt_keys: AtomicU64,
    pub(crate) state_order_violations: AtomicU64,
    pub(crate) incomplete_results: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StatsSnapshot {
    pub queue_transitions: u64,
    pub queue_order_violations: u64,
    pub rebuilds: u64,
    pub rebuilt_keys: u64,
    pub state_order_violations: u64,
    pub incomplete_results: u64,
}

/// What an executed operation returned, and where it linearized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OpOutcome {
    pub timestamp: Timestamp,
    pub result: OpResult,
}

/// Stateless pseudo-parent of the real root. Its queue allocates timestamps.
pub(crate) struct FictiveRoot {
    pub(crate) id: NodeId,
    pub(crate) child: Atomic<Node>,
    pub(crate) queue: NodeQueue,
}

/// A node operations execute "in": the fictive root or an inner node.
#[derive(Clone, Copy)]
pub(crate) enum Parent<'a> {
    Fictive(&'a FictiveRoot),
    Inner(&'a InnerNode),
}

const ONLY_CHILD: [Side; 1] = [Side::Left];
const BOTH_CHILDREN: [Side; 2] = [Side::Left, Side::Right];

impl<'a> Parent<'a> {
    pub(crate) fn id(self) -> NodeId {
        match self {
            Parent::Fictive(f) => f.id,
            Parent::Inner(n) => n.id,
        }
    }

    pub(crate) fn queue(self) -> &'a NodeQueue {
        match self {
            Parent::Fictive(f) => &f.queue,
            Parent::Inner(n) => &n.queue,
        }
    }

    fn route(self, key: Key) -> Side {
        match self {
            Parent::Fictive(_) => Side::Left,
            Parent::Inner(n) => n.route(key),
        }
    }

    pub(crate) fn link(self, side: Side) -> &'a Atomic<Node> {
        match self {
            Parent::Fictive(f) => &f.child,
            Parent::Inner(n) => n.link(side),
        }
    }

    pub(crate) fn child_interval(self, side: Side) -> (i128, i128) {
        match self {
            Parent::Fictive(_) => (KEY_LO, KEY_HI),
            Parent::Inner(n) => n.child_interval(side),
        }
    }

    fn sides(self) -> &'static [Side] {
        match self {
            Parent::Fictive(_) => &ONLY_CHILD,
            Parent::Inner(_) => &BOTH_CHILDREN,
        }
    }
}

const FLUSH_EVERY: u32 = 4;

thread_local! {
    static CHAOS_RNG: StdCell<u64> = const { StdCell::new(0) };
    static FLUSH_TICK: StdCell<u32> = const { StdCell::new(0) };
}

/// A concurrent, linearizable external binary search tree with `count`
/// range queries in amortized logarithmic time.
pub struct ConcurrentTree {
    pub(crate) root: FictiveRoot,
    pub(crate) ids: IdSource,
    allocator: Option<TimestampAllocator>,
    pub(crate) config: TreeConfig,
    pub(crate) stats: TreeStats,
}

impl Default for ConcurrentTree {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for ConcurrentTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConcurrentTree")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl ConcurrentTree {
    pub fn new() -> Self {
        Self::with_config(TreeConfig::default())
    }

    pub fn with_config(config: TreeConfig) -> Self {
        assert!(
            config.rebuild_k > 0.0 && config.rebuild_k.is_finite(),
            "rebuild constant must be positive"
        );
        let ids = IdSource::new();
        let allocator = match config.root_mode {
            RootMode::LockFree => None,
            RootMode::Announce => Some(TimestampAllocator::new(config.announce_slots)),
        };
        ConcurrentTree {
            root: FictiveRoot {
                id: ids.new_node_id(),
                child: Atomic::new(Node::Empty),
                queue: NodeQueue::new(Timestamp::UNASSIGNED),
            },
            ids,
            allocator,
            config,
            stats: TreeStats::default(),
        }
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    /// Inserts `key`; true iff it was absent.
    pub fn insert(&self, key: Key) -> bool {
        self.run_scalar(Operation::Insert(key))
    }

    /// Removes `key`; true iff it was present.
    pub fn remove(&self, key: Key) -> bool {
        self.run_scalar(Operation::Remove(key))
    }

    pub fn contains(&self, key: Key) -> bool {
        self.run_scalar(Operation::Contains(key))
    }

    /// Number of keys in `[min, max]`.
    pub fn count(&self, min: Key, max: Key) -> Result<u64, TreeError> {
        match self.execute(Operation::Count { min, max })?.result {
            OpResult::Count(c) => Ok(c),
            OpResult::Bool(_) => unreachable!("count yields a count"),
        }
    }

    fn run_scalar(&self, op: Operation) -> bool {
        match self
            .execute(op)
            .expect("scalar operations are always valid")
            .result
        {
            OpResult::Bool(b) => b,
            OpResult::Count(_) => unreachable!("scalar operations yield booleans"),
        }
    }

    /// Runs `op` to completion and reports its linearization timestamp.
    pub fn execute(&self, op: Operation) -> Result<OpOutcome, TreeError> {
        self.run(op).map(|(outcome, _)| outcome)
    }

    /// Like [`ConcurrentTree::execute`], also returning the per-node partial
    /// results the operation recorded.
    pub fn execute_traced(
        &self,
        op: Operation,
    ) -> Result<(OpOutcome, Vec<(NodeId, OpResult)>), TreeError> {
        self.run(op)
            .map(|(outcome, d)| (outcome, d.processed_entries()))
    }

    fn run(&self, op: Operation) -> Result<(OpOutcome, Arc<Descriptor>), TreeError> {
        if let Operation::Count { min, max } = op {
            if min > max {
                return Err(TreeError::InvalidRange { min, max });
            }
        }
        let d = Arc::new(Descriptor::new(op));
        let guard = epoch::pin();
        let result = self.execute_operation(&d, &guard);
        // Every operation retires several records; without regular flushes
        // the collector's fixed per-pin budget falls behind and memory grows.
        if FLUSH_TICK.with(|t| {
            let n = t.get().wrapping_add(1);
            t.set(n);
            n % FLUSH_EVERY == 0
        }) {
            guard.flush();
        }
        let outcome = OpOutcome {
            timestamp: d.timestamp(),
            result,
        };
        Ok((outcome, d))
    }

    fn queue_audit(&self) -> Option<&QueueAudit> {
        self.config.instrument.then_some(&self.stats.queues)
    }

    #[inline]
    pub(crate) fn chaos(&self) {
        let n = self.config.chaos_one_in;
        if n == 0 {
            return;
        }
        let roll = CHAOS_RNG.with(|c| {
            let mut x = c.get();
            if x == 0 {
                // Seed from the thread-local's address.
                x = (c as *const _ as u64) | 1;
            }
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            c.set(x);
            x
        });
        if roll.is_multiple_of(u64::from(n)) {
            std::thread::yield_now();
        }
    }

    /// Initiator side: stamp at the root, then drain the traversal queue.
    fn execute_operation(&self, d: &Arc<Descriptor>, guard: &Guard) -> OpResult {
        let ts = match &self.allocator {
            None => self
                .root
                .queue
                .push_acquire_timestamp(d, self.queue_audit(), guard),
            Some(alloc) => {
                let hook = self.config.announce_hook.clone();
                alloc.announce_enqueue(
                    &self.root.queue,
                    d,
                    |d| {
                        if let Some(h) = hook {
                            h(d)
                        }
                    },
                    self.queue_audit(),
                    guard,
                )
            }
        };
        d.traverse.push(Site::FictiveRoot);
        // Only the initiator consumes the traversal queue, so popping before
        // visiting is the same as visiting then popping.
        while let Some(site) = d.traverse.pop() {
            let v = self.resolve(site);
            self.execute_until_timestamp(v, ts, guard);
        }
        let result = d.assemble_result().unwrap_or_else(|| {
            self.stats
                .incomplete_results
                .fetch_add(1, Ordering::Relaxed);
            match d.op() {
                Operation::Count { .. } => OpResult::Count(0),
                _ => OpResult::Bool(false),
            }
        });
        d.set_result(result);
        result
    }

    fn resolve(&self, site: Site) -> Parent<'_> {
        match site {
            Site::FictiveRoot => Parent::Fictive(&self.root),
            // SAFETY: the node was reachable after the initiator pinned, so
            // reclamation is deferred past the end of the operation.
            Site::Inner(InnerRef(p)) => Parent::Inner(unsafe { &*p }),
        }
    }

    /// Executes every descriptor at `v` whose timestamp is at most `bound`.
    pub(crate) fn execute_until_timestamp(&self, v: Parent<'_>, bound: Timestamp, guard: &Guard) {
        loop {
            let Some(head) = v.queue().peek(guard) else {
                return;
            };
            if head.timestamp() > bound {
                return;
            }
            self.chaos();
            self.execute_in_node(&head, v, guard);
        }
    }

    /// Executes `d` in node `v`. Safe to run concurrently and repeatedly.
    fn execute_in_node(&self, d: &Arc<Descriptor>, v: Parent<'_>, guard: &Guard) {
        match d.op() {
            Operation::Insert(k) | Operation::Remove(k) => {
                let changes = match v {
                    Parent::Fictive(_) => self.decide(d, k, guard),
                    Parent::Inner(_) => d.decision().unwrap_or(false),
                };
                self.scalar_step(d, v, k, Some(changes), guard);
            }
            Operation::Contains(k) => self.scalar_step(d, v, k, None, guard),
            Operation::Count { min, max } => self.count_step(d, v, min, max, guard),
        }
        self.chaos();
        if self.config.faults.unchecked_pop {
            v.queue().pop_unchecked(self.queue_audit(), guard);
        } else {
            v.queue().pop_if(d, self.queue_audit(), guard);
        }
    }

    /// Fixes whether an insert/remove changes the key set. Runs while `d` is
    /// at the head of the root queue, so every earlier operation has left the
    /// root and nothing later can pass `d`.
    fn decide(&self, d: &Descriptor, key: Key, guard: &Guard) -> bool {
        if let Some(c) = d.decision() {
            return c;
        }
        let bound = d.timestamp().prev();
        let mut link = &self.root.child;
        let present = loop {
            let node = link.load(Ordering::Acquire, guard);
            // SAFETY: links are never null; nodes are epoch-protected.
            match unsafe { node.deref() } {
                Node::Inner(u) => {
                    self.execute_until_timestamp(Parent::Inner(u), bound, guard);
                    link = u.link(u.route(key));
                }
                Node::Leaf(x) => break *x == key,
                Node::Empty => break false,
            }
        };
        let changes = match d.op() {
            Operation::Insert(_) => !present,
            _ => present,
        };
        d.decide(changes)
    }

    fn scalar_step(
        &self,
        d: &Arc<Descriptor>,
        v: Parent<'_>,
        key: Key,
        update: Option<bool>,
        guard: &Guard,
    ) {
        let ts = d.timestamp();
        let side = v.route(key);
        let link = v.link(side);
        let applies = update == Some(true);
        let mut child = link.load(Ordering::Acquire, guard);
        self.chaos();

        if applies {
            // SAFETY: links are never null; nodes are epoch-protected.
            if let Node::Inner(c) = unsafe { child.deref() } {
                let state = unsafe { c.read_state(guard).deref() };
                let rebuild =
                    state.ts_mod < ts && needs_rebuild(state, c.init_sz, self.config.rebuild_k);
                // Reading the child before confirming `d` still heads `v`
                // proves the read happened during `d`'s turn here. Once `d`
                // has left, the step is done, and `child` may be a subtree
                // that `d`'s own rebuild already retired.
                if !v.queue().head_is(d, guard) {
                    return;
                }
                if rebuild {
                    self.rebuild_child(d, v, side, child, guard);
                    child = link.load(Ordering::Acquire, guard);
                }
            }
        }

        // SAFETY: as above.
        match unsafe { child.deref() } {
            Node::Inner(c) => {
                d.traverse.push(Site::Inner(InnerRef(c)));
                if applies {
                    let delta = if matches!(d.op(), Operation::Insert(_)) {
                        1
                    } else {
                        -1
                    };
                    self.advance_state(d, c, delta, guard);
                }
                self.chaos();
                c.queue.push_if(d, self.queue_audit(), guard);
            }
            leafish => {
                let result = match update {
                    Some(changes) => changes,
                    None => matches!(leafish, Node::Leaf(x) if *x == key),
                };
                // Record before editing: once the edit lands, helpers may see
                // the new inner node instead and never reach this branch.
                self.record(d, v.id(), OpResult::Bool(result));
                self.chaos();
                if applies && v.queue().head_is(d, guard) {
                    self.edit_leaf(d, v, side, child, key, guard);
                }
            }
        }
    }

    /// Applies `d`'s size change to `c` unless some helper already did.
    fn advance_state(&self, d: &Descriptor, c: &InnerNode, delta: i64, guard: &Guard) {
        let ts = d.timestamp();
        let cur = c.read_state(guard);
        // SAFETY: states are never null and are epoch-protected.
        let s = unsafe { cur.deref() };
        if s.ts_mod >= ts && !self.config.faults.skip_ts_mod_guard {
            return;
        }
        let next = NodeState {
            size: s.size.saturating_add_signed(delta),
            mod_cnt: s.mod_cnt + 1,
            ts_mod: ts,
        };
        if next.ts_mod <= s.ts_mod {
            self.stats
                .state_order_violations
                .fetch_add(1, Ordering::Relaxed);
        }
        self.chaos();
        c.try_advance_state(cur, next, guard);
    }

    /// Leaf-level structural change at `v`'s `side`: the replacement is
    /// built once per descriptor and site, so every helper attempts the same
    /// exchange.
    fn edit_leaf(
        &self,
        d: &Descriptor,
        v: Parent<'_>,
        side: Side,
        child: Shared<'_, Node>,
        key: Key,
        guard: &Guard,
    ) {
        let slot_key = SlotKey {
            parent: v.id(),
            side,
            kind: SlotKind::Edit,
        };
        let slot = match d.slots.get(slot_key) {
            Some(s) => s,
            None => {
                // SAFETY: links are never null; nodes are epoch-protected.
                let replacement = match (d.op(), unsafe { child.deref() }) {
                    (Operation::Insert(_), Node::Empty) => Owned::new(Node::Leaf(key)),
                    (Operation::Insert(_), Node::Leaf(other)) if *other != key => {
                        let (lo, hi) = if *other < key {
                            (*other, key)
                        } else {
                            (key, *other)
                        };
                        Owned::new(Node::Inner(InnerNode::new(
                            self.ids.new_node_id(),
                            hi,
                            v.child_interval(side),
                            Owned::new(Node::Leaf(lo)),
                            Owned::new(Node::Leaf(hi)),
                            2,
                            d.timestamp(),
                        )))
                    }
                    (Operation::Remove(_), Node::Leaf(x)) if *x == key => Owned::new(Node::Empty),
                    // The decision and the leaf disagree; only reachable when
                    // the protocol has been broken on purpose.
                    _ => return,
                };
                let replacement = replacement.into_shared(guard);
                let (winner, won) = d.slots.insert_once(
                    slot_key,
                    SlotValue {
                        expected: child.as_raw(),
                        replacement: replacement.as_raw(),
                    },
                );
                if !won {
                    // SAFETY: never published.
                    unsafe { crate::rebuild::free_unpublished(replacement) };
                }
                winner
            }
        };
        self.swap_link(d, v.link(side), slot, guard);
    }

    /// Attempts the slot's exchange. The winner hands what it unlinked to
    /// `d` for reclamation.
    pub(crate) fn swap_link(
        &self,
        d: &Descriptor,
        link: &Atomic<Node>,
        slot: SlotValue,
        guard: &Guard,
    ) -> bool {
        let expected = Shared::from(slot.expected);
        let replacement = Shared::from(slot.replacement);
        let swapped = link
            .compare_exchange(
                expected,
                replacement,
                Ordering::AcqRel,
                Ordering::Acquire,
                guard,
            )
            .is_ok();
        // Injected faults can unlink a node twice, so it is leaked instead.
        if swapped && !self.config.faults.any() {
            // SAFETY: `expected` is unlinked and only this thread won it.
            d.retire_on_drop(unsafe { crate::rebuild::subtree_reclaimer(expected, guard) });
        }
        swapped
    }

    fn count_step(&self, d: &Arc<Descriptor>, v: Parent<'_>, min: Key, max: Key, guard: &Guard) {
        let (want_lo, want_hi) = (min as i128, max as i128 + 1);
        let mut value = 0u64;
        for &side in v.sides() {
            let (lo, hi) = v.child_interval(side);
            if want_hi <= lo || hi <= want_lo {
                continue;
            }
            let child = v.link(side).load(Ordering::Acquire, guard);
            // SAFETY: links are never null; nodes are epoch-protected.
            match unsafe { child.deref() } {
                Node::Empty => {}
                Node::Leaf(x) => value += u64::from(min <= *x && *x <= max),
                Node::Inner(c) => {
                    if want_lo <= lo && hi <= want_hi {
                        value += subtree_size(unsafe { child.deref() }, guard);
                    } else {
                        d.traverse.push(Site::Inner(InnerRef(c)));
                        c.queue.push_if(d, self.queue_audit(), guard);
                    }
                }
            }
        }
        self.chaos();
        self.record(d, v.id(), OpResult::Count(value));
    }

    fn record(&self, d: &Descriptor, id: NodeId, value: OpResult) {
        if self.config.faults.overwrite_processed {
            d.processed.insert_overwrite(id, value);
        } else {
            d.try_record_partial(id, value);
        }
    }

    pub fn stats(&self) -> StatsSnapshot {
        let s = &self.stats;
        StatsSnapshot {
            queue_transitions: s.queues.transitions(),
            queue_order_violations: s.queues.violations(),
            rebuilds: s.rebuilds.load(Ordering::Relaxed),
            rebuilt_keys: s.rebuilt_keys.load(Ordering::Relaxed),
            state_order_violations: s.state_order_violations.load(Ordering::Relaxed),
            incomplete_results: s.incomplete_results.load(Ordering::Relaxed),
        }
    }
}

impl Drop for ConcurrentTree {
    fn drop(&mut self) {
        // SAFETY: exclusive access; nothing else can reach the nodes.
        unsafe {
            let guard = epoch::unprotected();
            let root = self.root.child.load(Ordering::Relaxed, guard);
            crate::rebuild::free_unpublished(root);
        }
    }
}
