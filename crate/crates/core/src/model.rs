//! Tree nodes, immutable node states and the operation vocabulary.
//!
//! The tree is *external*: keys live only in [`Node::Leaf`]s, inner nodes
//! carry a routing key (the smallest key that may live in the right subtree)
//! plus an immutable-record state holding the subtree size.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use crossbeam_epoch::{Atomic, Guard, Owned, Shared};

use crate::queue::NodeQueue;

/// Keys stored in the tree.
pub type Key = i64;

/// Inclusive lower bound of the key universe, widened so that intervals can
/// be represented without overflow.
pub(crate) const KEY_LO: i128 = Key::MIN as i128;
/// Exclusive upper bound of the key universe.
pub(crate) const KEY_HI: i128 = Key::MAX as i128 + 1;

/// Identity of an inner node (or the fictive root).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Position of an operation in the linearization order. `0` is reserved for
/// "unassigned" and for the dummy cell of a queue created with no history.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const UNASSIGNED: Timestamp = Timestamp(0);

    pub fn is_assigned(self) -> bool {
        self.0 != 0
    }

    /// The timestamp immediately before this one (saturating at zero).
    pub fn prev(self) -> Timestamp {
        Timestamp(self.0.saturating_sub(1))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// Fetch-and-add source of node identities. Values start at 1 and are never
/// reused.
#[derive(Debug)]
pub struct IdSource {
    next: AtomicU64,
}

impl IdSource {
    pub fn new() -> Self {
        IdSource {
            next: AtomicU64::new(1),
        }
    }

    pub fn new_node_id(&self) -> NodeId {
        NodeId(self.next.fetch_add(1, Ordering::Relaxed))
    }
}

impl Default for IdSource {
    fn default() -> Self {
        Self::new()
    }
}

/// An operation submitted to the tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Operation {
    Insert(Key),
    Remove(Key),
    Contains(Key),
    /// Number of keys in the closed interval `[min, max]`.
    Count {
        min: Key,
        max: Key,
    },
}

impl Operation {
    pub fn is_update(&self) -> bool {
        matches!(self, Operation::Insert(_) | Operation::Remove(_))
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operation::Insert(k) => write!(f, "insert({k})"),
            Operation::Remove(k) => write!(f, "remove({k})"),
            Operation::Contains(k) => write!(f, "contains({k})"),
            Operation::Count { min, max } => write!(f, "count({min}, {max})"),
        }
    }
}

/// The value an operation returns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpResult {
    Bool(bool),
    Count(u64),
}

impl fmt::Display for OpResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpResult::Bool(b) => write!(f, "{b}"),
            OpResult::Count(c) => write!(f, "{c}"),
        }
    }
}

/// A piece of an operation's answer recorded at one node.
pub type PartialResult = OpResult;

/// Immutable per-node record. Replaced as a whole, never mutated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeState {
    /// Number of keys in the subtree.
    pub size: u64,
    /// Successful modifications applied below this node since it was created.
    pub mod_cnt: u64,
    /// Timestamp of the last operation that installed this record.
    pub ts_mod: Timestamp,
}

impl NodeState {
    pub fn new(size: u64, ts_mod: Timestamp) -> Self {
        NodeState {
            size,
            mod_cnt: 0,
            ts_mod,
        }
    }
}

/// Which child link of a parent an operation follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

/// A tree node. Leaves and empty nodes are immutable; every structural change
/// installs a freshly allocated node in a parent's child link.
pub enum Node {
    Empty,
    Leaf(Key),
    Inner(InnerNode),
}

impl fmt::Debug for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Empty => f.write_str("Empty"),
            Node::Leaf(k) => write!(f, "Leaf({k})"),
            Node::Inner(inner) => f
                .debug_struct("Inner")
                .field("id", &inner.id)
                .field("right_subtree_min", &inner.right_subtree_min)
                .field("init_sz", &inner.init_sz)
                .finish_non_exhaustive(),
        }
    }
}

impl Node {
    #[cfg(test)]
    pub(crate) fn as_inner(&self) -> Option<&InnerNode> {
        match self {
            Node::Inner(inner) => Some(inner),
            _ => None,
        }
    }
}

pub struct InnerNode {
    pub(crate) id: NodeId,
    pub(crate) right_subtree_min: Key,
    // Half-open key interval `[lo, hi)` of the position this node occupies.
    // Nodes never move, so the interval is fixed at creation.
    pub(crate) lo: i128,
    pub(crate) hi: i128,
    pub(crate) left: Atomic<Node>,
    pub(crate) right: Atomic<Node>,
    pub(crate) state: Atomic<NodeState>,
    pub(crate) queue: NodeQueue,
    pub(crate) init_sz: u64,
}

impl InnerNode {
    /// Builds an inner node whose subtree holds `size` keys.
    ///
    /// The descriptor queue starts with a dummy stamped `ts`, so stale helpers
    /// of operations older than the node's creator can never enter it.
    pub(crate) fn new(
        id: NodeId,
        right_subtree_min: Key,
        interval: (i128, i128),
        left: Owned<Node>,
        right: Owned<Node>,
        size: u64,
        ts: Timestamp,
    ) -> Self {
        debug_assert!(size >= 1);
        InnerNode {
            id,
            right_subtree_min,
            lo: interval.0,
            hi: interval.1,
            left: Atomic::from(left),
            right: Atomic::from(right),
            state: Atomic::new(NodeState::new(size, ts)),
            queue: NodeQueue::new(ts),
            init_sz: size,
        }
    }

    pub(crate) fn route(&self, key: Key) -> Side {
        if key < self.right_subtree_min {
            Side::Left
        } else {
            Side::Right
        }
    }

    pub(crate) fn link(&self, side: Side) -> &Atomic<Node> {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub(crate) fn child_interval(&self, side: Side) -> (i128, i128) {
        let split = self.right_subtree_min as i128;
        match side {
            Side::Left => (self.lo, split),
            Side::Right => (split, self.hi),
        }
    }

    /// Reads the current state record. Records are immutable, so the result
    /// is always internally consistent.
    pub fn read_state<'g>(&self, guard: &'g Guard) -> Shared<'g, NodeState> {
        self.state.load(std::sync::atomic::Ordering::Acquire, guard)
    }

    /// Installs `replacement` iff the cell still holds `observed`.
    ///
    /// Failure is an ordinary outcome: another helper already advanced the
    /// state for this or a later operation.
    pub fn try_advance_state<'g>(
        &self,
        observed: Shared<'g, NodeState>,
        replacement: NodeState,
        guard: &'g Guard,
    ) -> bool {
        match self.state.compare_exchange(
            observed,
            Owned::new(replacement),
            std::sync::atomic::Ordering::AcqRel,
            std::sync::atomic::Ordering::Acquire,
            guard,
        ) {
            Ok(_) => {
                // SAFETY: `observed` is now unlinked and only reachable by
                // threads pinned before this point.
                unsafe { guard.defer_destroy(observed) };
                true
            }
            Err(_) => false,
        }
    }
}

impl Drop for InnerNode {
    fn drop(&mut self) {
        // SAFETY: dropping a node means no other thread can reach it.
        unsafe {
            let guard = crossbeam_epoch::unprotected();
            let state = self.state.load(std::sync::atomic::Ordering::Relaxed, guard);
            if !state.is_null() {
                drop(state.into_owned());
            }
        }
    }
}

/// Number of keys in a node's subtree as seen by its current state.
pub(crate) fn subtree_size(node: &Node, guard: &Guard) -> u64 {
    match node {
        Node::Empty => 0,
        Node::Leaf(_) => 1,
        Node::Inner(inner) => {
            // SAFETY: states are never null and are epoch-protected.
            unsafe { inner.read_state(guard).deref() }.size
        }
    }
}
