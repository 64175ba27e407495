//! A concurrent binary search tree with linearizable `count` range queries.
//!
//! Keys live in the leaves of an external tree. Operations are totally
//! ordered by a timestamp drawn at the root and then descend hand over hand:
//! each inner node keeps a queue of pending operations, and a thread that
//! needs to pass a node first completes everything queued ahead of it there.
//! Inner nodes track their subtree size, which lets `count` stop at fully
//! covered subtrees. Subtrees are rebuilt into perfectly balanced shape once
//! they have seen more modifications than a constant times their size.
//!
//! ```
//! use hohtree::ConcurrentTree;
//!
//! let tree = ConcurrentTree::new();
//! assert!(tree.insert(3));
//! assert!(tree.insert(7));
//! assert!(!tree.insert(3));
//! assert_eq!(tree.count(0, 5).unwrap(), 1);
//! assert!(tree.remove(3));
//! assert!(!tree.contains(3));
//! ```

mod descriptor;
mod engine;
mod inspect;
mod model;
pub mod oracle;
mod queue;
mod rebuild;

pub use descriptor::{Descriptor, InsertOnceMap};
pub use engine::{
    ConcurrentTree, Faults, OpOutcome, RootMode, StatsSnapshot, TreeConfig, TreeError,
};
pub use inspect::TreeAudit;
pub use model::{Key, NodeId, NodeState, OpResult, Operation, PartialResult, Side, Timestamp};
pub use queue::{NodeQueue, QueueAudit, TimestampAllocator};
pub use rebuild::needs_rebuild;
