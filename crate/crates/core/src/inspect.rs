//! Read-only views of the tree for tests and benchmarks. Apart from
//! [`ConcurrentTree::keys_in_range`] these are only meaningful while no
//! operation is running.

use std::sync::atomic::Ordering;

use crossbeam_epoch::{self as epoch, Shared};

use crate::engine::ConcurrentTree;
use crate::model::{Key, Node, NodeId, Timestamp};

/// Structural summary of a quiescent tree.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TreeAudit {
    /// Keys in traversal order.
    pub keys: Vec<Key>,
    /// Edges from the root to the deepest leaf or empty slot.
    pub height: usize,
    pub inner_nodes: usize,
    /// Inner nodes whose recorded size differs from their leaf count.
    pub size_mismatches: usize,
    /// Inner nodes whose routing key does not separate their subtrees.
    pub routing_violations: usize,
    /// Inner nodes (and the root) with descriptors still queued.
    pub busy_queues: usize,
}

impl TreeAudit {
    pub fn is_sorted(&self) -> bool {
        self.keys.windows(2).all(|w| w[0] < w[1])
    }

    pub fn is_consistent(&self) -> bool {
        self.is_sorted()
            && self.size_mismatches == 0
            && self.routing_violations == 0
            && self.busy_queues == 0
    }
}

struct Frame<'g> {
    node: Shared<'g, Node>,
    depth: usize,
    expanded: bool,
}

impl ConcurrentTree {
    /// Walks the whole tree and checks its invariants.
    pub fn audit(&self) -> TreeAudit {
        let guard = epoch::pin();
        let mut audit = TreeAudit::default();
        if !self.root.queue.is_empty(&guard) {
            audit.busy_queues += 1;
        }
        // Post-order walk; `done` holds (count, min, max) of finished subtrees.
        let mut done: Vec<(u64, Option<Key>, Option<Key>)> = Vec::new();
        let mut stack = vec![Frame {
            node: self.root.child.load(Ordering::Acquire, &guard),
            depth: 0,
            expanded: false,
        }];
        while let Some(f) = stack.pop() {
            audit.height = audit.height.max(f.depth);
            // SAFETY: links are never null; nodes are epoch-protected.
            match unsafe { f.node.deref() } {
                Node::Empty => done.push((0, None, None)),
                Node::Leaf(k) => {
                    audit.keys.push(*k);
                    done.push((1, Some(*k), Some(*k)));
                }
                Node::Inner(inner) if !f.expanded => {
                    stack.push(Frame {
                        expanded: true,
                        ..f
                    });
                    stack.push(Frame {
                        node: inner.right.load(Ordering::Acquire, &guard),
                        depth: f.depth + 1,
                        expanded: false,
                    });
                    stack.push(Frame {
                        node: inner.left.load(Ordering::Acquire, &guard),
                        depth: f.depth + 1,
                        expanded: false,
                    });
                }
                Node::Inner(inner) => {
                    audit.inner_nodes += 1;
                    let (rc, rmin, rmax) = done.pop().expect("right result");
                    let (lc, lmin, lmax) = done.pop().expect("left result");
                    let rsm = inner.right_subtree_min;
                    if lmax.is_some_and(|m| m >= rsm) || rmin.is_some_and(|m| m < rsm) {
                        audit.routing_violations += 1;
                    }
                    // SAFETY: states are never null and are epoch-protected.
                    let size = unsafe { inner.read_state(&guard).deref() }.size;
                    if size != lc + rc {
                        audit.size_mismatches += 1;
                    }
                    if !inner.queue.is_empty(&guard) {
                        audit.busy_queues += 1;
                    }
                    done.push((lc + rc, lmin.or(rmin), rmax.or(lmax)));
                }
            }
        }
        audit
    }

    /// Edges from the root to the deepest leaf.
    pub fn height(&self) -> usize {
        self.audit().height
    }

    /// Timestamps of the descriptors queued at every node, root first.
    pub fn queue_snapshots(&self) -> Vec<(NodeId, Vec<Timestamp>)> {
        let guard = epoch::pin();
        let mut out = vec![(self.root.id, self.root.queue.snapshot(&guard))];
        let mut stack = vec![self.root.child.load(Ordering::Acquire, &guard)];
        while let Some(n) = stack.pop() {
            // SAFETY: links are never null; nodes are epoch-protected.
            if let Node::Inner(inner) = unsafe { n.deref() } {
                out.push((inner.id, inner.queue.snapshot(&guard)));
                stack.push(inner.right.load(Ordering::Acquire, &guard));
                stack.push(inner.left.load(Ordering::Acquire, &guard));
            }
        }
        out
    }

    /// Copies out the keys in `[min, max]` by walking the pruned tree
    /// directly, bypassing the queues. Not linearizable under concurrent
    /// updates.
    pub fn keys_in_range(&self, min: Key, max: Key) -> Vec<Key> {
        let guard = epoch::pin();
        let mut out = Vec::new();
        let mut stack = vec![self.root.child.load(Ordering::Acquire, &guard)];
        while let Some(n) = stack.pop() {
            // SAFETY: links are never null; nodes are epoch-protected.
            match unsafe { n.deref() } {
                Node::Empty => {}
                Node::Leaf(k) => {
                    if min <= *k && *k <= max {
                        out.push(*k);
                    }
                }
                Node::Inner(inner) => {
                    let rsm = inner.right_subtree_min;
                    if max >= rsm {
                        stack.push(inner.right.load(Ordering::Acquire, &guard));
                    }
                    if min < rsm {
                        stack.push(inner.left.load(Ordering::Acquire, &guard));
                    }
                }
            }
        }
        out
    }

    pub fn len(&self) -> u64 {
        self.count(Key::MIN, Key::MAX).expect("full range is valid")
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
