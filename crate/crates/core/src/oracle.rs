//! Sequential reference tree.
//!
//! Same external layout as the concurrent tree (keys in leaves, every inner
//! node knows its right subtree's minimum and its subtree size) but without
//! any synchronisation. Removing a leaf collapses its parent into the sibling.
//! All walks are iterative, so degenerate shapes cannot overflow the stack.

use std::mem;

use crate::model::{Key, OpResult, Operation, Timestamp};

#[derive(Debug)]
pub enum SeqNode {
    Empty,
    Leaf(Key),
    Inner {
        right_subtree_min: Key,
        left: Box<SeqNode>,
        right: Box<SeqNode>,
        size: u64,
    },
}

fn get_size(node: &SeqNode) -> u64 {
    match node {
        SeqNode::Empty => 0,
        SeqNode::Leaf(_) => 1,
        SeqNode::Inner { size, .. } => *size,
    }
}

#[derive(Debug, Default)]
pub struct SeqTree {
    root: Option<Box<SeqNode>>,
}

enum RemoveStep {
    ClearSelf,
    Collapse { keep_right: bool },
    Descend { left: bool },
}

impl SeqTree {
    pub fn new() -> Self {
        SeqTree {
            root: Some(Box::new(SeqNode::Empty)),
        }
    }

    /// A perfectly balanced tree over `keys`, which must be sorted and
    /// free of duplicates.
    pub fn balanced(keys: &[Key]) -> Self {
        debug_assert!(keys.windows(2).all(|w| w[0] < w[1]));
        fn build(keys: &[Key]) -> SeqNode {
            match keys.len() {
                0 => SeqNode::Empty,
                1 => SeqNode::Leaf(keys[0]),
                n => SeqNode::Inner {
                    right_subtree_min: keys[n / 2],
                    left: Box::new(build(&keys[..n / 2])),
                    right: Box::new(build(&keys[n / 2..])),
                    size: n as u64,
                },
            }
        }
        SeqTree {
            root: Some(Box::new(build(keys))),
        }
    }

    fn root(&self) -> &SeqNode {
        self.root.as_deref().expect("root present")
    }

    fn root_mut(&mut self) -> &mut SeqNode {
        self.root.as_deref_mut().expect("root present")
    }

    pub fn len(&self) -> u64 {
        get_size(self.root())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, key: Key) -> bool {
        let mut cur = self.root();
        loop {
            match cur {
                SeqNode::Empty => return false,
                SeqNode::Leaf(x) => return *x == key,
                SeqNode::Inner {
                    right_subtree_min,
                    left,
                    right,
                    ..
                } => {
                    cur = if key < *right_subtree_min {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn insert(&mut self, key: Key) -> bool {
        if self.contains(key) {
            return false;
        }
        let mut cur = self.root_mut();
        loop {
            cur = match cur {
                SeqNode::Inner {
                    right_subtree_min,
                    left,
                    right,
                    size,
                } => {
                    *size += 1;
                    if key < *right_subtree_min {
                        left
                    } else {
                        right
                    }
                }
                SeqNode::Empty => {
                    *cur = SeqNode::Leaf(key);
                    return true;
                }
                SeqNode::Leaf(other) => {
                    let other = *other;
                    let (lo, hi) = if other < key {
                        (other, key)
                    } else {
                        (key, other)
                    };
                    *cur = SeqNode::Inner {
                        right_subtree_min: hi,
                        left: Box::new(SeqNode::Leaf(lo)),
                        right: Box::new(SeqNode::Leaf(hi)),
                        size: 2,
                    };
                    return true;
                }
            };
        }
    }

    pub fn remove(&mut self, key: Key) -> bool {
        if !self.contains(key) {
            return false;
        }
        let mut cur = self.root_mut();
        loop {
            let step = match &*cur {
                SeqNode::Empty => unreachable!("key is present"),
                SeqNode::Leaf(_) => RemoveStep::ClearSelf,
                SeqNode::Inner {
                    right_subtree_min,
                    left,
                    right,
                    ..
                } => {
                    let go_left = key < *right_subtree_min;
                    let target = if go_left { left } else { right };
                    if matches!(**target, SeqNode::Leaf(x) if x == key) {
                        RemoveStep::Collapse {
                            keep_right: go_left,
                        }
                    } else {
                        RemoveStep::Descend { left: go_left }
                    }
                }
            };
            match step {
                RemoveStep::ClearSelf => {
                    *cur = SeqNode::Empty;
                    return true;
                }
                RemoveStep::Collapse { keep_right } => {
                    let SeqNode::Inner { left, right, .. } = mem::replace(cur, SeqNode::Empty)
                    else {
                        unreachable!()
                    };
                    *cur = if keep_right { *right } else { *left };
                    return true;
                }
                RemoveStep::Descend { left: go_left } => {
                    cur = match cur {
                        SeqNode::Inner {
                            left, right, size, ..
                        } => {
                            *size -= 1;
                            if go_left {
                                left
                            } else {
                                right
                            }
                        }
                        _ => unreachable!(),
                    };
                }
            }
        }
    }

    /// Number of keys in `[min, max]`.
    pub fn count(&self, min: Key, max: Key) -> u64 {
        self.count_traced(min, max).0
    }

    /// Like [`SeqTree::count`], also reporting how many nodes the descent
    /// entered.
    pub fn count_traced(&self, min: Key, max: Key) -> (u64, usize) {
        if min > max {
            return (0, 0);
        }
        count_both_borders(self.root(), min, max)
    }

    pub fn apply(&mut self, op: Operation) -> OpResult {
        match op {
            Operation::Insert(k) => OpResult::Bool(self.insert(k)),
            Operation::Remove(k) => OpResult::Bool(self.remove(k)),
            Operation::Contains(k) => OpResult::Bool(self.contains(k)),
            Operation::Count { min, max } => OpResult::Count(self.count(min, max)),
        }
    }

    /// Keys in order.
    pub fn keys(&self) -> Vec<Key> {
        let mut out = Vec::new();
        let mut stack = vec![self.root()];
        while let Some(n) = stack.pop() {
            match n {
                SeqNode::Empty => {}
                SeqNode::Leaf(k) => out.push(*k),
                SeqNode::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    /// True iff every inner node's size equals its leaf count and its
    /// routing key separates its subtrees (left keys below, right keys at or
    /// above). Removals can leave the key above the right subtree's minimum
    /// no longer present, so equality is not required.
    pub fn is_well_formed(&self) -> bool {
        // Post-order with an explicit stack: (count, min, max) of finished
        // subtrees.
        let mut done: Vec<(u64, Option<Key>, Option<Key>)> = Vec::new();
        let mut stack = vec![(self.root(), false)];
        while let Some((n, expanded)) = stack.pop() {
            match n {
                SeqNode::Empty => done.push((0, None, None)),
                SeqNode::Leaf(k) => done.push((1, Some(*k), Some(*k))),
                SeqNode::Inner { left, right, .. } if !expanded => {
                    stack.push((n, true));
                    stack.push((right, false));
                    stack.push((left, false));
                }
                SeqNode::Inner {
                    right_subtree_min,
                    size,
                    ..
                } => {
                    let (rc, rmin, rmax) = done.pop().expect("right");
                    let (lc, lmin, lmax) = done.pop().expect("left");
                    let rsm = *right_subtree_min;
                    if *size != lc + rc
                        || lmax.is_some_and(|m| m >= rsm)
                        || rmin.is_some_and(|m| m < rsm)
                    {
                        return false;
                    }
                    done.push((lc + rc, lmin.or(rmin), rmax.or(lmax)));
                }
            }
        }
        true
    }

    /// Edges from the root to the deepest leaf.
    pub fn height(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(self.root(), 0usize)];
        while let Some((n, depth)) = stack.pop() {
            best = best.max(depth);
            if let SeqNode::Inner { left, right, .. } = n {
                stack.push((left, depth + 1));
                stack.push((right, depth + 1));
            }
        }
        best
    }
}

impl Drop for SeqTree {
    fn drop(&mut self) {
        let mut stack: Vec<Box<SeqNode>> = self.root.take().into_iter().collect();
        while let Some(mut n) = stack.pop() {
            if let SeqNode::Inner { left, right, .. } = &mut *n {
                stack.push(mem::replace(left, Box::new(SeqNode::Empty)));
                stack.push(mem::replace(right, Box::new(SeqNode::Empty)));
            }
        }
    }
}

/// Both borders still inside the subtree: follow the common path until the
/// range splits.
fn count_both_borders(mut node: &SeqNode, min: Key, max: Key) -> (u64, usize) {
    let mut visits = 0;
    loop {
        visits += 1;
        match node {
            SeqNode::Empty => return (0, visits),
            SeqNode::Leaf(x) => return (u64::from(min <= *x && *x <= max), visits),
            SeqNode::Inner {
                right_subtree_min: rsm,
                left,
                right,
                ..
            } => {
                if max < *rsm {
                    node = left;
                } else if min >= *rsm {
                    node = right;
                } else {
                    let (l, lv) = count_left_border(left, min);
                    let (r, rv) = count_right_border(right, max);
                    return (l + r, visits + lv + rv);
                }
            }
        }
    }
}

/// Keys `>= min`.
fn count_left_border(mut node: &SeqNode, min: Key) -> (u64, usize) {
    let (mut acc, mut visits) = (0, 0);
    loop {
        visits += 1;
        match node {
            SeqNode::Empty => return (acc, visits),
            SeqNode::Leaf(x) => return (acc + u64::from(*x >= min), visits),
            SeqNode::Inner {
                right_subtree_min: rsm,
                left,
                right,
                ..
            } => {
                if min < *rsm {
                    acc += get_size(right);
                    node = left;
                } else {
                    node = right;
                }
            }
        }
    }
}

/// Keys `<= max`.
fn count_right_border(mut node: &SeqNode, max: Key) -> (u64, usize) {
    let (mut acc, mut visits) = (0, 0);
    loop {
        visits += 1;
        match node {
            SeqNode::Empty => return (acc, visits),
            SeqNode::Leaf(x) => return (acc + u64::from(*x <= max), visits),
            SeqNode::Inner {
                right_subtree_min: rsm,
                left,
                right,
                ..
            } => {
                if max >= *rsm {
                    acc += get_size(left);
                    node = right;
                } else {
                    node = left;
                }
            }
        }
    }
}

/// Replays a log in timestamp order against a fresh tree; returns each
/// operation's result (in log order after sorting) and the final keys.
pub fn replay(log: &[(Timestamp, Operation)]) -> (Vec<(Timestamp, OpResult)>, Vec<Key>) {
    let mut sorted: Vec<_> = log.to_vec();
    sorted.sort_by_key(|(ts, _)| *ts);
    let mut tree = SeqTree::new();
    let results = sorted
        .into_iter()
        .map(|(ts, op)| (ts, tree.apply(op)))
        .collect();
    (results, tree.keys())
}
