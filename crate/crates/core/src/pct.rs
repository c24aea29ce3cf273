//! Protected Cartesian tree: a history-independent search tree whose leaves
//! are buckets of between `beta / 2` and `beta` triples.
//!
//! For a sorted set `S` of size `n`, the first and last `beta / 2` elements are
//! protected. If `n <= beta` the node is a leaf holding all of `S`; otherwise
//! the pivot is the unprotected element of minimum priority (ties broken by
//! key) and the two sides are built recursively. The shape is therefore a
//! function of the key set, the salt and `beta` alone.
//!
//! Every node carries an [`Augment`] value summarizing its subtree, kept
//! current across inserts and deletes.

use std::cmp::Ordering;
use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::iblt::Triple;

/// Per-node summary of a subtree.
pub trait Augment: Clone + PartialEq + fmt::Debug {
    type Ctx;

    fn for_leaf(ctx: &Self::Ctx, bucket: &[Triple]) -> Self;

    fn for_internal(ctx: &Self::Ctx, left: &Self, right: &Self, pivot: &Triple) -> Self;

    /// Adds or removes one triple from the summarized set.
    fn toggle(&mut self, ctx: &Self::Ctx, t: &Triple);
}

impl Augment for () {
    type Ctx = ();

    fn for_leaf(_: &(), _: &[Triple]) {}

    fn for_internal(_: &(), _: &(), _: &(), _: &Triple) {}

    fn toggle(&mut self, _: &(), _: &Triple) {}
}

/// Heap priority of a key: a 64-bit fixed-point fraction in `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Priority(pub u64);

impl Priority {
    pub fn of(key: &[u8], salt: &[u8]) -> Self {
        let mut h = Sha256::new();
        h.update(b"das/prio");
        h.update((salt.len() as u16).to_le_bytes());
        h.update(salt);
        h.update(key);
        Priority(u64::from_be_bytes(h.finalize()[..8].try_into().unwrap()))
    }

    pub fn as_fraction(self) -> f64 {
        self.0 as f64 / 2f64.powi(64)
    }
}

/// Orders candidates for pivot: smaller priority wins, then smaller key.
fn precedes(a: (Priority, &[u8]), b: (Priority, &[u8])) -> bool {
    a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)) == Ordering::Less
}

/// Splits a sorted slice into protected prefix, unprotected middle and
/// protected suffix. Each protected side has `ceil(beta / 2)` elements when
/// the slice is long enough.
pub fn protected_split<T>(sorted: &[T], beta: usize) -> (&[T], &[T], &[T]) {
    let half = beta.div_ceil(2);
    let n = sorted.len();
    let prefix_end = half.min(n);
    let suffix_start = n.saturating_sub(half).max(prefix_end);
    (
        &sorted[..prefix_end],
        &sorted[prefix_end..suffix_start],
        &sorted[suffix_start..],
    )
}

#[derive(Clone, Debug, PartialEq)]
pub enum PctNode<A> {
    Leaf {
        bucket: Vec<Triple>,
        aug: A,
    },
    Internal {
        pivot: Triple,
        priority: Priority,
        /// Element count of the whole subtree, pivot included.
        size: usize,
        left: Box<PctNode<A>>,
        right: Box<PctNode<A>>,
        aug: A,
    },
}

impl<A> PctNode<A> {
    pub fn size(&self) -> usize {
        match self {
            PctNode::Leaf { bucket, .. } => bucket.len(),
            PctNode::Internal { size, .. } => *size,
        }
    }

    pub fn aug(&self) -> &A {
        match self {
            PctNode::Leaf { aug, .. } | PctNode::Internal { aug, .. } => aug,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, PctNode::Leaf { .. })
    }

    /// Number of elements with key strictly below `key`.
    fn rank(&self, key: &[u8]) -> usize {
        match self {
            PctNode::Leaf { bucket, .. } => bucket.partition_point(|t| t.key.as_slice() < key),
            PctNode::Internal {
                pivot, left, right, ..
            } => match key.cmp(&pivot.key) {
                Ordering::Less => left.rank(key),
                Ordering::Equal => left.size(),
                Ordering::Greater => left.size() + 1 + right.rank(key),
            },
        }
    }

    /// The element of the given rank.
    fn select(&self, rank: usize) -> &Triple {
        match self {
            PctNode::Leaf { bucket, .. } => &bucket[rank],
            PctNode::Internal {
                pivot, left, right, ..
            } => match rank.cmp(&left.size()) {
                Ordering::Less => left.select(rank),
                Ordering::Equal => pivot,
                Ordering::Greater => right.select(rank - left.size() - 1),
            },
        }
    }

    fn get(&self, key: &[u8]) -> Option<&Triple> {
        match self {
            PctNode::Leaf { bucket, .. } => bucket
                .binary_search_by(|t| t.key.as_slice().cmp(key))
                .ok()
                .map(|i| &bucket[i]),
            PctNode::Internal {
                pivot, left, right, ..
            } => match key.cmp(&pivot.key) {
                Ordering::Less => left.get(key),
                Ordering::Equal => Some(pivot),
                Ordering::Greater => right.get(key),
            },
        }
    }

    pub fn collect_into<'a>(&'a self, out: &mut Vec<&'a Triple>) {
        match self {
            PctNode::Leaf { bucket, .. } => out.extend(bucket),
            PctNode::Internal {
                pivot, left, right, ..
            } => {
                left.collect_into(out);
                out.push(pivot);
                right.collect_into(out);
            }
        }
    }

    fn sorted_clone(&self) -> Vec<Triple> {
        let mut refs = Vec::with_capacity(self.size() + 1);
        self.collect_into(&mut refs);
        refs.into_iter().cloned().collect()
    }

    /// `(leaves, internal)` node counts.
    pub fn count_nodes(&self) -> (usize, usize) {
        match self {
            PctNode::Leaf { .. } => (1, 0),
            PctNode::Internal { left, right, .. } => {
                let (l1, i1) = left.count_nodes();
                let (l2, i2) = right.count_nodes();
                (l1 + l2, i1 + i2 + 1)
            }
        }
    }

    fn leaf_depths(&self, depth: usize, out: &mut Vec<usize>) {
        match self {
            PctNode::Leaf { .. } => out.push(depth),
            PctNode::Internal { left, right, .. } => {
                left.leaf_depths(depth + 1, out);
                right.leaf_depths(depth + 1, out);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LocationEnd {
    /// The key is the pivot of the last node on the path.
    Pivot,
    /// The path ends at a leaf; `Ok(i)` if the key is at bucket index `i`,
    /// `Err(i)` for the index it would be inserted at.
    Leaf { position: std::result::Result<usize, usize> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Location {
    /// Turns taken from the root.
    pub path: Vec<Side>,
    pub end: LocationEnd,
}

impl Location {
    /// Number of nodes on the root-to-node path.
    pub fn nodes(&self) -> usize {
        self.path.len() + 1
    }

    pub fn found(&self) -> bool {
        matches!(
            self.end,
            LocationEnd::Pivot | LocationEnd::Leaf { position: Ok(_) }
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Rebuilt {
    /// Depth of the rebuilt subtree's root (0 = tree root).
    pub depth: usize,
    pub leaves: usize,
    pub internal: usize,
    pub elements: usize,
}

/// Which nodes changed membership in a single insert or delete.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChangeReport {
    /// Internal nodes above the change that kept their pivot; their summaries
    /// were updated with one toggle each.
    pub path_nodes: usize,
    /// A leaf bucket was edited in place.
    pub leaf_updated: bool,
    /// The subtree rebuilt from scratch, if the change altered a pivot or
    /// split or merged a leaf.
    pub rebuilt: Option<Rebuilt>,
}

impl ChangeReport {
    pub fn leaves_changed(&self) -> usize {
        usize::from(self.leaf_updated) + self.rebuilt.map_or(0, |r| r.leaves)
    }

    pub fn internal_changed(&self) -> usize {
        self.path_nodes + self.rebuilt.map_or(0, |r| r.internal)
    }
}

pub struct PctTree<A: Augment = ()> {
    root: Option<Box<PctNode<A>>>,
    beta: usize,
    salt: Vec<u8>,
    ctx: A::Ctx,
}

impl<A: Augment> Clone for PctTree<A>
where
    A::Ctx: Clone,
{
    fn clone(&self) -> Self {
        Self {
            root: self.root.clone(),
            beta: self.beta,
            salt: self.salt.clone(),
            ctx: self.ctx.clone(),
        }
    }
}

impl<A: Augment> PartialEq for PctTree<A> {
    fn eq(&self, other: &Self) -> bool {
        self.beta == other.beta && self.salt == other.salt && self.root == other.root
    }
}

impl<A: Augment> fmt::Debug for PctTree<A> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PctTree")
            .field("beta", &self.beta)
            .field("len", &self.len())
            .field("root", &self.root)
            .finish()
    }
}

pub(crate) fn check_beta(beta: usize) -> Result<()> {
    if beta < 2 || !beta.is_multiple_of(2) || beta > u16::MAX as usize {
        return Err(Error::InvalidParams(format!(
            "bucket size beta must be even and in [2, 65534], got {beta}"
        )));
    }
    Ok(())
}

impl<A: Augment> PctTree<A> {
    pub fn empty(beta: usize, salt: Vec<u8>, ctx: A::Ctx) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self {
            root: None,
            beta,
            salt,
            ctx,
        })
    }

    /// Builds the tree for a set of triples with distinct keys.
    pub fn init(triples: Vec<Triple>, beta: usize, salt: Vec<u8>, ctx: A::Ctx) -> Result<Self> {
        let mut tree = Self::empty(beta, salt, ctx)?;
        let mut triples = triples;
        triples.sort_by(|a, b| a.key.cmp(&b.key));
        if let Some(w) = triples.windows(2).find(|w| w[0].key == w[1].key) {
            return Err(Error::DuplicateKey(hex::encode(&w[0].key)));
        }
        if !triples.is_empty() {
            tree.root = Some(tree.build(triples));
        }
        Ok(tree)
    }

    /// Reassembles a tree from decoded parts, checking search order, sizes
    /// and leaf capacity. Pivot choice is not checked; see [`Self::check_invariants`].
    pub(crate) fn from_parts(
        root: Option<Box<PctNode<A>>>,
        beta: usize,
        salt: Vec<u8>,
        ctx: A::Ctx,
    ) -> Result<Self> {
        check_beta(beta)?;
        let tree = Self {
            root,
            beta,
            salt,
            ctx,
        };
        if let Some(root) = &tree.root {
            tree.check_order(root, None, None, true)
                .map_err(Error::Malformed)?;
        }
        Ok(tree)
    }

    pub fn beta(&self) -> usize {
        self.beta
    }

    pub fn salt(&self) -> &[u8] {
        &self.salt
    }

    pub fn ctx(&self) -> &A::Ctx {
        &self.ctx
    }

    pub fn root(&self) -> Option<&PctNode<A>> {
        self.root.as_deref()
    }

    pub fn len(&self) -> usize {
        self.root.as_ref().map_or(0, |r| r.size())
    }

    pub fn is_empty(&self) -> bool {
        self.root.is_none()
    }

    pub fn priority(&self, key: &[u8]) -> Priority {
        Priority::of(key, &self.salt)
    }

    pub fn get(&self, key: &[u8]) -> Option<&Triple> {
        self.root.as_ref()?.get(key)
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        self.get(key).is_some()
    }

    /// All triples in key order.
    pub fn triples(&self) -> Vec<&Triple> {
        let mut out = Vec::with_capacity(self.len());
        if let Some(root) = &self.root {
            root.collect_into(&mut out);
        }
        out
    }

    /// `(leaves, internal)` node counts.
    pub fn node_counts(&self) -> (usize, usize) {
        self.root.as_ref().map_or((0, 0), |r| r.count_nodes())
    }

    pub fn node_count(&self) -> usize {
        let (l, i) = self.node_counts();
        l + i
    }

    /// Depth of every leaf, left to right (root leaf has depth 0).
    pub fn leaf_depths(&self) -> Vec<usize> {
        let mut out = Vec::new();
        if let Some(root) = &self.root {
            root.leaf_depths(0, &mut out);
        }
        out
    }

    /// Recursive construction over a sorted, duplicate-free vector.
    fn build(&self, sorted: Vec<Triple>) -> Box<PctNode<A>> {
        let prios: Vec<Priority> = sorted.iter().map(|t| self.priority(&t.key)).collect();
        self.build_with(sorted, prios)
    }

    fn build_with(&self, mut sorted: Vec<Triple>, mut prios: Vec<Priority>) -> Box<PctNode<A>> {
        let n = sorted.len();
        if n <= self.beta {
            let aug = A::for_leaf(&self.ctx, &sorted);
            return Box::new(PctNode::Leaf { bucket: sorted, aug });
        }
        let half = self.beta / 2;
        let mut best = half;
        for i in half + 1..n - half {
            if precedes((prios[i], &sorted[i].key), (prios[best], &sorted[best].key)) {
                best = i;
            }
        }
        let right_items = sorted.split_off(best + 1);
        let right_prios = prios.split_off(best + 1);
        let pivot = sorted.pop().unwrap();
        let priority = prios.pop().unwrap();
        let left = self.build_with(sorted, prios);
        let right = self.build_with(right_items, right_prios);
        let aug = A::for_internal(&self.ctx, left.aug(), right.aug(), &pivot);
        Box::new(PctNode::Internal {
            pivot,
            priority,
            size: n,
            left,
            right,
            aug,
        })
    }

    fn rebuild(&self, node: &mut Box<PctNode<A>>, sorted: Vec<Triple>, depth: usize) -> Rebuilt {
        let elements = sorted.len();
        *node = self.build(sorted);
        let (leaves, internal) = node.count_nodes();
        Rebuilt {
            depth,
            leaves,
            internal,
            elements,
        }
    }

    /// Inserts a triple with a new key. The result is identical to building
    /// the tree from scratch on the enlarged set.
    pub fn insert(&mut self, t: Triple) -> Result<ChangeReport> {
        if self.contains(&t.key) {
            return Err(Error::DuplicateKey(hex::encode(&t.key)));
        }
        let mut report = ChangeReport::default();
        match self.root.take() {
            None => {
                let aug = A::for_leaf(&self.ctx, std::slice::from_ref(&t));
                self.root = Some(Box::new(PctNode::Leaf {
                    bucket: vec![t],
                    aug,
                }));
                report.rebuilt = Some(Rebuilt {
                    depth: 0,
                    leaves: 1,
                    internal: 0,
                    elements: 1,
                });
            }
            Some(mut root) => {
                self.insert_at(&mut root, t, 0, &mut report);
                self.root = Some(root);
            }
        }
        Ok(report)
    }

    fn insert_at(
        &self,
        node: &mut Box<PctNode<A>>,
        t: Triple,
        depth: usize,
        report: &mut ChangeReport,
    ) {
        let half = self.beta / 2;
        let rebuild = match &**node {
            PctNode::Leaf { bucket, .. } => bucket.len() + 1 > self.beta,
            PctNode::Internal {
                pivot,
                priority,
                size,
                ..
            } => {
                // The unprotected region grows by exactly one element: either
                // the new triple or a neighbour it pushes out of a protected end.
                let n = *size;
                let r = node.rank(&t.key);
                let entrant = if r < half {
                    node.select(half - 1)
                } else if r > n - half {
                    node.select(n - half)
                } else {
                    &t
                };
                precedes(
                    (self.priority(&entrant.key), &entrant.key),
                    (*priority, &pivot.key),
                )
            }
        };
        if rebuild {
            let mut sorted = node.sorted_clone();
            let pos = sorted.partition_point(|x| x.key < t.key);
            sorted.insert(pos, t);
            report.rebuilt = Some(self.rebuild(node, sorted, depth));
            return;
        }
        match &mut **node {
            PctNode::Leaf { bucket, aug } => {
                aug.toggle(&self.ctx, &t);
                let pos = bucket.partition_point(|x| x.key < t.key);
                bucket.insert(pos, t);
                report.leaf_updated = true;
            }
            PctNode::Internal {
                pivot,
                size,
                left,
                right,
                aug,
                ..
            } => {
                aug.toggle(&self.ctx, &t);
                *size += 1;
                report.path_nodes += 1;
                let child = if t.key < pivot.key { left } else { right };
                self.insert_at(child, t, depth + 1, report);
            }
        }
    }

    /// Removes the triple with `key` and returns it. The result is identical
    /// to building the tree from scratch on the reduced set.
    pub fn delete(&mut self, key: &[u8]) -> Result<(Triple, ChangeReport)> {
        let removed = self
            .get(key)
            .cloned()
            .ok_or_else(|| Error::KeyNotFound(hex::encode(key)))?;
        let mut report = ChangeReport::default();
        let mut root = self.root.take().unwrap();
        if root.size() == 1 {
            report.leaf_updated = true;
        } else {
            self.delete_at(&mut root, &removed, 0, &mut report);
            self.root = Some(root);
        }
        Ok((removed, report))
    }

    fn delete_at(
        &self,
        node: &mut Box<PctNode<A>>,
        removed: &Triple,
        depth: usize,
        report: &mut ChangeReport,
    ) {
        let half = self.beta / 2;
        let key = removed.key.as_slice();
        let rebuild = match &**node {
            PctNode::Leaf { .. } => false,
            PctNode::Internal { pivot, size, .. } => {
                let n = *size;
                if n - 1 <= self.beta || pivot.key == key {
                    true
                } else {
                    // The unprotected region shrinks by one element: the
                    // removed triple, or a neighbour pulled into a protected end.
                    let r = node.rank(key);
                    let leaving = if r < half {
                        node.select(half)
                    } else if r >= n - half {
                        node.select(n - half - 1)
                    } else {
                        removed
                    };
                    leaving.key == pivot.key
                }
            }
        };
        if rebuild {
            let mut sorted = node.sorted_clone();
            sorted.retain(|x| x.key != key);
            report.rebuilt = Some(self.rebuild(node, sorted, depth));
            return;
        }
        match &mut **node {
            PctNode::Leaf { bucket, aug } => {
                let pos = bucket
                    .binary_search_by(|x| x.key.as_slice().cmp(key))
                    .expect("caller checked presence");
                bucket.remove(pos);
                aug.toggle(&self.ctx, removed);
                report.leaf_updated = true;
            }
            PctNode::Internal {
                pivot,
                size,
                left,
                right,
                aug,
                ..
            } => {
                aug.toggle(&self.ctx, removed);
                *size -= 1;
                report.path_nodes += 1;
                let child = if key < pivot.key.as_slice() { left } else { right };
                self.delete_at(child, removed, depth + 1, report);
            }
        }
    }

    /// Swaps the stored triple for `t`, which has the same key, updating the
    /// summaries on its path. Returns the previous triple. The shape is
    /// unaffected because priorities depend on keys only.
    pub(crate) fn replace(&mut self, t: Triple) -> Result<Triple> {
        let old = self
            .get(&t.key)
            .cloned()
            .ok_or_else(|| Error::KeyNotFound(hex::encode(&t.key)))?;
        if old == t {
            return Ok(old);
        }
        let ctx = &self.ctx;
        let mut node = self.root.as_deref_mut().expect("key was found");
        loop {
            match node {
                PctNode::Leaf { bucket, aug } => {
                    aug.toggle(ctx, &old);
                    aug.toggle(ctx, &t);
                    let i = bucket
                        .binary_search_by(|x| x.key.cmp(&t.key))
                        .expect("key was found");
                    bucket[i] = t;
                    return Ok(old);
                }
                PctNode::Internal {
                    pivot,
                    left,
                    right,
                    aug,
                    ..
                } => {
                    aug.toggle(ctx, &old);
                    aug.toggle(ctx, &t);
                    match t.key.cmp(&pivot.key) {
                        Ordering::Equal => {
                            *pivot = t;
                            return Ok(old);
                        }
                        Ordering::Less => node = left,
                        Ordering::Greater => node = right,
                    }
                }
            }
        }
    }

    /// Root-to-node search path for `key`. `None` on an empty tree.
    pub fn locate(&self, key: &[u8]) -> Option<Location> {
        let mut node = self.root.as_deref()?;
        let mut path = Vec::new();
        loop {
            match node {
                PctNode::Leaf { bucket, .. } => {
                    let position = bucket.binary_search_by(|t| t.key.as_slice().cmp(key));
                    return Some(Location {
                        path,
                        end: LocationEnd::Leaf { position },
                    });
                }
                PctNode::Internal {
                    pivot, left, right, ..
                } => match key.cmp(&pivot.key) {
                    Ordering::Equal => {
                        return Some(Location {
                            path,
                            end: LocationEnd::Pivot,
                        })
                    }
                    Ordering::Less => {
                        path.push(Side::Left);
                        node = left;
                    }
                    Ordering::Greater => {
                        path.push(Side::Right);
                        node = right;
                    }
                },
            }
        }
    }

    fn check_order(
        &self,
        node: &PctNode<A>,
        lo: Option<&[u8]>,
        hi: Option<&[u8]>,
        is_root: bool,
    ) -> std::result::Result<(), String> {
        let in_range = |k: &[u8]| lo.is_none_or(|lo| k > lo) && hi.is_none_or(|hi| k < hi);
        match node {
            PctNode::Leaf { bucket, .. } => {
                if bucket.len() > self.beta {
                    return Err(format!("leaf of {} exceeds beta", bucket.len()));
                }
                if bucket.is_empty() || (!is_root && bucket.len() < self.beta / 2) {
                    return Err(format!("leaf of {} below beta/2", bucket.len()));
                }
                if !bucket.windows(2).all(|w| w[0].key < w[1].key) {
                    return Err("leaf bucket not strictly sorted".into());
                }
                if !bucket.iter().all(|t| in_range(&t.key)) {
                    return Err("leaf key outside its search range".into());
                }
            }
            PctNode::Internal {
                pivot,
                size,
                left,
                right,
                ..
            } => {
                if !in_range(&pivot.key) {
                    return Err("pivot outside its search range".into());
                }
                if *size != left.size() + right.size() + 1 {
                    return Err("subtree size does not match children".into());
                }
                if *size <= self.beta {
                    return Err("internal node with at most beta elements".into());
                }
                self.check_order(left, lo, Some(&pivot.key), false)?;
                self.check_order(right, Some(&pivot.key), hi, false)?;
            }
        }
        Ok(())
    }

    /// Full structural check: search order, sizes, leaf capacity, and that
    /// every pivot is the minimum-priority unprotected element of its subtree.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let Some(root) = &self.root else {
            return Ok(());
        };
        self.check_order(root, None, None, true)?;
        self.check_pivots(root)
    }

    fn check_pivots(&self, node: &PctNode<A>) -> std::result::Result<(), String> {
        if let PctNode::Internal {
            pivot,
            priority,
            left,
            right,
            ..
        } = node
        {
            if *priority != self.priority(&pivot.key) {
                return Err("stored priority does not match key".into());
            }
            let mut all = Vec::new();
            node.collect_into(&mut all);
            let (_, middle, _) = protected_split(&all, self.beta);
            let best = middle
                .iter()
                .min_by(|a, b| {
                    self.priority(&a.key)
                        .cmp(&self.priority(&b.key))
                        .then_with(|| a.key.cmp(&b.key))
                })
                .ok_or("internal node with empty unprotected region")?;
            if best.key != pivot.key {
                return Err(format!(
                    "pivot {} is not the minimum-priority unprotected key {}",
                    hex::encode(&pivot.key),
                    hex::encode(&best.key)
                ));
            }
            self.check_pivots(left)?;
            self.check_pivots(right)?;
        }
        Ok(())
    }
}
