//! A protected Cartesian tree in which every node carries the IBLT of its
//! whole subtree. The root table represents the full stored set, and the
//! table of the stored set minus a few keys can be assembled by rebuilding
//! only the leaves that hold those keys.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use crate::codec::{put_u16, put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::iblt::{Iblt, IbltParams, Triple};
use crate::pct::{check_beta, Augment, ChangeReport, PctNode, PctTree};
use crate::tag::{verify_tag, PublicParams};

pub const TREE_MAGIC: &[u8; 4] = b"DAST";
pub const TREE_VERSION: u16 = 1;

/// Nesting limit when decoding snapshots. Honest trees of any practical size
/// stay far below it.
pub const MAX_SNAPSHOT_DEPTH: usize = 512;

const LEAF: u8 = 0;
const INTERNAL: u8 = 1;

impl Augment for Iblt {
    type Ctx = Arc<IbltParams>;

    fn for_leaf(ctx: &Arc<IbltParams>, bucket: &[Triple]) -> Self {
        let mut t = Iblt::with_params(Arc::clone(ctx));
        for x in bucket {
            t.toggle(x);
        }
        t
    }

    fn for_internal(_: &Arc<IbltParams>, left: &Self, right: &Self, pivot: &Triple) -> Self {
        let mut t = left.clone();
        t.combine_in_place(right).expect("tree-wide parameters");
        t.toggle(pivot);
        t
    }

    fn toggle(&mut self, _: &Arc<IbltParams>, t: &Triple) {
        Iblt::toggle(self, t);
    }
}

/// Work done by [`IbltTree::construct_iblt`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConstructStats {
    pub leaves_rebuilt: usize,
    pub pivots_resolved: usize,
    /// Nodes whose stored table was reused unchanged.
    pub nodes_reused: usize,
    /// Stored keys skipped because they were excluded.
    pub excluded: usize,
    /// Stored keys skipped because `resolve` rejected them.
    pub invalid: Vec<Vec<u8>>,
}

/// A node whose stored table disagrees with its contents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeFault {
    /// Position of the node in pre-order, root = 0.
    pub preorder: usize,
    pub depth: usize,
    pub reason: String,
}

impl fmt::Display for NodeFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "node {} (depth {}): {}",
            self.preorder, self.depth, self.reason
        )
    }
}

#[derive(Clone, PartialEq)]
pub struct IbltTree {
    pct: PctTree<Iblt>,
    params: Arc<IbltParams>,
}

impl fmt::Debug for IbltTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IbltTree")
            .field("beta", &self.beta())
            .field("len", &self.len())
            .field("nodes", &self.node_count())
            .finish()
    }
}

fn check_triple(t: &Triple, params: &IbltParams) -> Result<()> {
    t.check_widths(params)?;
    if t.is_zero() {
        return Err(Error::ZeroTriple);
    }
    Ok(())
}

impl IbltTree {
    pub fn new(params: IbltParams, beta: usize) -> Result<Self> {
        Self::init(Vec::new(), params, beta)
    }

    /// Builds the tree and every node table in one bottom-up pass. Priorities
    /// are salted with the table salt.
    pub fn init(triples: Vec<Triple>, params: IbltParams, beta: usize) -> Result<Self> {
        for t in &triples {
            check_triple(t, &params)?;
        }
        let params = Arc::new(params);
        let salt = params.salt().to_vec();
        let pct = PctTree::init(triples, beta, salt, Arc::clone(&params))?;
        Ok(Self { pct, params })
    }

    pub fn params(&self) -> &IbltParams {
        &self.params
    }

    pub fn shared_params(&self) -> &Arc<IbltParams> {
        &self.params
    }

    pub fn beta(&self) -> usize {
        self.pct.beta()
    }

    pub fn len(&self) -> usize {
        self.pct.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pct.is_empty()
    }

    pub fn pct(&self) -> &PctTree<Iblt> {
        &self.pct
    }

    pub fn get(&self, key: &[u8]) -> Option<&Triple> {
        self.pct.get(key)
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        self.pct.contains(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &[u8]> + '_ {
        self.pct.triples().into_iter().map(|t| t.key.as_slice())
    }

    pub fn triples(&self) -> Vec<&Triple> {
        self.pct.triples()
    }

    pub fn node_count(&self) -> usize {
        self.pct.node_count()
    }

    /// Bytes held in node tables, excluding the triples themselves.
    pub fn table_bytes(&self) -> usize {
        self.node_count() * self.params.num_cells() * self.params.cell_width()
    }

    pub fn insert(&mut self, t: Triple) -> Result<ChangeReport> {
        check_triple(&t, &self.params)?;
        self.pct.insert(t)
    }

    /// Inserts after checking the tag against the public parameters.
    pub fn insert_verified(&mut self, t: Triple, pp: &PublicParams) -> Result<ChangeReport> {
        check_triple(&t, &self.params)?;
        if !verify_tag(&t.key, &t.block, &t.tag, pp) {
            return Err(Error::BadTag(hex::encode(&t.key)));
        }
        self.pct.insert(t)
    }

    /// Removes the stored triple with `key`, returning it. Removal uses the
    /// tree's own copy, so a caller cannot unbalance the tables.
    pub fn delete(&mut self, key: &[u8]) -> Result<(Triple, ChangeReport)> {
        self.pct.delete(key)
    }

    /// Replaces the stored copy of a triple with one carrying the same key.
    pub fn replace(&mut self, t: Triple) -> Result<Triple> {
        check_triple(&t, &self.params)?;
        self.pct.replace(t)
    }

    /// The table of the full stored set.
    pub fn root_iblt(&self) -> Result<Iblt> {
        self.pct
            .root()
            .map(|r| r.aug().clone())
            .ok_or(Error::EmptyTree)
    }

    /// Like [`Self::root_iblt`], but an empty tree yields the empty table.
    pub fn all_iblt(&self) -> Iblt {
        self.root_iblt()
            .unwrap_or_else(|_| Iblt::with_params(Arc::clone(&self.params)))
    }

    /// Table of the stored set minus `excluded` and minus any triple that
    /// `resolve` rejects.
    ///
    /// Nodes whose key range holds no excluded or `suspects` key reuse their
    /// stored table. Within affected nodes every non-excluded triple is passed
    /// to `resolve`, which returns the copy to include (normally read from the
    /// live store) or `None` to drop it.
    pub fn construct_iblt<F>(
        &self,
        excluded: &BTreeSet<Vec<u8>>,
        suspects: &BTreeSet<Vec<u8>>,
        mut resolve: F,
    ) -> (Iblt, ConstructStats)
    where
        F: FnMut(&Triple) -> Option<Triple>,
    {
        let mut out = Iblt::with_params(Arc::clone(&self.params));
        let mut stats = ConstructStats::default();
        if let Some(root) = self.pct.root() {
            let affected: Vec<&[u8]> = excluded
                .union(suspects)
                .map(Vec::as_slice)
                .collect();
            let mut ctx = Construct {
                params: &self.params,
                excluded,
                resolve: &mut resolve,
                out: &mut out,
                stats: &mut stats,
            };
            ctx.visit(root, &affected);
        }
        (out, stats)
    }

    /// Recomputes every node table from the triples below it and checks the
    /// tree structure. Returns the first disagreeing node.
    pub fn check_consistency(&self) -> std::result::Result<(), NodeFault> {
        self.pct.check_invariants().map_err(|reason| NodeFault {
            preorder: 0,
            depth: 0,
            reason,
        })?;
        let Some(root) = self.pct.root() else {
            return Ok(());
        };
        let mut counter = 0;
        self.check_node(root, 0, &mut counter)
    }

    fn check_node(
        &self,
        node: &PctNode<Iblt>,
        depth: usize,
        counter: &mut usize,
    ) -> std::result::Result<(), NodeFault> {
        let preorder = *counter;
        *counter += 1;
        let mut members = Vec::new();
        node.collect_into(&mut members);
        let fresh = Iblt::from_triples(Arc::clone(&self.params), members).map_err(|e| NodeFault {
            preorder,
            depth,
            reason: e.to_string(),
        })?;
        if node.aug() != &fresh {
            return Err(NodeFault {
                preorder,
                depth,
                reason: "stored table differs from its subtree".into(),
            });
        }
        if let PctNode::Internal { left, right, .. } = node {
            self.check_node(left, depth + 1, counter)?;
            self.check_node(right, depth + 1, counter)?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(TREE_MAGIC);
        put_u16(&mut out, TREE_VERSION);
        put_u32(&mut out, self.beta() as u32);
        put_u64(&mut out, self.len() as u64);
        self.params.write_header(&mut out);
        if let Some(root) = self.pct.root() {
            write_node(root, &mut out);
        }
        out
    }

    /// Decodes a snapshot. Structure (order, sizes, leaf capacity) is
    /// checked, and every node table must equal the combination of its
    /// children's tables and its own triples.
    pub fn restore(bytes: &[u8]) -> Result<Self> {
        let tree = Self::decode(bytes)?;
        if let Some(root) = tree.pct.root() {
            verify_tables(root, &tree.params)?;
        }
        Ok(tree)
    }

    /// [`Self::restore`] without the table check.
    fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(TREE_MAGIC)?;
        r.version(TREE_VERSION)?;
        let beta = r.u32()? as usize;
        check_beta(beta).map_err(|e| Error::Malformed(e.to_string()))?;
        let n = r.u64()?;
        let params = Arc::new(IbltParams::read_header(&mut r)?);
        let root = if n == 0 {
            None
        } else {
            Some(read_node(&mut r, &params, beta, 0)?)
        };
        r.finish()?;
        let found = root.as_ref().map_or(0, |r| r.size()) as u64;
        if found != n {
            return Err(Error::malformed(format!(
                "header says {n} triples, nodes hold {found}"
            )));
        }
        let salt = params.salt().to_vec();
        let pct = PctTree::from_parts(root, beta, salt, Arc::clone(&params))?;
        Ok(Self { pct, params })
    }
}

/// Bottom-up table check: linear in the snapshot size.
fn verify_tables(node: &PctNode<Iblt>, params: &Arc<IbltParams>) -> Result<()> {
    let expected = match node {
        PctNode::Leaf { bucket, .. } => Iblt::from_triples(Arc::clone(params), bucket)?,
        PctNode::Internal {
            pivot, left, right, ..
        } => {
            verify_tables(left, params)?;
            verify_tables(right, params)?;
            let mut t = left.aug().combine(right.aug())?;
            t.toggle(pivot);
            t
        }
    };
    if node.aug() != &expected {
        return Err(Error::malformed("node table differs from its subtree"));
    }
    Ok(())
}

struct Construct<'a, F> {
    params: &'a Arc<IbltParams>,
    excluded: &'a BTreeSet<Vec<u8>>,
    resolve: &'a mut F,
    out: &'a mut Iblt,
    stats: &'a mut ConstructStats,
}

impl<F: FnMut(&Triple) -> Option<Triple>> Construct<'_, F> {
    fn include(&mut self, t: &Triple) {
        if self.excluded.contains(&t.key) {
            self.stats.excluded += 1;
            return;
        }
        match (self.resolve)(t) {
            Some(live) if live.key == t.key && check_triple(&live, self.params).is_ok() => {
                self.out.toggle(&live)
            }
            _ => self.stats.invalid.push(t.key.clone()),
        }
    }

    /// `affected` is the sorted list of flagged keys inside this node's range.
    fn visit(&mut self, node: &PctNode<Iblt>, affected: &[&[u8]]) {
        if affected.is_empty() {
            self.stats.nodes_reused += 1;
            self.out
                .combine_in_place(node.aug())
                .expect("tree-wide parameters");
            return;
        }
        match node {
            PctNode::Leaf { bucket, .. } => {
                self.stats.leaves_rebuilt += 1;
                for t in bucket {
                    self.include(t);
                }
            }
            PctNode::Internal {
                pivot, left, right, ..
            } => {
                let lo = affected.partition_point(|k| *k < pivot.key.as_slice());
                let hi = affected.partition_point(|k| *k <= pivot.key.as_slice());
                self.visit(left, &affected[..lo]);
                if hi > lo {
                    self.stats.pivots_resolved += 1;
                    self.include(pivot);
                } else {
                    self.out.toggle(pivot);
                }
                self.visit(right, &affected[hi..]);
            }
        }
    }
}

fn write_node(node: &PctNode<Iblt>, out: &mut Vec<u8>) {
    match node {
        PctNode::Leaf { bucket, aug } => {
            out.push(LEAF);
            put_u16(out, bucket.len() as u16);
            for t in bucket {
                t.write_to(out);
            }
            aug.write_cells(out);
        }
        PctNode::Internal {
            pivot,
            left,
            right,
            aug,
            ..
        } => {
            out.push(INTERNAL);
            pivot.write_to(out);
            aug.write_cells(out);
            write_node(left, out);
            write_node(right, out);
        }
    }
}

fn read_node(
    r: &mut Reader<'_>,
    params: &Arc<IbltParams>,
    beta: usize,
    depth: usize,
) -> Result<Box<PctNode<Iblt>>> {
    if depth > MAX_SNAPSHOT_DEPTH {
        return Err(Error::malformed("tree nesting too deep"));
    }
    let read_triple = |r: &mut Reader<'_>| -> Result<Triple> {
        let t = Triple::read_from(r, params)?;
        if t.is_zero() {
            return Err(Error::ZeroTriple);
        }
        Ok(t)
    };
    match r.u8()? {
        LEAF => {
            let count = r.u16()? as usize;
            if count == 0 || count > beta {
                return Err(Error::malformed(format!("leaf of {count} triples")));
            }
            let bucket = (0..count)
                .map(|_| read_triple(r))
                .collect::<Result<Vec<_>>>()?;
            let aug = Iblt::read_cells(r, Arc::clone(params))?;
            Ok(Box::new(PctNode::Leaf { bucket, aug }))
        }
        INTERNAL => {
            let pivot = read_triple(r)?;
            let aug = Iblt::read_cells(r, Arc::clone(params))?;
            let left = read_node(r, params, beta, depth + 1)?;
            let right = read_node(r, params, beta, depth + 1)?;
            let priority = crate::pct::Priority::of(&pivot.key, params.salt());
            let size = left.size() + right.size() + 1;
            Ok(Box::new(PctNode::Internal {
                pivot,
                priority,
                size,
                left,
                right,
                aug,
            }))
        }
        other => Err(Error::malformed(format!("unknown node tag {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iblt::header_len;
    use crate::tag::{keygen, make_tag, PublicPurity, SecretKey};
    use proptest::prelude::*;
    use rand::seq::{IteratorRandom, SliceRandom};
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    const KAPPA: usize = 8;
    const BLOCK: usize = 16;
    const TAGW: usize = 32;

    fn keys() -> &'static (PublicParams, SecretKey) {
        static K: OnceLock<(PublicParams, SecretKey)> = OnceLock::new();
        K.get_or_init(|| keygen(128, 7).unwrap())
    }

    fn params(delta: usize) -> IbltParams {
        IbltParams::for_delta(delta, 4, KAPPA, BLOCK, TAGW, b"tree-test".to_vec()).unwrap()
    }

    fn random_triple(rng: &mut impl RngCore) -> Triple {
        let mut t = Triple::new(vec![0; KAPPA], vec![0; BLOCK], vec![0; TAGW]);
        rng.fill_bytes(&mut t.key);
        rng.fill_bytes(&mut t.block);
        rng.fill_bytes(&mut t.tag);
        t
    }

    fn tagged_triple(rng: &mut impl RngCore) -> Triple {
        let (pp, sk) = keys();
        let mut t = random_triple(rng);
        t.tag = make_tag(&t.key, &t.block, sk, pp).0;
        t
    }

    fn random_set(rng: &mut impl RngCore, n: usize) -> Vec<Triple> {
        let mut v: Vec<Triple> = (0..n).map(|_| random_triple(rng)).collect();
        v.sort_by(|a, b| a.key.cmp(&b.key));
        v.dedup_by(|a, b| a.key == b.key);
        v
    }

    fn reference<'a>(p: &IbltTree, kept: impl IntoIterator<Item = &'a Triple>) -> Iblt {
        Iblt::from_triples(Arc::clone(p.shared_params()), kept).unwrap()
    }

    #[test]
    fn empty_tree_has_no_tables() {
        let tree = IbltTree::new(params(8), 8).unwrap();
        assert!(matches!(tree.root_iblt(), Err(Error::EmptyTree)));
        assert!(tree.all_iblt().is_empty());
        assert_eq!(tree.node_count(), 0);
        tree.check_consistency().unwrap();
    }

    #[test]
    fn single_leaf_peels_back_to_its_bucket() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set: Vec<Triple> = (0..16).map(|_| tagged_triple(&mut rng)).collect();
        let tree = IbltTree::init(set.clone(), params(16), 16).unwrap();
        assert!(tree.pct().root().unwrap().is_leaf());
        let (pp, _) = keys();
        let mut got = tree.root_iblt().unwrap().peel(&PublicPurity { pp }).complete().unwrap();
        got.sort_by(|a, b| a.key.cmp(&b.key));
        let mut want = set;
        want.sort_by(|a, b| a.key.cmp(&b.key));
        assert_eq!(got, want);
    }

    #[test]
    fn init_tables_match_subtrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let set = random_set(&mut rng, 500);
        let tree = IbltTree::init(set.clone(), params(8), 32).unwrap();
        tree.check_consistency().unwrap();
        assert_eq!(tree.root_iblt().unwrap(), reference(&tree, &set));
    }

    #[test]
    fn init_rejects_bad_widths_and_zero_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = random_triple(&mut rng);
        t.block.pop();
        assert!(matches!(
            IbltTree::init(vec![t], params(4), 4),
            Err(Error::WidthMismatch { .. })
        ));
        let zero = Triple::new(vec![0; KAPPA], vec![0; BLOCK], vec![0; TAGW]);
        assert!(matches!(IbltTree::init(vec![zero], params(4), 4), Err(Error::ZeroTriple)));
    }

    #[test]
    fn insert_updates_root_by_one_toggle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tree = IbltTree::new(params(8), 8).unwrap();
        let first = random_triple(&mut rng);
        tree.insert(first.clone()).unwrap();
        assert!(tree.pct().root().unwrap().is_leaf());
        assert_eq!(tree.root_iblt().unwrap(), reference(&tree, [&first]));
        for _ in 0..500 {
            let before = tree.all_iblt();
            let t = random_triple(&mut rng);
            tree.insert(t.clone()).unwrap();
            let mut expected = before;
            expected.update(&t).unwrap();
            assert_eq!(tree.root_iblt().unwrap(), expected);
            tree.check_consistency().unwrap();
        }
    }

    #[test]
    fn insert_verified_rejects_bad_tag() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (pp, _) = keys();
        let mut tree = IbltTree::new(params(8), 8).unwrap();
        let good = tagged_triple(&mut rng);
        tree.insert_verified(good.clone(), pp).unwrap();
        let mut bad = tagged_triple(&mut rng);
        bad.block[0] ^= 1;
        let before = tree.clone();
        assert!(matches!(tree.insert_verified(bad, pp), Err(Error::BadTag(_))));
        assert_eq!(tree, before);
    }

    #[test]
    fn insert_then_delete_restores_tree() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tree = IbltTree::init(random_set(&mut rng, 300), params(8), 16).unwrap();
        for _ in 0..50 {
            let mut t2 = tree.clone();
            let t = random_triple(&mut rng);
            t2.insert(t.clone()).unwrap();
            let (removed, _) = t2.delete(&t.key).unwrap();
            assert_eq!(removed, t);
            assert_eq!(t2, tree);
            assert_eq!(t2.snapshot(), tree.snapshot());
        }
    }

    #[test]
    fn deleting_pivots_keeps_tables_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tree = IbltTree::init(random_set(&mut rng, 400), params(8), 8).unwrap();
        for _ in 0..20 {
            let Some(PctNode::Internal { pivot, .. }) = tree.pct().root() else {
                break;
            };
            let key = pivot.key.clone();
            let (_, report) = tree.delete(&key).unwrap();
            assert_eq!(report.rebuilt.unwrap().depth, 0);
            tree.check_consistency().unwrap();
        }
    }

    #[test]
    fn mixed_workload_checkpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut live = random_set(&mut rng, 300);
        let mut tree = IbltTree::init(live.clone(), params(8), 16).unwrap();
        let checkpoints: BTreeSet<usize> = (0..1000).choose_multiple(&mut rng, 20).into_iter().collect();
        for step in 0..1000 {
            if live.is_empty() || rng.gen_bool(0.5) {
                let t = random_triple(&mut rng);
                if !tree.contains(&t.key) {
                    tree.insert(t.clone()).unwrap();
                    live.push(t);
                }
            } else {
                let t = live.swap_remove(rng.gen_range(0..live.len()));
                assert_eq!(tree.delete(&t.key).unwrap().0, t);
            }
            if checkpoints.contains(&step) {
                tree.check_consistency().unwrap();
                assert_eq!(tree.all_iblt(), reference(&tree, &live));
            }
        }
    }

    #[test]
    fn construct_without_exclusions_is_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tree = IbltTree::init(random_set(&mut rng, 500), params(8), 16).unwrap();
        let (t, stats) = tree.construct_iblt(&BTreeSet::new(), &BTreeSet::new(), |t| Some(t.clone()));
        assert_eq!(t, tree.root_iblt().unwrap());
        assert_eq!(stats.leaves_rebuilt, 0);
        assert_eq!(stats.nodes_reused, 1);
    }

    #[test]
    fn construct_excluding_one_key_differs_by_that_triple() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (pp, _) = keys();
        let set: Vec<Triple> = (0..300).map(|_| tagged_triple(&mut rng)).collect();
        let tree = IbltTree::init(set.clone(), params(8), 16).unwrap();
        for target in set.choose_multiple(&mut rng, 10) {
            let excluded = BTreeSet::from([target.key.clone()]);
            let (t, stats) = tree.construct_iblt(&excluded, &BTreeSet::new(), |t| Some(t.clone()));
            assert_eq!(stats.excluded, 1);
            let diff = tree.root_iblt().unwrap().combine(&t).unwrap();
            let got = diff.peel(&PublicPurity { pp }).complete().unwrap();
            assert_eq!(got, vec![target.clone()]);
        }
    }

    #[test]
    fn construct_matches_independent_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let set = random_set(&mut rng, 1000);
        let tree = IbltTree::init(set.clone(), params(16), 32).unwrap();
        for _ in 0..20 {
            let excluded: BTreeSet<Vec<u8>> =
                set.choose_multiple(&mut rng, 16).map(|t| t.key.clone()).collect();
            // A few more keys whose live copy is corrupt or gone.
            let bad: BTreeSet<Vec<u8>> =
                set.choose_multiple(&mut rng, 5).map(|t| t.key.clone()).collect();
            let (t, stats) = tree.construct_iblt(&excluded, &bad, |t| {
                (!bad.contains(&t.key)).then(|| t.clone())
            });
            let kept = set
                .iter()
                .filter(|t| !excluded.contains(&t.key) && !bad.contains(&t.key));
            assert!(reference(&tree, kept).combine(&t).unwrap().is_empty());
            let invalid: BTreeSet<Vec<u8>> = stats.invalid.into_iter().collect();
            assert_eq!(invalid, bad.difference(&excluded).cloned().collect());
        }
    }

    #[test]
    fn construct_uses_live_copy_for_affected_leaves() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let set = random_set(&mut rng, 200);
        let tree = IbltTree::init(set.clone(), params(8), 16).unwrap();
        let suspect = set[77].clone();
        let mut live = suspect.clone();
        live.block[3] ^= 0x40;
        let suspects = BTreeSet::from([suspect.key.clone()]);
        let (t, _) = tree.construct_iblt(&BTreeSet::new(), &suspects, |x| {
            Some(if x.key == live.key { live.clone() } else { x.clone() })
        });
        let mut expected = tree.root_iblt().unwrap();
        expected.update(&suspect).unwrap();
        expected.update(&live).unwrap();
        assert_eq!(t, expected);
    }

    #[test]
    fn replace_swaps_copy_and_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let set = random_set(&mut rng, 200);
        let mut tree = IbltTree::init(set.clone(), params(8), 16).unwrap();
        let mut t = set[50].clone();
        t.block[0] ^= 1;
        let old = tree.replace(t.clone()).unwrap();
        assert_eq!(old, set[50]);
        assert_eq!(tree.get(&t.key), Some(&t));
        tree.check_consistency().unwrap();
        let unknown = random_triple(&mut rng);
        assert!(matches!(tree.replace(unknown), Err(Error::KeyNotFound(_))));
    }

    #[test]
    fn snapshot_round_trip_and_order_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let set = random_set(&mut rng, 400);
        let direct = IbltTree::init(set.clone(), params(8), 16).unwrap();
        let bytes = direct.snapshot();
        assert_eq!(IbltTree::restore(&bytes).unwrap(), direct);

        let mut order = set.clone();
        order.shuffle(&mut rng);
        let mut grown = IbltTree::new(params(8), 16).unwrap();
        for t in order {
            grown.insert(t).unwrap();
        }
        assert_eq!(grown.snapshot(), bytes);

        let empty = IbltTree::new(params(8), 16).unwrap();
        assert_eq!(IbltTree::restore(&empty.snapshot()).unwrap(), empty);
    }

    #[test]
    fn corrupt_table_byte_is_refused_and_located() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let tree = IbltTree::init(random_set(&mut rng, 400), params(8), 16).unwrap();
        let p = tree.params();
        let bytes = tree.snapshot();

        // Root is internal: its cells follow the tag byte and the pivot triple.
        let root_cells = 4 + 2 + 4 + 8 + header_len(p.salt().len()) + 1 + KAPPA + BLOCK + TAGW;
        let mut bad = bytes.clone();
        bad[root_cells + 5] ^= 0x10;
        assert!(matches!(IbltTree::restore(&bad), Err(Error::Malformed(_))));
        let fault = IbltTree::decode(&bad).unwrap().check_consistency().unwrap_err();
        assert_eq!((fault.preorder, fault.depth), (0, 0));

        // The last node in pre-order is a leaf whose cells end the stream.
        let mut bad = bytes;
        *bad.last_mut().unwrap() ^= 1;
        assert!(matches!(IbltTree::restore(&bad), Err(Error::Malformed(_))));
        let fault = IbltTree::decode(&bad).unwrap().check_consistency().unwrap_err();
        assert_eq!(fault.preorder, tree.node_count() - 1);
    }

    #[test]
    fn restore_rejects_structural_damage() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let tree = IbltTree::init(random_set(&mut rng, 100), params(4), 8).unwrap();
        let bytes = tree.snapshot();
        assert!(matches!(IbltTree::restore(&bytes[..bytes.len() - 1]), Err(Error::Malformed(_))));
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(IbltTree::restore(&v), Err(Error::VersionMismatch { .. })));
        let mut v = bytes.clone();
        v[10] ^= 1; // triple count
        assert!(IbltTree::restore(&v).is_err());
        let mut v = bytes;
        v.push(0);
        assert!(IbltTree::restore(&v).is_err());
    }

    #[test]
    fn space_bound_at_ten_thousand() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 10_000;
        let set = random_set(&mut rng, n);
        let n = set.len();
        let tree = IbltTree::init(set, params(16), 64).unwrap();
        let bound_nodes = 4 * n.div_ceil(64) + 1;
        assert!(tree.node_count() <= bound_nodes);
        let p = tree.params();
        assert!(tree.table_bytes() <= bound_nodes * p.num_cells() * p.cell_width());
        // Header, one tag byte per node, a count per leaf, and every triple once.
        let (leaves, _) = tree.pct().node_counts();
        let triple_len = p.key_width() + p.block_width() + p.tag_width();
        let expected = 18 + header_len(p.salt().len()) + tree.node_count() + 2 * leaves + n * triple_len;
        assert_eq!(tree.snapshot().len(), expected + tree.table_bytes());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn restore_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
            let _ = IbltTree::restore(&bytes);
        }

        #[test]
        fn restored_mutations_are_consistent(idx in any::<usize>(), xor in 1u8..) {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let tree = IbltTree::init(random_set(&mut rng, 40), params(2), 4).unwrap();
            let mut bytes = tree.snapshot();
            let i = idx % bytes.len();
            bytes[i] ^= xor;
            if let Ok(t) = IbltTree::restore(&bytes) {
                prop_assert!(t.check_consistency().is_ok());
            }
        }
    }
}
