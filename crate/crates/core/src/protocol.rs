//! Client and server halves of dynamic accountable storage.
//!
//! The client keeps only its key set and one fixed-size IBLT `t_b` of every
//! triple it has stored. The server keeps the records, an index of their
//! tags, and an [`IbltTree`]. Messages between the two are plain values;
//! audit proofs travel as serialized IBLT bytes so their size can be measured.

use std::cell::Cell;
use std::collections::{BTreeSet, HashMap};
use std::fmt;

use sha2::{Digest, Sha256};

use crate::codec::{put_u16, put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::iblt::{Iblt, IbltCell, IbltParams, OracleRole, PurityOracle, Triple};
use crate::iblt_tree::{ConstructStats, IbltTree};
use crate::pct::check_beta;
use crate::store::{Layout, RecordStore};
use crate::tag::{keygen, make_tag, verify_tag, PublicParams, SecretKey, SecretPurity};

pub const CLIENT_MAGIC: &[u8; 4] = b"DASC";
pub const CLIENT_VERSION: u16 = 1;
pub const DEFAULT_NUM_HASHES: usize = 4;
pub const IBLT_SALT_LEN: usize = 16;

pub type KeySet = BTreeSet<Vec<u8>>;

/// Scheme parameters fixed at setup.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Config {
    /// Number of discrepancies an audit is sized to recover.
    pub delta: usize,
    pub num_hashes: usize,
    /// Leaf bucket capacity of the server tree.
    pub beta: usize,
    /// Security parameter; the modulus has `2 * tau` bits.
    pub tau: usize,
    pub key_width: usize,
    pub block_width: usize,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        if self.delta == 0 || self.delta > u32::MAX as usize {
            return Err(Error::InvalidParams(format!("delta {} out of range", self.delta)));
        }
        check_beta(self.beta)?;
        if self.key_width == 0 || self.key_width > u16::MAX as usize {
            return Err(Error::InvalidParams("key width out of range".into()));
        }
        if self.block_width == 0 || self.block_width > u32::MAX as usize {
            return Err(Error::InvalidParams("block width out of range".into()));
        }
        if self.tau > u16::MAX as usize {
            return Err(Error::InvalidParams("tau out of range".into()));
        }
        Ok(())
    }

    /// Tag width for this `tau`: the modulus length in bytes.
    pub fn tag_width(&self) -> usize {
        (2 * self.tau).div_ceil(8)
    }

    /// Record layout for a store holding this scheme's triples.
    pub fn layout(&self) -> Layout {
        Layout {
            key_width: self.key_width,
            block_width: self.block_width,
            tag_width: self.tag_width(),
        }
    }

    pub fn iblt_params(&self, tag_width: usize, salt: Vec<u8>) -> Result<IbltParams> {
        IbltParams::for_delta(
            self.delta,
            self.num_hashes,
            self.key_width,
            self.block_width,
            tag_width,
            salt,
        )
    }

    fn write(&self, out: &mut Vec<u8>) {
        put_u32(out, self.delta as u32);
        put_u16(out, self.num_hashes as u16);
        put_u32(out, self.beta as u32);
        put_u16(out, self.tau as u16);
        put_u16(out, self.key_width as u16);
        put_u32(out, self.block_width as u32);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        let cfg = Self {
            delta: r.u32()? as usize,
            num_hashes: r.u16()? as usize,
            beta: r.u32()? as usize,
            tau: r.u16()? as usize,
            key_width: r.u16()? as usize,
            block_width: r.u32()? as usize,
        };
        cfg.validate().map_err(|e| Error::Malformed(e.to_string()))?;
        Ok(cfg)
    }
}

/// Outcome of an audit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuditOutcome {
    Success,
    /// The client could not decode the server's proof.
    Reject,
    /// The server could not recover the requested blocks.
    Failure,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditReport {
    /// Recovered original triples; every tag verifies.
    pub recovered: Vec<Triple>,
    /// Keys whose stored record failed verification. Client-side audits
    /// cannot tell a damaged record from a lost one and report both here.
    pub corrupted_keys: Vec<Vec<u8>>,
    /// Keys with no stored record, as seen by the server.
    pub missing_keys: Vec<Vec<u8>>,
    pub outcome: AuditOutcome,
    /// Serialized size of the IBLT sent to the client; 0 for server audits.
    pub proof_size: usize,
    /// Candidate cells whose key was absent from the tag index or whose tag
    /// differed from it. Server audits only.
    pub tag_lookups_missed: usize,
    pub construct: ConstructStats,
}

impl AuditReport {
    pub fn is_success(&self) -> bool {
        self.outcome == AuditOutcome::Success
    }

    pub fn recovered_keys(&self) -> BTreeSet<Vec<u8>> {
        self.recovered.iter().map(|t| t.key.clone()).collect()
    }
}

/// Server-side purity: the cell's tag must be the one indexed under its key
/// sum and must verify publicly.
pub struct TagsetPurity<'a> {
    pub pp: &'a PublicParams,
    pub tagset: &'a HashMap<Vec<u8>, Vec<u8>>,
    misses: Cell<usize>,
}

impl<'a> TagsetPurity<'a> {
    pub fn new(pp: &'a PublicParams, tagset: &'a HashMap<Vec<u8>, Vec<u8>>) -> Self {
        Self {
            pp,
            tagset,
            misses: Cell::new(0),
        }
    }

    pub fn misses(&self) -> usize {
        self.misses.get()
    }
}

impl PurityOracle for TagsetPurity<'_> {
    fn is_pure(&self, cell: &IbltCell<'_>) -> bool {
        match self.tagset.get(cell.key_sum) {
            Some(tag) if tag.as_slice() == cell.tag_sum => {
                verify_tag(cell.key_sum, cell.value_sum, cell.tag_sum, self.pp)
            }
            // Treated as a mixed cell whose sums happen to hash home.
            _ => {
                self.misses.set(self.misses.get() + 1);
                false
            }
        }
    }

    fn role(&self) -> OracleRole {
        OracleRole::ServerTagset
    }
}

/// The client's state: owned keys and the IBLT of everything stored.
#[derive(Clone)]
pub struct Client {
    cfg: Config,
    keys: BTreeSet<Vec<u8>>,
    t_b: Iblt,
    sk: SecretKey,
    pp: PublicParams,
}

impl fmt::Debug for Client {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Client")
            .field("cfg", &self.cfg)
            .field("keys", &self.keys.len())
            .field("t_b", &self.t_b)
            .finish()
    }
}

/// Server answer to `get`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fetched {
    pub block: Vec<u8>,
    /// Keys restored while serving the request.
    pub repaired: Vec<Vec<u8>>,
}

/// The server's state.
#[derive(Clone)]
pub struct Server<S> {
    store: S,
    tree: IbltTree,
    tagset: HashMap<Vec<u8>, Vec<u8>>,
    pp: PublicParams,
}

impl<S> fmt::Debug for Server<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Server").field("tree", &self.tree).finish()
    }
}

/// Public IBLT salt derived from the setup seed.
pub fn derive_salt(seed: u64) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(b"das/iblt-salt");
    h.update(seed.to_le_bytes());
    h.finalize()[..IBLT_SALT_LEN].to_vec()
}

/// Generates keys, tags every block, and builds both states.
pub fn setup<S: RecordStore>(
    keys: Vec<Vec<u8>>,
    blocks: Vec<Vec<u8>>,
    cfg: Config,
    seed: u64,
    store: S,
) -> Result<(Client, Server<S>)> {
    let (pp, sk) = keygen(cfg.tau, seed)?;
    setup_with_keys(keys, blocks, cfg, derive_salt(seed), pp, sk, store)
}

/// [`setup`] with caller-supplied key material.
pub fn setup_with_keys<S: RecordStore>(
    keys: Vec<Vec<u8>>,
    blocks: Vec<Vec<u8>>,
    cfg: Config,
    salt: Vec<u8>,
    pp: PublicParams,
    sk: SecretKey,
    mut store: S,
) -> Result<(Client, Server<S>)> {
    cfg.validate()?;
    if keys.len() != blocks.len() {
        return Err(Error::SizeMismatch {
            keys: keys.len(),
            blocks: blocks.len(),
        });
    }
    let params = cfg.iblt_params(pp.tag_width(), salt)?;
    if store.layout() != Layout::of(&params) {
        return Err(Error::InvalidParams("store layout does not match config".into()));
    }
    let mut client = Client {
        cfg,
        keys: BTreeSet::new(),
        t_b: Iblt::new(params.clone()),
        sk,
        pp: pp.clone(),
    };
    let mut triples = Vec::with_capacity(keys.len());
    for (key, block) in keys.into_iter().zip(blocks) {
        let t = client.tagged(key, block)?;
        if !client.keys.insert(t.key.clone()) {
            return Err(Error::DuplicateKey(hex::encode(&t.key)));
        }
        client.t_b.update(&t)?;
        triples.push(t);
    }
    for t in &triples {
        store.put(t)?;
    }
    let tree = IbltTree::init(triples, params, cfg.beta)?;
    let server = Server::open(store, tree, pp)?;
    Ok((client, server))
}

impl Client {
    /// Reassembles a client from its serialized state and key material.
    pub fn from_bytes(bytes: &[u8], sk: SecretKey, pp: PublicParams) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(CLIENT_MAGIC)?;
        r.version(CLIENT_VERSION)?;
        let cfg = Config::read(&mut r)?;
        let params = IbltParams::read_header(&mut r)?;
        let expected = cfg.iblt_params(pp.tag_width(), params.salt().to_vec())?;
        if params != expected {
            return Err(Error::ParamsMismatch);
        }
        let t_b = Iblt::read_cells(&mut r, std::sync::Arc::new(params))?;
        let count = r.u64()?;
        if count > (r.remaining() / cfg.key_width.max(1)) as u64 {
            return Err(Error::malformed("key count exceeds remaining bytes"));
        }
        let mut keys = BTreeSet::new();
        for _ in 0..count {
            let key = r.take(cfg.key_width)?.to_vec();
            // Keys are written in ascending order; anything else is not an
            // encoding this code produced.
            if keys.last().is_some_and(|last| last >= &key) {
                return Err(Error::malformed("client keys not strictly ascending"));
            }
            keys.insert(key);
        }
        r.finish()?;
        if pp.tau() != cfg.tau {
            return Err(Error::ParamsMismatch);
        }
        Ok(Self {
            cfg,
            keys,
            t_b,
            sk,
            pp,
        })
    }

    /// Serialized state: config, `t_b`, then the key list.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.state_without_keys();
        put_u64(&mut out, self.keys.len() as u64);
        for k in &self.keys {
            out.extend_from_slice(k);
        }
        out
    }

    /// The serialized state minus the key list; its length depends only on
    /// the parameters.
    pub fn state_without_keys(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CLIENT_MAGIC);
        put_u16(&mut out, CLIENT_VERSION);
        self.cfg.write(&mut out);
        self.t_b.write_to(&mut out);
        out
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn keys(&self) -> &BTreeSet<Vec<u8>> {
        &self.keys
    }

    pub fn owns(&self, key: &[u8]) -> bool {
        self.keys.contains(key)
    }

    pub fn t_b(&self) -> &Iblt {
        &self.t_b
    }

    pub fn public_params(&self) -> &PublicParams {
        &self.pp
    }

    pub fn secret_key(&self) -> &SecretKey {
        &self.sk
    }

    fn tagged(&self, key: Vec<u8>, block: Vec<u8>) -> Result<Triple> {
        let tag = make_tag(&key, &block, &self.sk, &self.pp).into_bytes();
        let t = Triple::new(key, block, tag);
        t.check_widths(self.t_b.params())?;
        Ok(t)
    }

    fn check_owned(&self, key: &[u8]) -> Result<()> {
        if !self.owns(key) {
            return Err(Error::UnknownKey(hex::encode(key)));
        }
        Ok(())
    }

    pub fn put<S: RecordStore>(
        &mut self,
        server: &mut Server<S>,
        key: Vec<u8>,
        block: Vec<u8>,
    ) -> Result<()> {
        if self.owns(&key) {
            return Err(Error::DuplicateKey(hex::encode(&key)));
        }
        let t = self.tagged(key, block)?;
        server.put(t.clone())?;
        self.t_b.update(&t)?;
        self.keys.insert(t.key);
        Ok(())
    }

    pub fn get<S: RecordStore>(&self, server: &mut Server<S>, key: &[u8]) -> Result<Vec<u8>> {
        self.check_owned(key)?;
        Ok(server.get(key)?.block)
    }

    pub fn delete<S: RecordStore>(&mut self, server: &mut Server<S>, key: &[u8]) -> Result<()> {
        let block = self.get(server, key)?;
        let t = self.tagged(key.to_vec(), block)?;
        server.delete(key)?;
        self.t_b.update(&t)?;
        self.keys.remove(key);
        Ok(())
    }

    fn check_audit_keys(&self, keys: &BTreeSet<Vec<u8>>) -> Result<()> {
        if keys.len() > self.cfg.delta {
            return Err(Error::TooManyKeys {
                requested: keys.len(),
                delta: self.cfg.delta,
            });
        }
        keys.iter().try_for_each(|k| self.check_owned(k))
    }

    /// Decodes a proof against `t_b`. `limit` caps the number of triples a
    /// successful decode may yield.
    fn decode_proof(&self, proof: &[u8], limit: Option<usize>) -> Result<(AuditOutcome, Vec<Triple>)> {
        let t_k = Iblt::from_bytes_expecting(proof, self.t_b.params())?;
        let t_l = self.t_b.combine(&t_k)?;
        let oracle = SecretPurity {
            sk: &self.sk,
            pp: &self.pp,
        };
        match t_l.peel(&oracle).complete() {
            Some(found) if limit.is_none_or(|l| found.len() <= l) => {
                let mut found: Vec<Triple> = found.into_iter().filter(|t| self.owns(&t.key)).collect();
                found.sort_by(|a, b| a.key.cmp(&b.key));
                Ok((AuditOutcome::Success, found))
            }
            _ => Ok((AuditOutcome::Reject, Vec::new())),
        }
    }

    /// Asks the server for the IBLT of everything except `keys` and decodes
    /// the difference with `t_b`. The result holds the requested blocks plus
    /// the originals of any the server damaged.
    pub fn audit<S: RecordStore>(
        &self,
        server: &Server<S>,
        keys: &BTreeSet<Vec<u8>>,
    ) -> Result<AuditReport> {
        self.check_audit_keys(keys)?;
        let (proof, construct) = server.audit_proof(keys)?;
        let (outcome, recovered) = self.decode_proof(&proof, None)?;
        let corrupted_keys = recovered
            .iter()
            .filter(|t| !keys.contains(&t.key))
            .map(|t| t.key.clone())
            .collect();
        Ok(AuditReport {
            recovered,
            corrupted_keys,
            missing_keys: Vec::new(),
            outcome,
            proof_size: proof.len(),
            tag_lookups_missed: 0,
            construct,
        })
    }

    /// Full accountability check: recovers every block the server has lost
    /// or damaged, or rejects. At most `delta` blocks are accepted.
    pub fn challenge<S: RecordStore>(&self, server: &Server<S>) -> Result<AuditReport> {
        let (proof, construct) = server.challenge_proof()?;
        let (outcome, recovered) = self.decode_proof(&proof, Some(self.cfg.delta))?;
        let corrupted_keys = recovered.iter().map(|t| t.key.clone()).collect();
        Ok(AuditReport {
            recovered,
            corrupted_keys,
            missing_keys: Vec::new(),
            outcome,
            proof_size: proof.len(),
            tag_lookups_missed: 0,
            construct,
        })
    }
}

impl<S: RecordStore> Server<S> {
    /// Assembles a server from its parts. The tag index is derived from the
    /// tree, which holds the original of every triple.
    pub fn open(store: S, tree: IbltTree, pp: PublicParams) -> Result<Self> {
        if store.layout() != Layout::of(tree.params()) {
            return Err(Error::InvalidParams("store layout does not match tree".into()));
        }
        if tree.params().tag_width() != pp.tag_width() {
            return Err(Error::ParamsMismatch);
        }
        let tagset = tree
            .triples()
            .into_iter()
            .map(|t| (t.key.clone(), t.tag.clone()))
            .collect();
        Ok(Self {
            store,
            tree,
            tagset,
            pp,
        })
    }

    pub fn store(&self) -> &S {
        &self.store
    }

    /// Direct store access, bypassing the protocol. Used to inject faults.
    pub fn store_mut(&mut self) -> &mut S {
        &mut self.store
    }

    pub fn tree(&self) -> &IbltTree {
        &self.tree
    }

    pub fn public_params(&self) -> &PublicParams {
        &self.pp
    }

    pub fn tagset(&self) -> &HashMap<Vec<u8>, Vec<u8>> {
        &self.tagset
    }

    pub fn into_parts(self) -> (S, IbltTree, PublicParams) {
        (self.store, self.tree, self.pp)
    }

    fn verifies(&self, t: &Triple) -> bool {
        verify_tag(&t.key, &t.block, &t.tag, &self.pp)
    }

    /// The stored triple if it is present, well formed and verifies.
    fn live(&self, key: &[u8]) -> Option<Triple> {
        match self.store.get(key) {
            Ok(Some(t)) if self.verifies(&t) => Some(t),
            _ => None,
        }
    }

    fn check_known(&self, key: &[u8]) -> Result<()> {
        if !self.tree.contains(key) {
            return Err(Error::KeyNotFound(hex::encode(key)));
        }
        Ok(())
    }

    pub fn put(&mut self, t: Triple) -> Result<()> {
        t.check_widths(self.tree.params())?;
        if !self.verifies(&t) {
            return Err(Error::BadTag(hex::encode(&t.key)));
        }
        if self.tree.contains(&t.key) {
            return Err(Error::DuplicateKey(hex::encode(&t.key)));
        }
        self.store.put(&t)?;
        self.tagset.insert(t.key.clone(), t.tag.clone());
        self.tree.insert(t)?;
        Ok(())
    }

    /// Serves a block, recovering and repairing it first if the stored copy
    /// is damaged or gone.
    pub fn get(&mut self, key: &[u8]) -> Result<Fetched> {
        self.check_known(key)?;
        if let Some(t) = self.live(key) {
            return Ok(Fetched {
                block: t.block,
                repaired: Vec::new(),
            });
        }
        let excluded = BTreeSet::from([key.to_vec()]);
        let report = self.recover(&excluded, &BTreeSet::new(), (Vec::new(), Vec::new()));
        let block = report
            .recovered
            .iter()
            .find(|t| t.key == key)
            .map(|t| t.block.clone());
        match (report.outcome, block) {
            (AuditOutcome::Success, Some(block)) => {
                self.restore(&report.recovered)?;
                Ok(Fetched {
                    block,
                    repaired: report.recovered.into_iter().map(|t| t.key).collect(),
                })
            }
            _ => Err(Error::Failure(format!(
                "block {} could not be recovered",
                hex::encode(key)
            ))),
        }
    }

    /// Removes a triple. A damaged or lost record is repaired first so the
    /// store's bookkeeping stays exact.
    pub fn delete(&mut self, key: &[u8]) -> Result<Triple> {
        self.get(key)?;
        self.store.delete(key)?;
        self.tagset.remove(key);
        Ok(self.tree.delete(key)?.0)
    }

    /// Scans every key the tree knows. Returns `(corrupted, missing)`.
    pub fn detect_corrupted(&self) -> Result<(KeySet, KeySet)> {
        let mut corrupted = BTreeSet::new();
        let mut missing = BTreeSet::new();
        for key in self.tree.keys() {
            match self.store.get(key) {
                Ok(Some(t)) if self.verifies(&t) => {}
                Ok(Some(_)) | Err(Error::WidthMismatch { .. }) => {
                    corrupted.insert(key.to_vec());
                }
                Ok(None) => {
                    missing.insert(key.to_vec());
                }
                Err(e) => return Err(e),
            }
        }
        Ok((corrupted, missing))
    }

    fn construct(
        &self,
        excluded: &BTreeSet<Vec<u8>>,
        suspects: &BTreeSet<Vec<u8>>,
    ) -> (Iblt, ConstructStats) {
        self.tree
            .construct_iblt(excluded, suspects, |t| self.live(&t.key))
    }

    fn damaged(&self) -> Result<(KeySet, KeySet, KeySet)> {
        let (corrupted, missing) = self.detect_corrupted()?;
        let suspects = corrupted.union(&missing).cloned().collect();
        Ok((corrupted, missing, suspects))
    }

    /// Proof for a client audit of `keys`: the serialized IBLT of every
    /// intact stored triple outside `keys`.
    pub fn audit_proof(&self, keys: &BTreeSet<Vec<u8>>) -> Result<(Vec<u8>, ConstructStats)> {
        let (_, _, suspects) = self.damaged()?;
        let (t_k, stats) = self.construct(keys, &suspects);
        Ok((t_k.to_bytes(), stats))
    }

    /// Proof for an accountability challenge: the serialized IBLT of every
    /// intact stored triple.
    pub fn challenge_proof(&self) -> Result<(Vec<u8>, ConstructStats)> {
        let (_, _, suspects) = self.damaged()?;
        let (t_k, stats) = self.construct(&BTreeSet::new(), &suspects);
        Ok((t_k.to_bytes(), stats))
    }

    fn recover(
        &self,
        excluded: &BTreeSet<Vec<u8>>,
        suspects: &BTreeSet<Vec<u8>>,
        (corrupted, missing): (Vec<Vec<u8>>, Vec<Vec<u8>>),
    ) -> AuditReport {
        let (t_k, construct) = self.construct(excluded, suspects);
        let mut t_l = self.tree.all_iblt();
        t_l.combine_in_place(&t_k).expect("tree-wide parameters");
        let oracle = TagsetPurity::new(&self.pp, &self.tagset);
        let (outcome, mut recovered) = match t_l.peel(&oracle).complete() {
            Some(found) => (AuditOutcome::Success, found),
            None => (AuditOutcome::Failure, Vec::new()),
        };
        recovered.sort_by(|a, b| a.key.cmp(&b.key));
        AuditReport {
            recovered,
            corrupted_keys: corrupted,
            missing_keys: missing,
            outcome,
            proof_size: 0,
            tag_lookups_missed: oracle.misses(),
            construct,
        }
    }

    /// Recovers `keys` together with every block detected as damaged or
    /// lost, using only public information and the tag index.
    pub fn server_audit(&self, keys: &BTreeSet<Vec<u8>>) -> Result<AuditReport> {
        let delta = self.tree.params().num_cells() / (self.tree.params().num_hashes() + 1);
        if keys.len() > delta {
            return Err(Error::TooManyKeys {
                requested: keys.len(),
                delta,
            });
        }
        keys.iter().try_for_each(|k| self.check_known(k))?;
        let (corrupted, missing, suspects) = self.damaged()?;
        Ok(self.recover(
            keys,
            &suspects,
            (corrupted.into_iter().collect(), missing.into_iter().collect()),
        ))
    }

    /// Writes recovered triples back. All are checked before any is written.
    pub fn restore(&mut self, triples: &[Triple]) -> Result<()> {
        for t in triples {
            t.check_widths(self.tree.params())?;
            if !self.verifies(t) {
                return Err(Error::BadTag(hex::encode(&t.key)));
            }
            self.check_known(&t.key)?;
        }
        for t in triples {
            if self.store.get(&t.key).ok().flatten().as_ref() != Some(t) {
                self.store.repair(t)?;
            }
            self.tagset.insert(t.key.clone(), t.tag.clone());
            self.tree.replace(t.clone())?;
        }
        Ok(())
    }

    /// Byte dump of the whole server state, for equality checks.
    pub fn state_dump(&self) -> Result<Vec<u8>> {
        let mut out = self.tree.snapshot();
        out.extend_from_slice(&self.pp.to_bytes());
        for key in self.store.keys()? {
            let raw = self.store.read_raw(&key)?.unwrap_or_default();
            out.extend_from_slice(&key);
            put_u64(&mut out, raw.len() as u64);
            out.extend_from_slice(&raw);
        }
        let mut tags: Vec<_> = self.tagset.iter().collect();
        tags.sort();
        for (k, t) in tags {
            out.extend_from_slice(k);
            out.extend_from_slice(t);
        }
        Ok(out)
    }
}
