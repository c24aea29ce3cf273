//! Invertible Bloom lookup table over (key, block, tag) triples.
//!
//! Every cell holds three XOR sums and nothing else: there is no count field.
//! Whether a cell holds exactly one triple is decided by a [`PurityOracle`],
//! which in this crate is always backed by the homomorphic tag scheme.
//!
//! The `m` cells are split into `q` equal subtables and the `i`-th hash of a
//! key always lands in subtable `i`, so the `q` cells of a key are distinct.

use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::codec::{put_u16, put_u32, xor_into, Reader};
use crate::error::{Error, Result};

pub const IBLT_MAGIC: &[u8; 4] = b"DASI";
pub const IBLT_VERSION: u16 = 1;

/// Length of the serialized header for a given salt length.
pub const fn header_len(salt_len: usize) -> usize {
    4 + 2 + 4 + 2 + 2 + 4 + 2 + 2 + salt_len
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IbltParams {
    num_cells: usize,
    num_hashes: usize,
    key_width: usize,
    block_width: usize,
    tag_width: usize,
    salt: Vec<u8>,
}

impl IbltParams {
    pub fn new(
        num_cells: usize,
        num_hashes: usize,
        key_width: usize,
        block_width: usize,
        tag_width: usize,
        salt: Vec<u8>,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if num_hashes < 2 {
            return bad(format!("need at least 2 hash functions, got {num_hashes}"));
        }
        if num_cells == 0 || !num_cells.is_multiple_of(num_hashes) {
            return bad(format!(
                "cell count {num_cells} is not a positive multiple of {num_hashes}"
            ));
        }
        if key_width == 0 || block_width == 0 || tag_width == 0 {
            return bad("key, block and tag widths must be at least one byte".into());
        }
        if num_cells > u32::MAX as usize
            || num_hashes > u16::MAX as usize
            || key_width > u16::MAX as usize
            || block_width > u32::MAX as usize
            || tag_width > u16::MAX as usize
            || salt.len() > u16::MAX as usize
        {
            return bad("parameter does not fit the serialized header".into());
        }
        Ok(Self {
            num_cells,
            num_hashes,
            key_width,
            block_width,
            tag_width,
            salt,
        })
    }

    /// Smallest cell count that is at least `(q + 1) * delta` and divisible by `q`.
    pub fn cells_for_delta(delta: usize, num_hashes: usize) -> usize {
        let min = (num_hashes + 1) * delta;
        num_hashes * min.div_ceil(num_hashes)
    }

    /// Parameters sized to peel up to `delta` triples with high probability.
    pub fn for_delta(
        delta: usize,
        num_hashes: usize,
        key_width: usize,
        block_width: usize,
        tag_width: usize,
        salt: Vec<u8>,
    ) -> Result<Self> {
        if delta == 0 {
            return Err(Error::InvalidParams("delta must be positive".into()));
        }
        Self::new(
            Self::cells_for_delta(delta, num_hashes.max(1)),
            num_hashes,
            key_width,
            block_width,
            tag_width,
            salt,
        )
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn num_hashes(&self) -> usize {
        self.num_hashes
    }

    pub fn key_width(&self) -> usize {
        self.key_width
    }

    pub fn block_width(&self) -> usize {
        self.block_width
    }

    pub fn tag_width(&self) -> usize {
        self.tag_width
    }

    pub fn salt(&self) -> &[u8] {
        &self.salt
    }

    pub fn cell_width(&self) -> usize {
        self.key_width + self.block_width + self.tag_width
    }

    pub fn subtable_len(&self) -> usize {
        self.num_cells / self.num_hashes
    }

    /// Serialized size of an IBLT with these parameters.
    pub fn encoded_len(&self) -> usize {
        header_len(self.salt.len()) + self.num_cells * self.cell_width()
    }

    /// The `q` cells a key maps to, one per subtable, in subtable order.
    pub fn cell_indices(&self, key: &[u8]) -> Result<Vec<usize>> {
        check_width("key", self.key_width, key)?;
        Ok(self.indices(key))
    }

    pub(crate) fn indices(&self, key: &[u8]) -> Vec<usize> {
        let sub = self.subtable_len() as u128;
        let mut out = Vec::with_capacity(self.num_hashes);
        let mut counter = 0u32;
        while out.len() < self.num_hashes {
            let mut h = Sha256::new();
            h.update(b"das/cell");
            h.update((self.salt.len() as u16).to_le_bytes());
            h.update(&self.salt);
            h.update(counter.to_be_bytes());
            h.update(key);
            let digest = h.finalize();
            for chunk in digest.chunks_exact(8) {
                if out.len() == self.num_hashes {
                    break;
                }
                let x = u64::from_le_bytes(chunk.try_into().unwrap()) as u128;
                let slot = ((x * sub) >> 64) as usize;
                out.push(out.len() * sub as usize + slot);
            }
            counter += 1;
        }
        out
    }

    pub(crate) fn write_header(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(IBLT_MAGIC);
        put_u16(out, IBLT_VERSION);
        put_u32(out, self.num_cells as u32);
        put_u16(out, self.num_hashes as u16);
        put_u16(out, self.key_width as u16);
        put_u32(out, self.block_width as u32);
        put_u16(out, self.tag_width as u16);
        put_u16(out, self.salt.len() as u16);
        out.extend_from_slice(&self.salt);
    }

    pub(crate) fn read_header(r: &mut Reader<'_>) -> Result<Self> {
        r.magic(IBLT_MAGIC)?;
        r.version(IBLT_VERSION)?;
        let m = r.u32()? as usize;
        let q = r.u16()? as usize;
        let kappa = r.u16()? as usize;
        let block = r.u32()? as usize;
        let w = r.u16()? as usize;
        let salt_len = r.u16()? as usize;
        let salt = r.take(salt_len)?.to_vec();
        Self::new(m, q, kappa, block, w, salt).map_err(|e| Error::malformed(e.to_string()))
    }
}

pub(crate) fn check_width(field: &'static str, expected: usize, bytes: &[u8]) -> Result<()> {
    if bytes.len() != expected {
        return Err(Error::WidthMismatch {
            field,
            expected,
            actual: bytes.len(),
        });
    }
    Ok(())
}

/// One stored record: the unit that is sketched, audited and recovered.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub key: Vec<u8>,
    pub block: Vec<u8>,
    pub tag: Vec<u8>,
}

impl Triple {
    pub fn new(key: Vec<u8>, block: Vec<u8>, tag: Vec<u8>) -> Self {
        Self { key, block, tag }
    }

    pub fn is_zero(&self) -> bool {
        [&self.key, &self.block, &self.tag]
            .iter()
            .all(|f| f.iter().all(|&b| b == 0))
    }

    pub fn check_widths(&self, params: &IbltParams) -> Result<()> {
        check_width("key", params.key_width, &self.key)?;
        check_width("block", params.block_width, &self.block)?;
        check_width("tag", params.tag_width, &self.tag)
    }

    pub(crate) fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.key);
        out.extend_from_slice(&self.block);
        out.extend_from_slice(&self.tag);
    }

    pub(crate) fn read_from(r: &mut Reader<'_>, params: &IbltParams) -> Result<Self> {
        Ok(Self {
            key: r.take(params.key_width)?.to_vec(),
            block: r.take(params.block_width)?.to_vec(),
            tag: r.take(params.tag_width)?.to_vec(),
        })
    }
}

impl fmt::Debug for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Triple")
            .field("key", &hex::encode(&self.key))
            .field("block_len", &self.block.len())
            .field("tag_len", &self.tag.len())
            .finish()
    }
}

/// Borrowed view of one cell's three sums.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IbltCell<'a> {
    pub index: usize,
    pub key_sum: &'a [u8],
    pub value_sum: &'a [u8],
    pub tag_sum: &'a [u8],
}

impl IbltCell<'_> {
    pub fn is_empty(&self) -> bool {
        [self.key_sum, self.value_sum, self.tag_sum]
            .iter()
            .all(|f| f.iter().all(|&b| b == 0))
    }

    pub fn to_triple(&self) -> Triple {
        Triple::new(
            self.key_sum.to_vec(),
            self.value_sum.to_vec(),
            self.tag_sum.to_vec(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleRole {
    /// Recomputes the tag with the secret exponent.
    ClientSecret,
    /// Checks the tag with the public exponent.
    ServerPublic,
    /// Public check plus a lookup in the server's tag index.
    ServerTagset,
    Custom,
}

/// Decides whether a cell holds exactly one triple.
pub trait PurityOracle {
    fn is_pure(&self, cell: &IbltCell<'_>) -> bool;

    fn role(&self) -> OracleRole {
        OracleRole::Custom
    }
}

impl<F> PurityOracle for F
where
    F: Fn(&IbltCell<'_>) -> bool,
{
    fn is_pure(&self, cell: &IbltCell<'_>) -> bool {
        self(cell)
    }
}

/// Result of [`Iblt::peel`]. A stall is an expected outcome, not an error.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Peeled {
    Complete(Vec<Triple>),
    Stalled {
        recovered: Vec<Triple>,
        residual: Iblt,
    },
}

impl Peeled {
    pub fn is_complete(&self) -> bool {
        matches!(self, Peeled::Complete(_))
    }

    pub fn recovered(&self) -> &[Triple] {
        match self {
            Peeled::Complete(r) | Peeled::Stalled { recovered: r, .. } => r,
        }
    }

    pub fn complete(self) -> Option<Vec<Triple>> {
        match self {
            Peeled::Complete(r) => Some(r),
            Peeled::Stalled { .. } => None,
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct Iblt {
    params: Arc<IbltParams>,
    cells: Vec<u8>,
}

impl fmt::Debug for Iblt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Iblt")
            .field("params", &self.params)
            .field("nonzero_cells", &self.nonzero_cells())
            .finish()
    }
}

impl Iblt {
    pub fn new(params: IbltParams) -> Self {
        Self::with_params(Arc::new(params))
    }

    pub fn with_params(params: Arc<IbltParams>) -> Self {
        let len = params.num_cells * params.cell_width();
        Self {
            params,
            cells: vec![0; len],
        }
    }

    pub fn from_triples<'a>(
        params: Arc<IbltParams>,
        triples: impl IntoIterator<Item = &'a Triple>,
    ) -> Result<Self> {
        let mut t = Self::with_params(params);
        for triple in triples {
            t.update(triple)?;
        }
        Ok(t)
    }

    pub fn params(&self) -> &IbltParams {
        &self.params
    }

    pub fn shared_params(&self) -> &Arc<IbltParams> {
        &self.params
    }

    pub fn num_cells(&self) -> usize {
        self.params.num_cells
    }

    pub fn cell(&self, index: usize) -> IbltCell<'_> {
        let p = &*self.params;
        let start = index * p.cell_width();
        let raw = &self.cells[start..start + p.cell_width()];
        let (key_sum, rest) = raw.split_at(p.key_width);
        let (value_sum, tag_sum) = rest.split_at(p.block_width);
        IbltCell {
            index,
            key_sum,
            value_sum,
            tag_sum,
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = IbltCell<'_>> + '_ {
        (0..self.num_cells()).map(move |i| self.cell(i))
    }

    fn cell_is_zero(&self, index: usize) -> bool {
        let w = self.params.cell_width();
        self.cells[index * w..(index + 1) * w].iter().all(|&b| b == 0)
    }

    pub fn nonzero_cells(&self) -> usize {
        (0..self.num_cells()).filter(|&i| !self.cell_is_zero(i)).count()
    }

    /// True when the table represents the empty set.
    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(|&b| b == 0)
    }

    /// Inserts or deletes a triple; the two are the same XOR operation.
    pub fn update(&mut self, t: &Triple) -> Result<()> {
        t.check_widths(&self.params)?;
        if t.is_zero() {
            return Err(Error::ZeroTriple);
        }
        self.toggle(t);
        Ok(())
    }

    /// `update` without validation, for callers that have already checked widths.
    pub(crate) fn toggle(&mut self, t: &Triple) {
        let p = Arc::clone(&self.params);
        let (kw, bw) = (p.key_width, p.block_width);
        let cw = p.cell_width();
        for i in p.indices(&t.key) {
            let cell = &mut self.cells[i * cw..(i + 1) * cw];
            xor_into(&mut cell[..kw], &t.key);
            xor_into(&mut cell[kw..kw + bw], &t.block);
            xor_into(&mut cell[kw + bw..], &t.tag);
        }
    }

    fn same_params(&self, other: &Iblt) -> bool {
        Arc::ptr_eq(&self.params, &other.params) || self.params == other.params
    }

    /// Cell-wise XOR: the symmetric difference of the two represented sets.
    pub fn combine(&self, other: &Iblt) -> Result<Iblt> {
        let mut out = self.clone();
        out.combine_in_place(other)?;
        Ok(out)
    }

    pub fn combine_in_place(&mut self, other: &Iblt) -> Result<()> {
        if !self.same_params(other) {
            return Err(Error::ParamsMismatch);
        }
        xor_into(&mut self.cells, &other.cells);
        Ok(())
    }

    /// Lists the represented triples by repeatedly removing pure cells.
    ///
    /// A cell is only offered to the oracle when its key sum hashes back to
    /// that cell, which every genuinely pure cell does. After a triple is
    /// removed only its `q` cells are re-examined.
    pub fn peel<O: PurityOracle + ?Sized>(&self, oracle: &O) -> Peeled {
        let m = self.num_cells();
        let mut table = self.clone();
        let mut queued = vec![false; m];
        let mut work: Vec<usize> = (0..m).rev().filter(|&i| !table.cell_is_zero(i)).collect();
        for &i in &work {
            queued[i] = true;
        }
        let mut recovered = Vec::new();
        let mut stalled = false;

        while let Some(i) = work.pop() {
            queued[i] = false;
            if table.cell_is_zero(i) {
                continue;
            }
            let cell = table.cell(i);
            let indices = self.params.indices(cell.key_sum);
            if !indices.contains(&i) || !oracle.is_pure(&cell) {
                continue;
            }
            // A decodable table never holds more triples than cells.
            if recovered.len() == m {
                stalled = true;
                break;
            }
            let triple = cell.to_triple();
            table.toggle(&triple);
            for j in indices {
                if !queued[j] && !table.cell_is_zero(j) {
                    queued[j] = true;
                    work.push(j);
                }
            }
            recovered.push(triple);
        }

        if !stalled && table.is_empty() {
            Peeled::Complete(recovered)
        } else {
            Peeled::Stalled {
                recovered,
                residual: table,
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.params.encoded_len());
        self.write_to(&mut out);
        out
    }

    pub(crate) fn write_to(&self, out: &mut Vec<u8>) {
        self.params.write_header(out);
        out.extend_from_slice(&self.cells);
    }

    pub(crate) fn write_cells(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.cells);
    }

    pub(crate) fn read_cells(r: &mut Reader<'_>, params: Arc<IbltParams>) -> Result<Self> {
        let len = params.num_cells * params.cell_width();
        let cells = r.take(len)?.to_vec();
        Ok(Self { params, cells })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let params = IbltParams::read_header(&mut r)?;
        let expected = params
            .num_cells
            .checked_mul(params.cell_width())
            .ok_or_else(|| Error::malformed("cell array size overflows"))?;
        if r.remaining() != expected {
            return Err(Error::malformed(format!(
                "expected {expected} bytes of cells, found {}",
                r.remaining()
            )));
        }
        let t = Self::read_cells(&mut r, Arc::new(params))?;
        r.finish()?;
        Ok(t)
    }

    /// Decodes and additionally requires the parameters to equal `expected`.
    pub fn from_bytes_expecting(bytes: &[u8], expected: &IbltParams) -> Result<Self> {
        let t = Self::from_bytes(bytes)?;
        if *t.params != *expected {
            return Err(Error::ParamsMismatch);
        }
        Ok(t)
    }
}
