//! RSA-based homomorphic tags.
//!
//! A tag binds a key to its block as `(h(k) * g^b)^d mod N`. Only the holder
//! of `d` can create one, anyone holding the public parameters can check one
//! by raising it to `e`.

use std::fmt;
use std::sync::{Arc, RwLock};

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::codec::{put_u16, put_u32, Reader};
use crate::error::{Error, Result};
use crate::iblt::{IbltCell, OracleRole, PurityOracle};

pub const PUBLIC_MAGIC: &[u8; 4] = b"DASK";
pub const SECRET_MAGIC: &[u8; 4] = b"DASS";
pub const KEY_FILE_VERSION: u16 = 1;

pub const PUBLIC_EXPONENT: u32 = 65537;
pub const MIN_TAU: usize = 64;
pub const MAX_TAU: usize = 4096;

const MILLER_RABIN_ROUNDS: usize = 40;
/// Blocks longer than this many bytes skip the fixed-base table.
const MAX_TABLE_ROWS: usize = 1024;

/// Powers `g^(c * 256^j)` for every byte value `c` and byte position `j`,
/// grown on demand.
#[derive(Default)]
struct FixedBase {
    rows: RwLock<Vec<Vec<BigUint>>>,
}

#[derive(Clone)]
pub struct PublicParams {
    modulus: BigUint,
    exponent: BigUint,
    generator: BigUint,
    salt: Vec<u8>,
    tau: usize,
    table: Arc<FixedBase>,
}

impl PartialEq for PublicParams {
    fn eq(&self, other: &Self) -> bool {
        self.modulus == other.modulus
            && self.exponent == other.exponent
            && self.generator == other.generator
            && self.salt == other.salt
            && self.tau == other.tau
    }
}

impl Eq for PublicParams {}

impl fmt::Debug for PublicParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PublicParams")
            .field("tau", &self.tau)
            .field("modulus_bits", &self.modulus.bits())
            .field("exponent", &self.exponent)
            .finish_non_exhaustive()
    }
}

impl PublicParams {
    pub fn new(
        modulus: BigUint,
        exponent: BigUint,
        generator: BigUint,
        salt: Vec<u8>,
        tau: usize,
    ) -> Result<Self> {
        let bad = |msg: &str| Err(Error::InvalidParams(msg.to_string()));
        if !(MIN_TAU..=MAX_TAU).contains(&tau) {
            return bad("security parameter out of range");
        }
        if modulus.is_even() || modulus.bits() != 2 * tau as u64 {
            return bad("modulus must be odd with exactly 2*tau bits");
        }
        if exponent <= BigUint::one() || !exponent.gcd(&modulus).is_one() {
            return bad("public exponent must exceed 1 and be coprime to the modulus");
        }
        if generator <= BigUint::one() || generator >= modulus {
            return bad("generator must lie strictly between 1 and the modulus");
        }
        if salt.len() > u16::MAX as usize {
            return bad("salt too long");
        }
        Ok(Self {
            modulus,
            exponent,
            generator,
            salt,
            tau,
            table: Arc::default(),
        })
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    pub fn exponent(&self) -> &BigUint {
        &self.exponent
    }

    pub fn generator(&self) -> &BigUint {
        &self.generator
    }

    pub fn salt(&self) -> &[u8] {
        &self.salt
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    /// Tag width in bytes, `ceil(2 * tau / 8)`.
    pub fn tag_width(&self) -> usize {
        (2 * self.tau).div_ceil(8)
    }

    fn mul(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a * b) % &self.modulus
    }

    /// `g^block mod N` with the block read as a big-endian integer.
    pub fn generator_pow(&self, block: &[u8]) -> BigUint {
        let first = block.iter().position(|&b| b != 0).unwrap_or(block.len());
        let block = &block[first..];
        if block.len() > MAX_TABLE_ROWS {
            return self
                .generator
                .modpow(&BigUint::from_bytes_be(block), &self.modulus);
        }
        let rows = self.table_rows(block.len());
        let mut acc = BigUint::one();
        for (j, &byte) in block.iter().rev().enumerate() {
            if byte != 0 {
                acc = self.mul(&acc, &rows[j][byte as usize]);
            }
        }
        acc
    }

    fn table_rows(&self, needed: usize) -> std::sync::RwLockReadGuard<'_, Vec<Vec<BigUint>>> {
        {
            let rows = self.table.rows.read().unwrap();
            if rows.len() >= needed {
                return rows;
            }
        }
        {
            let mut rows = self.table.rows.write().unwrap();
            while rows.len() < needed {
                let base = match rows.last() {
                    None => self.generator.clone(),
                    Some(prev) => self.mul(&prev[255], &prev[1]),
                };
                let mut row = Vec::with_capacity(256);
                row.push(BigUint::one());
                for c in 1..256 {
                    let next = self.mul(&row[c - 1], &base);
                    row.push(next);
                }
                rows.push(row);
            }
        }
        self.table.rows.read().unwrap()
    }

    /// `x^e mod N`.
    pub fn raise_public(&self, x: &BigUint) -> BigUint {
        pow_mod(x, &self.exponent, &self.modulus)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PUBLIC_MAGIC);
        put_u16(&mut out, KEY_FILE_VERSION);
        put_u16(&mut out, self.tau as u16);
        for n in [&self.modulus, &self.exponent, &self.generator] {
            put_int(&mut out, n);
        }
        put_u16(&mut out, self.salt.len() as u16);
        out.extend_from_slice(&self.salt);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(PUBLIC_MAGIC)?;
        r.version(KEY_FILE_VERSION)?;
        let tau = r.u16()? as usize;
        let modulus = read_int(&mut r)?;
        let exponent = read_int(&mut r)?;
        let generator = read_int(&mut r)?;
        let salt_len = r.u16()? as usize;
        let salt = r.take(salt_len)?.to_vec();
        r.finish()?;
        Self::new(modulus, exponent, generator, salt, tau)
            .map_err(|e| Error::malformed(e.to_string()))
    }
}

/// Modular exponentiation; short exponents such as 65537 use plain
/// square-and-multiply, which beats Montgomery setup at these sizes.
fn pow_mod(base: &BigUint, exp: &BigUint, modulus: &BigUint) -> BigUint {
    if exp.bits() > 64 {
        return base.modpow(exp, modulus);
    }
    let e = exp.iter_u64_digits().next().unwrap_or(0);
    if e == 0 {
        return BigUint::one() % modulus;
    }
    let base = base % modulus;
    let mut acc = base.clone();
    for i in (0..63 - e.leading_zeros()).rev() {
        acc = (&acc * &acc) % modulus;
        if (e >> i) & 1 == 1 {
            acc = (&acc * &base) % modulus;
        }
    }
    acc
}

const MAX_INT_BYTES: usize = 2 * MAX_TAU / 8 + 8;

fn put_int(out: &mut Vec<u8>, n: &BigUint) {
    let bytes = n.to_bytes_be();
    put_u32(out, bytes.len() as u32);
    out.extend_from_slice(&bytes);
}

fn read_int(r: &mut Reader<'_>) -> Result<BigUint> {
    let len = r.u32()? as usize;
    if len > MAX_INT_BYTES {
        return Err(Error::malformed(format!("integer of {len} bytes")));
    }
    Ok(BigUint::from_bytes_be(r.take(len)?))
}

#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey {
    d: BigUint,
    factors: Option<(BigUint, BigUint)>,
    generator_root: Option<BigUint>,
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

impl SecretKey {
    pub fn exponent(&self) -> &BigUint {
        &self.d
    }

    /// The primes `p` and `q`, when this key came from [`keygen`].
    pub fn factors(&self) -> Option<(&BigUint, &BigUint)> {
        self.factors.as_ref().map(|(p, q)| (p, q))
    }

    /// The `x` with `g = x^2 mod N`, when this key came from [`keygen`].
    pub fn generator_root(&self) -> Option<&BigUint> {
        self.generator_root.as_ref()
    }

    /// Serializes `d`; factors are appended only when `with_factors` is set.
    pub fn to_bytes(&self, with_factors: bool) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SECRET_MAGIC);
        put_u16(&mut out, KEY_FILE_VERSION);
        put_int(&mut out, &self.d);
        if let (true, Some((p, q))) = (with_factors, &self.factors) {
            put_int(&mut out, p);
            put_int(&mut out, q);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(SECRET_MAGIC)?;
        r.version(KEY_FILE_VERSION)?;
        let d = read_int(&mut r)?;
        let factors = if r.remaining() > 0 {
            Some((read_int(&mut r)?, read_int(&mut r)?))
        } else {
            None
        };
        r.finish()?;
        if d.is_zero() {
            return Err(Error::malformed("zero secret exponent"));
        }
        Ok(Self {
            d,
            factors,
            generator_root: None,
        })
    }
}

/// A tag: `w` big-endian bytes encoding an integer below `N`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Tag(pub Vec<u8>);

impl fmt::Debug for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tag({})", hex::encode(&self.0))
    }
}

impl Tag {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }
}

/// Left-pads the big-endian encoding of `n` to `width` bytes.
pub fn to_fixed_width(n: &BigUint, width: usize) -> Vec<u8> {
    let raw = n.to_bytes_be();
    let raw = if n.is_zero() { &[][..] } else { &raw[..] };
    assert!(raw.len() <= width, "integer wider than {width} bytes");
    let mut out = vec![0u8; width - raw.len()];
    out.extend_from_slice(raw);
    out
}

/// Generates an RSA modulus of `2 * tau` bits, `e = 65537`, and a quadratic
/// residue generator. Deterministic in `seed`.
pub fn keygen(tau: usize, seed: u64) -> Result<(PublicParams, SecretKey)> {
    if !(MIN_TAU..=MAX_TAU).contains(&tau) {
        return Err(Error::InvalidParams(format!(
            "tau must be in [{MIN_TAU}, {MAX_TAU}], got {tau}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let e = BigUint::from(PUBLIC_EXPONENT);
    let p = random_prime(tau, &e, &mut rng);
    let q = loop {
        let q = random_prime(tau, &e, &mut rng);
        if q != p {
            break q;
        }
    };
    let n = &p * &q;
    let phi = (&p - 1u32) * (&q - 1u32);
    let d = e
        .modinv(&phi)
        .expect("e is coprime to both p - 1 and q - 1");

    let (x, g) = loop {
        let x = rng.gen_biguint_below(&n);
        if !x.gcd(&n).is_one() {
            continue;
        }
        let g = (&x * &x) % &n;
        if g > BigUint::one() {
            break (x, g);
        }
    };
    let salt: Vec<u8> = (0..16).map(|_| rng.gen()).collect();

    let pp = PublicParams::new(n, e, g, salt, tau)?;
    let sk = SecretKey {
        d,
        factors: Some((p, q)),
        generator_root: Some(x),
    };
    Ok((pp, sk))
}

/// A random `bits`-bit prime with its top two bits set and `gcd(e, p - 1) = 1`.
fn random_prime(bits: usize, e: &BigUint, rng: &mut impl Rng) -> BigUint {
    loop {
        let mut candidate = rng.gen_biguint(bits as u64);
        candidate.set_bit(bits as u64 - 1, true);
        candidate.set_bit(bits as u64 - 2, true);
        candidate.set_bit(0, true);
        if !(&candidate - 1u32).gcd(e).is_one() {
            continue;
        }
        if is_probable_prime(&candidate, MILLER_RABIN_ROUNDS, rng) {
            return candidate;
        }
    }
}

const SMALL_PRIMES: [u32; 24] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
];

/// Miller-Rabin with `rounds` random bases; error at most `4^-rounds`.
pub fn is_probable_prime(n: &BigUint, rounds: usize, rng: &mut impl Rng) -> bool {
    let two = BigUint::from(2u32);
    if *n < two {
        return false;
    }
    for &p in &SMALL_PRIMES {
        let p = BigUint::from(p);
        if *n == p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    if n.is_even() {
        return *n == two;
    }
    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    'witness: for _ in 0..rounds {
        let a = rng.gen_biguint_range(&two, &n_minus_1);
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = (&x * &x) % n;
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Counter-mode SHA-256 expansion of the key to `2 * tau + 64` bits, reduced mod `N`.
pub fn expand_key(key: &[u8], pp: &PublicParams) -> BigUint {
    let want = (2 * pp.tau + 64).div_ceil(8);
    let mut bytes = Vec::with_capacity(want + 32);
    let mut counter = 0u32;
    while bytes.len() < want {
        let mut h = Sha256::new();
        h.update(b"das/h2g");
        h.update((pp.salt.len() as u16).to_le_bytes());
        h.update(&pp.salt);
        h.update(counter.to_be_bytes());
        h.update(key);
        bytes.extend_from_slice(&h.finalize());
        counter += 1;
    }
    bytes.truncate(want);
    BigUint::from_bytes_be(&bytes) % &pp.modulus
}

/// Hashes a key into the quadratic residues mod `N` by squaring its expansion.
pub fn hash_to_group(key: &[u8], pp: &PublicParams) -> BigUint {
    let r = expand_key(key, pp);
    (&r * &r) % &pp.modulus
}

/// `h(key) * g^block mod N`, the value a tag raised to `e` must equal.
fn tag_base(key: &[u8], block: &[u8], pp: &PublicParams) -> BigUint {
    pp.mul(&hash_to_group(key, pp), &pp.generator_pow(block))
}

pub fn make_tag(key: &[u8], block: &[u8], sk: &SecretKey, pp: &PublicParams) -> Tag {
    let t = tag_base(key, block, pp).modpow(&sk.d, &pp.modulus);
    Tag(to_fixed_width(&t, pp.tag_width()))
}

/// Public check `tag^e == h(key) * g^block (mod N)`. The tag must be the
/// canonical fixed-width big-endian encoding of a residue below `N`, so that
/// exactly one byte string verifies for each pair.
pub fn verify_tag(key: &[u8], block: &[u8], tag: &[u8], pp: &PublicParams) -> bool {
    if tag.len() != pp.tag_width() {
        return false;
    }
    let t = BigUint::from_bytes_be(tag);
    t < pp.modulus && pp.raise_public(&t) == tag_base(key, block, pp)
}

/// Client-side purity: recomputing the tag from the sums reproduces the tag sum.
pub fn purity_secret(
    key_sum: &[u8],
    value_sum: &[u8],
    tag_sum: &[u8],
    sk: &SecretKey,
    pp: &PublicParams,
) -> bool {
    tag_sum.len() == pp.tag_width() && make_tag(key_sum, value_sum, sk, pp).0 == tag_sum
}

/// Purity oracle holding the secret exponent.
#[derive(Clone, Copy, Debug)]
pub struct SecretPurity<'a> {
    pub sk: &'a SecretKey,
    pub pp: &'a PublicParams,
}

impl PurityOracle for SecretPurity<'_> {
    fn is_pure(&self, cell: &IbltCell<'_>) -> bool {
        purity_secret(cell.key_sum, cell.value_sum, cell.tag_sum, self.sk, self.pp)
    }

    fn role(&self) -> OracleRole {
        OracleRole::ClientSecret
    }
}

/// Purity oracle using only public parameters.
#[derive(Clone, Copy, Debug)]
pub struct PublicPurity<'a> {
    pub pp: &'a PublicParams,
}

impl PurityOracle for PublicPurity<'_> {
    fn is_pure(&self, cell: &IbltCell<'_>) -> bool {
        verify_tag(cell.key_sum, cell.value_sum, cell.tag_sum, self.pp)
    }

    fn role(&self) -> OracleRole {
        OracleRole::ServerPublic
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::sync::OnceLock;

    fn keys128() -> &'static (PublicParams, SecretKey) {
        static K: OnceLock<(PublicParams, SecretKey)> = OnceLock::new();
        K.get_or_init(|| keygen(128, 42).unwrap())
    }

    fn random_bytes(rng: &mut impl Rng, n: usize) -> Vec<u8> {
        (0..n).map(|_| rng.gen()).collect()
    }

    #[test]
    fn keygen_is_seeded() {
        let (pp, sk) = keys128();
        let (pp2, sk2) = keygen(128, 42).unwrap();
        assert_eq!(*pp, pp2);
        assert_eq!(*sk, sk2);
        let (pp3, _) = keygen(128, 43).unwrap();
        assert_ne!(pp.modulus(), pp3.modulus());
    }

    #[test]
    fn keygen_structure() {
        let (pp, sk) = keys128();
        let (p, q) = sk.factors().unwrap();
        let n = pp.modulus();
        assert_eq!(n.bits(), 256);
        assert_eq!(p * q, *n);
        assert_eq!(p.bits(), 128);
        let phi = (p - 1u32) * (q - 1u32);
        assert!((sk.exponent() * pp.exponent() % &phi).is_one());
        assert_eq!(*pp.exponent(), BigUint::from(65537u32));
        let x = sk.generator_root().unwrap();
        assert_eq!((x * x) % n, *pp.generator());
        assert!(*pp.generator() > BigUint::one());
        assert_eq!(pp.tag_width(), 32);

        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..100 {
            let m = rng.gen_biguint_below(n);
            assert_eq!(m.modpow(pp.exponent(), n).modpow(sk.exponent(), n), m);
        }
    }

    #[test]
    fn keygen_rejects_tiny_tau() {
        assert!(matches!(keygen(16, 0), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn miller_rabin_matches_trial_division() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let sieve = |n: u32| n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| !n.is_multiple_of(d));
        for n in 0u32..5000 {
            assert_eq!(
                is_probable_prime(&BigUint::from(n), 20, &mut rng),
                sieve(n),
                "{n}"
            );
        }
        // Carmichael numbers.
        for c in [561u32, 1105, 1729, 2465, 2821, 6601, 8911, 41041, 825265] {
            assert!(!is_probable_prime(&BigUint::from(c), 20, &mut rng));
        }
    }

    #[test]
    fn short_exponent_pow_matches_modpow() {
        let (pp, _) = keys128();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for e in [0u64, 1, 2, 3, 17, 65537, u64::MAX] {
            let x = rng.gen_biguint_below(pp.modulus());
            let e = BigUint::from(e);
            assert_eq!(pow_mod(&x, &e, pp.modulus()), x.modpow(&e, pp.modulus()));
        }
    }

    #[test]
    fn fixed_base_table_matches_modpow() {
        let (pp, _) = keys128();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for len in [0usize, 1, 2, 31, 256] {
            let block = random_bytes(&mut rng, len);
            assert_eq!(
                pp.generator_pow(&block),
                pp.generator()
                    .modpow(&BigUint::from_bytes_be(&block), pp.modulus())
            );
        }
        assert!(pp.generator_pow(&[0u8; 8]).is_one());
    }

    #[test]
    fn hash_to_group_is_square_of_expansion() {
        let (pp, _) = keys128();
        let key = b"0123456789abcdef";
        let a = hash_to_group(key, pp);
        assert_eq!(a, hash_to_group(key, pp));
        let r = expand_key(key, pp);
        assert_eq!(a, (&r * &r) % pp.modulus());
        assert!(a < *pp.modulus());
    }

    #[test]
    fn hash_to_group_has_no_collisions() {
        let (pp, _) = keys128();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut seen = HashSet::new();
        let mut keys = HashSet::new();
        while keys.len() < 10_000 {
            keys.insert(random_bytes(&mut rng, 16));
        }
        for k in &keys {
            assert!(seen.insert(hash_to_group(k, pp)));
        }
    }

    #[test]
    fn tags_round_trip() {
        let (pp, sk) = keys128();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        for _ in 0..100 {
            let key = random_bytes(&mut rng, 16);
            let block = random_bytes(&mut rng, 64);
            let tag = make_tag(&key, &block, sk, pp);
            assert_eq!(tag.0.len(), 32);
            assert!(verify_tag(&key, &block, tag.as_bytes(), pp));
            assert_eq!(tag, make_tag(&key, &block, sk, pp));
            assert!(purity_secret(&key, &block, tag.as_bytes(), sk, pp));
        }
    }

    #[test]
    fn zero_block_tag_is_hash_to_the_d() {
        let (pp, sk) = keys128();
        let key = [7u8; 16];
        let tag = make_tag(&key, &[0u8; 32], sk, pp);
        let expected = hash_to_group(&key, pp).modpow(sk.exponent(), pp.modulus());
        assert_eq!(tag.0, to_fixed_width(&expected, 32));
    }

    #[test]
    fn single_bit_flips_fail_verification() {
        let (pp, sk) = keys128();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..100 {
            let key = random_bytes(&mut rng, 16);
            let block = random_bytes(&mut rng, 64);
            let tag = make_tag(&key, &block, sk, pp).0;

            let mut bad_block = block.clone();
            let bit = rng.gen_range(0..block.len() * 8);
            bad_block[bit / 8] ^= 1 << (bit % 8);
            assert!(!verify_tag(&key, &bad_block, &tag, pp));

            let mut bad_tag = tag.clone();
            let bit = rng.gen_range(0..tag.len() * 8);
            bad_tag[bit / 8] ^= 1 << (bit % 8);
            assert!(!verify_tag(&key, &block, &bad_tag, pp));
        }
    }

    #[test]
    fn non_canonical_tags_rejected() {
        let (pp, sk) = keys128();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut shifted = 0;
        for _ in 0..50 {
            let key = random_bytes(&mut rng, 16);
            let block = random_bytes(&mut rng, 64);
            let tag = make_tag(&key, &block, sk, pp).0;
            let mut long = vec![0u8];
            long.extend_from_slice(&tag);
            assert!(!verify_tag(&key, &block, &long, pp));
            assert!(!verify_tag(&key, &block, &tag[1..], pp));
            let plus_n = BigUint::from_bytes_be(&tag) + pp.modulus();
            if plus_n.bits() as usize <= 8 * pp.tag_width() {
                shifted += 1;
                let alias = to_fixed_width(&plus_n, pp.tag_width());
                assert!(!verify_tag(&key, &block, &alias, pp));
            }
        }
        // With N's top two bits set, t + N fits in the width for some t.
        assert!(shifted > 0);
    }

    #[test]
    fn xor_of_two_tagged_triples_is_not_pure() {
        let (pp, sk) = keys128();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let pool: Vec<_> = (0..200)
            .map(|_| {
                let k = random_bytes(&mut rng, 16);
                let b = random_bytes(&mut rng, 16);
                let t = make_tag(&k, &b, sk, pp).0;
                (k, b, t)
            })
            .collect();
        let xor = |a: &[u8], b: &[u8]| a.iter().zip(b).map(|(x, y)| x ^ y).collect::<Vec<_>>();
        let mut checked = 0;
        for i in 0..pool.len() {
            for j in i + 1..pool.len() {
                if checked == 10_000 {
                    break;
                }
                let (k1, b1, t1) = &pool[i];
                let (k2, b2, t2) = &pool[j];
                let (k, b, t) = (xor(k1, k2), xor(b1, b2), xor(t1, t2));
                assert!(!purity_secret(&k, &b, &t, sk, pp));
                checked += 1;
            }
        }
        assert_eq!(checked, 10_000);
    }

    #[test]
    fn key_files_round_trip() {
        let (pp, sk) = keys128();
        let bytes = pp.to_bytes();
        assert_eq!(&bytes[..4], b"DASK");
        assert_eq!(PublicParams::from_bytes(&bytes).unwrap(), *pp);

        let plain = SecretKey::from_bytes(&sk.to_bytes(false)).unwrap();
        assert_eq!(plain.exponent(), sk.exponent());
        assert!(plain.factors().is_none());
        let full = SecretKey::from_bytes(&sk.to_bytes(true)).unwrap();
        assert_eq!(full.factors(), sk.factors());

        // A tag made from the reloaded key matches.
        let t1 = make_tag(b"k", b"v", sk, pp);
        assert_eq!(t1, make_tag(b"k", b"v", &plain, pp));

        assert!(PublicParams::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut even = pp.clone();
        even.modulus += 1u32;
        assert!(PublicParams::from_bytes(&even.to_bytes()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn public_and_secret_purity_agree_on_honest_tags(
                key in proptest::collection::vec(any::<u8>(), 16),
                block in proptest::collection::vec(any::<u8>(), 1..80),
            ) {
                let (pp, sk) = keys128();
                let tag = make_tag(&key, &block, sk, pp);
                prop_assert!(verify_tag(&key, &block, tag.as_bytes(), pp));
                prop_assert!(purity_secret(&key, &block, tag.as_bytes(), sk, pp));
            }

            #[test]
            fn key_file_decoding_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
                let _ = PublicParams::from_bytes(&bytes);
                let _ = SecretKey::from_bytes(&bytes);
            }
        }
    }
}
