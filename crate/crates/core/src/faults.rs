//! Deterministic fault injection against a record store.
//!
//! Plan file format:
//!
//! ```text
//! seed=42
//! key=00ab... mode=flip:3
//! key=index:7 mode=zero
//! key=random:5 mode=drop
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Actions run in order
//! against one RNG seeded from `seed`, and only ever touch block bytes or
//! whole records, never tags.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::store::RecordStore;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum KeySelector {
    Key(Vec<u8>),
    /// Position in the sorted list of stored keys.
    Index(usize),
    /// That many distinct stored keys, drawn at random.
    Random(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultMode {
    /// XOR this many distinct random bit positions of the block.
    Flip(usize),
    /// Overwrite the block with zeros.
    Zero,
    /// Remove the record.
    Drop,
    /// Cut the record to half its length.
    Truncate,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FaultAction {
    pub selector: KeySelector,
    pub mode: FaultMode,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FaultPlan {
    pub seed: u64,
    pub actions: Vec<FaultAction>,
}

/// What an injection did.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InjectReport {
    pub applied: Vec<(Vec<u8>, FaultMode)>,
    /// Selected keys that had no record to damage.
    pub absent: Vec<Vec<u8>>,
}

impl InjectReport {
    /// Distinct keys touched, sorted.
    pub fn affected_keys(&self) -> Vec<Vec<u8>> {
        let mut keys: Vec<Vec<u8>> = self.applied.iter().map(|(k, _)| k.clone()).collect();
        keys.sort();
        keys.dedup();
        keys
    }
}

impl fmt::Display for KeySelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeySelector::Key(k) => write!(f, "{}", hex::encode(k)),
            KeySelector::Index(i) => write!(f, "index:{i}"),
            KeySelector::Random(n) => write!(f, "random:{n}"),
        }
    }
}

impl fmt::Display for FaultMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultMode::Flip(c) => write!(f, "flip:{c}"),
            FaultMode::Zero => f.write_str("zero"),
            FaultMode::Drop => f.write_str("drop"),
            FaultMode::Truncate => f.write_str("truncate"),
        }
    }
}

impl fmt::Display for FaultPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seed={}", self.seed)?;
        for a in &self.actions {
            writeln!(f, "key={} mode={}", a.selector, a.mode)?;
        }
        Ok(())
    }
}

fn count(s: &str, what: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::malformed(format!("bad {what} count {s:?}")))
}

impl FromStr for KeySelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(i) = s.strip_prefix("index:") {
            return Ok(KeySelector::Index(count(i, "index")?));
        }
        if let Some(n) = s.strip_prefix("random:") {
            return Ok(KeySelector::Random(count(n, "random")?));
        }
        match hex::decode(s) {
            Ok(k) if !k.is_empty() => Ok(KeySelector::Key(k)),
            _ => Err(Error::malformed(format!("bad key selector {s:?}"))),
        }
    }
}

impl FromStr for FaultMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(FaultMode::Zero),
            "drop" => Ok(FaultMode::Drop),
            "truncate" => Ok(FaultMode::Truncate),
            _ => match s.strip_prefix("flip:") {
                Some(c) => match count(c, "flip")? {
                    0 => Err(Error::malformed("flip count must be positive")),
                    c => Ok(FaultMode::Flip(c)),
                },
                None => Err(Error::malformed(format!("bad fault mode {s:?}"))),
            },
        }
    }
}

impl FromStr for FaultPlan {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::malformed("empty fault plan"))?;
        let seed = header
            .strip_prefix("seed=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::malformed(format!("expected seed=<u64>, got {header:?}")))?;
        let mut actions = Vec::new();
        for line in lines {
            let mut selector = None;
            let mut mode = None;
            for token in line.split_whitespace() {
                let (slot_is_key, value) = match token.split_once('=') {
                    Some(("key", v)) => (true, v),
                    Some(("mode", v)) => (false, v),
                    _ => return Err(Error::malformed(format!("bad token {token:?}"))),
                };
                let dup = if slot_is_key {
                    selector.replace(value.parse::<KeySelector>()?).is_some()
                } else {
                    mode.replace(value.parse::<FaultMode>()?).is_some()
                };
                if dup {
                    return Err(Error::malformed(format!("repeated field in {line:?}")));
                }
            }
            match (selector, mode) {
                (Some(selector), Some(mode)) => actions.push(FaultAction { selector, mode }),
                _ => return Err(Error::malformed(format!("action needs key and mode: {line:?}"))),
            }
        }
        Ok(FaultPlan { seed, actions })
    }
}

impl FaultPlan {
    /// Applies every action once. Identical store contents and plan give
    /// identical results.
    pub fn inject<S: RecordStore + ?Sized>(&self, store: &mut S) -> Result<InjectReport> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let mut report = InjectReport::default();
        let block_width = store.layout().block_width;
        for action in &self.actions {
            let targets = match &action.selector {
                KeySelector::Key(k) => vec![k.clone()],
                KeySelector::Index(i) => {
                    let keys = store.keys()?;
                    vec![keys
                        .get(*i)
                        .cloned()
                        .ok_or_else(|| Error::KeyNotFound(format!("index {i} of {}", keys.len())))?]
                }
                KeySelector::Random(n) => {
                    let keys = store.keys()?;
                    if *n > keys.len() {
                        return Err(Error::InvalidParams(format!(
                            "cannot pick {n} of {} keys",
                            keys.len()
                        )));
                    }
                    let mut picked: Vec<usize> = sample(&mut rng, keys.len(), *n).into_vec();
                    picked.sort_unstable();
                    picked.into_iter().map(|i| keys[i].clone()).collect()
                }
            };
            for key in targets {
                let Some(mut raw) = store.read_raw(&key)? else {
                    report.absent.push(key);
                    continue;
                };
                match action.mode {
                    FaultMode::Flip(c) => {
                        let bits = 8 * block_width.min(raw.len());
                        if c > bits {
                            return Err(Error::InvalidParams(format!(
                                "cannot flip {c} of {bits} bits"
                            )));
                        }
                        for bit in sample(&mut rng, bits, c) {
                            raw[bit / 8] ^= 1 << (bit % 8);
                        }
                        store.write_raw(&key, &raw)?;
                    }
                    FaultMode::Zero => {
                        let end = block_width.min(raw.len());
                        raw[..end].fill(0);
                        store.write_raw(&key, &raw)?;
                    }
                    FaultMode::Drop => {
                        store.remove_raw(&key)?;
                    }
                    FaultMode::Truncate => {
                        raw.truncate(raw.len() / 2);
                        store.write_raw(&key, &raw)?;
                    }
                }
                report.applied.push((key, action.mode));
            }
        }
        Ok(report)
    }
}
