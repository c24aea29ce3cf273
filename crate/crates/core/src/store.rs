//! Server block store: one record per key, each record the block bytes
//! followed by the tag bytes with no framing.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::iblt::{IbltParams, Triple};

pub const MANIFEST_FILE: &str = "manifest.das";
pub const MANIFEST_VERSION: u32 = 1;
pub const RECORD_EXT: &str = "rec";
const TMP_EXT: &str = "tmp";

/// Field widths shared by every record in a store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Layout {
    pub key_width: usize,
    pub block_width: usize,
    pub tag_width: usize,
}

impl Layout {
    pub fn of(params: &IbltParams) -> Self {
        Self {
            key_width: params.key_width(),
            block_width: params.block_width(),
            tag_width: params.tag_width(),
        }
    }

    pub fn record_len(&self) -> usize {
        self.block_width + self.tag_width
    }

    fn check_key(&self, key: &[u8]) -> Result<()> {
        if key.len() != self.key_width {
            return Err(Error::WidthMismatch {
                field: "key",
                expected: self.key_width,
                actual: key.len(),
            });
        }
        Ok(())
    }

    fn check(&self, t: &Triple) -> Result<()> {
        self.check_key(&t.key)?;
        for (field, expected, actual) in [
            ("block", self.block_width, t.block.len()),
            ("tag", self.tag_width, t.tag.len()),
        ] {
            if expected != actual {
                return Err(Error::WidthMismatch {
                    field,
                    expected,
                    actual,
                });
            }
        }
        Ok(())
    }
}

pub trait RecordStore {
    fn layout(&self) -> Layout;

    /// Record bytes as stored, whatever their length.
    fn read_raw(&self, key: &[u8]) -> Result<Option<Vec<u8>>>;

    /// Overwrites a record's bytes without any width check or bookkeeping.
    /// Meant for fault injection.
    fn write_raw(&mut self, key: &[u8], bytes: &[u8]) -> Result<()>;

    /// Removes a record without bookkeeping. Meant for fault injection.
    fn remove_raw(&mut self, key: &[u8]) -> Result<bool>;

    /// Inserts or replaces a record.
    fn put(&mut self, t: &Triple) -> Result<()>;

    fn delete(&mut self, key: &[u8]) -> Result<bool>;

    /// Rewrites a record the store already accounts for, such as one that
    /// was damaged or lost to a fault. Leaves the record count alone.
    fn repair(&mut self, t: &Triple) -> Result<()> {
        self.layout().check(t)?;
        self.write_raw(&t.key, &[&t.block[..], &t.tag].concat())
    }

    /// Keys with a record present, sorted.
    fn keys(&self) -> Result<Vec<Vec<u8>>>;

    /// The stored triple. A record of the wrong length is a width mismatch.
    fn get(&self, key: &[u8]) -> Result<Option<Triple>> {
        let layout = self.layout();
        layout.check_key(key)?;
        let Some(raw) = self.read_raw(key)? else {
            return Ok(None);
        };
        if raw.len() != layout.record_len() {
            return Err(Error::WidthMismatch {
                field: "record",
                expected: layout.record_len(),
                actual: raw.len(),
            });
        }
        let (block, tag) = raw.split_at(layout.block_width);
        Ok(Some(Triple::new(key.to_vec(), block.to_vec(), tag.to_vec())))
    }
}

/// In-memory store.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemStore {
    layout: Layout,
    records: BTreeMap<Vec<u8>, Vec<u8>>,
}

impl MemStore {
    pub fn new(layout: Layout) -> Self {
        Self {
            layout,
            records: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl RecordStore for MemStore {
    fn layout(&self) -> Layout {
        self.layout
    }

    fn read_raw(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        Ok(self.records.get(key).cloned())
    }

    fn write_raw(&mut self, key: &[u8], bytes: &[u8]) -> Result<()> {
        self.records.insert(key.to_vec(), bytes.to_vec());
        Ok(())
    }

    fn remove_raw(&mut self, key: &[u8]) -> Result<bool> {
        Ok(self.records.remove(key).is_some())
    }

    fn put(&mut self, t: &Triple) -> Result<()> {
        self.layout.check(t)?;
        self.records
            .insert(t.key.clone(), [&t.block[..], &t.tag].concat());
        Ok(())
    }

    fn delete(&mut self, key: &[u8]) -> Result<bool> {
        Ok(self.records.remove(key).is_some())
    }

    fn keys(&self) -> Result<Vec<Vec<u8>>> {
        Ok(self.records.keys().cloned().collect())
    }
}

/// Contents of `manifest.das`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub layout: Layout,
    pub count: u64,
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "version={MANIFEST_VERSION}")?;
        writeln!(f, "kappa={}", self.layout.key_width)?;
        writeln!(f, "block={}", self.layout.block_width)?;
        writeln!(f, "tagw={}", self.layout.tag_width)?;
        writeln!(f, "count={}", self.count)
    }
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut fields: BTreeMap<&str, u64> = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (name, value) = line
                .split_once('=')
                .ok_or_else(|| Error::malformed(format!("manifest line {line:?}")))?;
            if !matches!(name, "version" | "kappa" | "block" | "tagw" | "count") {
                return Err(Error::malformed(format!("unknown manifest field {name:?}")));
            }
            let value: u64 = value
                .parse()
                .map_err(|_| Error::malformed(format!("manifest value {value:?}")))?;
            if fields.insert(name, value).is_some() {
                return Err(Error::malformed(format!("repeated manifest field {name:?}")));
            }
        }
        let field = |name: &str| {
            fields
                .get(name)
                .copied()
                .ok_or_else(|| Error::malformed(format!("manifest lacks {name}")))
        };
        let version = field("version")?;
        if version != MANIFEST_VERSION as u64 {
            return Err(Error::VersionMismatch {
                found: version.min(u16::MAX as u64) as u16,
            });
        }
        let width = |name: &str| -> Result<usize> {
            let w = field(name)?;
            if w == 0 || w > u32::MAX as u64 {
                return Err(Error::malformed(format!("manifest {name}={w} out of range")));
            }
            Ok(w as usize)
        };
        Ok(Self {
            layout: Layout {
                key_width: width("kappa")?,
                block_width: width("block")?,
                tag_width: width("tagw")?,
            },
            count: field("count")?,
        })
    }
}

/// Directory-backed store. Each record lives in `<hex key>.rec` and is
/// replaced by writing a temporary file and renaming it over the old one.
#[derive(Debug)]
pub struct DirStore {
    root: PathBuf,
    manifest: Manifest,
}

/// Replaces `path` with `bytes` through a synced temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".");
    tmp.push(TMP_EXT);
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

impl DirStore {
    /// Creates an empty store; the directory must not already hold a manifest.
    pub fn create(root: impl Into<PathBuf>, layout: Layout) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        if root.join(MANIFEST_FILE).exists() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                format!("{} already holds a store", root.display()),
            )));
        }
        let store = Self {
            root,
            manifest: Manifest { layout, count: 0 },
        };
        store.write_manifest()?;
        Ok(store)
    }

    /// Opens an existing store, discarding temporary files left by an
    /// interrupted write.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let manifest = Manifest::parse(&fs::read_to_string(root.join(MANIFEST_FILE))?)?;
        for entry in fs::read_dir(&root)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == TMP_EXT) {
                fs::remove_file(&path)?;
            }
        }
        Ok(Self { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> Manifest {
        self.manifest
    }

    fn record_path(&self, key: &[u8]) -> PathBuf {
        self.root
            .join(format!("{}.{RECORD_EXT}", hex::encode(key)))
    }

    fn write_manifest(&self) -> Result<()> {
        write_atomic(
            &self.root.join(MANIFEST_FILE),
            self.manifest.to_string().as_bytes(),
        )
    }
}

impl RecordStore for DirStore {
    fn layout(&self) -> Layout {
        self.manifest.layout
    }

    fn read_raw(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        match fs::read(self.record_path(key)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn write_raw(&mut self, key: &[u8], bytes: &[u8]) -> Result<()> {
        write_atomic(&self.record_path(key), bytes)
    }

    fn remove_raw(&mut self, key: &[u8]) -> Result<bool> {
        match fs::remove_file(self.record_path(key)) {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
            Err(e) => Err(e.into()),
        }
    }

    fn put(&mut self, t: &Triple) -> Result<()> {
        self.manifest.layout.check(t)?;
        let path = self.record_path(&t.key);
        let fresh = !path.exists();
        write_atomic(&path, &[&t.block[..], &t.tag].concat())?;
        if fresh {
            self.manifest.count += 1;
            self.write_manifest()?;
        }
        Ok(())
    }

    fn delete(&mut self, key: &[u8]) -> Result<bool> {
        let removed = self.remove_raw(key)?;
        if removed {
            self.manifest.count = self.manifest.count.saturating_sub(1);
            self.write_manifest()?;
        }
        Ok(removed)
    }

    fn keys(&self) -> Result<Vec<Vec<u8>>> {
        let mut keys = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let path = entry?.path();
            if path.extension().is_none_or(|e| e != RECORD_EXT) {
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            match hex::decode(stem) {
                Ok(k) if k.len() == self.manifest.layout.key_width => keys.push(k),
                _ => {
                    return Err(Error::malformed(format!(
                        "unexpected record file {}",
                        path.display()
                    )))
                }
            }
        }
        keys.sort();
        Ok(keys)
    }
}
