use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use das_core::faults::FaultPlan;
use das_core::protocol::{setup, AuditOutcome, AuditReport, Config};
use das_core::DirStore;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::{Map, Value};

use crate::error::{read_file, CliError, Result};
use crate::workdir::Workdir;

/// Human output on stdout, mirrored into the JSON event.
#[derive(Default)]
pub struct Output {
    pub event: Map<String, Value>,
}

impl Output {
    /// Prints `k=v` pairs on one line and records them.
    pub fn line(&mut self, pairs: &[(&str, Value)]) {
        let text: Vec<String> = pairs
            .iter()
            .map(|(k, v)| match v {
                Value::String(s) => format!("{k}={s}"),
                v => format!("{k}={v}"),
            })
            .collect();
        println!("{}", text.join(" "));
        for (k, v) in pairs {
            self.event.insert((*k).to_string(), v.clone());
        }
    }

    /// Prints one `label <hex>` line per key and records the list.
    pub fn keys(&mut self, label: &str, keys: &[Vec<u8>]) {
        let hexes: Vec<String> = keys.iter().map(hex::encode).collect();
        for h in &hexes {
            println!("{label} {h}");
        }
        self.event.insert(format!("{label}_keys"), Value::from(hexes));
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.event.insert(key.to_string(), value.into());
    }
}

fn v(x: impl Into<Value>) -> Value {
    x.into()
}

fn outcome_name(o: AuditOutcome) -> &'static str {
    match o {
        AuditOutcome::Success => "success",
        AuditOutcome::Reject => "reject",
        AuditOutcome::Failure => "failure",
    }
}

pub struct InitArgs {
    pub n: usize,
    pub cfg: Config,
    pub seed: u64,
    pub dir: PathBuf,
}

/// Synthetic corpus of `n` distinct keys and blocks, deterministic in `seed`.
pub fn corpus(n: usize, key_width: usize, block_width: usize, seed: u64) -> (Vec<Vec<u8>>, Vec<Vec<u8>>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut keys = BTreeSet::new();
    while keys.len() < n {
        let mut k = vec![0; key_width];
        rng.fill_bytes(&mut k);
        keys.insert(k);
    }
    let blocks = (0..n)
        .map(|_| {
            let mut b = vec![0; block_width];
            rng.fill_bytes(&mut b);
            b
        })
        .collect();
    (keys.into_iter().collect(), blocks)
}

pub fn init(args: &InitArgs, out: &mut Output) -> Result<()> {
    args.cfg.validate()?;
    let key_space = 256u128.saturating_pow(args.cfg.key_width.min(16) as u32);
    if key_space < args.n as u128 {
        return Err(CliError::Usage(format!(
            "{}-byte keys cannot hold {} distinct values",
            args.cfg.key_width, args.n
        )));
    }
    let (keys, blocks) = corpus(args.n, args.cfg.key_width, args.cfg.block_width, args.seed);
    let store = DirStore::create(&args.dir, args.cfg.layout())?;
    let (client, server) = setup(keys, blocks, args.cfg, args.seed, store)?;
    let dir = Workdir::create(&args.dir, client, server)?;
    out.line(&[
        ("n", v(args.n)),
        ("delta", v(args.cfg.delta)),
        ("beta", v(args.cfg.beta)),
        ("tau", v(args.cfg.tau)),
        ("block", v(args.cfg.block_width)),
        ("nodes", v(dir.server.tree().node_count())),
    ]);
    Ok(())
}

pub fn put(dir: &Path, key: Vec<u8>, block_file: &Path, out: &mut Output) -> Result<()> {
    let block = read_file(block_file)?;
    let mut w = Workdir::open(dir)?;
    w.client.put(&mut w.server, key.clone(), block)?;
    w.save()?;
    out.line(&[("put", v(hex::encode(key)))]);
    Ok(())
}

pub fn get(dir: &Path, key: &[u8], dest: Option<&Path>, out: &mut Output) -> Result<()> {
    let mut w = Workdir::open(dir)?;
    if !w.client.owns(key) {
        return Err(das_core::Error::UnknownKey(hex::encode(key)).into());
    }
    let fetched = w.server.get(key)?;
    if !fetched.repaired.is_empty() {
        w.save()?;
    }
    out.set("key", hex::encode(key));
    out.set("repaired", fetched.repaired.len());
    match dest {
        Some(path) => {
            fs::write(path, &fetched.block).map_err(|source| CliError::File {
                path: path.to_owned(),
                source,
            })?;
            out.line(&[("get", v(hex::encode(key))), ("repaired", v(fetched.repaired.len()))]);
        }
        None => std::io::stdout().write_all(&fetched.block)?,
    }
    Ok(())
}

pub fn delete(dir: &Path, key: &[u8], out: &mut Output) -> Result<()> {
    let mut w = Workdir::open(dir)?;
    w.client.delete(&mut w.server, key)?;
    w.save()?;
    out.line(&[("deleted", v(hex::encode(key)))]);
    Ok(())
}

pub fn corrupt(dir: &Path, plan_file: &Path, out: &mut Output) -> Result<()> {
    let text = String::from_utf8(read_file(plan_file)?)
        .map_err(|_| das_core::Error::Malformed("fault plan is not UTF-8".into()))?;
    let plan: FaultPlan = text.parse()?;
    // Faults only touch records; the rest of the directory is left alone.
    let mut store = DirStore::open(dir)?;
    let report = plan.inject(&mut store)?;
    out.line(&[
        ("applied", v(report.applied.len())),
        ("affected", v(report.affected_keys().len())),
        ("absent", v(report.absent.len())),
    ]);
    out.keys("affected", &report.affected_keys());
    Ok(())
}

fn write_blocks(out_dir: Option<&Path>, report: &AuditReport) -> Result<()> {
    let Some(out_dir) = out_dir else {
        return Ok(());
    };
    fs::create_dir_all(out_dir)?;
    for t in &report.recovered {
        let path = out_dir.join(format!("{}.blk", hex::encode(&t.key)));
        fs::write(&path, &t.block).map_err(|source| CliError::File { path, source })?;
    }
    Ok(())
}

fn print_report(report: &AuditReport, out: &mut Output) {
    out.line(&[
        ("outcome", v(outcome_name(report.outcome))),
        ("recovered", v(report.recovered.len())),
        ("corrupted", v(report.corrupted_keys.len())),
        ("missing", v(report.missing_keys.len())),
        ("proof_bytes", v(report.proof_size)),
        ("leaves_rebuilt", v(report.construct.leaves_rebuilt)),
    ]);
    let recovered: Vec<Vec<u8>> = report.recovered.iter().map(|t| t.key.clone()).collect();
    out.keys("recovered", &recovered);
}

fn finish(report: &AuditReport) -> Result<()> {
    match report.outcome {
        AuditOutcome::Success => Ok(()),
        o => Err(CliError::Protocol(format!("audit ended in {}", outcome_name(o)))),
    }
}

fn key_set(keys: &[Vec<u8>]) -> BTreeSet<Vec<u8>> {
    keys.iter().cloned().collect()
}

pub fn audit(dir: &Path, keys: &[Vec<u8>], out_dir: Option<&Path>, out: &mut Output) -> Result<()> {
    let w = Workdir::open(dir)?;
    let report = w.client.audit(&w.server, &key_set(keys))?;
    print_report(&report, out);
    write_blocks(out_dir, &report)?;
    finish(&report)
}

pub fn server_audit(dir: &Path, keys: &[Vec<u8>], out: &mut Output) -> Result<()> {
    let w = Workdir::open(dir)?;
    let report = w.server.server_audit(&key_set(keys))?;
    print_report(&report, out);
    out.set("tag_lookups_missed", report.tag_lookups_missed);
    finish(&report)
}

pub fn challenge(dir: &Path, out_dir: Option<&Path>, out: &mut Output) -> Result<()> {
    let w = Workdir::open(dir)?;
    let report = w.client.challenge(&w.server)?;
    print_report(&report, out);
    write_blocks(out_dir, &report)?;
    finish(&report)
}

pub fn verify(dir: &Path, out: &mut Output) -> Result<()> {
    let w = Workdir::open(dir)?;
    let (corrupted, missing) = w.server.detect_corrupted()?;
    out.line(&[("corrupted", v(corrupted.len())), ("missing", v(missing.len()))]);
    out.keys("corrupted", &corrupted.into_iter().collect::<Vec<_>>());
    out.keys("missing", &missing.into_iter().collect::<Vec<_>>());
    Ok(())
}

/// Server-side recovery: audit with the tag index, then write back.
pub fn restore(dir: &Path, keys: &[Vec<u8>], out: &mut Output) -> Result<()> {
    let mut w = Workdir::open(dir)?;
    let report = w.server.server_audit(&key_set(keys))?;
    finish(&report)?;
    w.server.restore(&report.recovered)?;
    w.save()?;
    out.line(&[
        ("restored", v(report.recovered.len())),
        ("corrupted", v(report.corrupted_keys.len())),
        ("missing", v(report.missing_keys.len())),
    ]);
    let restored: Vec<Vec<u8>> = report.recovered.iter().map(|t| t.key.clone()).collect();
    out.keys("restored", &restored);
    Ok(())
}

pub fn stats(dir: &Path, out: &mut Output) -> Result<()> {
    let w = Workdir::open(dir)?;
    let tree = w.server.tree();
    let (leaves, internal) = tree.pct().node_counts();
    let pairs: Vec<(&str, Value)> = vec![
        ("n", v(tree.len())),
        ("records", v(w.server.store().manifest().count)),
        ("nodes", v(tree.node_count())),
        ("leaves", v(leaves)),
        ("internal", v(internal)),
        ("max_depth", v(tree.pct().leaf_depths().into_iter().max().unwrap_or(0))),
        ("metadata_bytes", v(tree.table_bytes())),
        ("snapshot_bytes", v(tree.snapshot().len())),
        ("client_state_bytes", v(w.client.state_without_keys().len())),
        ("client_file_bytes", v(w.client.to_bytes().len())),
    ];
    for (k, val) in pairs {
        out.line(&[(k, val)]);
    }
    Ok(())
}

/// A key given as hex on the command line.
#[derive(Clone, Debug)]
pub struct HexKey(pub Vec<u8>);

impl std::str::FromStr for HexKey {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        hex::decode(s).map(HexKey).map_err(|e| format!("not hex: {e}"))
    }
}

pub fn unwrap_keys(keys: Vec<HexKey>) -> Vec<Vec<u8>> {
    keys.into_iter().map(|k| k.0).collect()
}
