//! Experiment tables as CSV. Every number is a function of the arguments and
//! the seed, so reruns print identical output.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;

use das_core::protocol::{derive_salt, setup_with_keys, Config};
use das_core::tag::{keygen, make_tag, SecretPurity};
use das_core::{Iblt, IbltParams, IbltTree, MemStore, Server, Triple};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, Result};

const KEY_WIDTH: usize = 16;

pub const PEEL_COLUMNS: &str = "delta,q,cells,trials,successes,success_rate";
pub const SCALING_COLUMNS: &str = "n,beta,delta,nodes,node_bound,leaves,max_depth,table_bytes,\
snapshot_bytes,client_state_bytes,proof_bytes,rebuilt_m1,rebuilt_m4,rebuilt_m16";

/// Independent stream per (label, trial) under one seed.
fn trial_rng(seed: u64, label: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((label << 32) | trial);
    rng
}

fn random_bytes(rng: &mut impl RngCore, len: usize) -> Vec<u8> {
    let mut v = vec![0; len];
    rng.fill_bytes(&mut v);
    v
}

pub struct PeelArgs {
    pub deltas: Vec<usize>,
    pub trials: usize,
    pub q: usize,
    pub tau: usize,
    pub block_size: usize,
    pub seed: u64,
}

/// Inserts `delta` freshly tagged triples into a table of `(q+1) delta`
/// cells and peels it with the secret-key oracle.
pub fn peel(args: &PeelArgs, out: &mut impl Write) -> Result<()> {
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be positive".into()));
    }
    let (pp, sk) = keygen(args.tau, args.seed)?;
    let oracle = SecretPurity { sk: &sk, pp: &pp };
    writeln!(out, "{PEEL_COLUMNS}")?;
    for &delta in &args.deltas {
        let mut successes = 0;
        let mut cells = 0;
        for trial in 0..args.trials as u64 {
            let mut rng = trial_rng(args.seed, delta as u64, trial);
            let salt = random_bytes(&mut rng, 16);
            let params = Arc::new(IbltParams::for_delta(
                delta,
                args.q,
                KEY_WIDTH,
                args.block_size,
                pp.tag_width(),
                salt,
            )?);
            cells = params.num_cells();
            let mut triples: Vec<Triple> = (0..delta)
                .map(|_| {
                    let key = random_bytes(&mut rng, KEY_WIDTH);
                    let block = random_bytes(&mut rng, args.block_size);
                    let tag = make_tag(&key, &block, &sk, &pp).into_bytes();
                    Triple::new(key, block, tag)
                })
                .collect();
            let table = Iblt::from_triples(params, &triples)?;
            if let Some(mut got) = table.peel(&oracle).complete() {
                got.sort_by(|a, b| a.key.cmp(&b.key));
                triples.sort_by(|a, b| a.key.cmp(&b.key));
                successes += usize::from(got == triples);
            }
        }
        writeln!(
            out,
            "{delta},{},{cells},{},{successes},{:.4}",
            args.q,
            args.trials,
            successes as f64 / args.trials as f64
        )?;
    }
    Ok(())
}

pub struct ScalingArgs {
    pub ns: Vec<usize>,
    pub betas: Vec<usize>,
    pub delta: usize,
    pub tau: usize,
    pub block_size: usize,
    pub cost_trials: usize,
    pub seed: u64,
}

/// Node counts, byte sizes and rebuild counts for each `(n, beta)`.
pub fn scaling(args: &ScalingArgs, out: &mut impl Write) -> Result<()> {
    let keys = keygen(args.tau, args.seed)?;
    writeln!(out, "{SCALING_COLUMNS}")?;
    for &n in &args.ns {
        let mut rng = trial_rng(args.seed, n as u64, 0);
        let mut key_set = BTreeSet::new();
        while key_set.len() < n {
            key_set.insert(random_bytes(&mut rng, KEY_WIDTH));
        }
        let blocks = (0..n).map(|_| random_bytes(&mut rng, args.block_size)).collect();
        let cfg = Config {
            delta: args.delta,
            num_hashes: das_core::protocol::DEFAULT_NUM_HASHES,
            beta: args.betas.first().copied().unwrap_or(2),
            tau: args.tau,
            key_width: KEY_WIDTH,
            block_width: args.block_size,
        };
        let (client, server) = setup_with_keys(
            key_set.into_iter().collect(),
            blocks,
            cfg,
            derive_salt(args.seed),
            keys.0.clone(),
            keys.1.clone(),
            MemStore::new(cfg.layout()),
        )?;
        let client_state_bytes = client.state_without_keys().len();
        let (store, base, pp) = server.into_parts();
        let triples: Vec<Triple> = base.triples().into_iter().cloned().collect();
        for &beta in &args.betas {
            let tree = IbltTree::init(triples.clone(), base.params().clone(), beta)?;
            let (leaves, _) = tree.pct().node_counts();
            let max_depth = tree.pct().leaf_depths().into_iter().max().unwrap_or(0);
            let mut rebuilt = Vec::new();
            for m in [1usize, 4, 16] {
                if m > n || args.cost_trials == 0 {
                    rebuilt.push(String::from("NA"));
                    continue;
                }
                let mut total = 0;
                for trial in 0..args.cost_trials as u64 {
                    let mut rng = trial_rng(args.seed, (n as u64) << 16 | beta as u64, trial << 8 | m as u64);
                    let excluded: BTreeSet<Vec<u8>> =
                        triples.choose_multiple(&mut rng, m).map(|t| t.key.clone()).collect();
                    let (_, stats) =
                        tree.construct_iblt(&excluded, &BTreeSet::new(), |t| Some(t.clone()));
                    total += stats.leaves_rebuilt;
                }
                rebuilt.push(format!("{:.3}", total as f64 / args.cost_trials as f64));
            }
            let snapshot_bytes = tree.snapshot().len();
            let nodes = tree.node_count();
            let table_bytes = tree.table_bytes();
            let server = Server::open(store.clone(), tree, pp.clone())?;
            let proof_bytes = server.challenge_proof()?.0.len();
            writeln!(
                out,
                "{n},{beta},{},{nodes},{},{leaves},{max_depth},{table_bytes},{snapshot_bytes},\
                 {client_state_bytes},{proof_bytes},{}",
                args.delta,
                4 * n.div_ceil(beta) + 1,
                rebuilt.join(",")
            )?;
        }
    }
    Ok(())
}
