#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use das_core::faults::{FaultAction, FaultMode, FaultPlan, KeySelector};
use das_core::protocol::{setup_with_keys, Config, DEFAULT_NUM_HASHES};
use das_core::tag::{keygen, PublicParams, SecretKey};
use das_core::{Client, MemStore, RecordStore, Server};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const KAPPA: usize = 16;

pub fn config(delta: usize, beta: usize, tau: usize, block: usize) -> Config {
    Config {
        delta,
        num_hashes: DEFAULT_NUM_HASHES,
        beta,
        tau,
        key_width: KAPPA,
        block_width: block,
    }
}

/// `n` distinct random keys and blocks.
pub fn corpus(n: usize, block: usize, seed: u64) -> (Vec<Vec<u8>>, Vec<Vec<u8>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys = BTreeSet::new();
    while keys.len() < n {
        let mut k = vec![0; KAPPA];
        rng.fill_bytes(&mut k);
        keys.insert(k);
    }
    let keys: Vec<Vec<u8>> = keys.into_iter().collect();
    let blocks = (0..n)
        .map(|_| {
            let mut b = vec![0; block];
            rng.fill_bytes(&mut b);
            b
        })
        .collect();
    (keys, blocks)
}

pub fn key_material(tau: usize, seed: u64) -> (PublicParams, SecretKey) {
    keygen(tau, seed).unwrap()
}

pub struct Fixture {
    pub client: Client,
    pub server: Server<MemStore>,
    /// What the client believes is stored.
    pub shadow: BTreeMap<Vec<u8>, Vec<u8>>,
}

pub fn fixture_with(cfg: Config, n: usize, seed: u64, keys: &(PublicParams, SecretKey)) -> Fixture {
    let (ks, bs) = corpus(n, cfg.block_width, seed);
    let shadow = ks.iter().cloned().zip(bs.iter().cloned()).collect();
    let salt = das_core::protocol::derive_salt(seed);
    let (client, server) = setup_with_keys(
        ks,
        bs,
        cfg,
        salt,
        keys.0.clone(),
        keys.1.clone(),
        MemStore::new(cfg.layout()),
    )
    .unwrap();
    Fixture {
        client,
        server,
        shadow,
    }
}

pub fn fixture(cfg: Config, n: usize, seed: u64) -> Fixture {
    fixture_with(cfg, n, seed, &key_material(cfg.tau, seed))
}

/// Damages `flips + drops` distinct random records. Returns the damaged keys.
pub fn damage(store: &mut MemStore, flips: usize, drops: usize, rng: &mut impl Rng) -> BTreeSet<Vec<u8>> {
    let keys = store.keys().unwrap();
    let picked = rand::seq::index::sample(rng, keys.len(), flips + drops);
    let mut actions = Vec::new();
    for (i, idx) in picked.iter().enumerate() {
        let mode = if i < flips {
            FaultMode::Flip(rng.gen_range(1..=8))
        } else {
            FaultMode::Drop
        };
        actions.push(FaultAction {
            selector: KeySelector::Key(keys[idx].clone()),
            mode,
        });
    }
    let plan = FaultPlan {
        seed: rng.gen(),
        actions,
    };
    plan.inject(store).unwrap();
    picked.iter().map(|i| keys[i].clone()).collect()
}

pub fn zero_difference(client: &Client, server: &Server<MemStore>) -> bool {
    client
        .t_b()
        .combine(&server.tree().all_iblt())
        .unwrap()
        .is_empty()
}
