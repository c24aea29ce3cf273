//! Replays the fuzz corpus through the same round-trip checks as the fuzz
//! targets, then mutates each seed at random. Runs on stable.

use std::fs;
use std::path::PathBuf;
use std::sync::OnceLock;

use das_core::faults::FaultPlan;
use das_core::store::Manifest;
use das_core::tag::{keygen, PublicParams, SecretKey};
use das_core::{Client, Iblt, IbltCell, IbltTree};
use proptest::prelude::*;

fn keys() -> &'static (PublicParams, SecretKey) {
    static KEYS: OnceLock<(PublicParams, SecretKey)> = OnceLock::new();
    KEYS.get_or_init(|| keygen(64, 0).unwrap())
}

/// Runs one decoder's checks. Returns whether the input decoded.
fn check(target: &str, data: &[u8]) -> bool {
    match target {
        "iblt_decode" => Iblt::from_bytes(data)
            .map(|t| assert_eq!(t.to_bytes(), data))
            .is_ok(),
        "iblt_peel" => Iblt::from_bytes(data)
            .map(|t| {
                let peeled = t.peel(&|_: &IbltCell<'_>| true);
                assert!(peeled.recovered().len() <= t.num_cells());
            })
            .is_ok(),
        "tree_restore" => IbltTree::restore(data)
            .map(|t| {
                assert_eq!(t.snapshot(), data);
                assert!(t.check_consistency().is_ok());
            })
            .is_ok(),
        "public_params" => PublicParams::from_bytes(data)
            .map(|pp| assert_eq!(PublicParams::from_bytes(&pp.to_bytes()).unwrap(), pp))
            .is_ok(),
        "secret_key" => SecretKey::from_bytes(data)
            .map(|sk| {
                let again = SecretKey::from_bytes(&sk.to_bytes(true)).unwrap();
                assert_eq!(again.exponent(), sk.exponent());
            })
            .is_ok(),
        "client_state" => {
            let (pp, sk) = keys();
            Client::from_bytes(data, sk.clone(), pp.clone())
                .map(|c| assert_eq!(c.to_bytes(), data))
                .is_ok()
        }
        "manifest" => std::str::from_utf8(data)
            .ok()
            .and_then(|s| Manifest::parse(s).ok())
            .map(|m| assert_eq!(Manifest::parse(&m.to_string()).unwrap(), m))
            .is_some(),
        "fault_plan" => std::str::from_utf8(data)
            .ok()
            .and_then(|s| s.parse::<FaultPlan>().ok())
            .map(|p| assert_eq!(p.to_string().parse::<FaultPlan>().unwrap(), p))
            .is_some(),
        other => panic!("no decoder for {other}"),
    }
}

fn corpus() -> Vec<(String, String, Vec<u8>)> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus");
    let mut out = Vec::new();
    for dir in fs::read_dir(&root).expect("fuzz corpus") {
        let dir = dir.unwrap();
        let target = dir.file_name().into_string().unwrap();
        for file in fs::read_dir(dir.path()).unwrap() {
            let file = file.unwrap();
            out.push((target.clone(), file.file_name().into_string().unwrap(), fs::read(file.path()).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn corpus_covers_every_target() {
    let targets: std::collections::BTreeSet<String> = corpus().into_iter().map(|(t, _, _)| t).collect();
    let expected = [
        "client_state", "fault_plan", "iblt_decode", "iblt_peel", "manifest", "public_params",
        "secret_key", "tree_restore",
    ];
    assert_eq!(targets.iter().map(String::as_str).collect::<Vec<_>>(), expected);
}

#[test]
fn corpus_seeds_replay() {
    // Seeds named after a defect must be refused; the rest must decode.
    for (target, name, data) in corpus() {
        let broken = name.contains("truncated") || name.starts_with("bad_");
        assert_eq!(check(&target, &data), !broken, "{target}/{name}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn mutated_seeds_never_panic(
        pick in any::<prop::sample::Index>(),
        edits in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 0..6),
        cut in any::<prop::sample::Index>(),
        do_cut in any::<bool>(),
    ) {
        let seeds = corpus();
        let (target, _, mut data) = seeds[pick.index(seeds.len())].clone();
        if !data.is_empty() {
            for (at, byte) in edits {
                let i = at.index(data.len());
                data[i] ^= byte;
            }
            if do_cut {
                data.truncate(cut.index(data.len() + 1));
            }
        }
        check(&target, &data);
    }
}
