#![no_main]

use std::sync::OnceLock;

use das_core::tag::{keygen, PublicParams, SecretKey};
use das_core::Client;
use libfuzzer_sys::fuzz_target;

fn keys() -> &'static (PublicParams, SecretKey) {
    static KEYS: OnceLock<(PublicParams, SecretKey)> = OnceLock::new();
    KEYS.get_or_init(|| keygen(64, 0).unwrap())
}

fuzz_target!(|data: &[u8]| {
    let (pp, sk) = keys();
    if let Ok(client) = Client::from_bytes(data, sk.clone(), pp.clone()) {
        assert_eq!(client.to_bytes(), data);
    }
});
